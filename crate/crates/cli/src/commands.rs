use std::path::Path;

use gatedq::batch::BatchQueue;
use gatedq::branching::q_n_transient;
use gatedq::busy_cycle::BusyCycle;
use gatedq::map_gate::{interchange_residual, is_commutative, poisson_reduction_check, MapRep, VectorInitialState};
use gatedq::numerics::{derivative_at, DerivativeOptions, Side};
use gatedq::sim::{self, Estimate, SimConfig, SimKind, SimStats};
use gatedq::vacation::VacationQueue;
use gatedq::{InitialState, ModelParams, TruncationPolicy};
use num_complex::Complex64;

use crate::config::{self, SimulationSection};
use crate::output::{Output, Table};
use crate::reports::*;
use crate::{Cli, Command, Failure, SEED_ENV};

type Dispatched = (Output, Result<(), Failure>);

pub fn dispatch(cli: &Cli, path: &Path) -> Result<Dispatched, Failure> {
    match cli.command {
        Command::Solve => solve(cli, path),
        Command::Simulate => simulate(cli, path),
        Command::Compare => compare(cli, path),
        Command::Busycycle => busycycle(cli, path),
        Command::Batch => batch(cli, path),
        Command::Mapcheck => mapcheck(path),
    }
}

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// `--seed`, then `QSOLVER_SEED`, then the config value.
pub fn resolve_seed(flag: Option<u64>, configured: u64) -> Result<u64, Failure> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::Validation(format!("{SEED_ENV}={v:?} is not an unsigned 64-bit integer"))),
        Err(std::env::VarError::NotPresent) => Ok(configured),
        Err(e) => Err(Failure::Validation(format!("{SEED_ENV}: {e}"))),
    }
}

fn policy(cli: &Cli, configured: Option<TruncationPolicy>) -> Result<TruncationPolicy, Failure> {
    let mut p = configured.unwrap_or_default();
    if let Some(eps) = cli.eps {
        p.eps = eps;
    }
    if let Some(max_n) = cli.max_n {
        p.max_n = max_n;
    }
    p.validate()?;
    Ok(p)
}

fn stable(model: &ModelParams) -> Result<(), Failure> {
    model.validate()?;
    Ok(())
}

fn sim_config(cli: &Cli, model: &ModelParams, s: &SimulationSection) -> Result<SimConfig, Failure> {
    let mut cfg = SimConfig::new(s.kind, model.clone(), s.horizon, s.replications, resolve_seed(cli.seed, s.seed)?);
    cfg.warmup = s.warmup;
    cfg.probes = s.probes.clone();
    cfg.validate()?;
    Ok(cfg)
}

fn ok(output: Output) -> Result<Dispatched, Failure> {
    Ok((output, Ok(())))
}

fn solve(cli: &Cli, path: &Path) -> Result<Dispatched, Failure> {
    let cfg: config::SolveConfig = config::load(path)?;
    stable(&cfg.model)?;
    let truncation = policy(cli, cfg.truncation)?;
    if !(cfg.pmf_tail > 0.0 && cfg.pmf_tail < 1.0) {
        return Err(Failure::Validation(format!("pmf_tail must lie in (0, 1), got {}", cfg.pmf_tail)));
    }
    let queue = VacationQueue::new(&cfg.model, &truncation)?;
    let stationary = queue.report(cfg.order, cfg.pmf_tail)?;
    log::info!(
        "l_E(0) = {:.6e}, n* = {}, E[L] = {:.6}",
        stationary.ell_e0,
        stationary.diagnostics.truncation.n_star,
        stationary.mean_queue_length
    );
    let transient = match &cfg.transient {
        None => None,
        Some(t) => {
            let init = InitialState::new(t.initial.clone())?;
            let mut points = Vec::with_capacity(t.z.len());
            for &z in &t.z {
                if !(0.0..=1.0).contains(&z) {
                    return Err(Failure::Validation(format!("transient z must lie in [0, 1], got {z}")));
                }
                let q_n = q_n_transient(&cfg.model, &init, t.steps, c(z))?.re;
                let ell_e = queue.context().ell_e(c(z)).re;
                points.push(TransientPoint { z, q_n, ell_e, gap: (q_n - ell_e).abs() });
            }
            Some(TransientReport { steps: t.steps, initial: t.initial.clone(), points })
        }
    };
    let mut table = Table::new(&["k", "probability"]);
    for (k, p) in stationary.pmf.iter().enumerate() {
        table.push([k.to_string(), p.to_string()]);
    }
    let report = SolveReport { rho: cfg.model.rho(), model: cfg.model, truncation, stationary, transient };
    ok(Output::new("solve", &report, table)?)
}

fn estimate_rows(table: &mut Table, name: &str, e: &Estimate) {
    table.push([
        name.to_string(),
        e.mean.to_string(),
        e.half_width.to_string(),
        e.variance.to_string(),
        e.replications.to_string(),
    ]);
}

fn simulate(cli: &Cli, path: &Path) -> Result<Dispatched, Failure> {
    let cfg: config::SimulateConfig = config::load(path)?;
    cfg.model.validate_shape()?;
    let sim = sim_config(cli, &cfg.model, &cfg.simulation)?;
    log::info!("simulating {} x {} events, seed {}", sim.replications, sim.horizon, sim.seed);
    let stats = sim::run(&sim)?;
    if stats.divergent {
        log::warn!("backlog drift {:.3e} per event: the simulated queue is unstable", stats.backlog_drift);
    }
    let mut table = Table::new(&["observable", "mean", "half_width", "variance", "replications"]);
    for (name, e) in stats.scalar_observables() {
        estimate_rows(&mut table, &name, &e);
    }
    for (k, e) in stats.queue_pmf.iter().enumerate() {
        estimate_rows(&mut table, &format!("queue_pmf[{k}]"), e);
    }
    for (k, e) in stats.end_pmf.iter().enumerate() {
        estimate_rows(&mut table, &format!("end_pmf[{k}]"), e);
    }
    let report = SimulateReport { model: cfg.model, stats };
    ok(Output::new("simulate", &report, table)?)
}

struct Rows {
    rows: Vec<CompareRow>,
    widths: f64,
    floor: f64,
}

impl Rows {
    fn add(&mut self, observable: impl Into<String>, analytic: f64, sim: &Estimate) {
        let tolerance = (self.widths * sim.half_width).max(self.floor);
        self.rows.push(CompareRow {
            observable: observable.into(),
            analytic,
            simulated: sim.mean,
            half_width: sim.half_width,
            tolerance,
            pass: (analytic - sim.mean).abs() <= tolerance,
        });
    }
}

fn vacation_rows(rows: &mut Rows, cfg: &config::CompareConfig, q: &VacationQueue, stats: &SimStats, truncation: &TruncationPolicy) -> Result<(), Failure> {
    rows.add("mean_queue", q.mean_queue_length(), &stats.mean_queue);
    rows.add("prob_empty", q.prob_empty(), &stats.prob_empty);
    rows.add("sojourn_mean", q.delay_moments(1)?[0], &stats.sojourn_mean);
    rows.add("idle_fraction", q.idle_fraction(), &stats.idle_fraction);
    rows.add("end_mean", q.vacation_end_moments(1)?[0], &stats.end_mean);
    let pmf = q.vacation_end_pmf(cfg.pmf_cells)?;
    for (k, (p, e)) in pmf.iter().zip(&stats.end_pmf).enumerate() {
        rows.add(format!("end_pmf[{k}]"), *p, e);
    }
    for (z, e) in stats.probes.pgf_points.iter().zip(&stats.queue_pgf) {
        rows.add(format!("queue_pgf({z})"), q.ell_star(c(*z)).re, e);
    }
    for (s, e) in stats.probes.lst_points.iter().zip(&stats.sojourn_lst) {
        rows.add(format!("sojourn_lst({s})"), q.delay_lst(*s)?, e);
    }
    if let Some(cycles) = &stats.cycles {
        let means = BusyCycle::new(&cfg.model, truncation)?.cycle_means()?;
        rows.add("cycle_customers", means.customers, &cycles.customers);
        rows.add("cycle_length", means.length, &cycles.length);
        rows.add("cycle_vacations", means.vacations, &cycles.vacations);
    }
    Ok(())
}

fn compare(cli: &Cli, path: &Path) -> Result<Dispatched, Failure> {
    let cfg: config::CompareConfig = config::load(path)?;
    stable(&cfg.model)?;
    let truncation = policy(cli, cfg.truncation)?;
    if !(cfg.widths > 0.0) || !(cfg.floor >= 0.0) {
        return Err(Failure::Validation("widths must be > 0 and floor >= 0".into()));
    }
    let sim = sim_config(cli, &cfg.model, &cfg.simulation)?;
    let analytic = cfg.analytic.unwrap_or(sim.kind);
    log::info!("simulating {:?} ({} x {} events, seed {})", sim.kind, sim.replications, sim.horizon, sim.seed);
    let stats = sim::run(&sim)?;

    let mut rows = Rows { rows: Vec::new(), widths: cfg.widths, floor: cfg.floor };
    match analytic {
        SimKind::SingleVacationGated => {
            let q = VacationQueue::new(&cfg.model, &truncation)?;
            vacation_rows(&mut rows, &cfg, &q, &stats, &truncation)?;
        }
        SimKind::MultipleVacationGated => {
            let q = VacationQueue::new(&cfg.model, &truncation)?;
            rows.add("mean_queue", q.mv_comparison().mean_multiple, &stats.mean_queue);
            rows.add("idle_fraction", 0.0, &stats.idle_fraction);
        }
        SimKind::BatchService => {
            let b = BatchQueue::new(&cfg.model, &truncation)?;
            rows.add("rho_star", b.basics().rho_star, &stats.busy_fraction);
            rows.add("mean_queue", b.mean_queue_length()?, &stats.mean_queue);
            rows.add("sojourn_mean", b.mean_delay()?, &stats.sojourn_mean);
            for (s, e) in stats.probes.lst_points.iter().zip(&stats.sojourn_lst) {
                rows.add(format!("sojourn_lst({s})"), b.delay_lst(*s)?, e);
            }
            if let Some(bs) = &stats.batch {
                rows.add("batch_size_mean", b.mean_batch_size(), &bs.size_mean);
                for ([z, s, w], e) in stats.probes.age_residual.iter().zip(&bs.age_residual) {
                    rows.add(format!("age_residual({z},{s},{w})"), b.age_residual_transform(*z, *s, *w)?, e);
                }
            }
        }
    }

    let failed = rows.rows.iter().filter(|r| !r.pass).count();
    let mut table = Table::new(&["observable", "analytic", "simulated", "half_width", "tolerance", "status"]);
    for r in &rows.rows {
        table.push([
            r.observable.clone(),
            r.analytic.to_string(),
            r.simulated.to_string(),
            r.half_width.to_string(),
            r.tolerance.to_string(),
            if r.pass { "PASS" } else { "FAIL" }.to_string(),
        ]);
        if !r.pass {
            log::warn!("{}: analytic {} vs simulated {} +- {}", r.observable, r.analytic, r.simulated, r.half_width);
        }
    }
    let total = rows.rows.len();
    let report = CompareReport {
        model: cfg.model,
        analytic,
        simulated: sim.kind,
        seed: sim.seed,
        replications: sim.replications,
        horizon: sim.horizon,
        widths: cfg.widths,
        all_pass: failed == 0,
        rows: rows.rows,
    };
    let outcome = if failed == 0 { Ok(()) } else { Err(Failure::CompareFailed { failed, total }) };
    Ok((Output::new("compare", &report, table)?, outcome))
}

fn busycycle(cli: &Cli, path: &Path) -> Result<Dispatched, Failure> {
    let cfg: config::BusyCycleConfig = config::load(path)?;
    stable(&cfg.model)?;
    let truncation = policy(cli, cfg.truncation)?;
    let cycle = BusyCycle::new(&cfg.model, &truncation)?;
    let means = cycle.cycle_means()?;
    let pmf = cycle.vacation_count_pmf().unwrap_or_default();
    let mut transforms = Vec::with_capacity(cfg.points.len());
    for [z, omega] in &cfg.points {
        transforms.push(TransformPoint { z: *z, omega: *omega, value: cycle.theta_star(*z, *omega)? });
    }
    let theta: Vec<f64> = pmf.iter().take(cfg.theta_rows).copied().collect();
    let mut table = Table::new(&["n", "theta_n"]);
    for (i, t) in theta.iter().enumerate() {
        table.push([(i + 1).to_string(), t.to_string()]);
    }
    let report = BusyCycleReport {
        model: cfg.model,
        ell_e0: cycle.context().ell_e0(),
        means,
        horizon: pmf.len(),
        theta,
        transforms,
    };
    ok(Output::new("busycycle", &report, table)?)
}

fn batch(cli: &Cli, path: &Path) -> Result<Dispatched, Failure> {
    let cfg: config::BatchConfig = config::load(path)?;
    stable(&cfg.model)?;
    let truncation = policy(cli, cfg.truncation)?;
    let b = BatchQueue::new(&cfg.model, &truncation)?;
    let report_core = b.report(cfg.k_max)?;
    let second = derivative_at(|w| b.delay_lst(w), 0.0, 2, &DerivativeOptions::new(Side::Forward, 0.05).levels(8))?;
    let mut age_residual = Vec::with_capacity(cfg.age_residual.len());
    for [z, s, omega] in &cfg.age_residual {
        age_residual.push(AgeResidualPoint { z: *z, s: *s, omega: *omega, value: b.age_residual_transform(*z, *s, *omega)? });
    }
    let mut table = Table::new(&["k", "queue_pmf", "batch_size_pmf"]);
    for (k, (q, s)) in report_core.queue_pmf.iter().zip(&report_core.batch_size_pmf).enumerate() {
        table.push([k.to_string(), q.to_string(), s.to_string()]);
    }
    let report = BatchCommandReport {
        model: cfg.model,
        rho_star_primitive: b.rho_star_primitive(),
        delay_second_moment: second.value,
        batch: report_core,
        age_residual,
    };
    ok(Output::new("batch", &report, table)?)
}

fn mapcheck(path: &Path) -> Result<Dispatched, Failure> {
    let cfg: config::MapCheckConfig = config::load(path)?;
    cfg.service.validate()?;
    cfg.vacation.validate()?;
    let rep = MapRep::try_from(cfg.map.clone())?;
    let init = match cfg.initial {
        Some(rows) => VectorInitialState::new(rows, rep.phases())?,
        None => VectorInitialState::point(1, &rep.stationary_phase()),
    };
    if cfg.z_grid.iter().any(|z| !(0.0..=1.0).contains(z)) {
        return Err(Failure::Validation("z_grid points must lie in [0, 1]".into()));
    }
    let (commutative, commutator_residual) = is_commutative(&rep);
    let poisson_rate = if commutative { Some(poisson_reduction_check(&rep)?) } else { None };
    let interchange = interchange_residual(&rep, &cfg.service, &cfg.vacation, &init, &cfg.z_grid)?;
    let flagged = interchange.max_residual > cfg.threshold;
    if flagged {
        log::warn!("interchange residual {:.3e} exceeds {:.1e}", interchange.max_residual, cfg.threshold);
    }
    let mut table = Table::new(&["z", "residual", "flagged"]);
    for (z, r) in &interchange.residuals {
        table.push([z.to_string(), r.to_string(), (*r > cfg.threshold).to_string()]);
    }
    let report = MapCheckReport {
        phases: rep.phases(),
        commutative,
        commutator_residual,
        poisson_rate,
        threshold: cfg.threshold,
        flagged,
        interchange,
    };
    ok(Output::new("mapcheck", &report, table)?)
}
