//! Discrete-event simulation of the gated vacation queues and the batch-service
//! queue, used as an independent check of the analytic solvers.
//!
//! Each replication owns a ChaCha8 stream derived from `(seed, replication)`,
//! so results do not depend on thread scheduling.

mod engine;
pub mod stats;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InitialState, ModelParams};
pub use stats::{aggregate_vectors, Estimate};

use engine::{run_replication, transient_path, ReplicationOutput};

pub const MIN_HORIZON: u64 = 100_000;
pub const MIN_REPLICATIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimKind {
    /// One vacation after each gate; the server idles if it finds nobody.
    SingleVacationGated,
    /// Vacations repeat until a customer is found.
    MultipleVacationGated,
    /// All waiting customers form one batch, released together after `sum H + V`.
    BatchService,
}

/// Where the simulator evaluates transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Probes {
    /// Queue-length histograms keep cells `0..pmf_cap` plus an overflow cell.
    pub pmf_cap: usize,
    pub pgf_points: Vec<f64>,
    pub lst_points: Vec<f64>,
    /// `(z, s, omega)` triples for the batch age/residual transform.
    pub age_residual: Vec<[f64; 3]>,
}

impl Default for Probes {
    fn default() -> Self {
        Self {
            pmf_cap: 64,
            pgf_points: vec![0.25, 0.5, 0.75],
            lst_points: vec![0.5, 1.0],
            age_residual: vec![[1.0, 0.5, 0.3]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub kind: SimKind,
    pub params: ModelParams,
    /// Events discarded before measuring; defaults to a tenth of the horizon.
    #[serde(default)]
    pub warmup: Option<u64>,
    /// Events simulated per replication, warmup included.
    pub horizon: u64,
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub probes: Probes,
}

impl SimConfig {
    pub fn new(kind: SimKind, params: ModelParams, horizon: u64, replications: usize, seed: u64) -> Self {
        Self { kind, params, warmup: None, horizon, replications, seed, probes: Probes::default() }
    }

    pub fn warmup_events(&self) -> u64 {
        self.warmup.unwrap_or(self.horizon / 10)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate_shape()?;
        if self.horizon < MIN_HORIZON {
            return Err(Error::InvalidSimConfig(format!(
                "horizon must be at least {MIN_HORIZON} events, got {}",
                self.horizon
            )));
        }
        if self.replications < MIN_REPLICATIONS {
            return Err(Error::InvalidSimConfig(format!(
                "replications must be at least {MIN_REPLICATIONS}, got {}",
                self.replications
            )));
        }
        if self.warmup_events() >= self.horizon {
            return Err(Error::InvalidSimConfig(format!(
                "warmup ({}) must be below the horizon ({})",
                self.warmup_events(),
                self.horizon
            )));
        }
        let p = &self.probes;
        if p.pmf_cap == 0 {
            return Err(Error::InvalidSimConfig("pmf_cap must be positive".into()));
        }
        if p.pgf_points.iter().any(|z| !(0.0..=1.0).contains(z)) {
            return Err(Error::InvalidSimConfig("pgf points must lie in [0, 1]".into()));
        }
        if p.lst_points.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidSimConfig("lst points must be finite and >= 0".into()));
        }
        if p.age_residual.iter().any(|[z, s, w]| {
            !(0.0..=1.0).contains(z) || !(s.is_finite() && *s >= 0.0) || !(w.is_finite() && *w >= 0.0)
        }) {
            return Err(Error::InvalidSimConfig(
                "age/residual probes need z in [0, 1] and s, omega >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Busy-cycle averages; a cycle runs from the end of one idle period to the
/// start of the next. Absent for multiple vacations, where the server never idles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleStats {
    pub length: Estimate,
    pub customers: Estimate,
    pub vacations: Estimate,
    pub vacations_pmf: Vec<Estimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub size_mean: Estimate,
    pub size_pmf: Vec<Estimate>,
    pub size_pgf: Vec<Estimate>,
    /// Time-stationary `E[z^size e^{-s age - omega residual}]` during service.
    pub age_residual: Vec<Estimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub kind: SimKind,
    pub replications: usize,
    pub events_per_replication: u64,
    pub warmup: u64,
    pub seed: u64,

    pub mean_queue: Estimate,
    pub queue_factorial2: Estimate,
    pub queue_pgf: Vec<Estimate>,
    pub prob_empty: Estimate,
    /// Time-average pmf; the last cell is the overflow `P(L >= pmf_cap)`.
    pub queue_pmf: Vec<Estimate>,
    pub arrival_seen_pmf: Vec<Estimate>,

    /// Waiting count at vacation ends (batch completions in batch mode).
    pub end_mean: Estimate,
    pub end_factorial2: Estimate,
    pub end_pmf: Vec<Estimate>,
    pub end_pgf: Vec<Estimate>,
    /// Waiting count at vacation starts; absent in batch mode.
    pub start_mean: Option<Estimate>,
    pub start_pgf: Option<Vec<Estimate>>,

    pub sojourn_mean: Estimate,
    pub sojourn_second: Estimate,
    pub sojourn_lst: Vec<Estimate>,

    pub idle_fraction: Estimate,
    pub busy_fraction: Estimate,
    pub vacation_fraction: Estimate,
    pub idle_period_mean: Option<Estimate>,

    pub cycles: Option<CycleStats>,
    pub batch: Option<BatchStats>,

    /// Replications where `arrivals != departures + backlog`.
    pub conservation_violations: u64,
    /// Departures of customers who arrived after their gate closed.
    pub gate_violations: u64,
    /// Set when the backlog grows steadily over the second half of the run.
    pub divergent: bool,
    /// Mean backlog growth per event over the second half.
    pub backlog_drift: f64,

    pub probes: Probes,
}

/// Backlog growth per event above which a run is flagged as divergent.
pub const DIVERGENCE_DRIFT: f64 = 1e-3;

impl SimStats {
    /// Named scalar observables, in a fixed order, for comparison tables.
    pub fn scalar_observables(&self) -> Vec<(String, Estimate)> {
        let mut out = vec![
            ("mean_queue".to_string(), self.mean_queue),
            ("queue_factorial2".to_string(), self.queue_factorial2),
            ("prob_empty".to_string(), self.prob_empty),
            ("end_mean".to_string(), self.end_mean),
            ("end_factorial2".to_string(), self.end_factorial2),
            ("sojourn_mean".to_string(), self.sojourn_mean),
            ("sojourn_second".to_string(), self.sojourn_second),
            ("idle_fraction".to_string(), self.idle_fraction),
        ];
        for (z, e) in self.probes.pgf_points.iter().zip(&self.queue_pgf) {
            out.push((format!("queue_pgf({z})"), *e));
        }
        for (z, e) in self.probes.pgf_points.iter().zip(&self.end_pgf) {
            out.push((format!("end_pgf({z})"), *e));
        }
        for (s, e) in self.probes.lst_points.iter().zip(&self.sojourn_lst) {
            out.push((format!("sojourn_lst({s})"), *e));
        }
        if let Some(m) = self.start_mean {
            out.push(("start_mean".to_string(), m));
        }
        if let Some(c) = &self.cycles {
            out.push(("cycle_length".to_string(), c.length));
            out.push(("cycle_customers".to_string(), c.customers));
            out.push(("cycle_vacations".to_string(), c.vacations));
        }
        if let Some(b) = &self.batch {
            out.push(("batch_size_mean".to_string(), b.size_mean));
            for ([z, s, w], e) in self.probes.age_residual.iter().zip(&b.age_residual) {
                out.push((format!("age_residual({z},{s},{w})"), *e));
            }
        }
        out
    }
}

fn replication_rng(seed: u64, replication: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication as u64);
    rng
}

/// Runs all replications in parallel and aggregates them.
pub fn run(config: &SimConfig) -> Result<SimStats> {
    config.validate()?;
    let warmup = config.warmup_events();
    let reps: Vec<ReplicationOutput> = (0..config.replications)
        .into_par_iter()
        .map(|r| {
            run_replication(
                config.kind,
                &config.params,
                &config.probes,
                warmup,
                config.horizon,
                replication_rng(config.seed, r),
            )
        })
        .collect();

    let scalar = |f: fn(&ReplicationOutput) -> f64| {
        Estimate::from_replications(&reps.iter().map(f).collect::<Vec<_>>())
    };
    let vector = |f: fn(&ReplicationOutput) -> &Vec<f64>| {
        aggregate_vectors(&reps.iter().map(|r| f(r).clone()).collect::<Vec<_>>())
    };

    let queue_pmf = vector(|r| &r.time_pmf);
    let prob_empty = queue_pmf[0];
    let gated = config.kind != SimKind::BatchService;
    let idles = config.kind != SimKind::MultipleVacationGated;

    let cycles = idles.then(|| CycleStats {
        length: scalar(|r| r.cycle_length),
        customers: scalar(|r| r.cycle_customers),
        vacations: scalar(|r| r.cycle_vacations),
        vacations_pmf: vector(|r| &r.cycle_vacation_pmf),
    });
    let batch = (!gated).then(|| BatchStats {
        size_mean: scalar(|r| r.batch_size_mean),
        size_pmf: vector(|r| &r.batch_size_pmf),
        size_pgf: vector(|r| &r.batch_size_pgf),
        age_residual: vector(|r| &r.age_residual),
    });

    let conservation_violations =
        reps.iter().filter(|r| r.arrivals != r.departures + r.backlog).count() as u64;
    let half = (config.horizon - config.horizon / 2).max(1) as f64;
    let backlog_drift = reps
        .iter()
        .map(|r| (r.backlog as f64 - r.backlog_mid as f64) / half)
        .sum::<f64>()
        / reps.len() as f64;
    let divergent = backlog_drift > DIVERGENCE_DRIFT;
    if divergent {
        log::warn!("simulated backlog grows by {backlog_drift:.3e} per event; the queue looks unstable");
    }

    Ok(SimStats {
        kind: config.kind,
        replications: config.replications,
        events_per_replication: config.horizon,
        warmup,
        seed: config.seed,
        mean_queue: scalar(|r| r.time_mean),
        queue_factorial2: scalar(|r| r.time_factorial2),
        queue_pgf: vector(|r| &r.time_pgf),
        prob_empty,
        queue_pmf,
        arrival_seen_pmf: vector(|r| &r.arrival_pmf),
        end_mean: scalar(|r| r.end_mean),
        end_factorial2: scalar(|r| r.end_factorial2),
        end_pmf: vector(|r| &r.end_pmf),
        end_pgf: vector(|r| &r.end_pgf),
        start_mean: gated.then(|| scalar(|r| r.start_mean)),
        start_pgf: gated.then(|| vector(|r| &r.start_pgf)),
        sojourn_mean: scalar(|r| r.sojourn_mean),
        sojourn_second: scalar(|r| r.sojourn_second),
        sojourn_lst: vector(|r| &r.sojourn_lst),
        idle_fraction: scalar(|r| r.idle_fraction),
        busy_fraction: scalar(|r| r.busy_fraction),
        vacation_fraction: scalar(|r| r.vacation_fraction),
        idle_period_mean: idles.then(|| scalar(|r| r.idle_period_mean)),
        cycles,
        batch,
        conservation_violations,
        gate_violations: reps.iter().map(|r| r.gate_violations).sum(),
        divergent,
        backlog_drift,
        probes: config.probes.clone(),
    })
}

/// Distribution of the vacation-end count after `n` steps, by direct simulation
/// of the embedded chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransientStats {
    pub steps: usize,
    pub paths_per_replication: usize,
    /// Cells `0..pmf_cap` plus overflow.
    pub pmf: Vec<Estimate>,
    pub pgf_points: Vec<f64>,
    pub pgf: Vec<Estimate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransientConfig {
    pub steps: usize,
    pub paths_per_replication: usize,
    pub replications: usize,
    pub seed: u64,
    pub pmf_cap: usize,
    pub pgf_points: Vec<f64>,
}

pub fn run_transient(params: &ModelParams, init: &InitialState, config: &TransientConfig) -> Result<TransientStats> {
    params.validate_shape()?;
    if config.replications < 2 || config.paths_per_replication == 0 {
        return Err(Error::InvalidSimConfig(
            "transient runs need at least 2 replications and one path each".into(),
        ));
    }
    let weights = WeightedIndex::new(init.pmf())
        .map_err(|e| Error::InvalidInitialState(format!("cannot sample the initial law: {e}")))?;
    let service = params.service.sampler();
    let vacation = params.vacation.sampler();
    let cap = config.pmf_cap.max(1);
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = replication_rng(config.seed, r);
            let mut pmf = vec![0.0; cap + 1];
            let mut pgf = vec![0.0; config.pgf_points.len()];
            for _ in 0..config.paths_per_replication {
                let q0 = weights.sample(&mut rng);
                let q = transient_path(params, &service, &vacation, q0, config.steps, &mut rng);
                pmf[q.min(cap)] += 1.0;
                for (acc, z) in pgf.iter_mut().zip(&config.pgf_points) {
                    *acc += z.powi(q as i32);
                }
            }
            let m = config.paths_per_replication as f64;
            pmf.iter_mut().for_each(|p| *p /= m);
            pgf.iter_mut().for_each(|p| *p /= m);
            (pmf, pgf)
        })
        .collect();
    let (pmfs, pgfs): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    Ok(TransientStats {
        steps: config.steps,
        paths_per_replication: config.paths_per_replication,
        pmf: aggregate_vectors(&pmfs),
        pgf_points: config.pgf_points.clone(),
        pgf: aggregate_vectors(&pgfs),
    })
}

/// Draws a uniform `[0, 1)` value from a replication stream; exposed for tests
/// that check stream independence.
pub fn stream_probe(seed: u64, replication: usize) -> f64 {
    replication_rng(seed, replication).random()
}
