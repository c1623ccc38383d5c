//! One replication of the event-driven simulation.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::stats::{Histogram, Moments};
use super::{Probes, SimKind};
use crate::dist::Sampler;
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Server {
    Idle,
    /// Serving one customer of a gate; `remaining` more are behind the gate.
    Serving { remaining: usize },
    Vacation,
    /// Batch mode: `size` customers leave together at the next server event.
    Batch { size: usize },
}

/// Raw per-replication values, aggregated across replications by the caller.
#[derive(Debug, Clone, Default)]
pub(crate) struct ReplicationOutput {
    pub time_mean: f64,
    pub time_factorial2: f64,
    pub time_pgf: Vec<f64>,
    pub time_pmf: Vec<f64>,
    pub arrival_pmf: Vec<f64>,
    pub end_mean: f64,
    pub end_factorial2: f64,
    pub end_pmf: Vec<f64>,
    pub end_pgf: Vec<f64>,
    pub start_mean: f64,
    pub start_pgf: Vec<f64>,
    pub sojourn_mean: f64,
    pub sojourn_second: f64,
    pub sojourn_lst: Vec<f64>,
    pub idle_fraction: f64,
    pub busy_fraction: f64,
    pub vacation_fraction: f64,
    pub idle_period_mean: f64,
    pub cycle_length: f64,
    pub cycle_customers: f64,
    pub cycle_vacations: f64,
    pub cycle_vacation_pmf: Vec<f64>,
    pub batch_size_mean: f64,
    pub batch_size_pmf: Vec<f64>,
    pub batch_size_pgf: Vec<f64>,
    pub age_residual: Vec<f64>,
    pub arrivals: u64,
    pub departures: u64,
    pub backlog: u64,
    pub backlog_mid: u64,
    pub gate_violations: u64,
}

struct Cycle {
    start: f64,
    served: u64,
    vacations: u64,
}

struct Engine<'a> {
    kind: SimKind,
    probes: &'a Probes,
    rng: ChaCha8Rng,
    interarrival: Exp<f64>,
    service: Sampler,
    vacation: Sampler,

    now: f64,
    next_arrival: f64,
    next_server: f64,
    server: Server,
    /// Arrival times of customers not yet departed and not in the current batch/service.
    waiting: VecDeque<f64>,
    /// Customers currently being served (one in gated modes, the batch in batch mode).
    in_service: Vec<f64>,
    gate_time: f64,
    batch_start: f64,

    measuring: bool,
    measure_start: f64,

    // time integrals
    area: f64,
    area_factorial2: f64,
    area_pgf: Vec<f64>,
    occupancy: Histogram,
    idle_time: f64,
    busy_time: f64,
    vacation_time: f64,

    arrival_seen: Histogram,
    ends: Histogram,
    end_moments: Moments,
    end_factorial2: f64,
    end_pgf: Vec<f64>,
    starts: Moments,
    start_pgf: Vec<f64>,
    sojourn: Moments,
    sojourn_lst: Vec<f64>,
    idle_periods: Moments,
    idle_since: Option<f64>,
    cycle: Option<Cycle>,
    cycle_length: Moments,
    cycle_customers: Moments,
    cycle_vacations: Moments,
    cycle_vacation_hist: Histogram,
    batch_sizes: Histogram,
    batch_moments: Moments,
    batch_pgf: Vec<f64>,
    age_residual_sum: Vec<f64>,
    service_time_total: f64,

    arrivals: u64,
    departures: u64,
    gate_violations: u64,
}

pub(crate) fn run_replication(
    kind: SimKind,
    params: &ModelParams,
    probes: &Probes,
    warmup: u64,
    horizon: u64,
    rng: ChaCha8Rng,
) -> ReplicationOutput {
    let mut engine = Engine::new(kind, params, probes, rng);
    let mut backlog_mid = 0;
    for event in 0..horizon {
        if event == warmup {
            engine.start_measuring();
        }
        if event == horizon / 2 {
            backlog_mid = engine.system_size() as u64;
        }
        engine.step();
    }
    let mut out = engine.finish();
    out.backlog_mid = backlog_mid;
    out
}

impl<'a> Engine<'a> {
    fn new(kind: SimKind, params: &ModelParams, probes: &'a Probes, mut rng: ChaCha8Rng) -> Self {
        let interarrival = Exp::new(params.lambda).expect("validated arrival rate");
        let first = interarrival.sample(&mut rng);
        let cap = probes.pmf_cap;
        Self {
            kind,
            probes,
            rng,
            interarrival,
            service: params.service.sampler(),
            vacation: params.vacation.sampler(),
            now: 0.0,
            next_arrival: first,
            next_server: f64::INFINITY,
            server: Server::Idle,
            waiting: VecDeque::new(),
            in_service: Vec::new(),
            gate_time: 0.0,
            batch_start: 0.0,
            measuring: false,
            measure_start: 0.0,
            area: 0.0,
            area_factorial2: 0.0,
            area_pgf: vec![0.0; probes.pgf_points.len()],
            occupancy: Histogram::new(cap),
            idle_time: 0.0,
            busy_time: 0.0,
            vacation_time: 0.0,
            arrival_seen: Histogram::new(cap),
            ends: Histogram::new(cap),
            end_moments: Moments::default(),
            end_factorial2: 0.0,
            end_pgf: vec![0.0; probes.pgf_points.len()],
            starts: Moments::default(),
            start_pgf: vec![0.0; probes.pgf_points.len()],
            sojourn: Moments::default(),
            sojourn_lst: vec![0.0; probes.lst_points.len()],
            idle_periods: Moments::default(),
            idle_since: Some(0.0),
            cycle: None,
            cycle_length: Moments::default(),
            cycle_customers: Moments::default(),
            cycle_vacations: Moments::default(),
            cycle_vacation_hist: Histogram::new(cap),
            batch_sizes: Histogram::new(cap),
            batch_moments: Moments::default(),
            batch_pgf: vec![0.0; probes.pgf_points.len()],
            age_residual_sum: vec![0.0; probes.age_residual.len()],
            service_time_total: 0.0,
            arrivals: 0,
            departures: 0,
            gate_violations: 0,
        }
    }

    fn system_size(&self) -> usize {
        self.waiting.len() + self.in_service.len()
    }

    fn start_measuring(&mut self) {
        self.measuring = true;
        self.measure_start = self.now;
        // a cycle or idle period already in progress started before the window
        self.cycle = None;
        self.idle_since = None;
    }

    fn step(&mut self) {
        let t = self.next_arrival.min(self.next_server);
        self.advance(t);
        if self.next_arrival <= self.next_server {
            self.on_arrival();
        } else {
            match self.server {
                Server::Serving { remaining } => self.on_service_end(remaining),
                Server::Vacation => self.on_vacation_end(),
                Server::Batch { size } => self.on_batch_end(size),
                Server::Idle => unreachable!("idle server has no pending event"),
            }
        }
    }

    fn advance(&mut self, t: f64) {
        let dt = t - self.now;
        if self.measuring && dt > 0.0 {
            let l = self.system_size();
            let lf = l as f64;
            self.area += lf * dt;
            self.area_factorial2 += lf * (lf - 1.0) * dt;
            for (acc, z) in self.area_pgf.iter_mut().zip(&self.probes.pgf_points) {
                *acc += z.powi(l as i32) * dt;
            }
            self.occupancy.add(l, dt);
            match self.server {
                Server::Idle => self.idle_time += dt,
                Server::Vacation => self.vacation_time += dt,
                Server::Serving { .. } | Server::Batch { .. } => self.busy_time += dt,
            }
        }
        self.now = t;
    }

    fn on_arrival(&mut self) {
        self.arrivals += 1;
        if self.measuring {
            self.arrival_seen.add(self.system_size(), 1.0);
        }
        self.next_arrival = self.now + self.interarrival.sample(&mut self.rng);
        if self.server != Server::Idle {
            self.waiting.push_back(self.now);
            return;
        }
        if let Some(since) = self.idle_since.take() {
            self.idle_periods.add(self.now - since);
        }
        if self.measuring {
            self.cycle = Some(Cycle { start: self.now, served: 0, vacations: 0 });
        }
        self.gate_time = self.now;
        match self.kind {
            SimKind::BatchService => {
                self.in_service.push(self.now);
                self.start_batch();
            }
            SimKind::SingleVacationGated | SimKind::MultipleVacationGated => {
                self.in_service.push(self.now);
                self.server = Server::Serving { remaining: 0 };
                self.next_server = self.now + self.service.draw(&mut self.rng);
            }
        }
    }

    fn depart(&mut self, arrival: f64) {
        self.departures += 1;
        if arrival > self.gate_time {
            self.gate_violations += 1;
        }
        if self.measuring && arrival >= self.measure_start {
            let d = self.now - arrival;
            self.sojourn.add(d);
            for (acc, s) in self.sojourn_lst.iter_mut().zip(&self.probes.lst_points) {
                *acc += (-s * d).exp();
            }
        }
        if let Some(c) = self.cycle.as_mut() {
            c.served += 1;
        }
    }

    fn on_service_end(&mut self, remaining: usize) {
        let customer = self.in_service.pop().expect("a customer is in service");
        self.depart(customer);
        if remaining > 0 {
            let next = self.waiting.pop_front().expect("gated customers are waiting");
            self.in_service.push(next);
            self.server = Server::Serving { remaining: remaining - 1 };
            self.next_server = self.now + self.service.draw(&mut self.rng);
        } else {
            self.start_vacation();
        }
    }

    fn start_vacation(&mut self) {
        if self.measuring {
            let l = self.waiting.len();
            self.starts.add(l as f64);
            for (acc, z) in self.start_pgf.iter_mut().zip(&self.probes.pgf_points) {
                *acc += z.powi(l as i32);
            }
        }
        self.server = Server::Vacation;
        self.next_server = self.now + self.vacation.draw(&mut self.rng);
    }

    fn record_end(&mut self, l: usize) {
        if !self.measuring {
            return;
        }
        let lf = l as f64;
        self.ends.add(l, 1.0);
        self.end_moments.add(lf);
        self.end_factorial2 += lf * (lf - 1.0);
        for (acc, z) in self.end_pgf.iter_mut().zip(&self.probes.pgf_points) {
            *acc += z.powi(l as i32);
        }
    }

    fn close_cycle(&mut self) {
        if let Some(c) = self.cycle.take() {
            self.cycle_length.add(self.now - c.start);
            self.cycle_customers.add(c.served as f64);
            self.cycle_vacations.add(c.vacations as f64);
            self.cycle_vacation_hist.add(c.vacations as usize, 1.0);
        }
        self.idle_since = self.measuring.then_some(self.now);
    }

    fn on_vacation_end(&mut self) {
        let l = self.waiting.len();
        self.record_end(l);
        if let Some(c) = self.cycle.as_mut() {
            c.vacations += 1;
        }
        if l == 0 {
            match self.kind {
                SimKind::MultipleVacationGated => self.start_vacation(),
                _ => {
                    self.server = Server::Idle;
                    self.next_server = f64::INFINITY;
                    self.close_cycle();
                }
            }
            return;
        }
        self.gate_time = self.now;
        let first = self.waiting.pop_front().expect("nonempty");
        self.in_service.push(first);
        self.server = Server::Serving { remaining: l - 1 };
        self.next_server = self.now + self.service.draw(&mut self.rng);
    }

    /// Starts serving `in_service` as one batch.
    fn start_batch(&mut self) {
        let size = self.in_service.len();
        let mut duration = self.vacation.draw(&mut self.rng);
        for _ in 0..size {
            duration += self.service.draw(&mut self.rng);
        }
        if self.measuring {
            self.batch_sizes.add(size, 1.0);
            self.batch_moments.add(size as f64);
            for (acc, z) in self.batch_pgf.iter_mut().zip(&self.probes.pgf_points) {
                *acc += z.powi(size as i32);
            }
        }
        self.batch_start = self.now;
        self.server = Server::Batch { size };
        self.next_server = self.now + duration;
    }

    fn on_batch_end(&mut self, size: usize) {
        let duration = self.now - self.batch_start;
        if self.measuring && self.batch_start >= self.measure_start {
            self.service_time_total += duration;
            for (acc, [z, s, w]) in self.age_residual_sum.iter_mut().zip(&self.probes.age_residual) {
                // integral over the service of e^{-s age - w residual}
                let kernel = if s == w {
                    duration * (-s * duration).exp()
                } else {
                    ((-w * duration).exp() - (-s * duration).exp()) / (s - w)
                };
                *acc += z.powi(size as i32) * kernel;
            }
        }
        let served = std::mem::take(&mut self.in_service);
        for arrival in served {
            self.depart(arrival);
        }
        let l = self.waiting.len();
        self.record_end(l);
        if l == 0 {
            self.server = Server::Idle;
            self.next_server = f64::INFINITY;
            self.close_cycle();
            return;
        }
        self.gate_time = self.now;
        self.in_service = self.waiting.drain(..).collect();
        self.start_batch();
    }

    fn finish(mut self) -> ReplicationOutput {
        let t = self.now - self.measure_start;
        let div = |acc: &[f64], n: f64| acc.iter().map(|a| a / n).collect::<Vec<f64>>();
        let ends = self.end_moments.count;
        let batch_count = self.batch_moments.count;
        let sojourns = self.sojourn.count;
        ReplicationOutput {
            time_mean: self.area / t,
            time_factorial2: self.area_factorial2 / t,
            time_pgf: div(&self.area_pgf, t),
            time_pmf: self.occupancy.normalized(),
            arrival_pmf: self.arrival_seen.normalized(),
            end_mean: self.end_moments.mean(),
            end_factorial2: self.end_factorial2 / ends,
            end_pmf: self.ends.normalized(),
            end_pgf: div(&self.end_pgf, ends),
            start_mean: self.starts.mean(),
            start_pgf: div(&self.start_pgf, self.starts.count),
            sojourn_mean: self.sojourn.mean(),
            sojourn_second: self.sojourn.second(),
            sojourn_lst: div(&self.sojourn_lst, sojourns),
            idle_fraction: self.idle_time / t,
            busy_fraction: self.busy_time / t,
            vacation_fraction: self.vacation_time / t,
            idle_period_mean: self.idle_periods.mean(),
            cycle_length: self.cycle_length.mean(),
            cycle_customers: self.cycle_customers.mean(),
            cycle_vacations: self.cycle_vacations.mean(),
            cycle_vacation_pmf: self.cycle_vacation_hist.normalized(),
            batch_size_mean: self.batch_moments.mean(),
            batch_size_pmf: self.batch_sizes.normalized(),
            batch_size_pgf: div(&self.batch_pgf, batch_count),
            age_residual: div(&self.age_residual_sum, self.service_time_total),
            arrivals: self.arrivals,
            departures: self.departures,
            backlog: self.system_size() as u64,
            backlog_mid: 0,
            gate_violations: std::mem::take(&mut self.gate_violations),
        }
    }
}

/// `Q_n` of the embedded vacation-end chain, started from `q0`.
pub(crate) fn transient_path<R: Rng>(
    params: &ModelParams,
    service: &Sampler,
    vacation: &Sampler,
    q0: usize,
    n: usize,
    rng: &mut R,
) -> usize {
    let mut q = q0;
    for _ in 0..n {
        // an empty gate idles until one arrival, which is served alone
        let served = q.max(1);
        let mut busy = vacation.draw(rng);
        for _ in 0..served {
            busy += service.draw(rng);
        }
        q = poisson_count(params.lambda * busy, rng);
    }
    q
}

fn poisson_count<R: Rng>(mean: f64, rng: &mut R) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    rand_distr::Poisson::new(mean).map(|p| p.sample(rng) as usize).unwrap_or(0)
}
