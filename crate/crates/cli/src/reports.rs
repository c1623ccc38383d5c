//! Report bodies placed under `report` in the JSON envelope.

use gatedq::batch::BatchReport;
use gatedq::busy_cycle::CycleMeans;
use gatedq::map_gate::InterchangeReport;
use gatedq::sim::{SimKind, SimStats};
use gatedq::vacation::StationaryQueueReport;
use gatedq::{ModelParams, TruncationPolicy};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveReport {
    pub model: ModelParams,
    pub rho: f64,
    pub truncation: TruncationPolicy,
    pub stationary: StationaryQueueReport,
    pub transient: Option<TransientReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransientReport {
    pub steps: usize,
    pub initial: Vec<f64>,
    pub points: Vec<TransientPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransientPoint {
    pub z: f64,
    /// PGF of the vacation-end count after `steps` vacations.
    pub q_n: f64,
    /// Stationary vacation-end PGF.
    pub ell_e: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateReport {
    pub model: ModelParams,
    pub stats: SimStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareRow {
    pub observable: String,
    pub analytic: f64,
    pub simulated: f64,
    pub half_width: f64,
    /// Allowed `|analytic - simulated|`.
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareReport {
    pub model: ModelParams,
    pub analytic: SimKind,
    pub simulated: SimKind,
    pub seed: u64,
    pub replications: usize,
    pub horizon: u64,
    pub widths: f64,
    pub rows: Vec<CompareRow>,
    pub all_pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformPoint {
    pub z: f64,
    pub omega: f64,
    /// `E[z^N* e^{-omega T*}]`
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusyCycleReport {
    pub model: ModelParams,
    pub ell_e0: f64,
    pub means: CycleMeans,
    /// Number of vacation counts kept by the truncation rule.
    pub horizon: usize,
    /// `P(M* = n)`, `n = 1..`, first rows only.
    pub theta: Vec<f64>,
    pub transforms: Vec<TransformPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgeResidualPoint {
    pub z: f64,
    pub s: f64,
    pub omega: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchCommandReport {
    pub model: ModelParams,
    pub batch: BatchReport,
    pub rho_star_primitive: f64,
    pub delay_second_moment: f64,
    pub age_residual: Vec<AgeResidualPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapCheckReport {
    pub phases: usize,
    pub commutative: bool,
    pub commutator_residual: f64,
    /// Poisson rate when `C` and `D` commute.
    pub poisson_rate: Option<f64>,
    pub threshold: f64,
    /// True when the interchange residual exceeds the threshold.
    pub flagged: bool,
    pub interchange: InterchangeReport,
}
