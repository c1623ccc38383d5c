//! Per-subcommand configuration files. Every struct rejects unknown keys.

use std::path::Path;

use gatedq::map_gate::MapRows;
use gatedq::sim::{Probes, SimKind};
use gatedq::{DistSpec, ModelParams, TruncationPolicy};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::Failure;

/// Reads a JSON config from `path`, or from stdin when `path` is `-`.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = if path == Path::new("-") {
        std::io::read_to_string(std::io::stdin())
    } else {
        std::fs::read_to_string(path)
    }
    .map_err(|e| Failure::Validation(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Validation(format!("config {}: {e}", path.display())))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub model: ModelParams,
    #[serde(default)]
    pub truncation: Option<TruncationPolicy>,
    /// Highest factorial moment reported, 1..=4.
    #[serde(default = "default_order")]
    pub order: usize,
    /// The pmf support grows until less than this mass is missing.
    #[serde(default = "default_pmf_tail")]
    pub pmf_tail: f64,
    #[serde(default)]
    pub transient: Option<TransientSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransientSection {
    /// `P(Q_0 = k)`, `k = 0..`.
    pub initial: Vec<f64>,
    pub steps: usize,
    #[serde(default = "default_z_points")]
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub kind: SimKind,
    pub horizon: u64,
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub warmup: Option<u64>,
    #[serde(default)]
    pub probes: Probes,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub model: ModelParams,
    pub simulation: SimulationSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub model: ModelParams,
    pub simulation: SimulationSection,
    /// Which analytic solver to compare against; defaults to the simulated kind.
    #[serde(default)]
    pub analytic: Option<SimKind>,
    #[serde(default)]
    pub truncation: Option<TruncationPolicy>,
    /// Tolerance in 95% replication half-widths.
    #[serde(default = "default_widths")]
    pub widths: f64,
    /// Absolute tolerance floor for observables with zero spread.
    #[serde(default = "default_floor")]
    pub floor: f64,
    /// Vacation-end pmf cells compared, `0..=pmf_cells`.
    #[serde(default = "default_pmf_cells")]
    pub pmf_cells: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusyCycleConfig {
    pub model: ModelParams,
    #[serde(default)]
    pub truncation: Option<TruncationPolicy>,
    /// `(z, omega)` points for the joint transform of `N*` and `T*`.
    #[serde(default)]
    pub points: Vec<[f64; 2]>,
    /// Rows of the `theta_n(1, 0) = P(M* = n)` table.
    #[serde(default = "default_theta_rows")]
    pub theta_rows: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchConfig {
    pub model: ModelParams,
    #[serde(default)]
    pub truncation: Option<TruncationPolicy>,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    /// `(z, s, omega)` points for the age/residual transform.
    #[serde(default)]
    pub age_residual: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapCheckConfig {
    pub map: MapRows,
    pub service: DistSpec,
    pub vacation: DistSpec,
    /// Row vectors `q_0(k)`; defaults to one customer in the stationary phase.
    #[serde(default)]
    pub initial: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_z_grid")]
    pub z_grid: Vec<f64>,
    /// Residuals above this are flagged.
    #[serde(default = "default_map_threshold")]
    pub threshold: f64,
}

fn default_order() -> usize {
    2
}

fn default_pmf_tail() -> f64 {
    1e-7
}

fn default_z_points() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75]
}

fn default_widths() -> f64 {
    3.0
}

fn default_floor() -> f64 {
    1e-6
}

fn default_pmf_cells() -> usize {
    10
}

fn default_theta_rows() -> usize {
    20
}

fn default_k_max() -> usize {
    20
}

fn default_z_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

fn default_map_threshold() -> f64 {
    1e-8
}
