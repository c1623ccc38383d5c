//! Busy cycles of the gated single-vacation queue: the number of customers
//! served `N*`, the cycle length `T*` and the number of vacations `M*`
//! between the end of one idle period and the start of the next.
//!
//! Transforms follow ancestral lines of the branching process: line 0 is
//! the customer that ends the idle period, line `m >= 1` is seeded by the
//! arrivals during vacation `m`.

use serde::{Deserialize, Serialize};

use crate::branching::SolveContext;
use crate::error::{Error, Result};
use crate::model::{ModelParams, TruncationPolicy};
use crate::numerics::{derivative_at, Derivative, DerivativeOptions, Side};

/// Longest vacation-count series the renewal recursion will build.
pub const MAX_CYCLE_TERMS: usize = 20_000;

const THETA_CUTOFF: f64 = 1e-14;
/// The renewal recursion subtracts O(1) quantities, so `theta_n` carries an
/// absolute roundoff floor of a few ulps that `1e-14 / n` eventually undercuts.
const THETA_NOISE: f64 = 16.0 * f64::EPSILON;
const IDENTITY_WARNING: f64 = 1e-4;

/// One generation of the three-argument recursions at real arguments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleGeneration {
    pub k: usize,
    pub psi_h: f64,
    pub psi_v: f64,
}

/// `psi_h(k) = z h(w + lambda - lambda psi_h(k-1))`, `psi_v(k) = v(w + lambda - lambda psi_h(k-1))`,
/// seeded with `psi_h(0) = eta`.
#[derive(Debug, Clone)]
pub struct CycleGenerations<'a> {
    params: &'a ModelParams,
    z: f64,
    omega: f64,
    prev_comp_h: f64,
    k: usize,
}

impl<'a> CycleGenerations<'a> {
    pub fn new(params: &'a ModelParams, z: f64, omega: f64, eta: f64) -> Self {
        Self { params, z, omega, prev_comp_h: 1.0 - eta, k: 0 }
    }
}

impl Iterator for CycleGenerations<'_> {
    type Item = CycleGeneration;

    fn next(&mut self) -> Option<CycleGeneration> {
        let arg = self.omega + self.params.lambda * self.prev_comp_h;
        let psi_v = self.params.vacation.transform_real(arg);
        let comp_h = (1.0 - self.z) + self.z * self.params.service.complement_real(arg);
        self.prev_comp_h = comp_h;
        self.k += 1;
        Some(CycleGeneration { k: self.k, psi_h: 1.0 - comp_h, psi_v })
    }
}

fn check_arguments(z: f64, omega: f64, eta: f64) -> Result<()> {
    if !(z > 0.0 && z <= 1.0) {
        return Err(Error::InvalidModel(format!("z must lie in (0, 1], got {z}")));
    }
    if !(omega >= 0.0) {
        return Err(Error::Domain(omega));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidModel(format!("eta must lie in [0, 1], got {eta}")));
    }
    Ok(())
}

pub fn psi_h3(params: &ModelParams, k: usize, z: f64, omega: f64, eta: f64) -> Result<f64> {
    check_arguments(z, omega, eta)?;
    if k == 0 {
        return Ok(eta);
    }
    Ok(CycleGenerations::new(params, z, omega, eta).nth(k - 1).map(|g| g.psi_h).unwrap_or(1.0))
}

pub fn psi_v3(params: &ModelParams, k: usize, z: f64, omega: f64, eta: f64) -> Result<f64> {
    check_arguments(z, omega, eta)?;
    if k == 0 {
        return Err(Error::InvalidModel("psi_v3 is defined for k >= 1".into()));
    }
    Ok(CycleGenerations::new(params, z, omega, eta).nth(k - 1).map(|g| g.psi_v).unwrap_or(1.0))
}

fn vacation_count_reference(ctx: &SolveContext) -> Result<Vec<f64>> {
    let params = ctx.params();
    let floor = ctx.diagnostics().n_star;
    let mut terms = (2 * floor).max(64);
    loop {
        let theta = theta_series(params, 1.0, 0.0, terms.min(MAX_CYCLE_TERMS))?;
        if let Some(stop) = (floor..theta.len()).find(|&n| theta[n] < (THETA_CUTOFF / (n + 1) as f64).max(THETA_NOISE)) {
            let mut reference = theta;
            reference.truncate(stop + 1);
            return Ok(reference);
        }
        if terms >= MAX_CYCLE_TERMS {
            return Err(Error::NonConvergence { what: "busy-cycle vacation-count series", iterations: MAX_CYCLE_TERMS });
        }
        terms *= 2;
    }
}

/// `theta_n(z, w) = E[z^N* e^{-w T*}; M* = n]` for `n = 1..=terms`, from the
/// discrete renewal equation
/// `psi_h(n) prod_{m<=n} psi_v(m) = theta_n + sum_{k<n} theta_k prod_{m<=n-k} psi_v(m)`.
pub fn theta_series(params: &ModelParams, z: f64, omega: f64, terms: usize) -> Result<Vec<f64>> {
    check_arguments(z, omega, 0.0)?;
    if terms > MAX_CYCLE_TERMS {
        return Err(Error::NonConvergence { what: "busy-cycle renewal recursion", iterations: MAX_CYCLE_TERMS });
    }
    let mut products = Vec::with_capacity(terms + 1);
    products.push(1.0);
    let mut theta: Vec<f64> = Vec::with_capacity(terms);
    for g in CycleGenerations::new(params, z, omega, 0.0).take(terms) {
        let p = products[g.k - 1] * g.psi_v;
        products.push(p);
        let renewal: f64 = theta.iter().enumerate().map(|(k, t)| t * products[g.k - k - 1]).sum();
        theta.push(g.psi_h * p - renewal);
    }
    Ok(theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleMeans {
    /// `E[N*]`
    pub customers: f64,
    /// `E[T*]`
    pub length: f64,
    /// `E[M*]`
    pub vacations: f64,
    pub customers_error: f64,
    pub length_error: f64,
    /// `|(1/lambda)/(E[T*] + 1/lambda) - (1 - rho) p|`, both sides being the idle fraction.
    pub idle_identity_residual: f64,
}

/// Busy-cycle transforms of a stable model.
#[derive(Debug, Clone)]
pub struct BusyCycle {
    ctx: SolveContext,
    /// `P(M* = n)`; absent when the renewal recursion needs more than
    /// `MAX_CYCLE_TERMS` terms.
    reference: Option<Vec<f64>>,
}

impl BusyCycle {
    /// Resolves how many vacation counts matter: `theta_n(1, 0)` is computed
    /// until it drops below `1e-14 / n` (or the roundoff floor) past the
    /// generation truncation index.
    /// Every other `(z, w)` reuses that horizon since `|theta_n(z, w)| <= theta_n(1, 0)`.
    pub fn new(params: &ModelParams, policy: &TruncationPolicy) -> Result<Self> {
        let ctx = SolveContext::new(params, policy)?;
        let reference = match vacation_count_reference(&ctx) {
            Ok(r) => Some(r),
            Err(Error::NonConvergence { iterations, .. }) => {
                log::info!("vacation-count pmf needs more than {iterations} terms; using the ratio form only");
                None
            }
            Err(e) => return Err(e),
        };
        Ok(Self { ctx, reference })
    }

    pub fn params(&self) -> &ModelParams {
        self.ctx.params()
    }

    pub fn context(&self) -> &SolveContext {
        &self.ctx
    }

    /// `P(M* = n)`, `n = 1..`, when its horizon fits in `MAX_CYCLE_TERMS`.
    pub fn vacation_count_pmf(&self) -> Option<&[f64]> {
        self.reference.as_deref()
    }

    pub fn horizon(&self) -> Option<usize> {
        self.reference.as_ref().map(Vec::len)
    }

    pub fn theta_n(&self, n: usize, z: f64, omega: f64) -> Result<f64> {
        if n == 0 {
            return Err(Error::InvalidModel("theta_n is defined for n >= 1".into()));
        }
        Ok(theta_series(self.params(), z, omega, n)?[n - 1])
    }

    /// `sum_n theta_n(z, w)` over the resolved horizon.
    pub fn theta_sum(&self, z: f64, omega: f64) -> Result<f64> {
        let reference = self.reference.as_deref().ok_or(Error::NonConvergence {
            what: "busy-cycle vacation-count series",
            iterations: MAX_CYCLE_TERMS,
        })?;
        if z == 1.0 && omega == 0.0 {
            return Ok(reference.iter().sum());
        }
        Ok(theta_series(self.params(), z, omega, reference.len())?.iter().sum())
    }

    /// Joint transform `E[z^N* e^{-w T*}]` by the ratio of generation series.
    /// At `(1, 0)` both series diverge and the vacation-count sum is used.
    pub fn theta_star(&self, z: f64, omega: f64) -> Result<f64> {
        check_arguments(z, omega, 0.0)?;
        if z == 1.0 && omega == 0.0 {
            // M* is geometric-tailed and finite since l_E(0) > 0
            return Ok(self.reference.as_ref().map_or(1.0, |r| r.iter().sum()));
        }
        let policy = self.ctx.policy();
        let mut product = 1.0;
        let mut numerator = 0.0;
        let mut denominator = 1.0;
        for g in CycleGenerations::new(self.params(), z, omega, 0.0).take(policy.max_n) {
            product *= g.psi_v;
            numerator += g.psi_h * product;
            denominator += product;
            // geometric estimate of the neglected part of the denominator
            let tail = if g.psi_v < 1.0 { product * g.psi_v / (1.0 - g.psi_v) } else { f64::INFINITY };
            if tail < policy.eps * denominator {
                return Ok(numerator / denominator);
            }
        }
        Err(Error::NonConvergence { what: "busy-cycle transform series", iterations: policy.max_n })
    }

    /// `E[N*]`, `E[T*]`, `E[M*]` from one-sided derivatives of the
    /// vacation-count sum at `(1, 0)` and the direct series `sum n theta_n`.
    /// Near `(1, 0)` the ratio form converges too slowly, so this needs the
    /// vacation-count horizon and fails with `NonConvergence` without it.
    pub fn cycle_means(&self) -> Result<CycleMeans> {
        let reference = self.reference.as_deref().ok_or(Error::NonConvergence {
            what: "busy-cycle vacation-count series",
            iterations: MAX_CYCLE_TERMS,
        })?;
        // Steps scale with the cycle: the transform's nearest singularity in w
        // sits at roughly -1/E[T*], and in z at roughly 1 + 1/E[N*].
        let m = self.params();
        let scale_t = (m.vacation.mean() / self.ctx.ell_e0() + m.service.mean()) / (1.0 - m.rho());
        let scale_n = 1.0 + m.lambda * scale_t;
        let in_z = derivative_at(
            |z| self.theta_sum(z, 0.0),
            1.0,
            1,
            &DerivativeOptions::new(Side::Backward, 0.05 / scale_n),
        )?;
        let in_omega: Derivative = derivative_at(
            |w| self.theta_sum(1.0, w),
            0.0,
            1,
            &DerivativeOptions::new(Side::Forward, 0.05 / scale_t),
        )?;
        let vacations = reference.iter().enumerate().map(|(i, t)| (i + 1) as f64 * t).sum();
        let lambda = self.params().lambda;
        let length = -in_omega.value;
        let e0 = self.ctx.ell_e0();
        let p = e0 / (self.params().vacation_load() + e0);
        let residual = ((1.0 / lambda) / (length + 1.0 / lambda) - (1.0 - self.params().rho()) * p).abs();
        if residual > IDENTITY_WARNING {
            log::warn!("idle-fraction identity off by {residual:e}");
        }
        Ok(CycleMeans {
            customers: in_z.value,
            length,
            vacations,
            customers_error: in_z.error,
            length_error: in_omega.error,
            idle_identity_residual: residual,
        })
    }
}
