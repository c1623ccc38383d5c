//! Stationary queue length and FIFO delay of the gated single-vacation queue.
//!
//! The queue length decomposes as an ordinary M/GI/1 queue length plus an
//! independent term mixing "empty" with the vacation-start queue observed
//! through the residual vacation:
//!
//! `l(z) = l_MG1(z) [p + q l_B(z) (1 - a_V(z)) / (lambda E[V] (1 - z))]`
//!
//! with `p = l_E(0) / (lambda E[V] + l_E(0))` and `q = 1 - p`. Most functions
//! are evaluated through `d = 1 - z` to keep accuracy near `z = 1`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::branching::{SolveContext, TruncationDiagnostics};
use crate::error::{Error, Result};
use crate::model::{ModelParams, TruncationPolicy};
use crate::numerics::{self, derivative_at, DerivativeOptions, InversionGrid, Side};

/// Highest factorial moment the solver reports.
pub const MAX_FACTORIAL_ORDER: usize = 4;

/// Inverted masses more negative than this are reported as an error.
pub const CLIP_THRESHOLD: f64 = 1e-10;

const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };
const LARGEST_PMF_SUPPORT: usize = 1 << 14;

/// PGF of the stationary M/GI/1 queue length with the same arrivals and service.
pub fn ell_mg1(params: &ModelParams, z: Complex64) -> Complex64 {
    ell_mg1_comp(params, ONE - z)
}

fn ell_mg1_comp(params: &ModelParams, d: Complex64) -> Complex64 {
    if d == Complex64::new(0.0, 0.0) {
        return ONE;
    }
    let hc = params.service.transform_complement(params.lambda * d);
    // (z - 1) a_H / (z - a_H) with z - a_H = hc - d
    (1.0 - params.rho()) * d * (ONE - hc) / (d - hc)
}

/// `(1 - a_V(z)) / (lambda E[V] (1 - z))`: PGF of arrivals during a residual vacation.
fn residual_vacation_comp(params: &ModelParams, d: Complex64) -> Complex64 {
    if d == Complex64::new(0.0, 0.0) {
        return ONE;
    }
    params.vacation.transform_complement(params.lambda * d) / (params.vacation_load() * d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultipleVacationComparison {
    /// Mean queue length when an empty return starts another vacation.
    pub mean_multiple: f64,
    /// `mean_multiple - mean_single`; always positive.
    pub gap: f64,
}

/// Stationary solver built on a resolved [`SolveContext`].
#[derive(Debug, Clone)]
pub struct VacationQueue {
    ctx: SolveContext,
}

impl VacationQueue {
    pub fn new(params: &ModelParams, policy: &TruncationPolicy) -> Result<Self> {
        Ok(Self { ctx: SolveContext::new(params, policy)? })
    }

    pub fn from_context(ctx: SolveContext) -> Self {
        Self { ctx }
    }

    pub fn context(&self) -> &SolveContext {
        &self.ctx
    }

    pub fn params(&self) -> &ModelParams {
        self.ctx.params()
    }

    /// Weight of the "vacation ended on an empty system" branch.
    pub fn empty_return_weight(&self) -> f64 {
        let e0 = self.ctx.ell_e0();
        e0 / (self.params().vacation_load() + e0)
    }

    /// Stationary queue-length PGF.
    pub fn ell_star(&self, z: Complex64) -> Complex64 {
        self.ell_mg1_factor(z) * self.bracket(z)
    }

    pub fn ell_mg1_factor(&self, z: Complex64) -> Complex64 {
        ell_mg1(self.params(), z)
    }

    /// Vacation-induced factor of the decomposition.
    pub fn bracket(&self, z: Complex64) -> Complex64 {
        let d = ONE - z;
        let p = self.empty_return_weight();
        p + (1.0 - p) * self.ctx.ell_b(z) * residual_vacation_comp(self.params(), d)
    }

    /// `P(L = 0)` in time average.
    pub fn prob_empty(&self) -> f64 {
        self.ell_star(Complex64::new(0.0, 0.0)).re
    }

    /// Long-run fraction of time the server idles (not serving, not on vacation).
    pub fn idle_fraction(&self) -> f64 {
        (1.0 - self.params().rho()) * self.empty_return_weight()
    }

    /// Four-term closed form for the mean queue length.
    pub fn mean_queue_length(&self) -> f64 {
        let m = self.params();
        let rho = m.rho();
        let sigma = m.vacation_load();
        let q = 1.0 - self.empty_return_weight();
        m.arrival_moment_h(2) / (2.0 * (1.0 - rho))
            + rho
            + rho * sigma / (1.0 - rho)
            + q * m.arrival_moment_v(2) / (2.0 * sigma)
    }

    pub fn mv_comparison(&self) -> MultipleVacationComparison {
        let m = self.params();
        let rho = m.rho();
        let sigma = m.vacation_load();
        let mean_multiple = m.arrival_moment_h(2) / (2.0 * (1.0 - rho))
            + rho
            + rho * sigma / (1.0 - rho)
            + m.arrival_moment_v(2) / (2.0 * sigma);
        let gap = self.empty_return_weight() * m.arrival_moment_v(2) / (2.0 * sigma);
        MultipleVacationComparison { mean_multiple, gap }
    }

    /// Factorial moments of the vacation-end queue length, orders `1..=n`.
    /// Orders 1 and 2 are closed forms; higher orders are differentiated
    /// numerically from `l_E`.
    pub fn vacation_end_moments(&self, n: usize) -> Result<Vec<f64>> {
        check_order(n)?;
        let m = self.params();
        let rho = m.rho();
        let sigma = m.vacation_load();
        let c = self.ctx.ell_e0();
        let first = (sigma + rho * c) / (1.0 - rho);
        let mut out = vec![first];
        if n >= 2 {
            let second = ((m.arrival_moment_h(2) + 2.0 * rho * sigma) * (first + c) + m.arrival_moment_v(2))
                / (1.0 - rho * rho);
            out.push(second);
        }
        for order in 3..=n {
            let d = derivative_at(|x| Ok(self.ctx.ell_e(Complex64::new(x, 0.0)).re), 1.0, order, &backward())?;
            out.push(d.value);
        }
        Ok(out)
    }

    /// Factorial moments of the stationary M/GI/1 queue length, orders `0..=n`.
    pub fn mg1_moments(&self, n: usize) -> Vec<f64> {
        let m = self.params();
        let rho = m.rho();
        let mut out = vec![1.0];
        for order in 1..=n {
            let mut acc = 0.0;
            for (k, lk) in out.iter().enumerate() {
                acc += binomial(order + 1, k) * m.arrival_moment_h(order + 1 - k) * lk;
            }
            out.push(acc / ((order + 1) as f64 * (1.0 - rho)) + m.arrival_moment_h(order));
        }
        out
    }

    /// Stationary factorial moments `E[L(L-1)...(L-n+1)]`, orders `1..=n`,
    /// from Leibniz' rule on `l(z) a_V(z) = l_MG1(z) [p a_V(z) + q l_E(z) u(z)]`.
    pub fn factorial_moments(&self, n: usize) -> Result<Vec<f64>> {
        check_order(n)?;
        let m = self.params();
        let sigma = m.vacation_load();
        let p = self.empty_return_weight();
        let q = 1.0 - p;
        let mg1 = self.mg1_moments(n);
        let mut ell_e = vec![1.0];
        ell_e.extend(self.vacation_end_moments(n)?);
        // derivatives at 1 of the residual-vacation PGF u
        let u: Vec<f64> = (0..=n).map(|k| m.arrival_moment_v(k + 1) / ((k + 1) as f64 * sigma)).collect();

        let mut out = vec![1.0];
        for order in 1..=n {
            let mut rhs = 0.0;
            for k in 0..=order {
                let eu: f64 = (0..=k).map(|i| binomial(k, i) * u[i] * ell_e[k - i]).sum();
                rhs += binomial(order, k) * mg1[order - k] * (p * m.arrival_moment_v(k) + q * eu);
            }
            let lower: f64 = (0..order).map(|k| binomial(order, k) * out[k] * m.arrival_moment_v(order - k)).sum();
            out.push(rhs - lower);
        }
        out.remove(0);
        Ok(out)
    }

    /// Numerical derivative of `l(z)` at `z = 1` from below.
    pub fn numeric_factorial_moment(&self, order: usize) -> Result<numerics::Derivative> {
        derivative_at(|x| Ok(self.ell_star(Complex64::new(x, 0.0)).re), 1.0, order, &backward())
    }

    /// Sojourn-time LST `E[exp(-s D)]` for real `s >= 0` under FIFO.
    pub fn delay_lst(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0) {
            return Err(Error::Domain(s));
        }
        if s == 0.0 {
            return Ok(1.0);
        }
        let m = self.params();
        let lambda = m.lambda;
        let h = m.service.transform_real(s);
        let v = m.vacation.transform_real(s);
        let mg1 = (1.0 - m.rho()) * s * h / (s - lambda + lambda * h);
        let p = self.empty_return_weight();
        let residual = (1.0 - v) / (m.vacation.mean() * s);
        let d_e = self.delay_vacation_end(s)?;
        Ok(mg1 * (p + (1.0 - p) * d_e / v * residual))
    }

    /// `l_E(1 - s/lambda)` written through the delay-side recursion
    /// `zeta_H(1) = h(s)`, `zeta_H(n) = a_H(zeta_H(n-1))`, `zeta_V(1) = v(s)`,
    /// `zeta_V(n) = a_V(zeta_H(n-1))`, stopped by the truncation policy.
    fn delay_vacation_end(&self, s: f64) -> Result<f64> {
        let m = self.params();
        let policy = self.ctx.policy();
        let c = self.ctx.ell_e0();
        let mut comp_h = m.service.complement_real(s);
        let mut comp_v = m.vacation.complement_real(s);
        let mut product = 1.0;
        let mut sum = 0.0;
        for _ in 0..policy.max_n {
            product *= 1.0 - comp_v;
            sum += comp_h * product;
            if comp_h < policy.eps && comp_v < policy.eps {
                return Ok(product - c * sum);
            }
            let arg = m.lambda * comp_h;
            comp_v = m.vacation.complement_real(arg);
            comp_h = m.service.complement_real(arg);
        }
        Err(Error::NonConvergence { what: "delay vacation-end series", iterations: policy.max_n })
    }

    /// `E[D^n]`, `n = 1..=order`, from the factorial moments of the queue.
    pub fn delay_moments(&self, order: usize) -> Result<Vec<f64>> {
        let lambda = self.params().lambda;
        Ok(self
            .factorial_moments(order)?
            .into_iter()
            .enumerate()
            .map(|(i, l)| l / lambda.powi(i as i32 + 1))
            .collect())
    }

    /// `P(L = k)`, `k = 0..=k_max`, by lattice inversion of `l(z)`.
    pub fn queue_pmf(&self, k_max: usize) -> Result<PmfInversion> {
        let grid = InversionGrid::new(k_max)?;
        let inv = numerics::invert_pgf(|z| Ok(self.ell_star(z)), &grid)?;
        let mut pmf = inv.pmf;
        let clipped = numerics::clip_pmf(&mut pmf, CLIP_THRESHOLD)?;
        let aliasing_bound = inv.aliasing_bound.last().copied().unwrap_or(0.0);
        Ok(PmfInversion { mass: pmf.iter().sum(), pmf, clipped, aliasing_bound })
    }

    /// Doubles the support from 64 until the missing mass is below `tail`.
    pub fn queue_pmf_covering(&self, tail: f64) -> Result<PmfInversion> {
        let mut k_max = 64;
        loop {
            let inv = self.queue_pmf(k_max)?;
            if 1.0 - inv.mass < tail {
                return Ok(inv);
            }
            if k_max >= LARGEST_PMF_SUPPORT {
                return Err(Error::TailBudget(1.0 - inv.mass));
            }
            k_max *= 2;
        }
    }

    /// `P(L_E = k)`, `k = 0..=k_max`, the queue left at a vacation end.
    pub fn vacation_end_pmf(&self, k_max: usize) -> Result<Vec<f64>> {
        let grid = InversionGrid::new(k_max)?;
        let mut pmf = numerics::invert_pgf(|z| Ok(self.ctx.ell_e(z)), &grid)?.pmf;
        numerics::clip_pmf(&mut pmf, CLIP_THRESHOLD)?;
        Ok(pmf)
    }

    pub fn report(&self, order: usize, pmf_tail: f64) -> Result<StationaryQueueReport> {
        let factorial_moments = self.factorial_moments(order)?;
        let delay_moments = self.delay_moments(order)?;
        let pmf = self.queue_pmf_covering(pmf_tail)?;
        let mv = self.mv_comparison();
        let mut cross_check = Vec::new();
        for k in 1..=order.min(2) {
            let numeric = self.numeric_factorial_moment(k)?;
            cross_check.push((numeric.value - factorial_moments[k - 1]).abs() / factorial_moments[k - 1].abs());
        }
        Ok(StationaryQueueReport {
            ell_e0: self.ctx.ell_e0(),
            mean_queue_length: self.mean_queue_length(),
            factorial_moments,
            mean_delay: delay_moments[0],
            delay_moments,
            prob_empty: self.prob_empty(),
            p_idle: self.idle_fraction(),
            mv_mean: mv.mean_multiple,
            mv_mean_gap: mv.gap,
            pmf: pmf.pmf,
            diagnostics: SolverDiagnostics {
                truncation: *self.ctx.diagnostics(),
                fixed_point_residual: self.ctx.fixed_point_residual(Complex64::new(0.5, 0.0)),
                moment_cross_check: cross_check,
                pmf_mass: pmf.mass,
                pmf_clipped: pmf.clipped,
                pmf_aliasing_bound: pmf.aliasing_bound,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmfInversion {
    pub pmf: Vec<f64>,
    pub mass: f64,
    pub clipped: usize,
    /// Aliasing bound at the largest index.
    pub aliasing_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub truncation: TruncationDiagnostics,
    /// Fixed-point residual of `l_E` at `z = 0.5`.
    pub fixed_point_residual: f64,
    /// Relative gap between closed-form and numerically differentiated moments, orders 1..=2.
    pub moment_cross_check: Vec<f64>,
    pub pmf_mass: f64,
    pub pmf_clipped: usize,
    pub pmf_aliasing_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryQueueReport {
    pub ell_e0: f64,
    pub mean_queue_length: f64,
    pub factorial_moments: Vec<f64>,
    pub mean_delay: f64,
    pub delay_moments: Vec<f64>,
    pub prob_empty: f64,
    pub p_idle: f64,
    pub mv_mean: f64,
    pub mv_mean_gap: f64,
    pub pmf: Vec<f64>,
    pub diagnostics: SolverDiagnostics,
}

fn check_order(n: usize) -> Result<()> {
    if n == 0 || n > MAX_FACTORIAL_ORDER {
        return Err(Error::UnsupportedOrder { order: n, max: MAX_FACTORIAL_ORDER });
    }
    Ok(())
}

fn backward() -> DerivativeOptions {
    DerivativeOptions::new(Side::Backward, 0.05).levels(8)
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::DistSpec;
    use approx::assert_relative_eq;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn queue(lambda: f64, h: DistSpec, v: DistSpec) -> VacationQueue {
        VacationQueue::new(&ModelParams::new(lambda, h, v).unwrap(), &TruncationPolicy::default()).unwrap()
    }

    fn mm(lambda: f64) -> VacationQueue {
        queue(lambda, DistSpec::exponential(1.0).unwrap(), DistSpec::exponential(1.0).unwrap())
    }

    #[test]
    fn mg1_examples() {
        let m = ModelParams::new(0.5, DistSpec::deterministic(1.0).unwrap(), DistSpec::exponential(1.0).unwrap()).unwrap();
        assert_eq!(ell_mg1(&m, c(1.0)), c(1.0));
        assert_relative_eq!(ell_mg1(&m, c(0.0)).re, 0.5, epsilon = 1e-15);
        // M/M/1 queue length is geometric: (1 - rho) / (1 - rho z)
        let q = mm(0.5);
        for z in [0.0, 0.3, 0.9] {
            assert_relative_eq!(ell_mg1(q.params(), c(z)).re, 0.5 / (1.0 - 0.5 * z), epsilon = 1e-14);
        }
        let mg1 = q.mg1_moments(3);
        assert_relative_eq!(mg1[1], 1.0, epsilon = 1e-14);
        // geometric factorial moments: n! (rho/(1-rho))^n
        assert_relative_eq!(mg1[2], 2.0, epsilon = 1e-13);
        assert_relative_eq!(mg1[3], 6.0, epsilon = 1e-12);
    }

    #[test]
    fn pgf_normalized_and_bounded() {
        let q = queue(0.7, DistSpec::deterministic(1.0).unwrap(), DistSpec::deterministic(0.5).unwrap());
        assert!((q.ell_star(c(1.0)) - 1.0).norm() < 1e-12);
        let mut prev = 0.0;
        for i in 0..=20 {
            let v = q.ell_star(c(i as f64 / 20.0)).re;
            assert!((0.0..=1.0 + 1e-12).contains(&v));
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn decomposition_factorizes() {
        let q = mm(0.5);
        for z in [c(0.0), c(0.6), Complex64::from_polar(0.8, 1.0)] {
            let direct = q.ell_star(z);
            let p = q.empty_return_weight();
            let m = q.params();
            let bracket = p + (1.0 - p) * q.context().ell_e(z) / m.a_v(z) * (1.0 - m.a_v(z))
                / (m.vacation_load() * (1.0 - z));
            assert!((direct - ell_mg1(m, z) * bracket).norm() < 1e-13);
        }
    }

    #[test]
    fn closed_form_mean_matches_derivative() {
        for q in [
            mm(0.5),
            queue(0.7, DistSpec::deterministic(1.0).unwrap(), DistSpec::deterministic(0.5).unwrap()),
            queue(0.9, DistSpec::erlang(2, 2.0).unwrap(), DistSpec::uniform(0.5, 1.5).unwrap()),
        ] {
            let moments = q.factorial_moments(2).unwrap();
            assert_relative_eq!(moments[0], q.mean_queue_length(), max_relative = 1e-13);
            for k in 1..=2 {
                let numeric = q.numeric_factorial_moment(k).unwrap();
                assert_relative_eq!(numeric.value, moments[k - 1], max_relative = 1e-8);
            }
            assert!(moments[0] >= q.params().rho());
            assert!(moments[0] >= q.mg1_moments(1)[1]);
        }
    }

    #[test]
    fn higher_orders_match_derivatives() {
        let q = queue(0.6, DistSpec::exponential(1.0).unwrap(), DistSpec::erlang(2, 2.0).unwrap());
        let moments = q.factorial_moments(4).unwrap();
        for k in 3..=4 {
            let numeric = q.numeric_factorial_moment(k).unwrap();
            assert_relative_eq!(numeric.value, moments[k - 1], max_relative = 1e-5);
        }
        assert!(matches!(q.factorial_moments(5), Err(Error::UnsupportedOrder { .. })));
    }

    #[test]
    fn vacation_end_moments_match_derivatives() {
        let q = mm(0.5);
        let closed = q.vacation_end_moments(2).unwrap();
        for k in 1..=2 {
            let numeric = derivative_at(|x| Ok(q.context().ell_e(c(x)).re), 1.0, k, &backward()).unwrap();
            assert_relative_eq!(numeric.value, closed[k - 1], max_relative = 1e-8);
        }
    }

    #[test]
    fn little_law_transform_identity() {
        let q = mm(0.5);
        assert_eq!(q.delay_lst(0.0).unwrap(), 1.0);
        for z in [0.0, 0.25, 0.5, 0.75] {
            let s = 0.5 - 0.5 * z;
            assert!((q.delay_lst(s).unwrap() - q.ell_star(c(z)).re).abs() < 1e-12);
        }
        assert!((q.delay_lst(1e-9).unwrap() - 1.0).abs() < 1e-7);
        assert!(q.delay_lst(-1.0).is_err());
        let d = q.delay_moments(2).unwrap();
        let l = q.factorial_moments(2).unwrap();
        assert_eq!(d[0] * 0.5, l[0]);
    }

    #[test]
    fn multiple_vacation_gap() {
        let q = mm(0.5);
        let mv = q.mv_comparison();
        assert!(mv.gap > 0.0);
        assert!((mv.mean_multiple - q.mean_queue_length() - mv.gap).abs() < 1e-10);
    }

    #[test]
    fn pmf_inversion() {
        let q = mm(0.5);
        let inv = q.queue_pmf_covering(1e-7).unwrap();
        assert!((inv.mass - 1.0).abs() < 1e-6);
        assert!((inv.pmf[0] - q.prob_empty()).abs() < 1e-9);
        let mean: f64 = inv.pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        assert_relative_eq!(mean, q.mean_queue_length(), max_relative = 1e-5);
    }

    #[test]
    fn light_traffic_limit() {
        let q = mm(1e-6);
        assert!(q.mean_queue_length() < 1e-5);
        assert!((q.idle_fraction() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn report_is_consistent() {
        let r = mm(0.5).report(2, 1e-7).unwrap();
        assert!(r.diagnostics.moment_cross_check.iter().all(|e| *e < 1e-6));
        assert!(r.pmf.iter().all(|p| *p >= 0.0));
        assert!(r.mv_mean_gap > 0.0);
        assert!(r.p_idle < r.prob_empty);
    }
}
