//! Galton-Watson generation transforms of the gated vacation queue and the
//! vacation-end / vacation-start queue-length PGFs built from them.
//!
//! `psi_h(n, z)` is the PGF of generation `n` of the branching process whose
//! offspring are the Poisson arrivals during one service; `psi_v(n, z)` is the
//! same for the delayed process seeded by a vacation. Both converge to 1 for a
//! stable model. Internally every recursion runs on the complements
//! `1 - psi`, because `h(lambda - lambda psi) = 1 - hc(lambda (1 - psi))` and
//! the complements are what the truncated sums and products need.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InitialState, ModelParams, TruncationPolicy};

/// Largest generation index accepted by [`q_n_transient`].
pub const MAX_TRANSIENT_STEPS: usize = 10_000;

const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// One generation of the complement recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Generation {
    pub n: usize,
    /// `1 - psi_h(n, z)`
    pub comp_h: Complex64,
    /// `1 - psi_v(n, z)`
    pub comp_v: Complex64,
}

impl Generation {
    pub fn psi_h(&self) -> Complex64 {
        ONE - self.comp_h
    }

    pub fn psi_v(&self) -> Complex64 {
        ONE - self.comp_v
    }
}

/// Iterator over `(psi_h(n, z), psi_v(n, z))`, `n = 1, 2, ...`.
#[derive(Debug, Clone)]
pub struct Generations<'a> {
    params: &'a ModelParams,
    prev_comp_h: Complex64,
    n: usize,
}

impl<'a> Generations<'a> {
    pub fn new(params: &'a ModelParams, z: Complex64) -> Self {
        Self { params, prev_comp_h: ONE - z, n: 0 }
    }

    /// Starts from an arbitrary complement `1 - psi_0`; used by the delay
    /// transform where the seed is `1 - h(s)`.
    pub(crate) fn from_complement(params: &'a ModelParams, comp: Complex64) -> Self {
        Self { params, prev_comp_h: comp, n: 0 }
    }
}

impl Iterator for Generations<'_> {
    type Item = Generation;

    fn next(&mut self) -> Option<Generation> {
        let s = self.params.lambda * self.prev_comp_h;
        let comp_h = self.params.service.transform_complement(s);
        let comp_v = self.params.vacation.transform_complement(s);
        self.prev_comp_h = comp_h;
        self.n += 1;
        Some(Generation { n: self.n, comp_h, comp_v })
    }
}

pub fn psi_h(params: &ModelParams, n: usize, z: Complex64) -> Complex64 {
    if n == 0 {
        return z;
    }
    Generations::new(params, z).nth(n - 1).map(|g| g.psi_h()).unwrap_or(ONE)
}

/// `psi_v(n, z) = a_V(psi_h(n - 1, z))` with `psi_h(0, z) = z`.
pub fn psi_v(params: &ModelParams, n: usize, z: Complex64) -> Complex64 {
    assert!(n >= 1, "psi_v is defined for n >= 1");
    Generations::new(params, z).nth(n - 1).map(|g| g.psi_v()).unwrap_or(ONE)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationDiagnostics {
    /// First generation with both complements below `eps` at `z = 0`.
    pub n_star: usize,
    /// `(1 - psi_h(n*, 0)) rho / (1 - rho)`, geometric estimate of the neglected tail.
    pub tail_estimate: f64,
    /// `sum_{n <= n*} (1 - psi_h(n, 0))`; never exceeds `1/(1 - rho) - 1`.
    pub generation_sum: f64,
    /// `prod_{k <= n*} psi_v(k, 0)`.
    pub vacation_product: f64,
    /// `sum_{n <= n*} (1 - psi_h(n, 0)) prod_{k <= n} psi_v(k, 0)`.
    pub weighted_sum: f64,
}

/// A stable model with `l_E(0)` and its truncation index resolved once and
/// reused for every evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveContext {
    params: ModelParams,
    policy: TruncationPolicy,
    ell_e0: f64,
    diagnostics: TruncationDiagnostics,
}

impl SolveContext {
    pub fn new(params: &ModelParams, policy: &TruncationPolicy) -> Result<Self> {
        params.validate()?;
        policy.validate()?;
        let mut product = 1.0;
        let mut weighted_sum = 0.0;
        let mut generation_sum = 0.0;
        for g in Generations::new(params, Complex64::new(0.0, 0.0)).take(policy.max_n) {
            let (u, v) = (g.comp_h.re, g.comp_v.re);
            product *= 1.0 - v;
            weighted_sum += u * product;
            generation_sum += u;
            if u < policy.eps && v < policy.eps {
                let rho = params.rho();
                let diagnostics = TruncationDiagnostics {
                    n_star: g.n,
                    tail_estimate: u * rho / (1.0 - rho),
                    generation_sum,
                    vacation_product: product,
                    weighted_sum,
                };
                return Ok(Self {
                    params: params.clone(),
                    policy: *policy,
                    ell_e0: product / (1.0 + weighted_sum),
                    diagnostics,
                });
            }
        }
        Err(Error::NonConvergence { what: "l_E(0) generation series", iterations: policy.max_n })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn policy(&self) -> &TruncationPolicy {
        &self.policy
    }

    /// `P(L_E = 0)`: probability a vacation ends with an empty system.
    pub fn ell_e0(&self) -> f64 {
        self.ell_e0
    }

    pub fn diagnostics(&self) -> &TruncationDiagnostics {
        &self.diagnostics
    }

    /// PGF of the number of customers at a vacation end.
    ///
    /// Uses the `z = 0` truncation index for every `|z| <= 1`: since
    /// `|1 - psi(n, z)| <= 2 (1 - psi(n, 0))` the neglected terms are
    /// bounded uniformly on the disk.
    pub fn ell_e(&self, z: Complex64) -> Complex64 {
        self.vacation_end_series(ONE - z, self.diagnostics.n_star, false)
    }

    /// PGF of the number of customers at a vacation start, `l_E(z) / a_V(z)`,
    /// evaluated without the leading vacation factor so it stays finite
    /// where `a_V` vanishes.
    pub fn ell_b(&self, z: Complex64) -> Complex64 {
        self.vacation_end_series(ONE - z, self.diagnostics.n_star, true)
    }

    /// `l_E` (or `l_B` when `skip_first`) at `z = 1 - comp`. Arguments with
    /// `Re(comp) > 1` are analytic continuation used by the delay transform;
    /// after one generation they are dominated by the `z = 0` chain, so one
    /// extra generation keeps the truncation bound.
    pub(crate) fn vacation_end_series(&self, comp: Complex64, generations: usize, skip_first: bool) -> Complex64 {
        let mut product = ONE;
        let mut sum = Complex64::new(0.0, 0.0);
        for g in Generations::from_complement(&self.params, comp).take(generations) {
            if !(skip_first && g.n == 1) {
                product *= g.psi_v();
            }
            sum += g.comp_h * product;
        }
        product - self.ell_e0 * sum
    }

    /// `1 - l_E(1 - comp)` accumulated without cancellation, so it keeps
    /// full relative accuracy as `comp -> 0`.
    pub fn vacation_end_complement(&self, comp: Complex64) -> Complex64 {
        let mut product_comp = Complex64::new(0.0, 0.0);
        let mut sum = Complex64::new(0.0, 0.0);
        for g in Generations::from_complement(&self.params, comp).take(self.diagnostics.n_star + 1) {
            // 1 - (1 - P)(1 - w) = (1 - P) + w P
            product_comp += g.comp_v * (ONE - product_comp);
            sum += g.comp_h * (ONE - product_comp);
        }
        product_comp + self.ell_e0 * sum
    }

    /// Residual of `l_E(z) = [l_E(a_H(z)) - l_E(0) + l_E(0) a_H(z)] a_V(z)`.
    pub fn fixed_point_residual(&self, z: Complex64) -> f64 {
        let a_h = self.params.a_h(z);
        let rhs = (self.ell_e(a_h) - self.ell_e0 * (ONE - a_h)) * self.params.a_v(z);
        (self.ell_e(z) - rhs).norm()
    }
}

pub fn ell_e_zero(params: &ModelParams, policy: &TruncationPolicy) -> Result<f64> {
    Ok(SolveContext::new(params, policy)?.ell_e0())
}

pub fn ell_e(params: &ModelParams, policy: &TruncationPolicy, z: Complex64) -> Result<Complex64> {
    Ok(SolveContext::new(params, policy)?.ell_e(z))
}

pub fn ell_b(params: &ModelParams, policy: &TruncationPolicy, z: Complex64) -> Result<Complex64> {
    Ok(SolveContext::new(params, policy)?.ell_b(z))
}

/// `q_k(0)`, `k = 0..=n`, by stepping
/// `q_k(x) = [q_{k-1}(a_H(x)) - q_{k-1}(0) (1 - a_H(x))] a_V(x)`
/// along the points `x_j = psi_h(j, 0)`.
pub fn q_zero_sequence(params: &ModelParams, init: &InitialState, n: usize) -> Result<Vec<f64>> {
    check_steps(n)?;
    // x_j and 1 - x_j for j = 0..=n, plus a_V(x_j) = psi_v(j + 1, 0)
    let mut comp_x = Vec::with_capacity(n + 1);
    let mut a_v = Vec::with_capacity(n + 1);
    comp_x.push(1.0);
    for g in Generations::new(params, Complex64::new(0.0, 0.0)).take(n) {
        comp_x.push(g.comp_h.re);
        a_v.push(1.0 - g.comp_v.re);
    }
    let mut row: Vec<f64> = comp_x.iter().map(|c| init.pgf(Complex64::new(1.0 - c, 0.0)).re).collect();
    let mut zeros = Vec::with_capacity(n + 1);
    zeros.push(row[0]);
    for k in 1..=n {
        let q_prev0 = row[0];
        let next: Vec<f64> = (0..=n - k)
            .map(|j| (row[j + 1] - q_prev0 * comp_x[j + 1]) * a_v[j])
            .collect();
        zeros.push(next[0]);
        row = next;
    }
    Ok(zeros)
}

/// PGF of the number of customers at the end of the n-th vacation, started
/// from `init` at the end of vacation 0.
pub fn q_n_transient(params: &ModelParams, init: &InitialState, n: usize, z: Complex64) -> Result<Complex64> {
    if n == 0 {
        return Ok(init.pgf(z));
    }
    let zeros = q_zero_sequence(params, init, n)?;
    let mut product = ONE;
    let mut correction = Complex64::new(0.0, 0.0);
    let mut last = None;
    for g in Generations::new(params, z).take(n) {
        product *= g.psi_v();
        correction += zeros[n - g.n] * g.comp_h * product;
        last = Some(g);
    }
    let psi_n = last.map(|g| g.psi_h()).unwrap_or(z);
    Ok(init.pgf(psi_n) * product - correction)
}

fn check_steps(n: usize) -> Result<()> {
    if n > MAX_TRANSIENT_STEPS {
        return Err(Error::NonConvergence { what: "transient recursion depth", iterations: MAX_TRANSIENT_STEPS });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::DistSpec;
    use approx::assert_relative_eq;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn exp_exp(lambda: f64) -> ModelParams {
        ModelParams::new(lambda, DistSpec::exponential(1.0).unwrap(), DistSpec::exponential(1.0).unwrap()).unwrap()
    }

    #[test]
    fn psi_examples() {
        let m = exp_exp(0.5);
        for n in 1..6 {
            assert_eq!(psi_h(&m, n, c(1.0)), c(1.0));
            assert_eq!(psi_v(&m, n, c(1.0)), c(1.0));
        }
        assert_relative_eq!(psi_h(&m, 1, c(0.0)).re, 2.0 / 3.0, epsilon = 1e-15);
        let far = psi_h(&m, 200, c(0.0)).re;
        assert!(1.0 - far < 1e-12);

        let det = ModelParams::new(1.0 - 1e-9, DistSpec::deterministic(0.5).unwrap(), DistSpec::deterministic(1.0).unwrap());
        let det = det.unwrap();
        assert_relative_eq!(psi_v(&det, 1, c(0.0)).re, (-(1.0f64 - 1e-9)).exp(), epsilon = 1e-15);
    }

    #[test]
    fn psi_limit_is_extinction_probability() {
        // Brute-force subcritical branching: offspring ~ Poisson(lambda H), H ~ Exp(1).
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;
        use rand_distr::{Distribution, Poisson};
        let m = exp_exp(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trees = 200_000;
        let gens = 6;
        let mut alive_at = vec![0usize; gens + 1];
        let service = m.service.sampler();
        for _ in 0..trees {
            let mut size = 1u64;
            for g in 1..=gens {
                let mut next = 0u64;
                for _ in 0..size {
                    let h = service.draw(&mut rng);
                    next += Poisson::new(0.5 * h).unwrap().sample(&mut rng) as u64;
                }
                size = next;
                if size > 0 {
                    alive_at[g] += 1;
                }
            }
        }
        for g in 1..=gens {
            let p = alive_at[g] as f64 / trees as f64;
            let se = (p * (1.0 - p) / trees as f64).sqrt();
            let analytic = 1.0 - psi_h(&m, g, c(0.0)).re;
            assert!((p - analytic).abs() < 4.0 * se + 1e-4, "gen {g}: {p} vs {analytic}");
        }
    }

    #[test]
    fn monotone_in_generation() {
        let m = exp_exp(0.7);
        for z in [0.0, 0.3, 0.8] {
            let gens: Vec<Generation> = Generations::new(&m, c(z)).take(40).collect();
            for w in gens.windows(2) {
                assert!(w[1].psi_h().re > w[0].psi_h().re);
                assert!(w[1].psi_v().re > w[0].psi_v().re);
                assert!(w[1].psi_h().re < 1.0);
            }
        }
    }

    #[test]
    fn two_compositions_agree() {
        let m = exp_exp(0.6);
        for n in 2..8 {
            for z in [c(0.0), c(0.4), Complex64::new(0.3, 0.5)] {
                let outer = m.a_h(psi_h(&m, n - 1, z));
                let inner = psi_h(&m, n - 1, m.a_h(z));
                assert!((outer - inner).norm() < 1e-14);
                assert!((psi_h(&m, n, z) - outer).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn ell_e_normalization_and_zero() {
        let m = exp_exp(0.5);
        let ctx = SolveContext::new(&m, &TruncationPolicy::default()).unwrap();
        assert!((ctx.ell_e(c(1.0)) - 1.0).norm() < 1e-13);
        assert_relative_eq!(ctx.ell_e(c(0.0)).re, ctx.ell_e0(), epsilon = 1e-15);
        assert_eq!(ctx.ell_b(c(1.0)), c(1.0));
        assert_relative_eq!(ctx.ell_b(c(0.0)).re, ctx.ell_e0() / m.vacation.lst_real(0.5).unwrap(), epsilon = 1e-14);
    }

    #[test]
    fn complement_agrees_with_direct_series() {
        let m = ModelParams::new(0.8, DistSpec::hyperexponential(vec![0.5, 0.5], vec![2.0, 2.0 / 3.0]).unwrap(), DistSpec::erlang(2, 2.0).unwrap()).unwrap();
        let ctx = SolveContext::new(&m, &TruncationPolicy::default()).unwrap();
        for z in [c(0.0), c(0.5), c(0.99), Complex64::from_polar(0.95, 0.7)] {
            assert!((ctx.vacation_end_complement(1.0 - z) + ctx.ell_e(z) - 1.0).norm() < 1e-14);
        }
        // first-order behaviour near 1 is E[L_E] d with no cancellation
        let d = 1e-12;
        let slope = ctx.vacation_end_complement(c(d)).re / d;
        let mean = derive_mean(&ctx);
        assert!((slope - mean).abs() / mean < 1e-9);
    }

    fn derive_mean(ctx: &SolveContext) -> f64 {
        let m = ctx.params();
        (m.vacation_load() + m.rho() * ctx.ell_e0()) / (1.0 - m.rho())
    }

    #[test]
    fn light_traffic_vacations_end_empty() {
        let m = exp_exp(0.001);
        let e0 = ell_e_zero(&m, &TruncationPolicy::default()).unwrap();
        assert!((e0 - 1.0).abs() < 1e-2);
    }

    #[test]
    fn truncation_cap_reports_non_convergence() {
        let m = exp_exp(0.95);
        let policy = TruncationPolicy::new(1e-14, 16).unwrap();
        assert!(matches!(SolveContext::new(&m, &policy), Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn fixed_point_holds_on_grid() {
        let m = ModelParams::new(0.8, DistSpec::erlang(2, 4.0).unwrap(), DistSpec::deterministic(0.5).unwrap()).unwrap();
        let ctx = SolveContext::new(&m, &TruncationPolicy::default()).unwrap();
        for i in 0..10 {
            assert!(ctx.fixed_point_residual(c(i as f64 / 10.0)) < 1e-13);
        }
        assert!(ctx.fixed_point_residual(Complex64::from_polar(0.9, 2.0)) < 1e-13);
    }

    #[test]
    fn generation_sum_below_busy_period_bound() {
        for lambda in [0.1, 0.5, 0.9] {
            let m = exp_exp(lambda);
            let ctx = SolveContext::new(&m, &TruncationPolicy::default()).unwrap();
            assert!(ctx.diagnostics().generation_sum <= 1.0 / (1.0 - lambda) - 1.0 + 1e-12);
        }
    }

    #[test]
    fn first_transient_step_from_empty() {
        let m = exp_exp(0.5);
        let init = InitialState::point(0);
        for z in [c(0.0), c(0.5), Complex64::new(0.2, 0.7)] {
            let q1 = q_n_transient(&m, &init, 1, z).unwrap();
            assert!((q1 - m.a_h(z) * m.a_v(z)).norm() < 1e-15);
        }
    }

    /// Direct one-step recursion, exponential in n; only usable for small n.
    fn one_step(m: &ModelParams, init: &InitialState, n: usize, z: Complex64) -> Complex64 {
        if n == 0 {
            return init.pgf(z);
        }
        let a = m.a_h(z);
        let q0 = one_step(m, init, n - 1, c(0.0));
        (one_step(m, init, n - 1, a) - q0 * (1.0 - a)) * m.a_v(z)
    }

    #[test]
    fn closed_form_matches_stepwise_recursion() {
        let m = ModelParams::new(0.6, DistSpec::erlang(2, 2.0).unwrap(), DistSpec::uniform(0.2, 1.0).unwrap()).unwrap();
        let init = InitialState::new(vec![0.2, 0.3, 0.5]).unwrap();
        for n in 1..9 {
            for z in [c(0.0), c(0.5), Complex64::new(-0.3, 0.4)] {
                let closed = q_n_transient(&m, &init, n, z).unwrap();
                let direct = one_step(&m, &init, n, z);
                assert!((closed - direct).norm() < 1e-13, "n={n} z={z}");
            }
        }
        let zeros = q_zero_sequence(&m, &init, 8).unwrap();
        for (n, q) in zeros.iter().enumerate() {
            assert!((q - one_step(&m, &init, n, c(0.0)).re).abs() < 1e-14);
        }
    }

    #[test]
    fn transient_converges_to_vacation_end_pgf() {
        let m = exp_exp(0.5);
        let ctx = SolveContext::new(&m, &TruncationPolicy::default()).unwrap();
        for init in [InitialState::point(0), InitialState::point(5)] {
            for z in [c(0.0), c(0.5), c(1.0)] {
                let q = q_n_transient(&m, &init, 64, z).unwrap();
                assert!((q - ctx.ell_e(z)).norm() < 1e-6);
            }
        }
        assert!(q_n_transient(&m, &InitialState::point(0), MAX_TRANSIENT_STEPS + 1, c(0.5)).is_err());
    }
}
