//! Markovian arrival processes and the gated vacation recursion.
//!
//! With MAP arrivals `(C, D)` the vacation-end vector PGF obeys
//! `q_n(z) = q_{n-1}(A(z)) V(z) - q_{n-1}(0) [I - A(z)] V(z)`. The scalar
//! solution technique needs the same identity after substituting the matrix
//! `A(z)` for `z`, which holds when every `V(k)` commutes with `A(z)`. This
//! module evaluates both sides numerically and checks that commuting `C` and
//! `D` force the MAP to be Poisson.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Discrete, DiscreteCDF, Poisson};

use crate::dist::DistSpec;
use crate::error::{Error, Result};

/// Largest phase space accepted.
pub const MAX_PHASES: usize = 4;
/// Mass allowed outside the truncated coefficient series.
pub const TAIL_BUDGET: f64 = 1e-12;

const MAX_TERMS: usize = 20_000;
const GENERATOR_TOLERANCE: f64 = 1e-12;
const REDUCTION_TOLERANCE: f64 = 1e-10;

/// Row-major matrices as they appear in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapRows {
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
}

/// A validated MAP representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MapRows", into = "MapRows")]
pub struct MapRep {
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl TryFrom<MapRows> for MapRep {
    type Error = Error;

    fn try_from(rows: MapRows) -> Result<Self> {
        let c = matrix_from_rows(&rows.c, "C")?;
        let d = matrix_from_rows(&rows.d, "D")?;
        MapRep::new(c, d)
    }
}

impl From<MapRep> for MapRows {
    fn from(rep: MapRep) -> Self {
        let rows = |m: &DMatrix<f64>| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        MapRows { c: rows(&rep.c), d: rows(&rep.d) }
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidMap(format!("{name} must be a non-empty square matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl MapRep {
    pub fn new(c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let m = c.nrows();
        if !c.is_square() || d.shape() != c.shape() {
            return Err(Error::InvalidMap("C and D must be square with equal dimensions".into()));
        }
        if m == 0 || m > MAX_PHASES {
            return Err(Error::InvalidMap(format!("phase count must lie in 1..={MAX_PHASES}, got {m}")));
        }
        if c.iter().chain(d.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidMap("entries must be finite".into()));
        }
        for i in 0..m {
            for j in 0..m {
                if i != j && c[(i, j)] < 0.0 {
                    return Err(Error::InvalidMap(format!("C[{i}][{j}] = {} is negative", c[(i, j)])));
                }
                if d[(i, j)] < 0.0 {
                    return Err(Error::InvalidMap(format!("D[{i}][{j}] = {} is negative", d[(i, j)])));
                }
            }
            let row: f64 = c.row(i).sum() + d.row(i).sum();
            let scale = c[(i, i)].abs().max(1.0);
            if row.abs() > GENERATOR_TOLERANCE * scale {
                return Err(Error::InvalidMap(format!("row {i} of C + D sums to {row:e}, not 0")));
            }
        }
        if d.iter().all(|x| *x == 0.0) {
            return Err(Error::InvalidMap("D is zero: no arrivals".into()));
        }
        let neg_c_inv = (-&c)
            .try_inverse()
            .ok_or_else(|| Error::InvalidMap("C is singular".into()))?;
        let embedded = neg_c_inv * &d;
        for i in 0..m {
            let row = embedded.row(i).sum();
            if (row - 1.0).abs() > 1e-10 || embedded.row(i).iter().any(|x| *x < -1e-12) {
                return Err(Error::InvalidMap("(-C)^-1 D is not stochastic".into()));
            }
        }
        if !strongly_connected(&embedded) {
            return Err(Error::InvalidMap("(-C)^-1 D is reducible".into()));
        }
        Ok(Self { c, d })
    }

    pub fn from_rows(c: &[Vec<f64>], d: &[Vec<f64>]) -> Result<Self> {
        Self::try_from(MapRows { c: c.to_vec(), d: d.to_vec() })
    }

    /// The Poisson process of rate `lambda` as a one-phase MAP.
    pub fn poisson(lambda: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, -lambda), DMatrix::from_element(1, 1, lambda))
    }

    /// Two phases switching at rate `a` with the same arrival rate `lambda` in both.
    pub fn symmetric_switching(lambda: f64, a: f64) -> Result<Self> {
        let c = DMatrix::from_row_slice(2, 2, &[-(lambda + a), a, a, -(lambda + a)]);
        Self::new(c, DMatrix::identity(2, 2) * lambda)
    }

    /// Markov-modulated Poisson process with arrival rate `rates[i]` in phase `i`.
    pub fn mmpp2(switch: [f64; 2], rates: [f64; 2]) -> Result<Self> {
        let c = DMatrix::from_row_slice(
            2,
            2,
            &[-(switch[0] + rates[0]), switch[0], switch[1], -(switch[1] + rates[1])],
        );
        Self::new(c, DMatrix::from_diagonal(&DVector::from_row_slice(&rates)))
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn phases(&self) -> usize {
        self.c.nrows()
    }

    /// Stationary phase distribution of the generator `C + D`.
    pub fn stationary_phase(&self) -> RowDVector<f64> {
        let m = self.phases();
        let q = &self.c + &self.d;
        // solve pi Q = 0 with the last equation replaced by normalization
        let mut a = q.transpose();
        for j in 0..m {
            a[(m - 1, j)] = 1.0;
        }
        let mut b = DVector::zeros(m);
        b[m - 1] = 1.0;
        let pi = a.lu().solve(&b).unwrap_or_else(|| DVector::from_element(m, 1.0 / m as f64));
        pi.transpose()
    }

    fn uniformization(&self) -> (f64, DMatrix<f64>, DMatrix<f64>) {
        let theta = (0..self.phases()).map(|i| -self.c[(i, i)]).fold(0.0, f64::max);
        let m = self.phases();
        let p0 = DMatrix::identity(m, m) + &self.c / theta;
        let p1 = &self.d / theta;
        (theta, p0, p1)
    }
}

fn strongly_connected(p: &DMatrix<f64>) -> bool {
    let m = p.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; m];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..m {
                let w = if forward { p[(i, j)] } else { p[(j, i)] };
                if w > 1e-14 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// `||CD - DC||` (max entry) and whether it is below `1e-12 max(1, ||C|| ||D||)`.
pub fn is_commutative(rep: &MapRep) -> (bool, f64) {
    let commutator = &rep.c * &rep.d - &rep.d * &rep.c;
    let residual = commutator.amax();
    let scale = (rep.c.amax() * rep.d.amax()).max(1.0);
    (residual <= 1e-12 * scale, residual)
}

/// For a commuting representation returns the rate `lambda` with `D e = lambda e`.
pub fn poisson_reduction_check(rep: &MapRep) -> Result<f64> {
    let (commutes, residual) = is_commutative(rep);
    if !commutes {
        return Err(Error::InvalidMap(format!("C and D do not commute (residual {residual:e})")));
    }
    let rates: Vec<f64> = (0..rep.phases()).map(|i| rep.d.row(i).sum()).collect();
    let lambda = rates.iter().sum::<f64>() / rates.len() as f64;
    let deviation = rates.iter().map(|r| (r - lambda).abs()).fold(0.0, f64::max);
    if deviation > REDUCTION_TOLERANCE * lambda.max(1.0) {
        return Err(Error::PoissonReduction(deviation));
    }
    Ok(lambda)
}

/// `w_n = int e^{-theta x} (theta x)^n / n! dF(x)`, `n = 0, 1, ...`, until the
/// remaining mass is below the tail budget.
fn mixing_weights(dist: &DistSpec, theta: f64) -> Result<Vec<f64>> {
    let mut weights = Vec::new();
    let mut total = 0.0;
    let mut n = 0usize;
    while total < 1.0 - TAIL_BUDGET {
        if n >= MAX_TERMS {
            return Err(Error::TailBudget(1.0 - total));
        }
        let w = mixing_weight(dist, theta, n)?;
        weights.push(w);
        total += w;
        n += 1;
    }
    Ok(weights)
}

fn mixing_weight(dist: &DistSpec, theta: f64, n: usize) -> Result<f64> {
    let geometric = |mu: f64| mu / (mu + theta) * (theta / (mu + theta)).powi(n as i32);
    Ok(match dist {
        DistSpec::Deterministic { value } => poisson(theta * value)?.pmf(n as u64),
        DistSpec::Exponential { rate } => geometric(*rate),
        DistSpec::Erlang { shape, rate } => {
            let k = *shape as usize;
            let p = rate / (rate + theta);
            // negative binomial: C(n + k - 1, n) p^k (1 - p)^n, in logs
            let log = statrs::function::gamma::ln_gamma((n + k) as f64)
                - statrs::function::gamma::ln_gamma((n + 1) as f64)
                - statrs::function::gamma::ln_gamma(k as f64)
                + k as f64 * p.ln()
                + n as f64 * (1.0 - p).ln();
            log.exp()
        }
        DistSpec::HyperExponential { weights, rates } => {
            let total: f64 = weights.iter().sum();
            weights.iter().zip(rates).map(|(w, r)| w / total * geometric(*r)).sum()
        }
        DistSpec::UniformInterval { a, b } => {
            let cdf = |mean: f64| -> Result<f64> {
                if mean == 0.0 {
                    Ok(1.0)
                } else {
                    Ok(poisson(mean)?.cdf(n as u64))
                }
            };
            (cdf(theta * a)? - cdf(theta * b)?) / (theta * (b - a))
        }
    })
}

fn poisson(mean: f64) -> Result<Poisson> {
    Poisson::new(mean).map_err(|e| Error::InvalidMap(format!("Poisson weight with mean {mean}: {e}")))
}

/// `int exp[(C + z D) x] dF(x)`.
pub fn matrix_pgf(rep: &MapRep, dist: &DistSpec, z: f64) -> Result<DMatrix<f64>> {
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::InvalidMap(format!("z must lie in [0, 1], got {z}")));
    }
    let m = rep.phases();
    let generator = &rep.c + &rep.d * z;
    let eye = DMatrix::<f64>::identity(m, m);
    let resolvent = |mu: f64| -> Result<DMatrix<f64>> {
        let inv = (&eye * mu - &generator)
            .try_inverse()
            .ok_or_else(|| Error::InvalidMap("singular resolvent".into()))?;
        Ok(inv * mu)
    };
    match dist {
        DistSpec::Exponential { rate } => resolvent(*rate),
        DistSpec::Erlang { shape, rate } => {
            let r = resolvent(*rate)?;
            Ok((1..*shape).fold(r.clone(), |acc, _| acc * &r))
        }
        DistSpec::HyperExponential { weights, rates } => {
            let total: f64 = weights.iter().sum();
            let mut acc = DMatrix::zeros(m, m);
            for (w, r) in weights.iter().zip(rates) {
                acc += resolvent(*r)? * (w / total);
            }
            Ok(acc)
        }
        DistSpec::Deterministic { .. } | DistSpec::UniformInterval { .. } => {
            let (theta, p0, p1) = rep.uniformization();
            let kernel = p0 + p1 * z;
            let mut power = eye.clone();
            let mut acc = DMatrix::zeros(m, m);
            for w in mixing_weights(dist, theta)? {
                acc += &power * w;
                power *= &kernel;
            }
            Ok(acc)
        }
    }
}

/// Coefficients `A(k)` of `sum_k A(k) z^k = int exp[(C + z D) x] dF(x)`:
/// entry `(i, j)` of `A(k)` is the probability of `k` arrivals during a
/// period drawn from `dist`, ending in phase `j` from phase `i`.
pub fn count_coefficients(rep: &MapRep, dist: &DistSpec) -> Result<Vec<DMatrix<f64>>> {
    let (theta, p0, p1) = rep.uniformization();
    let weights = mixing_weights(dist, theta)?;
    let m = rep.phases();
    let mut coefficients = vec![DMatrix::zeros(m, m); weights.len()];
    // counts[k] = coefficient of z^k in (P0 + z P1)^n
    let mut counts = vec![DMatrix::identity(m, m)];
    for (n, w) in weights.iter().enumerate() {
        for (k, c) in counts.iter().enumerate() {
            coefficients[k] += c * *w;
        }
        if n + 1 == weights.len() {
            break;
        }
        let mut next = vec![DMatrix::zeros(m, m); counts.len() + 1];
        for (k, c) in counts.iter().enumerate() {
            next[k] += c * &p0;
            next[k + 1] += c * &p1;
        }
        counts = next;
    }
    Ok(coefficients)
}

/// `sum_k coefficients[k] X^k`.
fn matrix_series(coefficients: &[DMatrix<f64>], x: &DMatrix<f64>) -> DMatrix<f64> {
    let m = x.nrows();
    coefficients.iter().rev().fold(DMatrix::zeros(m, m), |acc, a| acc * x + a)
}

/// `sum_k rows[k] X^k` for row-vector coefficients.
fn row_series(rows: &[RowDVector<f64>], x: &DMatrix<f64>) -> RowDVector<f64> {
    let m = x.nrows();
    rows.iter().rev().fold(RowDVector::zeros(m), |acc, r| acc * x + r)
}

/// Truncated product of two matrix power series.
fn convolve(a: &[DMatrix<f64>], b: &[DMatrix<f64>], len: usize) -> Vec<DMatrix<f64>> {
    let m = a[0].nrows();
    let mut out = vec![DMatrix::zeros(m, m); len];
    for (i, ai) in a.iter().enumerate().take(len) {
        for (j, bj) in b.iter().enumerate() {
            if i + j >= len {
                break;
            }
            out[i + j] += ai * bj;
        }
    }
    out
}

/// Initial vacation-end state: row vectors `q_0(k)`, `k = 0..`, whose
/// entries sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VectorInitialState {
    rows: Vec<Vec<f64>>,
}

impl VectorInitialState {
    pub fn new(rows: Vec<Vec<f64>>, phases: usize) -> Result<Self> {
        if rows.is_empty() || rows.iter().any(|r| r.len() != phases) {
            return Err(Error::InvalidInitialState(format!("rows must be non-empty vectors of length {phases}")));
        }
        if rows.iter().flatten().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidInitialState("entries must be nonnegative".into()));
        }
        let total: f64 = rows.iter().flatten().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInitialState(format!("entries sum to {total}, not 1")));
        }
        Ok(Self { rows })
    }

    /// `k` customers with the phase drawn from `phase`.
    pub fn point(k: usize, phase: &RowDVector<f64>) -> Self {
        let m = phase.len();
        let mut rows = vec![vec![0.0; m]; k + 1];
        rows[k] = phase.iter().copied().collect();
        Self { rows }
    }

    fn coefficients(&self) -> Vec<RowDVector<f64>> {
        self.rows.iter().map(|r| RowDVector::from_row_slice(r)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterchangeReport {
    pub max_residual: f64,
    /// `(z, residual)` per grid point.
    pub residuals: Vec<(f64, f64)>,
    /// Largest `||A(z) V(k) - V(k) A(z)||` over the grid and `k`.
    pub commutator: f64,
    /// Mass of `q_1` lost to series truncation.
    pub truncated_mass: f64,
}

/// Evaluates both sides of
/// `q_1(A(z)) = q_0(A(A(z))) V(A(z)) - q_0(0) [I - A(A(z))] V(A(z))`
/// on `z_grid` and reports the largest entrywise gap.
pub fn interchange_residual(
    rep: &MapRep,
    service: &DistSpec,
    vacation: &DistSpec,
    init: &VectorInitialState,
    z_grid: &[f64],
) -> Result<InterchangeReport> {
    if init.rows.iter().any(|r| r.len() != rep.phases()) {
        return Err(Error::InvalidInitialState("initial rows do not match the phase count".into()));
    }
    let a = count_coefficients(rep, service)?;
    let v = count_coefficients(rep, vacation)?;
    let q0 = init.coefficients();
    let m = rep.phases();

    // coefficients of q_1(z) = q_0(A(z)) V(z) - q_0(0) V(z) + q_0(0) A(z) V(z)
    let len = (q0.len() - 1) * a.len() + a.len() + v.len();
    let mut f = vec![RowDVector::zeros(m); len];
    let mut power = vec![DMatrix::identity(m, m)];
    for (i, row) in q0.iter().enumerate() {
        if i > 0 {
            power = convolve(&power, &a, len);
        }
        for (k, p) in power.iter().enumerate() {
            f[k] += row * p;
        }
    }
    let av = convolve(&a, &v, len);
    let mut q1 = vec![RowDVector::zeros(m); len];
    for (k, q) in q1.iter_mut().enumerate() {
        for j in 0..=k.min(v.len() - 1) {
            if k - j < f.len() {
                *q += &f[k - j] * &v[j];
            }
        }
        if k < v.len() {
            *q -= &q0[0] * &v[k];
        }
        *q += &q0[0] * &av[k];
    }
    let mass: f64 = q1.iter().map(|r| r.sum()).sum();
    let truncated_mass = (1.0 - mass).abs();
    if truncated_mass > 1e3 * TAIL_BUDGET {
        return Err(Error::TailBudget(truncated_mass));
    }

    let mut residuals = Vec::with_capacity(z_grid.len());
    let mut commutator: f64 = 0.0;
    for &z in z_grid {
        let x = matrix_pgf(rep, service, z)?;
        let lhs = row_series(&q1, &x);
        let y = matrix_series(&a, &x);
        let w = matrix_series(&v, &x);
        let rhs = row_series(&q0, &y) * &w - &q0[0] * (DMatrix::identity(m, m) - &y) * &w;
        residuals.push((z, (lhs - rhs).amax()));
        for vk in &v {
            commutator = commutator.max((&x * vk - vk * &x).amax());
        }
    }
    let max_residual = residuals.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(InterchangeReport { max_residual, residuals, commutator, truncated_mass })
}
