//! Finite-difference differentiation with Richardson extrapolation, and
//! lattice inversion of probability generating functions on a circle.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DERIVATIVE_ORDER: usize = 6;

/// Target aliasing error for a lattice inversion.
pub const ALIASING_BUDGET: f64 = 1e-9;
const MAX_NODES: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Central,
    /// Only samples at `x0 + j h`, `j >= 0`.
    Forward,
    /// Only samples at `x0 - j h`, `j >= 0`.
    Backward,
}

#[derive(Debug, Clone, Copy)]
pub struct DerivativeOptions {
    pub side: Side,
    /// Initial step; the extrapolation table halves it per level.
    pub step: f64,
    pub levels: usize,
    /// Absolute accuracy of a single evaluation of `f`.
    pub noise: f64,
    pub tolerance: Option<f64>,
}

impl DerivativeOptions {
    pub fn new(side: Side, step: f64) -> Self {
        Self { side, step, levels: 7, noise: 1e-15, tolerance: None }
    }

    pub fn noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn levels(mut self, levels: usize) -> Self {
        self.levels = levels.max(1);
        self
    }

    pub fn tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = Some(tolerance);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Derivative {
    pub value: f64,
    /// Conservative bound: extrapolation discrepancy plus roundoff.
    pub error: f64,
}

struct Stencil {
    offsets: Vec<f64>,
    weights: Vec<f64>,
    accuracy: usize,
    step_power: usize,
}

impl Stencil {
    fn new(order: usize, side: Side) -> Self {
        let offsets: Vec<f64> = match side {
            Side::Central => {
                let p = (order / 2 + 2) as i64;
                (-p..=p).map(|j| j as f64).collect()
            }
            Side::Forward => (0..order + 4).map(|j| j as f64).collect(),
            Side::Backward => (0..order + 4).map(|j| -(j as f64)).collect(),
        };
        let weights = fornberg_weights(0.0, &offsets, order).swap_remove(order);
        let accuracy = (1..=2 * offsets.len())
            .find(|m| {
                let moment: f64 = offsets
                    .iter()
                    .zip(&weights)
                    .map(|(o, w)| w * o.powi((order + m) as i32))
                    .sum();
                let scale: f64 = offsets
                    .iter()
                    .zip(&weights)
                    .map(|(o, w)| (w * o.powi((order + m) as i32)).abs())
                    .sum();
                moment.abs() > 1e-9 * scale.max(1.0)
            })
            .unwrap_or(1);
        let step_power = if side == Side::Central { 2 } else { 1 };
        Self { offsets, weights, accuracy, step_power }
    }

    fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }
}

/// Fornberg's recursion for finite-difference weights on arbitrary nodes.
/// Returns `c[k][j]`, the weight of node `j` for the k-th derivative at `x0`.
pub fn fornberg_weights(x0: f64, nodes: &[f64], max_order: usize) -> Vec<Vec<f64>> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; n]; max_order + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    for i in 1..n {
        let mn = i.min(max_order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// n-th derivative of `f` at `x0` by a finite-difference stencil refined
/// through a Richardson table over steps `h, h/2, h/4, ...`.
pub fn derivative_at<F>(mut f: F, x0: f64, order: usize, opts: &DerivativeOptions) -> Result<Derivative>
where
    F: FnMut(f64) -> Result<f64>,
{
    if order == 0 || order > MAX_DERIVATIVE_ORDER {
        return Err(Error::UnsupportedOrder { order, max: MAX_DERIVATIVE_ORDER });
    }
    let stencil = Stencil::new(order, opts.side);
    let levels = opts.levels.max(1);
    let mut table: Vec<Vec<f64>> = Vec::with_capacity(levels);
    let mut best = Derivative { value: f64::NAN, error: f64::INFINITY };
    let mut max_abs_f: f64 = 0.0;

    for i in 0..levels {
        let h = opts.step / 2f64.powi(i as i32);
        let mut acc = 0.0;
        for (o, w) in stencil.offsets.iter().zip(&stencil.weights) {
            let v = f(x0 + o * h)?;
            max_abs_f = max_abs_f.max(v.abs());
            acc += w * v;
        }
        let base = acc / h.powi(order as i32);
        let roundoff = 4.0 * (opts.noise + f64::EPSILON * max_abs_f) * stencil.weight_norm()
            / h.powi(order as i32);

        let mut row = vec![base];
        if i == 0 {
            // a single level carries no truncation estimate beyond roundoff
            best = Derivative { value: base, error: f64::INFINITY };
        }
        for j in 1..=i {
            let power = stencil.accuracy + (j - 1) * stencil.step_power;
            let factor = 2f64.powi(power as i32) - 1.0;
            let improved = row[j - 1] + (row[j - 1] - table[i - 1][j - 1]) / factor;
            let err = (improved - row[j - 1]).abs().max((improved - table[i - 1][j - 1]).abs());
            row.push(improved);
            let total = err + roundoff * 2f64.powi(j as i32);
            if total < best.error {
                best = Derivative { value: improved, error: total };
            }
        }
        let stalled = i >= 2 && {
            let prev = &table[i - 1];
            (row[i] - prev[i - 1]).abs() >= 2.0 * best.error
        };
        table.push(row);
        if stalled {
            break;
        }
    }
    if levels == 1 {
        let h = opts.step;
        best.error = 4.0 * (opts.noise + f64::EPSILON * max_abs_f) * stencil.weight_norm()
            / h.powi(order as i32);
    }
    if let Some(tol) = opts.tolerance {
        if best.error > tol {
            return Err(Error::DerivativeTolerance { estimate: best.error, tolerance: tol });
        }
    }
    Ok(best)
}

/// Circle of `nodes` points of radius `radius` used to recover `P(X = k)`,
/// `k = 0..=k_max`, from a PGF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionGrid {
    pub k_max: usize,
    pub nodes: usize,
    pub radius: f64,
}

impl InversionGrid {
    /// Smallest power-of-two grid (radius with `r^M = 1e-12`) meeting the
    /// aliasing budget at `k_max`.
    pub fn new(k_max: usize) -> Result<Self> {
        let mut nodes = (2 * k_max + 2).next_power_of_two().max(8);
        loop {
            let radius = 1e-12f64.powf(1.0 / nodes as f64);
            let grid = Self { k_max, nodes, radius };
            if grid.aliasing_bound(k_max) <= ALIASING_BUDGET {
                return Ok(grid);
            }
            if nodes >= MAX_NODES {
                return Err(Error::Aliasing(format!(
                    "no grid up to {MAX_NODES} nodes meets the {ALIASING_BUDGET:e} budget at k = {k_max}"
                )));
            }
            nodes *= 2;
        }
    }

    pub fn with_parameters(k_max: usize, nodes: usize, radius: f64) -> Result<Self> {
        if !nodes.is_power_of_two() || nodes < 2 * k_max + 2 {
            return Err(Error::Aliasing(format!(
                "nodes = {nodes} must be a power of two >= 2 k_max + 2 = {}",
                2 * k_max + 2
            )));
        }
        if !(radius > 0.0 && radius < 1.0) {
            return Err(Error::Aliasing(format!("radius must lie in (0, 1), got {radius}")));
        }
        let grid = Self { k_max, nodes, radius };
        let bound = grid.aliasing_bound(k_max);
        if bound > ALIASING_BUDGET {
            return Err(Error::Aliasing(format!(
                "aliasing bound {bound:e} at k = {k_max} exceeds {ALIASING_BUDGET:e}"
            )));
        }
        Ok(grid)
    }

    /// `r^M / (1 - r^M) * r^{-k}`.
    pub fn aliasing_bound(&self, k: usize) -> f64 {
        let rm = self.radius.powi(self.nodes as i32);
        rm / (1.0 - rm) * self.radius.powi(-(k as i32))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inversion {
    pub pmf: Vec<f64>,
    pub aliasing_bound: Vec<f64>,
    pub max_imaginary: f64,
    pub grid: InversionGrid,
}

/// `p_k = r^{-k}/M sum_j g(r w^j) w^{-jk}` with `w = exp(2 pi i / M)`.
pub fn invert_pgf<G>(g: G, grid: &InversionGrid) -> Result<Inversion>
where
    G: Fn(Complex64) -> Result<Complex64> + Sync,
{
    let m = grid.nodes;
    let mut samples = (0..m)
        .into_par_iter()
        .map(|j| {
            let angle = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
            g(Complex64::from_polar(grid.radius, angle))
        })
        .collect::<Result<Vec<_>>>()?;
    FftPlanner::new().plan_fft_forward(m).process(&mut samples);

    let mut pmf = Vec::with_capacity(grid.k_max + 1);
    let mut aliasing = Vec::with_capacity(grid.k_max + 1);
    let mut max_imaginary: f64 = 0.0;
    for (k, x) in samples.iter().take(grid.k_max + 1).enumerate() {
        let scale = grid.radius.powi(-(k as i32)) / m as f64;
        max_imaginary = max_imaginary.max((x.im * scale).abs());
        pmf.push(x.re * scale);
        aliasing.push(grid.aliasing_bound(k));
    }
    if max_imaginary > ALIASING_BUDGET {
        return Err(Error::Aliasing(format!(
            "imaginary residue {max_imaginary:e} exceeds {ALIASING_BUDGET:e}; input is not a real-coefficient PGF"
        )));
    }
    Ok(Inversion { pmf, aliasing_bound: aliasing, max_imaginary, grid: *grid })
}

/// Clips negative entries of magnitude below `threshold` to zero; larger
/// negatives are an error.
pub fn clip_pmf(pmf: &mut [f64], threshold: f64) -> Result<usize> {
    let mut clipped = 0;
    for (k, p) in pmf.iter_mut().enumerate() {
        if *p < 0.0 {
            if *p < -threshold {
                return Err(Error::NegativeMass { index: k, value: *p });
            }
            *p = 0.0;
            clipped += 1;
        }
    }
    if clipped > 0 {
        log::debug!("clipped {clipped} small negative pmf entries");
    }
    Ok(clipped)
}
