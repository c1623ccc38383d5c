//! Batch-service M/GI/1 queue: all waiting customers are served together,
//! a batch of `k` taking `H_1 + ... + H_k + V`. The queue at the end of a
//! batch service has the vacation-end law of the gated vacation model, so
//! the batch size `L_S` has PGF `l_S(z) = l_E(z) + (z - 1) l_E(0)`.
//!
//! Every difference quotient below is assembled from complements
//! `1 - l_S(1 - d)`, which are `O(d)` and avoid cancellation near `d = 0`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::branching::SolveContext;
use crate::error::{Error, Result};
use crate::model::{ModelParams, TruncationPolicy};
use crate::numerics::{self, derivative_at, DerivativeOptions, InversionGrid, Side};
use crate::vacation::{VacationQueue, CLIP_THRESHOLD};

const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };
const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
/// Step of the symmetric difference used where age and residual arguments coincide.
const COINCIDENT_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchBasics {
    /// `E[S^B]`, mean batch service time.
    pub mean_service: f64,
    /// `E[C]`, mean time between consecutive batch starts.
    pub mean_cycle: f64,
    /// Server utilization.
    pub rho_star: f64,
}

#[derive(Debug, Clone)]
pub struct BatchQueue {
    vacation: VacationQueue,
    basics: BatchBasics,
    mean_vacation_end: f64,
}

impl BatchQueue {
    pub fn new(params: &ModelParams, policy: &TruncationPolicy) -> Result<Self> {
        let vacation = VacationQueue::new(params, policy)?;
        let mean_vacation_end = vacation.vacation_end_moments(1)?[0];
        let c = vacation.context().ell_e0();
        let mean_service = (mean_vacation_end + c) * params.service.mean() + params.vacation.mean();
        let mean_cycle = mean_service + c / params.lambda;
        let basics = BatchBasics { mean_service, mean_cycle, rho_star: mean_service / mean_cycle };
        Ok(Self { vacation, basics, mean_vacation_end })
    }

    pub fn params(&self) -> &ModelParams {
        self.vacation.params()
    }

    fn ctx(&self) -> &SolveContext {
        self.vacation.context()
    }

    pub fn basics(&self) -> BatchBasics {
        self.basics
    }

    /// Utilization written in model primitives; equals `E[S^B] / E[C]`.
    pub fn rho_star_primitive(&self) -> f64 {
        let m = self.params();
        let rho = m.rho();
        let c = self.ctx().ell_e0();
        let sigma = m.vacation_load();
        let le = self.mean_vacation_end;
        (rho * le + rho * c + sigma) / (rho * le + (1.0 + rho) * c + sigma)
    }

    /// Mean batch size `E[L_S] = E[L_E] + l_E(0)`.
    pub fn mean_batch_size(&self) -> f64 {
        self.mean_vacation_end + self.ctx().ell_e0()
    }

    /// Batch-size PGF.
    pub fn ell_s(&self, z: Complex64) -> Complex64 {
        self.ctx().ell_e(z) + (z - 1.0) * self.ctx().ell_e0()
    }

    /// `1 - l_S(1 - d)`.
    fn ell_s_comp(&self, d: Complex64) -> Complex64 {
        self.ctx().vacation_end_complement(d) + self.ctx().ell_e0() * d
    }

    /// `E[S^B] (s - w) f*(z, s, w)` where the two transform arguments enter
    /// through `1 - z h(x)` and `1 - v(x)`.
    fn age_residual_numerator(&self, z: Complex64, s: f64, omega: f64) -> Complex64 {
        let m = self.params();
        let arg = |x: f64| {
            let hc = m.service.complement_real(x);
            let d = (ONE - z) + z * hc;
            (d, m.vacation.complement_real(x))
        };
        let (d_w, vc_w) = arg(omega);
        let (d_s, vc_s) = arg(s);
        // l_S(a) v(w) - l_S(b) v(s) with l_S = 1 - S, v = 1 - vc
        let s_w = self.ell_s_comp(d_w);
        let s_s = self.ell_s_comp(d_s);
        (s_s - s_w) + vc_s * (ONE - s_s) - vc_w * (ONE - s_w)
    }

    /// Joint transform of the batch size in service and the age and residual
    /// of that service, `E[z^{L_S} e^{-s age} e^{-w residual}]`.
    pub fn age_residual_transform(&self, z: f64, s: f64, omega: f64) -> Result<f64> {
        if !(s >= 0.0) {
            return Err(Error::Domain(s));
        }
        if !(omega >= 0.0) {
            return Err(Error::Domain(omega));
        }
        if !(0.0..=1.0).contains(&z) {
            return Err(Error::InvalidModel(format!("z must lie in [0, 1], got {z}")));
        }
        let zc = Complex64::new(z, 0.0);
        let es = self.basics.mean_service;
        if s != omega {
            return Ok(self.age_residual_numerator(zc, s, omega).re / (es * (s - omega)));
        }
        // coincident arguments: the quotient tends to -d/dx [l_S(z h(x)) v(x)] / E[S^B]
        let (lo, hi) = if omega >= COINCIDENT_STEP {
            (omega - COINCIDENT_STEP, omega + COINCIDENT_STEP)
        } else {
            (omega, omega + COINCIDENT_STEP)
        };
        Ok(self.age_residual_numerator(zc, hi, lo).re / (es * (hi - lo)))
    }

    /// Stationary queue-length PGF.
    pub fn queue_pgf(&self, z: Complex64) -> Complex64 {
        let d = ONE - z;
        if d == ZERO {
            return ONE;
        }
        let m = self.params();
        let rho_star = self.basics.rho_star;
        let arg = m.lambda * d;
        let hc = m.service.transform_complement(arg);
        let vc = m.vacation.transform_complement(arg);
        let d2 = d + z * hc;
        let s1 = self.ell_s_comp(d);
        let s2 = self.ell_s_comp(d2);
        // l_S(z) - l_S(z h(lambda d)) v(lambda d)
        let numerator = (s2 - s1) + vc * (ONE - s2);
        (1.0 - rho_star) + rho_star * numerator / (m.lambda * self.basics.mean_service * d)
    }

    /// Sojourn-time LST of a customer.
    pub fn delay_lst(&self, omega: f64) -> Result<f64> {
        if !(omega >= 0.0) {
            return Err(Error::Domain(omega));
        }
        if omega == 0.0 {
            return Ok(1.0);
        }
        let m = self.params();
        let rho_star = self.basics.rho_star;
        let hc = m.service.complement_real(omega);
        let shifted = omega + m.lambda * hc;
        let hc2 = m.service.complement_real(shifted);
        let vc2 = m.vacation.complement_real(shifted);
        let e_comp = self.ctx().vacation_end_complement(Complex64::new(hc, 0.0)).re;
        let s_comp = self.ell_s_comp(Complex64::new(hc2, 0.0)).re;
        // l_E(h(w)) - l_S(h(w')) v(w')
        let numerator = (s_comp - e_comp) + vc2 * (1.0 - s_comp);
        let front = m.service.transform_real(omega) * m.vacation.transform_real(omega);
        Ok(front * ((1.0 - rho_star) + rho_star * numerator / (self.basics.mean_service * omega)))
    }

    /// Time-average mean queue length, by differentiating the PGF at 1.
    pub fn mean_queue_length(&self) -> Result<f64> {
        let d = derivative_at(
            |x| Ok(self.queue_pgf(Complex64::new(x, 0.0)).re),
            1.0,
            1,
            &DerivativeOptions::new(Side::Backward, 0.05),
        )?;
        Ok(d.value)
    }

    /// Mean sojourn time, by differentiating the delay LST at 0.
    pub fn mean_delay(&self) -> Result<f64> {
        let d = derivative_at(|w| self.delay_lst(w), 0.0, 1, &DerivativeOptions::new(Side::Forward, 0.05))?;
        Ok(-d.value)
    }

    pub fn batch_size_pmf(&self, k_max: usize) -> Result<Vec<f64>> {
        let grid = InversionGrid::new(k_max)?;
        let mut pmf = numerics::invert_pgf(|z| Ok(self.ell_s(z)), &grid)?.pmf;
        numerics::clip_pmf(&mut pmf, CLIP_THRESHOLD)?;
        Ok(pmf)
    }

    pub fn queue_pmf(&self, k_max: usize) -> Result<Vec<f64>> {
        let grid = InversionGrid::new(k_max)?;
        let mut pmf = numerics::invert_pgf(|z| Ok(self.queue_pgf(z)), &grid)?.pmf;
        numerics::clip_pmf(&mut pmf, CLIP_THRESHOLD)?;
        Ok(pmf)
    }

    pub fn report(&self, k_max: usize) -> Result<BatchReport> {
        let queue_pmf = self.queue_pmf(k_max)?;
        let batch_size_pmf = self.batch_size_pmf(k_max)?;
        let mean_queue = self.mean_queue_length()?;
        let mean_delay = self.mean_delay()?;
        Ok(BatchReport {
            ell_e0: self.ctx().ell_e0(),
            ell_s0: self.ell_s(ZERO).re,
            mean_batch_size: self.mean_batch_size(),
            batch_size_pmf,
            basics: self.basics,
            mean_queue_length: mean_queue,
            mean_delay,
            little_residual: (mean_queue - self.params().lambda * mean_delay).abs(),
            queue_pmf,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub ell_e0: f64,
    pub ell_s0: f64,
    pub mean_batch_size: f64,
    pub batch_size_pmf: Vec<f64>,
    pub basics: BatchBasics,
    pub mean_queue_length: f64,
    pub mean_delay: f64,
    /// `|E[L] - lambda E[D]|`
    pub little_residual: f64,
    pub queue_pmf: Vec<f64>,
}
