//! Shared inputs for every solver: the arrival rate with service and vacation
//! laws, the truncation policy for infinite products and sums, and the
//! initial distribution used by the transient recursion.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dist::DistSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub lambda: f64,
    pub service: DistSpec,
    pub vacation: DistSpec,
}

impl ModelParams {
    /// Validates both laws and the stability condition `rho < 1`.
    pub fn new(lambda: f64, service: DistSpec, vacation: DistSpec) -> Result<Self> {
        let params = Self { lambda, service, vacation };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_shape()?;
        let rho = self.rho();
        if rho >= 1.0 {
            return Err(Error::InvalidModel(format!(
                "rho = lambda E[H] = {rho:.6} >= 1 (E[V] = {:.6}); the queue is unstable",
                self.vacation.mean()
            )));
        }
        Ok(())
    }

    /// Everything except stability; the simulator accepts unstable inputs.
    pub fn validate_shape(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidModel(format!("lambda must be > 0, got {}", self.lambda)));
        }
        self.service.validate()?;
        self.vacation.validate()?;
        Ok(())
    }

    pub fn rho(&self) -> f64 {
        self.lambda * self.service.mean()
    }

    /// `lambda E[V]`, the mean number of arrivals during one vacation.
    pub fn vacation_load(&self) -> f64 {
        self.lambda * self.vacation.mean()
    }

    /// `a_H(z) = h(lambda - lambda z)`.
    pub fn a_h(&self, z: Complex64) -> Complex64 {
        self.service.transform(self.lambda * (1.0 - z))
    }

    /// `a_V(z) = v(lambda - lambda z)`.
    pub fn a_v(&self, z: Complex64) -> Complex64 {
        self.vacation.transform(self.lambda * (1.0 - z))
    }

    /// `lambda^n E[H^n]`, the n-th factorial moment of arrivals in a service.
    pub fn arrival_moment_h(&self, n: usize) -> f64 {
        if n == 0 {
            1.0
        } else {
            self.lambda.powi(n as i32) * self.service.moment(n)
        }
    }

    pub fn arrival_moment_v(&self, n: usize) -> f64 {
        if n == 0 {
            1.0
        } else {
            self.lambda.powi(n as i32) * self.vacation.moment(n)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationPolicy {
    pub eps: f64,
    pub max_n: usize,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self { eps: 1e-14, max_n: 1_000_000 }
    }
}

impl TruncationPolicy {
    pub fn new(eps: f64, max_n: usize) -> Result<Self> {
        let policy = Self { eps, max_n };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps <= 1e-8) {
            return Err(Error::InvalidPolicy(format!("eps must lie in (0, 1e-8], got {}", self.eps)));
        }
        if self.max_n < 16 {
            return Err(Error::InvalidPolicy(format!("max_n must be >= 16, got {}", self.max_n)));
        }
        Ok(())
    }
}

/// Distribution of the number of customers at the end of vacation 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pmf: Vec<f64>,
}

impl InitialState {
    pub fn new(pmf: Vec<f64>) -> Result<Self> {
        if pmf.is_empty() {
            return Err(Error::InvalidInitialState("pmf is empty".into()));
        }
        if pmf.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidInitialState("pmf entries must be nonnegative".into()));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInitialState(format!("pmf sums to {total}, not 1")));
        }
        Ok(Self { pmf })
    }

    /// All mass on `k` customers.
    pub fn point(k: usize) -> Self {
        let mut pmf = vec![0.0; k + 1];
        pmf[k] = 1.0;
        Self { pmf }
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    /// `q_0(z)`, a finite power sum.
    pub fn pgf(&self, z: Complex64) -> Complex64 {
        self.pmf.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, p| acc * z + p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stability_gate_names_rho() {
        let err = ModelParams::new(
            1.2,
            DistSpec::exponential(1.0).unwrap(),
            DistSpec::exponential(1.0).unwrap(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("rho"));
        assert!(ModelParams::new(0.5, DistSpec::exponential(1.0).unwrap(), DistSpec::deterministic(1.0).unwrap()).is_ok());
        assert!(ModelParams::new(0.0, DistSpec::exponential(1.0).unwrap(), DistSpec::deterministic(1.0).unwrap()).is_err());
    }

    #[test]
    fn policy_bounds() {
        assert!(TruncationPolicy::new(1e-14, 16).is_ok());
        assert!(TruncationPolicy::new(1e-6, 100).is_err());
        assert!(TruncationPolicy::new(0.0, 100).is_err());
        assert!(TruncationPolicy::new(1e-12, 8).is_err());
    }

    #[test]
    fn initial_state_pgf() {
        let init = InitialState::new(vec![0.25, 0.5, 0.25]).unwrap();
        let z = Complex64::new(0.5, 0.0);
        assert!((init.pgf(z).re - (0.25 + 0.25 + 0.0625)).abs() < 1e-15);
        assert_eq!(InitialState::point(2).pgf(z).re, 0.25);
        assert!(InitialState::new(vec![0.5, 0.4]).is_err());
        assert!(InitialState::new(vec![1.5, -0.5]).is_err());
    }
}
