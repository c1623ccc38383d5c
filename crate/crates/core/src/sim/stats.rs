use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Replication mean with its spread and a 95% Student-t half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// Sample variance of the replication values.
    pub variance: f64,
    pub half_width: f64,
    pub replications: usize,
}

impl Estimate {
    /// Aggregates one value per replication. Non-finite values (an
    /// observable with no events in that replication) are skipped.
    pub fn from_replications(values: &[f64]) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let n = finite.len();
        if n == 0 {
            return Self { mean: f64::NAN, variance: f64::NAN, half_width: f64::INFINITY, replications: 0 };
        }
        let mean = finite.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Self { mean, variance: f64::NAN, half_width: f64::INFINITY, replications: 1 };
        }
        let variance = finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .map(|d| d.inverse_cdf(0.975))
            .unwrap_or(1.96);
        Self { mean, variance, half_width: t * (variance / n as f64).sqrt(), replications: n }
    }

    /// `|value - mean| <= k * half_width`, with an optional absolute floor for
    /// cells whose replication spread is zero.
    pub fn covers(&self, value: f64, k: f64, floor: f64) -> bool {
        (value - self.mean).abs() <= (k * self.half_width).max(floor)
    }
}

/// Aggregates a vector-valued observable cell by cell.
pub fn aggregate_vectors(rows: &[Vec<f64>]) -> Vec<Estimate> {
    let width = rows.iter().map(Vec::len).max().unwrap_or(0);
    (0..width)
        .map(|k| {
            let column: Vec<f64> = rows.iter().map(|r| r.get(k).copied().unwrap_or(0.0)).collect();
            Estimate::from_replications(&column)
        })
        .collect()
}

/// Histogram over `0..cap` plus a final overflow cell.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Histogram {
    weights: Vec<f64>,
    total: f64,
}

impl Histogram {
    pub fn new(cap: usize) -> Self {
        Self { weights: vec![0.0; cap + 1], total: 0.0 }
    }

    pub fn add(&mut self, k: usize, weight: f64) {
        let last = self.weights.len() - 1;
        self.weights[k.min(last)] += weight;
        self.total += weight;
    }

    /// Normalized cells; all NaN when empty.
    pub fn normalized(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w / self.total).collect()
    }
}

/// Running sums of a per-event sample.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Moments {
    pub count: f64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn add(&mut self, x: f64) {
        self.count += 1.0;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.count
    }

    pub fn second(&self) -> f64 {
        self.sum_sq / self.count
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn student_t_half_width() {
        let e = Estimate::from_replications(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(e.mean, 3.0);
        assert!((e.variance - 2.5).abs() < 1e-15);
        // t_{0.975, 4} = 2.776445
        assert!((e.half_width - 2.776445 * (0.5f64).sqrt()).abs() < 1e-5);
        assert!(e.covers(4.9, 1.0, 0.0));
        assert!(!e.covers(5.0, 1.0, 0.0));
    }

    #[test]
    fn degenerate_inputs() {
        let e = Estimate::from_replications(&[f64::NAN, 2.0, 2.0]);
        assert_eq!(e.replications, 2);
        assert_eq!(e.half_width, 0.0);
        assert!(e.covers(2.0 + 1e-9, 3.0, 1e-6));
        assert!(Estimate::from_replications(&[]).mean.is_nan());
    }

    #[test]
    fn histogram_overflow() {
        let mut h = Histogram::new(2);
        for k in 0..5 {
            h.add(k, 1.0);
        }
        assert_eq!(h.normalized(), vec![0.2, 0.2, 0.6]);
    }
}
