//! Parametric nonnegative distributions used for service times and vacations.
//!
//! Every family has a closed-form Laplace-Stieltjes transform on `Re(s) >= 0`.
//! Besides `lst` each family also exposes `lst_complement(s) = 1 - lst(s)`,
//! evaluated without cancellation; the branching recursions run on these
//! complements because the interesting quantities all sit next to 1.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest raw moment order served by [`DistSpec::raw_moment`].
pub const MAX_MOMENT_ORDER: usize = 6;

/// Below this `|s| * scale` the uniform family switches to its moment series.
const UNIFORM_SERIES_RADIUS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum DistSpec {
    Deterministic { value: f64 },
    Exponential { rate: f64 },
    Erlang { shape: u32, rate: f64 },
    #[serde(rename = "hyperexponential")]
    HyperExponential { weights: Vec<f64>, rates: Vec<f64> },
    #[serde(rename = "uniform")]
    UniformInterval { a: f64, b: f64 },
}

impl DistSpec {
    pub fn deterministic(value: f64) -> Result<Self> {
        Self::Deterministic { value }.validated()
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::Exponential { rate }.validated()
    }

    pub fn erlang(shape: u32, rate: f64) -> Result<Self> {
        Self::Erlang { shape, rate }.validated()
    }

    pub fn hyperexponential(weights: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        Self::HyperExponential { weights, rates }.validated()
    }

    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        Self::UniformInterval { a, b }.validated()
    }

    fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDistribution(msg));
        let positive = |x: f64| x.is_finite() && x > 0.0;
        match self {
            DistSpec::Deterministic { value } if !positive(*value) => {
                bad(format!("deterministic value must be > 0, got {value}"))
            }
            DistSpec::Exponential { rate } if !positive(*rate) => {
                bad(format!("exponential rate must be > 0, got {rate}"))
            }
            DistSpec::Erlang { shape, rate } => {
                if *shape == 0 {
                    bad("erlang shape must be a positive integer".into())
                } else if !positive(*rate) {
                    bad(format!("erlang rate must be > 0, got {rate}"))
                } else {
                    Ok(())
                }
            }
            DistSpec::HyperExponential { weights, rates } => {
                if weights.is_empty() || weights.len() != rates.len() {
                    return bad("hyperexponential needs matching non-empty weights and rates".into());
                }
                if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                    return bad("hyperexponential weights must be nonnegative".into());
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return bad(format!("hyperexponential weights sum to {total}, not 1"));
                }
                if rates.iter().any(|r| !positive(*r)) {
                    return bad("hyperexponential rates must be > 0".into());
                }
                Ok(())
            }
            DistSpec::UniformInterval { a, b } => {
                if !(a.is_finite() && b.is_finite() && *a >= 0.0 && a < b) {
                    bad(format!("uniform interval needs 0 <= a < b, got [{a}, {b}]"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        self.moment(1)
    }

    pub fn variance(&self) -> f64 {
        let m1 = self.moment(1);
        self.moment(2) - m1 * m1
    }

    /// Exact `E[X^n]` for `1 <= n <= 6`.
    pub fn raw_moment(&self, n: usize) -> Result<f64> {
        if n == 0 || n > MAX_MOMENT_ORDER {
            return Err(Error::UnsupportedOrder { order: n, max: MAX_MOMENT_ORDER });
        }
        Ok(self.moment(n))
    }

    // Closed forms; valid for any n, the public cap lives in `raw_moment`.
    pub(crate) fn moment(&self, n: usize) -> f64 {
        let n_i = n as i32;
        match self {
            DistSpec::Deterministic { value } => value.powi(n_i),
            DistSpec::Exponential { rate } => factorial(n) / rate.powi(n_i),
            DistSpec::Erlang { shape, rate } => {
                let k = *shape as f64;
                (0..n).map(|j| k + j as f64).product::<f64>() / rate.powi(n_i)
            }
            DistSpec::HyperExponential { weights, rates } => weights
                .iter()
                .zip(rates)
                .map(|(w, r)| w * factorial(n) / r.powi(n_i))
                .sum(),
            DistSpec::UniformInterval { a, b } => uniform_moment(*a, *b, n),
        }
    }

    /// Laplace-Stieltjes transform `E[exp(-s X)]`, `Re(s) >= 0`.
    pub fn lst(&self, s: Complex64) -> Result<Complex64> {
        check_domain(s)?;
        Ok(self.transform(s))
    }

    /// `1 - E[exp(-s X)]`, accurate for small `|s|`.
    pub fn lst_complement(&self, s: Complex64) -> Result<Complex64> {
        check_domain(s)?;
        Ok(self.transform_complement(s))
    }

    pub fn lst_real(&self, s: f64) -> Result<f64> {
        Ok(self.lst(Complex64::new(s, 0.0))?.re)
    }

    /// PGF of the number of Poisson(`lambda`) arrivals during one draw of X.
    pub fn pgf_count(&self, lambda: f64, z: Complex64) -> Result<Complex64> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidModel(format!("arrival rate must be > 0, got {lambda}")));
        }
        self.lst(lambda * (1.0 - z))
    }

    pub(crate) fn transform(&self, s: Complex64) -> Complex64 {
        let one = Complex64::new(1.0, 0.0);
        match self {
            DistSpec::Deterministic { value } => (-s * value).exp(),
            DistSpec::Exponential { rate } => *rate / (s + rate),
            DistSpec::Erlang { shape, rate } => (*rate / (s + rate)).powu(*shape),
            DistSpec::HyperExponential { weights, rates } => {
                let total: f64 = weights.iter().sum();
                weights
                    .iter()
                    .zip(rates)
                    .map(|(w, r)| w / total * (*r / (s + r)))
                    .sum()
            }
            DistSpec::UniformInterval { a, b } => {
                if s.norm() * b < UNIFORM_SERIES_RADIUS {
                    one - uniform_complement_series(*a, *b, s)
                } else {
                    ((-s * a).exp() - (-s * b).exp()) / (s * (b - a))
                }
            }
        }
    }

    pub(crate) fn transform_complement(&self, s: Complex64) -> Complex64 {
        let one = Complex64::new(1.0, 0.0);
        match self {
            DistSpec::Deterministic { value } => -expm1(-s * value),
            DistSpec::Exponential { rate } => s / (s + rate),
            DistSpec::Erlang { shape, rate } => {
                // 1 - q^k = (1 - q)(1 + q + ... + q^(k-1))
                let q = *rate / (s + rate);
                let mut geometric = Complex64::new(0.0, 0.0);
                let mut power = one;
                for _ in 0..*shape {
                    geometric += power;
                    power *= q;
                }
                s / (s + rate) * geometric
            }
            DistSpec::HyperExponential { weights, rates } => {
                let total: f64 = weights.iter().sum();
                weights
                    .iter()
                    .zip(rates)
                    .map(|(w, r)| w / total * (s / (s + r)))
                    .sum()
            }
            DistSpec::UniformInterval { a, b } => {
                if s.norm() * b < UNIFORM_SERIES_RADIUS {
                    uniform_complement_series(*a, *b, s)
                } else {
                    one - self.transform(s)
                }
            }
        }
    }

    pub(crate) fn transform_real(&self, s: f64) -> f64 {
        self.transform(Complex64::new(s, 0.0)).re
    }

    pub(crate) fn complement_real(&self, s: f64) -> f64 {
        self.transform_complement(Complex64::new(s, 0.0)).re
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            DistSpec::Deterministic { value } => *value,
            DistSpec::Exponential { rate } => Exp::new(*rate).expect("validated rate").sample(rng),
            DistSpec::Erlang { shape, rate } => Gamma::new(*shape as f64, 1.0 / rate)
                .expect("validated erlang")
                .sample(rng),
            DistSpec::HyperExponential { weights, rates } => {
                let total: f64 = weights.iter().sum();
                let mut u = rng.random::<f64>() * total;
                let mut phase = rates.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    if u < *w {
                        phase = i;
                        break;
                    }
                    u -= w;
                }
                Exp::new(rates[phase]).expect("validated rate").sample(rng)
            }
            DistSpec::UniformInterval { a, b } => {
                Uniform::new(*a, *b).expect("validated interval").sample(rng)
            }
        }
    }

    /// Stateful sampler with pre-built distribution objects for the hot loop.
    pub fn sampler(&self) -> Sampler {
        let kind = match self {
            DistSpec::Deterministic { value } => SamplerKind::Constant(*value),
            DistSpec::Exponential { rate } => SamplerKind::Exp(Exp::new(*rate).expect("validated")),
            DistSpec::Erlang { shape, rate } => {
                SamplerKind::Gamma(Gamma::new(*shape as f64, 1.0 / rate).expect("validated"))
            }
            DistSpec::HyperExponential { weights, rates } => {
                let total: f64 = weights.iter().sum();
                let mut acc = 0.0;
                let cumulative = weights
                    .iter()
                    .map(|w| {
                        acc += w / total;
                        acc
                    })
                    .collect();
                let phases = rates.iter().map(|r| Exp::new(*r).expect("validated")).collect();
                SamplerKind::Mixture { cumulative, phases }
            }
            DistSpec::UniformInterval { a, b } => {
                SamplerKind::Uniform(Uniform::new(*a, *b).expect("validated"))
            }
        };
        Sampler { kind }
    }
}

#[derive(Debug, Clone)]
pub struct Sampler {
    kind: SamplerKind,
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Constant(f64),
    Exp(Exp<f64>),
    Gamma(Gamma<f64>),
    Mixture { cumulative: Vec<f64>, phases: Vec<Exp<f64>> },
    Uniform(Uniform<f64>),
}

impl Sampler {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            SamplerKind::Constant(v) => *v,
            SamplerKind::Exp(d) => d.sample(rng),
            SamplerKind::Gamma(d) => d.sample(rng),
            SamplerKind::Mixture { cumulative, phases } => {
                let u: f64 = rng.random();
                let i = cumulative.iter().position(|c| u < *c).unwrap_or(phases.len() - 1);
                phases[i].sample(rng)
            }
            SamplerKind::Uniform(d) => d.sample(rng),
        }
    }
}

fn check_domain(s: Complex64) -> Result<()> {
    if s.re < 0.0 || !s.re.is_finite() || !s.im.is_finite() {
        Err(Error::Domain(s.re))
    } else {
        Ok(())
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn uniform_moment(a: f64, b: f64, n: usize) -> f64 {
    // (b^{n+1} - a^{n+1}) / ((n+1)(b-a)) without the subtraction
    let sum: f64 = (0..=n).map(|j| b.powi(j as i32) * a.powi((n - j) as i32)).sum();
    sum / (n as f64 + 1.0)
}

fn uniform_complement_series(a: f64, b: f64, s: Complex64) -> Complex64 {
    // 1 - E[e^{-sX}] = -sum_{n>=1} (-s)^n E[X^n] / n!
    let mut total = Complex64::new(0.0, 0.0);
    let mut term = Complex64::new(1.0, 0.0);
    for n in 1..40 {
        term *= -s / n as f64;
        let contribution = term * uniform_moment(a, b, n);
        total -= contribution;
        if contribution.norm() < 1e-18 * total.norm().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    total
}

/// `exp(x) - 1` for complex `x` without cancellation near zero.
pub(crate) fn expm1(x: Complex64) -> Complex64 {
    if x.norm() < 0.5 {
        let mut term = Complex64::new(1.0, 0.0);
        let mut total = Complex64::new(0.0, 0.0);
        for k in 1..30 {
            term *= x / k as f64;
            total += term;
            if term.norm() < 1e-18 * total.norm() {
                break;
            }
        }
        total
    } else {
        x.exp() - 1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn families() -> Vec<DistSpec> {
        vec![
            DistSpec::deterministic(1.3).unwrap(),
            DistSpec::exponential(0.7).unwrap(),
            DistSpec::erlang(3, 2.5).unwrap(),
            DistSpec::hyperexponential(vec![0.3, 0.7], vec![0.5, 4.0]).unwrap(),
            DistSpec::uniform(0.2, 1.7).unwrap(),
        ]
    }

    #[test]
    fn lst_examples() {
        let det = DistSpec::deterministic(2.0).unwrap();
        assert_eq!(det.lst(c(0.0)).unwrap(), c(1.0));
        let exp = DistSpec::exponential(1.0).unwrap();
        assert_relative_eq!(exp.lst(c(1.0)).unwrap().re, 0.5, epsilon = 1e-15);
        let erl = DistSpec::erlang(2, 3.0).unwrap();
        assert_relative_eq!(erl.lst(c(1.5)).unwrap().re, 4.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn erlang_lst_matches_quadrature() {
        // Simpson's rule on x e^{-sx} 9 x e^{-3x}, independent of the closed form.
        let (s, rate) = (1.5f64, 3.0f64);
        let density = |x: f64| rate * rate * x * (-rate * x).exp();
        let (upper, n) = (40.0, 200_000);
        let h = upper / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let x = i as f64 * h;
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * (-s * x).exp() * density(x);
        }
        let quadrature = acc * h / 3.0;
        assert_relative_eq!(quadrature, 4.0 / 9.0, epsilon = 1e-10);
        let erl = DistSpec::erlang(2, rate).unwrap();
        assert_relative_eq!(erl.lst_real(s).unwrap(), quadrature, epsilon = 1e-10);
    }

    #[test]
    fn negative_real_part_is_a_domain_error() {
        for d in families() {
            assert!(matches!(d.lst(c(-0.1)), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn pgf_count_examples() {
        for d in families() {
            assert_relative_eq!(d.pgf_count(0.8, c(1.0)).unwrap().re, 1.0, epsilon = 1e-15);
        }
        let exp = DistSpec::exponential(1.0).unwrap();
        assert_relative_eq!(exp.pgf_count(1.0, c(0.0)).unwrap().re, 0.5, epsilon = 1e-15);
        let det = DistSpec::deterministic(1.0).unwrap();
        assert_relative_eq!(det.pgf_count(2.0, c(0.5)).unwrap().re, (-1.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn poisson_count_pgf_matches_monte_carlo() {
        // E[z^{Poisson(lambda d)}] for lambda=2, d=1, z=0.5.
        use rand_distr::Poisson;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let poisson = Poisson::new(2.0).unwrap();
        let draws = 2_000_000;
        let mean: f64 = (0..draws)
            .map(|_| 0.5f64.powi(poisson.sample(&mut rng) as i32))
            .sum::<f64>()
            / draws as f64;
        let det = DistSpec::deterministic(1.0).unwrap();
        assert!((det.pgf_count(2.0, c(0.5)).unwrap().re - mean).abs() < 1e-3);
    }

    #[test]
    fn raw_moment_examples() {
        assert_eq!(DistSpec::exponential(1.0).unwrap().raw_moment(2).unwrap(), 2.0);
        assert_eq!(DistSpec::deterministic(3.0).unwrap().raw_moment(2).unwrap(), 9.0);
        let hyper = DistSpec::hyperexponential(vec![0.5, 0.5], vec![1.0, 2.0]).unwrap();
        assert_relative_eq!(hyper.raw_moment(1).unwrap(), 0.75, epsilon = 1e-15);
        assert!(matches!(hyper.raw_moment(7), Err(Error::UnsupportedOrder { .. })));
        assert!(matches!(hyper.raw_moment(0), Err(Error::UnsupportedOrder { .. })));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(DistSpec::exponential(0.0).is_err());
        assert!(DistSpec::deterministic(-1.0).is_err());
        assert!(DistSpec::erlang(0, 1.0).is_err());
        assert!(DistSpec::hyperexponential(vec![0.5, 0.4], vec![1.0, 2.0]).is_err());
        assert!(DistSpec::hyperexponential(vec![1.0], vec![1.0, 2.0]).is_err());
        assert!(DistSpec::uniform(2.0, 1.0).is_err());
    }

    #[test]
    fn uniform_lst_at_zero_is_exactly_one() {
        let u = DistSpec::uniform(0.5, 2.0).unwrap();
        assert_eq!(u.lst(c(0.0)).unwrap(), c(1.0));
        assert_eq!(u.lst_complement(c(0.0)).unwrap(), c(0.0));
    }

    #[test]
    fn complement_agrees_with_direct_difference() {
        let points = [
            Complex64::new(0.3, 0.0),
            Complex64::new(0.9, 2.0),
            Complex64::new(2.5, -1.0),
            Complex64::new(1e-7, 3e-8),
        ];
        for d in families() {
            for s in points {
                let direct = 1.0 - d.lst(s).unwrap();
                let comp = d.lst_complement(s).unwrap();
                assert!((direct - comp).norm() < 1e-14, "{d:?} at {s}");
            }
            // small-argument accuracy: complement ~ s E[X]
            let s = 1e-10;
            assert_relative_eq!(d.complement_real(s), s * d.mean(), max_relative = 1e-8);
        }
    }

    #[test]
    fn sampler_reproduces_for_fixed_seed() {
        for d in families() {
            let s = d.sampler();
            let mut a = ChaCha8Rng::seed_from_u64(5);
            let mut b = ChaCha8Rng::seed_from_u64(5);
            let xs: Vec<f64> = (0..10).map(|_| s.draw(&mut a)).collect();
            let ys: Vec<f64> = (0..10).map(|_| s.draw(&mut b)).collect();
            assert_eq!(xs, ys);
        }
        let det = DistSpec::deterministic(2.0).unwrap();
        assert_eq!(det.sample(&mut ChaCha8Rng::seed_from_u64(1)), 2.0);
    }

    #[test]
    fn sample_statistics_match_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 1_000_000;
        let exp = DistSpec::exponential(1.0).unwrap().sampler();
        let mean = (0..n).map(|_| exp.draw(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01);

        let erl = DistSpec::erlang(2, 2.0).unwrap().sampler();
        let xs: Vec<f64> = (0..n).map(|_| erl.draw(&mut rng)).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 0.5).abs() < 0.01);

        for d in families() {
            let s = d.sampler();
            let xs: Vec<f64> = (0..n).map(|_| s.draw(&mut rng)).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let se = (d.variance() / n as f64).sqrt();
            assert!((m - d.mean()).abs() < 3.0 * se + 1e-9, "{d:?}: {m} vs {}", d.mean());
        }
    }

    #[test]
    fn serde_literal_shape() {
        let d: DistSpec = serde_json::from_str(r#"{"family":"erlang","shape":2,"rate":3.0}"#).unwrap();
        assert_eq!(d, DistSpec::Erlang { shape: 2, rate: 3.0 });
        let u: DistSpec = serde_json::from_str(r#"{"family":"uniform","a":0.0,"b":1.0}"#).unwrap();
        assert_eq!(u, DistSpec::UniformInterval { a: 0.0, b: 1.0 });
        assert!(serde_json::from_str::<DistSpec>(r#"{"family":"exponential","rate":1.0,"x":2}"#).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn any_dist() -> impl Strategy<Value = DistSpec> {
            prop_oneof![
                (0.05f64..5.0).prop_map(|v| DistSpec::Deterministic { value: v }),
                (0.05f64..5.0).prop_map(|r| DistSpec::Exponential { rate: r }),
                (1u32..6, 0.1f64..5.0).prop_map(|(k, r)| DistSpec::Erlang { shape: k, rate: r }),
                (0.05f64..0.95, 0.1f64..5.0, 0.1f64..5.0).prop_map(|(w, r1, r2)| {
                    DistSpec::HyperExponential { weights: vec![w, 1.0 - w], rates: vec![r1, r2] }
                }),
                (0.0f64..2.0, 0.05f64..3.0).prop_map(|(a, w)| DistSpec::UniformInterval { a, b: a + w }),
            ]
        }

        proptest! {
            #[test]
            fn real_lst_is_a_decreasing_fraction(d in any_dist(), s in 0.01f64..20.0, ds in 0.001f64..1.0) {
                let v = d.transform_real(s);
                prop_assert!(v > 0.0 && v < 1.0);
                prop_assert!(d.transform_real(s + ds) < v);
            }

            #[test]
            fn complex_lst_dominated_by_real_part(d in any_dist(), re in 0.0f64..5.0, im in -10.0f64..10.0) {
                let s = Complex64::new(re, im);
                prop_assert!(d.lst(s).unwrap().norm() <= d.transform_real(re) + 1e-13);
            }

            #[test]
            fn pgf_count_dominated_on_disk(d in any_dist(), lambda in 0.05f64..3.0, r in 0.0f64..1.0, arg in 0.0f64..6.3) {
                let z = Complex64::from_polar(r, arg);
                let v = d.pgf_count(lambda, z).unwrap().norm();
                prop_assert!(v <= d.pgf_count(lambda, Complex64::new(r, 0.0)).unwrap().re + 1e-13);
            }
        }
    }
}
