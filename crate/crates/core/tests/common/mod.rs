#![allow(dead_code)]

use gatedq::{DistSpec, ModelParams};

pub fn det() -> DistSpec {
    DistSpec::deterministic(1.0).unwrap()
}

pub fn exp() -> DistSpec {
    DistSpec::exponential(1.0).unwrap()
}

pub fn erlang2() -> DistSpec {
    DistSpec::erlang(2, 2.0).unwrap()
}

pub fn hyperexp() -> DistSpec {
    DistSpec::hyperexponential(vec![0.5, 0.5], vec![2.0, 2.0 / 3.0]).unwrap()
}

/// `(H, V)` pairs, all with unit means.
pub fn pairs() -> Vec<(&'static str, DistSpec, DistSpec)> {
    vec![
        ("det/exp", det(), exp()),
        ("exp/exp", exp(), exp()),
        ("erlang2/det", erlang2(), det()),
        ("hyperexp/erlang2", hyperexp(), erlang2()),
    ]
}

/// Twelve models: three loads times four `(H, V)` pairs.
pub fn battery() -> Vec<(String, ModelParams)> {
    let mut out = Vec::new();
    for lambda in [0.1, 0.5, 0.9] {
        for (name, h, v) in pairs() {
            out.push((format!("{name} lambda={lambda}"), ModelParams::new(lambda, h, v).unwrap()));
        }
    }
    out
}

/// Four models with `rho <= 0.8` for simulation comparisons.
pub fn simulation_models() -> Vec<(String, ModelParams)> {
    [0.5, 0.8, 0.3, 0.6]
        .into_iter()
        .zip(pairs())
        .map(|(lambda, (name, h, v))| (format!("{name} lambda={lambda}"), ModelParams::new(lambda, h, v).unwrap()))
        .collect()
}

pub fn z_grid() -> Vec<f64> {
    (0..10).map(|i| i as f64 / 10.0).collect()
}
