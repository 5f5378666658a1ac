#![allow(dead_code)]

use hjlab::environment::{sample_environment, CoefficientSet, EnvSpec};

/// Constant power-model environment.
pub fn constant(dim: usize, q: f64, a: f64, v: f64) -> CoefficientSet {
    sample_environment(&EnvSpec::constant_power(dim, q, a, v), 0).unwrap()
}

/// One-dimensional power-model environment without diffusion whose potential
/// is `v` sampled at the nodes of a torus of the given period and spacing.
pub fn potential_1d(period: f64, h: f64, q: f64, lambda1: f64, v: impl Fn(f64) -> f64) -> CoefficientSet {
    let mut spec = EnvSpec::constant_power(1, q, 1.0, 0.0);
    spec.period = period;
    spec.spacing = h;
    spec.lambda1 = lambda1;
    let mut cs = sample_environment(&spec, 0).unwrap();
    for i in 0..cs.v.len() {
        cs.v[i] = v(cs.node_position(i)[0]);
    }
    cs
}

fn mean_over_period(f: impl Fn(f64) -> f64, period: f64) -> f64 {
    let n = 20_000;
    let dx = period / n as f64;
    (0..n).map(|i| f((i as f64 + 0.5) * dx)).sum::<f64>() / n as f64
}

/// Effective Hamiltonian of `a|p|^q - V(x)` on the circle, computed from the
/// classical 1D reduction: on the level set `{a|ξ|^q - V = μ}` the corrector
/// slope takes the branch with the sign of `p`, and the zero-mean condition
/// `⟨((μ + V)/a)^{1/q}⟩ = |p|` fixes `μ`; below that range `H̄ = -min V`.
pub fn oracle_hbar_1d(v: impl Fn(f64) -> f64, a: f64, q: f64, period: f64, p: f64) -> f64 {
    let n = 20_000;
    let vmin = (0..n)
        .map(|i| v(period * i as f64 / n as f64))
        .fold(f64::INFINITY, f64::min);
    let speed = |mu: f64| mean_over_period(|x| ((mu + v(x)).max(0.0) / a).powf(1.0 / q), period);
    let floor = -vmin;
    if speed(floor) >= p.abs() {
        return floor;
    }
    let mut lo = floor;
    let mut hi = floor + 1.0;
    while speed(hi) < p.abs() {
        hi = floor + 2.0 * (hi - floor);
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if speed(mid) < p.abs() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Quadratic-drift environment with `σ = sigma I`, constant potential and drift.
pub fn diffusion(dim: usize, sigma: f64, v: f64, drift: &[f64]) -> CoefficientSet {
    let mut spec = EnvSpec::constant_power(dim, 2.0, 1.0, v);
    spec.hamiltonian = hjlab::environment::HamiltonianKind::QuadraticDrift;
    spec.params.sigma_scale = sigma;
    spec.params.drift = drift.to_vec();
    spec.lambda1 = 4.0;
    spec.lambda2 = sigma;
    sample_environment(&spec, 0).unwrap()
}

/// Shot-noise potential under `σ = √2 I` on a torus of period `period`.
pub fn shot_noise(dim: usize, period: f64, h: f64, seed: u64) -> CoefficientSet {
    let mut spec = EnvSpec::constant_power(dim, 2.0, 1.0, 0.0);
    spec.model = hjlab::environment::ModelKind::ShotNoise;
    spec.hamiltonian = hjlab::environment::HamiltonianKind::QuadraticDrift;
    spec.period = period;
    spec.spacing = h;
    spec.params.sigma_scale = 2f64.sqrt();
    spec.params.bump_radius = 1.0;
    spec.params.bump_amplitude = 1.0;
    spec.params.intensity = 0.2;
    spec.lambda1 = 8.0;
    spec.lambda2 = 2f64.sqrt();
    sample_environment(&spec, seed).unwrap()
}
