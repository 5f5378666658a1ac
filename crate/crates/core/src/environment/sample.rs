use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use super::{half_gram, CoefficientSet, EnvSpec, HamiltonianKind, ModelKind};
use crate::error::{Error, Result};
use crate::lattice::{Lattice, MAX_DIM};
use crate::numerics::keyed_rng;

/// Sample the coefficient fields of `spec` with the given seed.
///
/// Every random quantity is drawn from a stream keyed by the seed, a field
/// tag and an item index, so the result is a pure function of `(spec, seed)`.
pub fn sample_environment(spec: &EnvSpec, seed: u64) -> Result<CoefficientSet> {
    spec.validate()?;
    let d = spec.dimension;
    let n = spec.nodes_per_axis()?;
    let h = spec.spacing;
    let lattice = Lattice::torus(d, n, h)?;
    let len = lattice.len();
    let p = &spec.params;
    let fluct = |tag: &str| -> Vec<f64> { fluctuation(spec, seed, &lattice, tag) };

    let a = if p.a_amp > 0.0 && spec.model != ModelKind::Constant {
        fluct("a").into_iter().map(|f| p.a_mean * (1.0 + p.a_amp * f)).collect()
    } else {
        vec![p.a_mean; len]
    };

    let mut bump_centers = Vec::new();
    let v = match spec.model {
        ModelKind::Constant => vec![p.v_base; len],
        ModelKind::ShotNoise => {
            let mut v = vec![p.v_base; len];
            if p.bump_amplitude > 0.0 && p.intensity > 0.0 {
                bump_centers = bump_points(spec, seed)?;
                stamp_bumps(spec, &lattice, &bump_centers, &mut v);
            }
            v
        }
        _ => {
            if p.v_amp > 0.0 {
                fluct("v")
                    .into_iter()
                    .map(|f| p.v_base + p.v_amp * 0.5 * (1.0 + f))
                    .collect()
            } else {
                vec![p.v_base; len]
            }
        }
    };

    let s0 = spec.sigma_base()?;
    let sig_f = if p.sigma_amp > 0.0 && spec.model != ModelKind::Constant {
        Some(fluct("sigma"))
    } else {
        None
    };
    let mut sigma = vec![0.0; len * d * d];
    let mut amat = vec![0.0; len * d * d];
    for i in 0..len {
        let fac = sig_f.as_ref().map_or(1.0, |f| 1.0 + p.sigma_amp * f[i]);
        let mut s = [[0.0; MAX_DIM]; MAX_DIM];
        for r in 0..d {
            for c in 0..d {
                s[r][c] = fac * s0[r][c];
                sigma[i * d * d + r * d + c] = s[r][c];
            }
        }
        let am = half_gram(&s, d);
        for r in 0..d {
            for c in 0..d {
                amat[i * d * d + r * d + c] = am[r][c];
            }
        }
    }

    let mut b = vec![0.0; len * d];
    for k in 0..d {
        let base = p.drift.get(k).copied().unwrap_or(0.0);
        let f = if p.drift_amp > 0.0 && spec.model != ModelKind::Constant {
            Some(fluct(&format!("b{k}")))
        } else {
            None
        };
        for i in 0..len {
            b[i * d + k] = base + f.as_ref().map_or(0.0, |f| p.drift_amp * f[i]);
        }
    }

    let cs = CoefficientSet {
        spec: spec.clone(),
        seed,
        lattice,
        a,
        v,
        b,
        sigma,
        amat,
        offset: [0.0; MAX_DIM],
        bump_centers,
    };
    check_structure(&cs)?;
    Ok(cs)
}

/// Structural checks: `V >= 0`, `a > 0`, `|σ| <= Λ₂`, discrete Lipschitz
/// ratio of `σ` at most `Λ₂`, and the upper bound `H <= Λ₁(|p|^q + 1)`.
fn check_structure(cs: &CoefficientSet) -> Result<()> {
    let spec = &cs.spec;
    let d = spec.dimension;
    let tol = 1e-12;
    if cs.v.iter().any(|v| *v < 0.0) {
        return Err(Error::config("params", "potential must be nonnegative"));
    }
    if cs.a.iter().any(|a| *a <= 0.0) {
        return Err(Error::config("params", "coefficient a must be positive"));
    }
    let mut smax = 0.0f64;
    for i in 0..cs.lattice.len() {
        smax = smax.max(matrix_op_norm(&cs.sigma[i * d * d..(i + 1) * d * d], d));
    }
    if smax > spec.lambda2 * (1.0 + tol) + tol {
        return Err(Error::config(
            "lambda2",
            format!("|sigma| reaches {smax:.6} > lambda2 = {}", spec.lambda2),
        ));
    }
    let lip = sigma_lipschitz(cs, None);
    if lip > spec.lambda2 * (1.0 + tol) + tol {
        return Err(Error::config(
            "lambda2",
            format!("discrete Lipschitz ratio of sigma is {lip:.6} > lambda2 = {}", spec.lambda2),
        ));
    }
    let top = match spec.hamiltonian {
        HamiltonianKind::Power => cs.a.iter().cloned().fold(0.0, f64::max),
        HamiltonianKind::QuadraticDrift => {
            let mut m = 0.0f64;
            for i in 0..cs.lattice.len() {
                let lam = sym_eig_max(&cs.amat[i * d * d..(i + 1) * d * d], d);
                let bn: f64 = cs.b[i * d..(i + 1) * d].iter().map(|x| x * x).sum::<f64>().sqrt();
                m = m.max(lam + 0.5 * bn);
            }
            m
        }
    };
    if top > spec.lambda1 * (1.0 + tol) {
        return Err(Error::config(
            "lambda1",
            format!(
                "H(p,y) <= lambda1 (|p|^q + 1) needs lambda1 >= {top:.6}, got {}",
                spec.lambda1
            ),
        ));
    }
    Ok(())
}

/// Largest `|σ(x) - σ(x')| / h` over grid edges, restricted to `nodes` when given.
pub(crate) fn sigma_lipschitz(cs: &CoefficientSet, nodes: Option<&[usize]>) -> f64 {
    let d = cs.dim();
    let l = &cs.lattice;
    let h = cs.spacing();
    let mut best = 0.0f64;
    let mut diff = [0.0; MAX_DIM * MAX_DIM];
    let mut visit = |i: usize, member: &dyn Fn(usize) -> bool| {
        let c = l.coords(i);
        for k in 0..d {
            if let Some(j) = l.neighbor(i, &c, k, 1) {
                if !member(j) {
                    continue;
                }
                for t in 0..d * d {
                    diff[t] = cs.sigma[j * d * d + t] - cs.sigma[i * d * d + t];
                }
                best = best.max(matrix_op_norm(&diff[..d * d], d) / h);
            }
        }
    };
    match nodes {
        None => {
            for i in 0..l.len() {
                visit(i, &|_| true);
            }
        }
        Some(set) => {
            let mut mark = std::collections::HashSet::with_capacity(set.len());
            mark.extend(set.iter().copied());
            for &i in set {
                visit(i, &|j| mark.contains(&j));
            }
        }
    }
    best
}

/// Spectral norm of a `d × d` row-major matrix.
pub(crate) fn matrix_op_norm(m: &[f64], d: usize) -> f64 {
    // largest eigenvalue of MᵀM
    let mut g = [0.0; MAX_DIM * MAX_DIM];
    for j in 0..d {
        for k in 0..d {
            let mut acc = 0.0;
            for i in 0..d {
                acc += m[i * d + j] * m[i * d + k];
            }
            g[j * d + k] = acc;
        }
    }
    sym_eig_max(&g[..d * d], d).max(0.0).sqrt()
}

/// Eigenvalues of a symmetric `d × d` matrix (d <= 3), ascending.
pub(crate) fn sym_eigs(m: &[f64], d: usize) -> [f64; MAX_DIM] {
    let mut out = [0.0; MAX_DIM];
    match d {
        1 => out[0] = m[0],
        2 => {
            let (a, b, c) = (m[0], 0.5 * (m[1] + m[2]), m[3]);
            let tr = 0.5 * (a + c);
            let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            out[0] = tr - disc;
            out[1] = tr + disc;
        }
        _ => {
            // Jacobi rotations
            let mut a = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    a[i][j] = 0.5 * (m[i * 3 + j] + m[j * 3 + i]);
                }
            }
            for _ in 0..50 {
                let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
                if off < 1e-300 {
                    break;
                }
                for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = 0.5 * (a[q][q] - a[p][p]) / a[p][q];
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..3 {
                        let akp = a[k][p];
                        let akq = a[k][q];
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..3 {
                        let apk = a[p][k];
                        let aqk = a[q][k];
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
            out = [a[0][0], a[1][1], a[2][2]];
            out.sort_by(|x, y| x.partial_cmp(y).unwrap());
        }
    }
    out
}

pub(crate) fn sym_eig_max(m: &[f64], d: usize) -> f64 {
    sym_eigs(m, d)[d - 1]
}

pub(crate) fn sym_eig_min(m: &[f64], d: usize) -> f64 {
    sym_eigs(m, d)[0]
}

/// Stationary field with values in `[-1, 1]` sampled at the lattice nodes.
fn fluctuation(spec: &EnvSpec, seed: u64, l: &Lattice, tag: &str) -> Vec<f64> {
    match spec.model {
        ModelKind::Constant => vec![0.0; l.len()],
        ModelKind::ShotNoise | ModelKind::SmoothedCheckerboard => checkerboard(spec, seed, l, tag),
        ModelKind::SpectralField => spectral(spec, seed, l, tag),
    }
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Independent uniform cell values blended with a C¹ smoothstep between
/// cell centers, with a uniformly random global phase.
fn checkerboard(spec: &EnvSpec, seed: u64, l: &Lattice, tag: &str) -> Vec<f64> {
    let d = spec.dimension;
    let ell = spec.params.correlation_length;
    let ncell = (spec.period / ell).round() as usize;
    let mut phase = [0.0; MAX_DIM];
    {
        let mut rng = keyed_rng(seed, &format!("{tag}/phase"), 0);
        for ph in phase.iter_mut().take(d) {
            *ph = rng.random::<f64>() * ell;
        }
    }
    let total = ncell.pow(d as u32);
    let cells: Vec<f64> = (0..total)
        .map(|c| {
            let mut rng = keyed_rng(seed, &format!("{tag}/cell"), c as u64);
            rng.random_range(-1.0..=1.0)
        })
        .collect();
    let mut out = vec![0.0; l.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let x = l.point(i);
        let mut base = [0usize; MAX_DIM];
        let mut w1 = [0.0; MAX_DIM];
        for k in 0..d {
            let s = (x[k] - phase[k]) / ell - 0.5;
            let j = s.floor();
            w1[k] = smoothstep(s - j);
            base[k] = (j as i64).rem_euclid(ncell as i64) as usize;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0usize;
            for k in 0..d {
                let bit = (corner >> k) & 1;
                let j = (base[k] + bit) % ncell;
                w *= if bit == 1 { w1[k] } else { 1.0 - w1[k] };
                idx = idx * ncell + j;
            }
            acc += w * cells[idx];
        }
        *o = acc;
    }
    out
}

/// `tanh` of a unit-variance random cosine sum with integer wave vectors on
/// the torus and a Gaussian spectrum of width `1 / correlation_length`.
fn spectral(spec: &EnvSpec, seed: u64, l: &Lattice, tag: &str) -> Vec<f64> {
    let d = spec.dimension;
    let big_l = spec.period;
    let modes = spec.params.spectral_modes;
    let sd = big_l / (2.0 * std::f64::consts::PI * spec.params.correlation_length);
    let normal = Normal::new(0.0, sd.max(1e-12)).expect("finite spread");
    let mut waves = Vec::with_capacity(modes);
    for j in 0..modes {
        let mut rng = keyed_rng(seed, &format!("{tag}/mode"), j as u64);
        let mut m = [0.0; MAX_DIM];
        loop {
            let mut nonzero = false;
            for mk in m.iter_mut().take(d) {
                *mk = normal.sample(&mut rng).round();
                nonzero |= *mk != 0.0;
            }
            if nonzero {
                break;
            }
        }
        let phi = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
        let mut k = [0.0; MAX_DIM];
        for t in 0..d {
            k[t] = 2.0 * std::f64::consts::PI * m[t] / big_l;
        }
        waves.push((k, phi));
    }
    let amp = (2.0 / modes as f64).sqrt();
    (0..l.len())
        .map(|i| {
            let x = l.point(i);
            let g: f64 = waves
                .iter()
                .map(|(k, phi)| {
                    let mut arg = *phi;
                    for t in 0..d {
                        arg += k[t] * x[t];
                    }
                    arg.cos()
                })
                .sum();
            (amp * g).tanh()
        })
        .collect()
}

fn bump_points(spec: &EnvSpec, seed: u64) -> Result<Vec<[f64; MAX_DIM]>> {
    let d = spec.dimension;
    let mean = spec.params.intensity * spec.period.powi(d as i32);
    let count = {
        let mut rng = keyed_rng(seed, "bumps/count", 0);
        let pois = Poisson::new(mean).map_err(|e| Error::config("params.intensity", e.to_string()))?;
        pois.sample(&mut rng) as usize
    };
    Ok((0..count)
        .map(|i| {
            let mut rng = keyed_rng(seed, "bumps/center", i as u64);
            let mut c = [0.0; MAX_DIM];
            for ck in c.iter_mut().take(d) {
                *ck = rng.random::<f64>() * spec.period;
            }
            c
        })
        .collect())
}

/// Bump profile `W` at squared distance `r2`.
pub fn bump_profile(amplitude: f64, radius: f64, r2: f64) -> f64 {
    let s = 1.0 - r2 / (radius * radius);
    if s <= 0.0 {
        0.0
    } else {
        amplitude * s * s * s
    }
}

fn stamp_bumps(spec: &EnvSpec, l: &Lattice, centers: &[[f64; MAX_DIM]], v: &mut [f64]) {
    let d = spec.dimension;
    let h = spec.spacing;
    let n = l.shape[0] as i64;
    let rad = spec.params.bump_radius;
    let amp = spec.params.bump_amplitude;
    let reach = (rad / h).ceil() as i64 + 1;
    let span = (2 * reach + 2) as usize;
    for c in centers {
        let mut lo = [0i64; MAX_DIM];
        for k in 0..d {
            lo[k] = (c[k] / h).floor() as i64 - reach;
        }
        for t in 0..span.pow(d as u32) {
            let mut rem = t;
            let mut r2 = 0.0;
            let mut coords = [0usize; MAX_DIM];
            for k in (0..d).rev() {
                let g = lo[k] + (rem % span) as i64;
                rem /= span;
                let x = g as f64 * h;
                r2 += (x - c[k]) * (x - c[k]);
                coords[k] = g.rem_euclid(n) as usize;
            }
            let w = bump_profile(amp, rad, r2);
            if w > 0.0 {
                v[l.index(&coords)] += w;
            }
        }
    }
}
