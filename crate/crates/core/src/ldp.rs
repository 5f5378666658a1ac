//! Survival-weighted diffusions: Euler–Maruyama path ensembles, the
//! Feynman–Kac partition function by Monte Carlo and by an explicit
//! parabolic scheme, the Hopf–Cole check and empirical large-deviation rates.
//!
//! Paths solve `dX = σ(X)ᵀ dB + b(X) dt`, whose generator is
//! `tr(A D²) + b·D` with `A = σᵀσ/2`.

use std::io::Write;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convexanalysis::ConvexTable;
use crate::environment::CoefficientSet;
use crate::error::{Error, Result};
use crate::hjsolver::{stationary_operator, Boundary, SolverGrid, SolverOptions};
use crate::lattice::{Lattice, MAX_DIM};
use crate::numerics::{dot, fsum, keyed_rng, norm};

/// Target sets of the large-deviation estimates, in rescaled coordinates
/// (the event is `X_t ∈ tK`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetSet {
    Whole,
    /// `{ |y - center| >= radius }`.
    BallComplement { center: Vec<f64>, radius: f64 },
    /// `{ |y - center| < radius }`.
    OpenBall { center: Vec<f64>, radius: f64 },
    /// `{ normal·y >= offset }`.
    HalfSpace { normal: Vec<f64>, offset: f64 },
}

impl TargetSet {
    pub fn contains(&self, y: &[f64]) -> bool {
        match self {
            TargetSet::Whole => true,
            TargetSet::BallComplement { center, radius } => dist(y, center) >= *radius,
            TargetSet::OpenBall { center, radius } => dist(y, center) < *radius,
            TargetSet::HalfSpace { normal, offset } => dot(normal, y) >= *offset,
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            TargetSet::OpenBall { radius, .. } => !(*radius > 0.0),
            TargetSet::HalfSpace { normal, offset } => norm(normal) == 0.0 && *offset > 0.0,
            _ => false,
        }
    }

    /// Closest point of the closure of the set.
    pub fn project(&self, y: &[f64]) -> Vec<f64> {
        if self.contains(y) {
            return y.to_vec();
        }
        match self {
            TargetSet::Whole => y.to_vec(),
            TargetSet::BallComplement { center, radius } | TargetSet::OpenBall { center, radius } => {
                let r = dist(y, center);
                if r == 0.0 {
                    let mut out = center.clone();
                    out[0] += radius;
                    return out;
                }
                center.iter().zip(y).map(|(c, v)| c + (v - c) * radius / r).collect()
            }
            TargetSet::HalfSpace { normal, offset } => {
                let n2 = dot(normal, normal);
                let s = (offset - dot(normal, y)) / n2;
                y.iter().zip(normal).map(|(v, n)| v + s * n).collect()
            }
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        let ok = match self {
            TargetSet::Whole => true,
            TargetSet::BallComplement { center, .. } | TargetSet::OpenBall { center, .. } => center.len() == d,
            TargetSet::HalfSpace { normal, .. } => normal.len() == d,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("target set dimension differs from {d}")))
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Importance sampling by constant Brownian drifts. Path `i` is driven by
/// `dB + θ_{i mod M} dt`; the likelihood ratio is taken against the equal
/// mixture of the `M` tilted laws, so it depends only on `B_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tilt {
    pub thetas: Vec<Vec<f64>>,
}

impl Tilt {
    /// `m` drifts of length `magnitude` spread over the circle (2D) or the
    /// sphere; in 1D the two signs.
    pub fn radial(dim: usize, magnitude: f64, m: usize) -> Self {
        let dirs = crate::numerics::sphere_directions(dim, m);
        Tilt {
            thetas: dirs.into_iter().map(|e| e.iter().map(|x| magnitude * x).collect()).collect(),
        }
    }

    fn likelihood(&self, b_t: &[f64], t: f64) -> f64 {
        let m = self.thetas.len() as f64;
        let mix = self
            .thetas
            .iter()
            .map(|th| (dot(th, b_t) - 0.5 * dot(th, th) * t).exp())
            .sum::<f64>()
            / m;
        1.0 / mix
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathOptions {
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub tilt: Option<Tilt>,
    /// Number of contiguous batches for batch-means errors.
    pub batches: usize,
}

impl Default for PathOptions {
    fn default() -> Self {
        PathOptions {
            dt: 0.01,
            n_paths: 10_000,
            seed: 0,
            tilt: None,
            batches: 100,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub dim: usize,
    pub x0: Vec<f64>,
    pub t: f64,
    /// Step actually used: `t / steps`.
    pub dt: f64,
    pub steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    /// Stream tag of the keyed generator; path `i` uses index `i`.
    pub stream: String,
    /// `n_paths × dim`, row-major.
    pub terminal: Vec<f64>,
    /// `exp(-∫ V(X_s) ds)` by the trapezoid rule.
    pub weights: Vec<f64>,
    /// `dP/dQ` per path when tilted.
    pub likelihood: Option<Vec<f64>>,
    pub tilt: Option<Tilt>,
    pub batches: usize,
}

impl PathEnsemble {
    pub fn terminal_of(&self, i: usize) -> &[f64] {
        &self.terminal[i * self.dim..(i + 1) * self.dim]
    }

    fn weight(&self, i: usize) -> f64 {
        match &self.likelihood {
            Some(l) => self.weights[i] * l[i],
            None => self.weights[i],
        }
    }
}

const PATH_STREAM: &str = "ldp/paths";

/// Euler–Maruyama ensemble started at `x0`. Each path draws from its own
/// keyed stream, so the result does not depend on the thread count.
pub fn simulate_paths(cs: &CoefficientSet, x0: &[f64], t: f64, opts: &PathOptions) -> Result<PathEnsemble> {
    let d = cs.dim();
    if x0.len() != d || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("x0 must be a finite point of the environment dimension"));
    }
    if !(opts.dt > 0.0) || !(t > 0.0) || !t.is_finite() {
        return Err(Error::domain("time step and horizon must be positive"));
    }
    if opts.n_paths == 0 || opts.batches == 0 {
        return Err(Error::config("n_paths", "need at least one path and one batch"));
    }
    if let Some(tilt) = &opts.tilt {
        if tilt.thetas.is_empty() || tilt.thetas.iter().any(|th| th.len() != d) {
            return Err(Error::config("tilt", "tilt drifts must be nonempty vectors of the environment dimension"));
        }
    }
    let steps = (t / opts.dt).ceil().max(1.0) as usize;
    let dt = t / steps as f64;
    let sq = dt.sqrt();
    let seed = opts.seed;
    let tilt = opts.tilt.as_ref();
    let paths: Vec<([f64; MAX_DIM], f64, f64)> = (0..opts.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = keyed_rng(seed, PATH_STREAM, i as u64);
            let theta = tilt.map(|tl| &tl.thetas[i % tl.thetas.len()]);
            let mut x = [0.0; MAX_DIM];
            x[..d].copy_from_slice(x0);
            let mut bp = [0.0; MAX_DIM];
            let mut c = cs.at(&x[..d]);
            let mut integral = 0.5 * c.v;
            for s in 0..steps {
                let mut db = [0.0; MAX_DIM];
                for k in 0..d {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    db[k] = sq * z + theta.map_or(0.0, |th| th[k] * dt);
                    bp[k] += db[k];
                }
                let mut nx = x;
                for k in 0..d {
                    let mut inc = c.b[k] * dt;
                    for j in 0..d {
                        inc += c.sigma[j][k] * db[j];
                    }
                    nx[k] = x[k] + inc;
                }
                x = nx;
                c = cs.at(&x[..d]);
                integral += if s + 1 == steps { 0.5 * c.v } else { c.v };
            }
            let w = (-integral * dt).exp();
            let l = tilt.map_or(1.0, |tl| tl.likelihood(&bp[..d], t));
            (x, w, l)
        })
        .collect();
    let mut terminal = Vec::with_capacity(opts.n_paths * d);
    let mut weights = Vec::with_capacity(opts.n_paths);
    let mut lik = Vec::with_capacity(opts.n_paths);
    for (x, w, l) in paths {
        terminal.extend_from_slice(&x[..d]);
        weights.push(w);
        lik.push(l);
    }
    Ok(PathEnsemble {
        dim: d,
        x0: x0.to_vec(),
        t,
        dt,
        steps,
        n_paths: opts.n_paths,
        seed,
        stream: PATH_STREAM.into(),
        terminal,
        weights,
        likelihood: opts.tilt.as_ref().map(|_| lik),
        tilt: opts.tilt.clone(),
        batches: opts.batches.min(opts.n_paths),
    })
}

fn batch_ranges(n: usize, b: usize) -> Vec<std::ops::Range<usize>> {
    (0..b).map(|k| (k * n / b)..((k + 1) * n / b)).collect()
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let b = xs.len() as f64;
    let m = fsum(xs.iter().cloned()) / b;
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let var = fsum(xs.iter().map(|x| (x - m) * (x - m))) / (b - 1.0);
    (m, (var / b).sqrt())
}

/// `S = E[exp(-∫V)]` with a batch-means standard error.
pub fn partition_function(ens: &PathEnsemble) -> Result<(f64, f64)> {
    if ens.n_paths < 2 {
        return Err(Error::domain("the partition function needs at least two paths"));
    }
    let value = fsum((0..ens.n_paths).map(|i| ens.weight(i))) / ens.n_paths as f64;
    let b = ens.batches.max(2).min(ens.n_paths);
    let means: Vec<f64> = batch_ranges(ens.n_paths, b)
        .into_iter()
        .map(|r| {
            let len = r.len() as f64;
            fsum(r.map(|i| ens.weight(i))) / len
        })
        .collect();
    let (_, se) = mean_and_stderr(&means);
    Ok((value, se))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub set: TargetSet,
    pub t: f64,
    /// `Q[X_t ∈ tK]`.
    pub probability: f64,
    pub probability_stderr: f64,
    /// `-(1/t) log Q[X_t ∈ tK]`; absent without hits.
    pub empirical: Option<f64>,
    pub stderr: f64,
    /// With no hits: `-(1/t) log(1/N)`, a rough lower confidence value.
    pub lower_bound: Option<f64>,
    pub hits: usize,
    pub n_paths: usize,
    pub tilted: bool,
    pub prediction: Option<f64>,
}

/// Empirical rate of `X_t ∈ tK` under the survival-tilted path measure,
/// for an ensemble started at `t x`.
pub fn empirical_rate(ens: &PathEnsemble, k: &TargetSet, x: &[f64]) -> Result<RateEstimate> {
    k.check_dim(ens.dim)?;
    let t = ens.t;
    if x.len() != ens.dim || dist(&ens.x0, &x.iter().map(|v| v * t).collect::<Vec<_>>()) > 1e-9 * (1.0 + norm(&ens.x0)) {
        return Err(Error::domain("the ensemble must start at t x"));
    }
    let inside: Vec<bool> = (0..ens.n_paths)
        .map(|i| {
            let y: Vec<f64> = ens.terminal_of(i).iter().map(|v| v / t).collect();
            k.contains(&y)
        })
        .collect();
    let hits = inside.iter().filter(|b| **b).count();
    let num = fsum((0..ens.n_paths).filter(|i| inside[*i]).map(|i| ens.weight(i)));
    let den = fsum((0..ens.n_paths).map(|i| ens.weight(i)));
    let probability = if den > 0.0 { num / den } else { 0.0 };
    let b = ens.batches.max(2).min(ens.n_paths);
    let ratios: Vec<f64> = batch_ranges(ens.n_paths, b)
        .into_iter()
        .map(|r| {
            let nb = fsum(r.clone().filter(|i| inside[*i]).map(|i| ens.weight(i)));
            let db = fsum(r.map(|i| ens.weight(i)));
            if db > 0.0 {
                nb / db
            } else {
                0.0
            }
        })
        .collect();
    let (_, pse) = mean_and_stderr(&ratios);
    let (empirical, stderr, lower_bound) = if hits > 0 && probability > 0.0 {
        (Some(-probability.ln() / t), pse / (probability * t), None)
    } else {
        (None, f64::NAN, Some((ens.n_paths as f64).ln() / t))
    };
    Ok(RateEstimate {
        set: k.clone(),
        t,
        probability,
        probability_stderr: pse,
        empirical,
        stderr,
        lower_bound,
        hits,
        n_paths: ens.n_paths,
        tilted: ens.tilt.is_some(),
        prediction: None,
    })
}

/// `inf_{y ∈ K} L̄(x - y) + H̄(0)`: lattice search over `z = x - y` with
/// points outside `x - K` projected onto it, then a local refinement.
pub fn ldp_prediction(l: &ConvexTable, hbar0: f64, k: &TargetSet, x: &[f64]) -> Result<f64> {
    let d = l.dim();
    k.check_dim(d)?;
    if x.len() != d {
        return Err(Error::domain("x dimension differs from the table"));
    }
    if k.is_empty() {
        return Err(Error::domain("the target set is empty"));
    }
    let eval = |z: &[f64]| -> f64 {
        let y: Vec<f64> = x.iter().zip(z).map(|(a, b)| a - b).collect();
        let py = k.project(&y);
        let pz: Vec<f64> = x.iter().zip(&py).map(|(a, b)| a - b).collect();
        l.interpolate(&pz).unwrap_or(f64::INFINITY)
    };
    let lat = &l.lattice;
    let mut best = f64::INFINITY;
    let mut arg = vec![0.0; d];
    for i in 0..lat.len() {
        let z = &lat.point(i)[..d];
        let v = eval(z);
        if v < best {
            best = v;
            arg = z.to_vec();
        }
    }
    if !best.is_finite() {
        return Err(Error::domain("the target set does not meet the domain of L"));
    }
    // Two rounds of refinement on a 21^d grid spanning one cell each way.
    let mut span: Vec<f64> = (0..d).map(|k| lat.step[k]).collect();
    for _ in 0..2 {
        let m = 21usize;
        let total = m.pow(d as u32);
        let center = arg.clone();
        for idx in 0..total {
            let mut z = vec![0.0; d];
            let mut r = idx;
            for kk in 0..d {
                let j = r % m;
                r /= m;
                z[kk] = center[kk] + span[kk] * (2.0 * j as f64 / (m - 1) as f64 - 1.0);
            }
            let v = eval(&z);
            if v < best {
                best = v;
                arg = z;
            }
        }
        span.iter_mut().for_each(|s| *s /= 10.0);
    }
    Ok(best + hbar0)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PdeOptions {
    /// Time step; by default 0.9 of the stability limit.
    pub dt: Option<f64>,
    /// Times at which to keep a snapshot (the nearest step is used); the
    /// final time is always kept.
    pub record_times: Vec<f64>,
    /// Keep every `n`-th step in addition.
    pub record_every: Option<usize>,
}

/// Snapshots of the partition function on a periodic grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SurvivalField {
    pub lattice: Lattice,
    pub dt: f64,
    pub dt_limit: f64,
    pub times: Vec<f64>,
    pub snapshots: Vec<Vec<f64>>,
}

impl SurvivalField {
    pub fn value_at(&self, snapshot: usize, x: &[f64]) -> Option<f64> {
        self.lattice.interpolate(&self.snapshots[snapshot], x)
    }

    pub fn last(&self) -> &[f64] {
        self.snapshots.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// Generator `tr(A D²) + b·D` as a Markov chain: per node a list of
/// `(neighbor, rate)` with nonnegative rates (Kushner–Dupuis diffusion,
/// upwind drift).
fn generator(cs: &CoefficientSet, lat: &Lattice) -> Vec<Vec<(usize, f64)>> {
    let d = lat.dim;
    let h = lat.step[0];
    let h2 = h * h;
    (0..lat.len())
        .into_par_iter()
        .map(|i| {
            let c = cs.at(&lat.point(i)[..d]);
            let co = lat.coords(i);
            let mut out: Vec<(usize, f64)> = Vec::with_capacity(4 * d * d);
            let shift = |idx: usize, coords: [usize; MAX_DIM], moves: &[(usize, isize)]| -> usize {
                let mut j = idx;
                let mut cc = coords;
                for &(k, dir) in moves {
                    j = lat.neighbor(j, &cc, k, dir).expect("periodic grid");
                    cc = lat.coords(j);
                }
                j
            };
            for k in 0..d {
                let off: f64 = (0..d).filter(|l| *l != k).map(|l| c.amat[k][l].abs()).sum();
                let wk = (c.amat[k][k] - off).max(0.0) / h2;
                let up = c.b[k].max(0.0) / h;
                let down = (-c.b[k]).max(0.0) / h;
                out.push((shift(i, co, &[(k, 1)]), wk + up));
                out.push((shift(i, co, &[(k, -1)]), wk + down));
                for l in (k + 1)..d {
                    let a = c.amat[k][l];
                    if a == 0.0 {
                        continue;
                    }
                    let w = a.abs() / h2;
                    let s: isize = if a > 0.0 { 1 } else { -1 };
                    out.push((shift(i, co, &[(k, 1), (l, s)]), w));
                    out.push((shift(i, co, &[(k, -1), (l, -s)]), w));
                }
            }
            out.retain(|(_, w)| *w > 0.0);
            out
        })
        .collect()
}

/// Explicit marching of `S_t = tr(A D²S) + b·DS - V S`, `S(0) = 1`, on a
/// periodic grid: one monotone generator step followed by the exact decay
/// `exp(-V dt)`. Needs `dt Σ rates <= 1` at every node.
pub fn pde_partition_function(cs: &CoefficientSet, t: f64, grid: &SolverGrid, opts: &PdeOptions) -> Result<SurvivalField> {
    let lat = grid.lattice;
    let d = cs.dim();
    if grid.boundary != Boundary::Periodic || lat.dim != d {
        return Err(Error::config("grid", "the partition function is computed on a periodic grid"));
    }
    for k in 0..d {
        if (lat.period(k) - cs.period()).abs() > 1e-9 * cs.period() || (lat.step[k] - lat.step[0]).abs() > 1e-12 {
            return Err(Error::config("grid", "the grid must be isotropic with the environment period"));
        }
    }
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::domain("horizon must be positive"));
    }
    let gen = generator(cs, &lat);
    let vals: Vec<f64> = (0..lat.len()).map(|i| cs.at(&lat.point(i)[..d]).v).collect();
    let max_rate = gen
        .iter()
        .map(|row| row.iter().map(|(_, w)| w).sum::<f64>())
        .fold(0.0f64, f64::max);
    let dt_limit = if max_rate > 0.0 { 1.0 / max_rate } else { f64::INFINITY };
    let dt_req = match opts.dt {
        Some(dt) => {
            if !(dt > 0.0) {
                return Err(Error::config("dt", "time step must be positive"));
            }
            if dt > dt_limit * (1.0 + 1e-12) {
                return Err(Error::config(
                    "dt",
                    format!("time step {dt} exceeds the stability limit {dt_limit}"),
                ));
            }
            dt
        }
        None => (0.9 * dt_limit).min(t),
    };
    let steps = (t / dt_req - 1e-9).ceil().max(1.0) as usize;
    let dt = t / steps as f64;
    let decay: Vec<f64> = vals.iter().map(|v| (-v * dt).exp()).collect();
    let mut keep = vec![false; steps + 1];
    keep[0] = true;
    keep[steps] = true;
    for &tr in &opts.record_times {
        let s = (tr / dt).round();
        if s >= 0.0 && (s as usize) <= steps {
            keep[s as usize] = true;
        }
    }
    if let Some(n) = opts.record_every {
        for s in (0..=steps).step_by(n.max(1)) {
            keep[s] = true;
        }
    }
    let n = lat.len();
    let mut s = vec![1.0; n];
    let mut times = vec![0.0];
    let mut snapshots = vec![s.clone()];
    let mut next = vec![0.0; n];
    for step in 1..=steps {
        next.par_iter_mut().enumerate().for_each(|(i, out)| {
            let si = s[i];
            let mut acc = 0.0;
            for &(j, w) in &gen[i] {
                acc += w * (s[j] - si);
            }
            *out = decay[i] * (si + dt * acc);
        });
        std::mem::swap(&mut s, &mut next);
        if keep[step] {
            times.push(step as f64 * dt);
            snapshots.push(s.clone());
        }
    }
    Ok(SurvivalField {
        lattice: lat,
        dt,
        dt_limit,
        times,
        snapshots,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopfColeReport {
    pub sup: f64,
    pub mean: f64,
    /// `(t, sup over nodes)` per snapshot pair.
    pub per_step: Vec<(f64, f64)>,
    pub eps_scale: f64,
}

/// Residual of `U_t - tr(A D²U) + DU·A DU - b·DU - V = 0` for `U = -log S`
/// between consecutive snapshots, with the stationary stencils of the
/// solver. The residual is invariant under the parabolic rescaling by
/// `eps_scale`, which is only recorded.
pub fn hopf_cole_residual(field: &SurvivalField, cs: &CoefficientSet, eps_scale: f64) -> Result<HopfColeReport> {
    if field.snapshots.iter().flatten().any(|v| !(*v > 0.0)) {
        return Err(Error::domain("the partition function must be positive on every node"));
    }
    if field.snapshots.len() < 2 {
        return Err(Error::domain("need at least two snapshots"));
    }
    let reversed = cs.with_negated_drift();
    let grid = SolverGrid {
        lattice: field.lattice,
        boundary: Boundary::Periodic,
    };
    let opts = SolverOptions::default();
    let d = cs.dim();
    let zero = vec![0.0; d];
    let mut per_step = Vec::new();
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut sup = 0.0f64;
    let mut prev: Vec<f64> = field.snapshots[0].iter().map(|s| -s.ln()).collect();
    for n in 1..field.snapshots.len() {
        let u: Vec<f64> = field.snapshots[n].iter().map(|s| -s.ln()).collect();
        let dt = field.times[n] - field.times[n - 1];
        let f = stationary_operator(&reversed, &zero, &u, &grid, &opts)?;
        let mut step_sup = 0.0f64;
        for i in 0..u.len() {
            let r = ((u[i] - prev[i]) / dt + f[i]).abs();
            step_sup = step_sup.max(r);
            sum += r;
        }
        count += u.len();
        sup = sup.max(step_sup);
        per_step.push((field.times[n], step_sup));
        prev = u;
    }
    Ok(HopfColeReport {
        sup,
        mean: sum / count as f64,
        per_step,
        eps_scale,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRow {
    pub t: f64,
    /// `(1/t) log S(t, t x)`.
    pub log_rate: f64,
    /// `|(1/t) log S(t, t x) - H̄(0)|`.
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalReport {
    pub x: Vec<f64>,
    pub hbar0: f64,
    pub rows: Vec<SurvivalRow>,
    pub gap_decreasing: bool,
}

impl SurvivalReport {
    /// `t,log_rate,gap`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "t,log_rate,gap")?;
        for r in &self.rows {
            writeln!(f, "{:.17e},{:.17e},{:.17e}", r.t, r.log_rate, r.gap)?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Compare `(1/t) log S(t, t x)` from the parabolic scheme with `H̄(0)`
/// along an increasing ladder of times.
pub fn survival_rate_check(
    cs: &CoefficientSet,
    x: &[f64],
    t_ladder: &[f64],
    hbar0: f64,
    grid: Option<SolverGrid>,
    opts: &PdeOptions,
) -> Result<SurvivalReport> {
    if t_ladder.is_empty() || t_ladder.windows(2).any(|w| w[1] <= w[0]) || t_ladder[0] <= 0.0 {
        return Err(Error::config("t_ladder", "times must be positive and increasing"));
    }
    if x.len() != cs.dim() {
        return Err(Error::domain("x dimension differs from the environment"));
    }
    let grid = match grid {
        Some(g) => g,
        None => SolverGrid::env_torus(cs)?,
    };
    let mut o = opts.clone();
    o.record_times.extend_from_slice(t_ladder);
    let field = pde_partition_function(cs, *t_ladder.last().unwrap(), &grid, &o)?;
    let mut rows = Vec::new();
    for &tk in t_ladder {
        let (n, tt) = field
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - tk).abs().total_cmp(&(b.1 - tk).abs()))
            .map(|(n, t)| (n, *t))
            .unwrap();
        let y: Vec<f64> = x.iter().map(|v| v * tt).collect();
        let s = field.value_at(n, &y).ok_or_else(|| Error::domain("probe outside the grid"))?;
        let log_rate = s.ln() / tt;
        rows.push(SurvivalRow {
            t: tt,
            log_rate,
            gap: (log_rate - hbar0).abs(),
        });
    }
    let gap_decreasing = rows.windows(2).all(|w| w[1].gap <= w[0].gap);
    Ok(SurvivalReport {
        x: x.to_vec(),
        hbar0,
        rows,
        gap_decreasing,
    })
}
