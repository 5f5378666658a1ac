//! Node operators of the monotone schemes and the iterations that drive them
//! to a steady state.

use rayon::prelude::*;

use crate::environment::{CoefficientSet, HamiltonianKind, HamiltonianModel, LocalCoeffs};
use crate::lattice::{Lattice, MAX_DIM};
use crate::linalg::{bicgstab, Csr};

/// Coefficients on the solver grid.
pub(crate) enum CoeffStore {
    Uniform(LocalCoeffs),
    Nodes(Vec<LocalCoeffs>),
}

impl CoeffStore {
    #[inline]
    pub fn get(&self, i: usize) -> &LocalCoeffs {
        match self {
            CoeffStore::Uniform(c) => c,
            CoeffStore::Nodes(v) => &v[i],
        }
    }

    /// Coefficients at `lat.point(i) / scale` for every node.
    pub fn build(cs: &CoefficientSet, lat: &Lattice, scale: f64) -> CoeffStore {
        if is_uniform(cs) {
            return CoeffStore::Uniform(cs.node(0));
        }
        let d = cs.dim();
        let v: Vec<LocalCoeffs> = (0..lat.len())
            .into_par_iter()
            .map(|i| {
                let x = lat.point(i);
                let mut y = [0.0; MAX_DIM];
                for k in 0..d {
                    y[k] = x[k] / scale;
                }
                cs.at(&y[..d])
            })
            .collect();
        CoeffStore::Nodes(v)
    }

    pub fn for_each<F: FnMut(&LocalCoeffs)>(&self, mut f: F) {
        match self {
            CoeffStore::Uniform(c) => f(c),
            CoeffStore::Nodes(v) => v.iter().for_each(f),
        }
    }
}

pub(crate) fn is_uniform(cs: &CoefficientSet) -> bool {
    let d = cs.dim();
    let same = |v: &[f64], n: usize| v.chunks(n).all(|c| c == &v[..n]);
    same(&cs.a, 1) && same(&cs.v, 1) && same(&cs.b, d) && same(&cs.sigma, d * d)
}

/// Numerical flux used at every node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Flux {
    /// Upwind flux for `a|p|^q - V`.
    PowerGodunov,
    /// Axis-wise Godunov flux for the quadratic model with diagonal `A`.
    SeparableGodunov,
    /// Local Lax–Friedrichs with dissipation from `|p| <= p_max`.
    Llf { p_max: f64 },
}

pub(crate) struct Scheme {
    pub lat: Lattice,
    pub model: HamiltonianModel,
    pub coeffs: CoeffStore,
    pub flux: Flux,
    /// Factor in front of `tr(A D²u)`.
    pub diff_scale: f64,
    pub p: [f64; MAX_DIM],
    pub discount: f64,
    pub rhs: f64,
    pub fixed: Vec<bool>,
    cross: bool,
}

/// Neighbors of one node: two per axis, then the diagonal pairs.
#[derive(Clone, Copy)]
pub(crate) struct Stencil {
    pub minus: [usize; MAX_DIM],
    pub plus: [usize; MAX_DIM],
    /// `(k, l)` pairs with `k < l`: `(+e_k+e_l, -e_k-e_l, +e_k-e_l, -e_k+e_l)`.
    pub diag: [[usize; 4]; 3],
}

pub(crate) struct NodeEval {
    pub f: f64,
    pub df: f64,
    pub nb: [(usize, f64); 18],
    pub n_nb: usize,
}

const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

impl Scheme {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        lat: Lattice,
        model: HamiltonianModel,
        coeffs: CoeffStore,
        flux: Flux,
        diff_scale: f64,
        p: [f64; MAX_DIM],
        discount: f64,
        rhs: f64,
        fixed: Vec<bool>,
    ) -> Scheme {
        let d = lat.dim;
        let mut cross = false;
        coeffs.for_each(|c| {
            for (k, l) in PAIRS {
                if l < d && c.amat[k][l] != 0.0 {
                    cross = true;
                }
            }
        });
        Scheme {
            lat,
            model,
            coeffs,
            flux,
            diff_scale,
            p,
            discount,
            rhs,
            fixed,
            cross,
        }
    }

    #[inline]
    fn h(&self) -> f64 {
        self.lat.step[0]
    }

    pub fn stencil(&self, i: usize) -> Stencil {
        let d = self.lat.dim;
        let c = self.lat.coords(i);
        let mut st = Stencil {
            minus: [i; MAX_DIM],
            plus: [i; MAX_DIM],
            diag: [[i; 4]; 3],
        };
        for k in 0..d {
            st.minus[k] = self.lat.neighbor(i, &c, k, -1).unwrap_or(i);
            st.plus[k] = self.lat.neighbor(i, &c, k, 1).unwrap_or(i);
        }
        if self.cross && self.diff_scale != 0.0 {
            for (pi, &(k, l)) in PAIRS.iter().enumerate() {
                if l >= d {
                    continue;
                }
                let step = |j: usize, dk: isize, dl: isize| -> usize {
                    let cj = self.lat.coords(j);
                    let a = self.lat.neighbor(j, &cj, k, dk).unwrap_or(j);
                    let ca = self.lat.coords(a);
                    self.lat.neighbor(a, &ca, l, dl).unwrap_or(a)
                };
                st.diag[pi] = [step(i, 1, 1), step(i, -1, -1), step(i, 1, -1), step(i, -1, 1)];
            }
        }
        st
    }

    /// Diffusion weights: per axis, then per pair; the sign of the pair
    /// entry selects the diagonal.
    #[inline]
    fn diffusion_weights(&self, c: &LocalCoeffs) -> ([f64; MAX_DIM], [f64; 3]) {
        let d = self.lat.dim;
        let h2 = self.h() * self.h();
        let mut wa = [0.0; MAX_DIM];
        let mut wd = [0.0; 3];
        if self.diff_scale == 0.0 {
            return (wa, wd);
        }
        for k in 0..d {
            let mut off = 0.0;
            for l in 0..d {
                if l != k {
                    off += c.amat[k][l].abs();
                }
            }
            wa[k] = (c.amat[k][k] - off).max(0.0) / h2;
        }
        for (pi, &(k, l)) in PAIRS.iter().enumerate() {
            if l < d {
                wd[pi] = c.amat[k][l] / h2;
            }
        }
        (wa, wd)
    }

    /// Scheme residual at node `i` with `u[i]` replaced by `x`.
    #[inline]
    pub fn eval(&self, i: usize, st: &Stencil, x: f64, u: &[f64], want_nb: bool) -> NodeEval {
        let d = self.lat.dim;
        let h = self.h();
        let c = self.coeffs.get(i);
        let mut out = NodeEval {
            f: self.discount * x - self.rhs,
            df: self.discount,
            nb: [(0, 0.0); 18],
            n_nb: 0,
        };
        let push = |out: &mut NodeEval, j: usize, v: f64| {
            if want_nb {
                out.nb[out.n_nb] = (j, v);
                out.n_nb += 1;
            }
        };
        // Diffusion.
        let (wa, wd) = self.diffusion_weights(c);
        let s = self.diff_scale;
        if s != 0.0 {
            for k in 0..d {
                let w = wa[k];
                if w == 0.0 {
                    continue;
                }
                out.f -= s * w * (u[st.minus[k]] + u[st.plus[k]] - 2.0 * x);
                out.df += 2.0 * s * w;
                push(&mut out, st.minus[k], -s * w);
                push(&mut out, st.plus[k], -s * w);
            }
            for (pi, &(_, l)) in PAIRS.iter().enumerate() {
                if l >= d || wd[pi] == 0.0 {
                    continue;
                }
                let w = wd[pi].abs();
                let (ja, jb) = if wd[pi] > 0.0 {
                    (st.diag[pi][0], st.diag[pi][1])
                } else {
                    (st.diag[pi][2], st.diag[pi][3])
                };
                out.f -= s * w * (u[ja] + u[jb] - 2.0 * x);
                out.df += 2.0 * s * w;
                push(&mut out, ja, -s * w);
                push(&mut out, jb, -s * w);
            }
        }
        // Hamiltonian flux.
        let mut gm = [0.0; MAX_DIM];
        let mut gp = [0.0; MAX_DIM];
        for k in 0..d {
            gm[k] = self.p[k] + (x - u[st.minus[k]]) / h;
            gp[k] = self.p[k] + (u[st.plus[k]] - x) / h;
        }
        // Partial derivatives of the flux with respect to G⁻ and G⁺.
        let mut dm = [0.0; MAX_DIM];
        let mut dp = [0.0; MAX_DIM];
        match self.flux {
            Flux::PowerGodunov => {
                let mut t = [0.0; MAX_DIM];
                let mut side = [0i8; MAX_DIM];
                let mut s2 = 0.0;
                for k in 0..d {
                    let a = gm[k];
                    let b = -gp[k];
                    if a >= b && a > 0.0 {
                        t[k] = a;
                        side[k] = -1;
                    } else if b > 0.0 {
                        t[k] = b;
                        side[k] = 1;
                    }
                    s2 += t[k] * t[k];
                }
                let q = self.model.q;
                let val = if q == 2.0 { s2 } else { s2.sqrt().powf(q) };
                out.f += c.a * val - c.v;
                if s2 > 0.0 {
                    let fac = if q == 2.0 { 2.0 * c.a } else { c.a * q * s2.sqrt().powf(q - 2.0) };
                    for k in 0..d {
                        match side[k] {
                            -1 => dm[k] = fac * t[k],
                            1 => dp[k] = -fac * t[k],
                            _ => {}
                        }
                    }
                }
            }
            Flux::SeparableGodunov => {
                out.f -= c.v;
                for k in 0..d {
                    let a = c.amat[k][k];
                    let b = c.b[k];
                    if a > 0.0 {
                        let ps = -b / (2.0 * a);
                        let f = |s: f64| a * s * s + b * s;
                        let s1 = gm[k].max(ps);
                        let s2 = gp[k].min(ps);
                        let (f1, f2) = (f(s1), f(s2));
                        if f1 >= f2 {
                            out.f += f1;
                            if gm[k] > ps {
                                dm[k] = 2.0 * a * gm[k] + b;
                            }
                        } else {
                            out.f += f2;
                            if gp[k] < ps {
                                dp[k] = 2.0 * a * gp[k] + b;
                            }
                        }
                    } else if b >= 0.0 {
                        out.f += b * gm[k];
                        dm[k] = b;
                    } else {
                        out.f += b * gp[k];
                        dp[k] = b;
                    }
                }
            }
            Flux::Llf { p_max } => {
                let mut pb = [0.0; MAX_DIM];
                for k in 0..d {
                    pb[k] = 0.5 * (gm[k] + gp[k]);
                }
                out.f += self.model.eval(c, &pb[..d]);
                let mut g = [0.0; MAX_DIM];
                self.model.grad(c, &pb[..d], &mut g);
                for k in 0..d {
                    let alpha = self.model.axis_speed_bound(c, p_max, k);
                    let alpha = (alpha - 2.0 * h * s * wa[k]).max(0.0);
                    out.f -= 0.5 * alpha * (gp[k] - gm[k]);
                    dm[k] = 0.5 * (g[k] + alpha);
                    dp[k] = 0.5 * (g[k] - alpha);
                }
            }
        }
        for k in 0..d {
            out.df += (dm[k] - dp[k]) / h;
            if dm[k] != 0.0 {
                push(&mut out, st.minus[k], -dm[k] / h);
            }
            if dp[k] != 0.0 {
                push(&mut out, st.plus[k], dp[k] / h);
            }
        }
        out
    }

    /// Largest root of the convex, nondecreasing node equation in `u[i]`.
    /// `None` when the equation has no root.
    pub fn local_solve(&self, i: usize, st: &Stencil, u: &[f64]) -> Option<f64> {
        let mut x = u[i];
        for _ in 0..100 {
            let e = self.eval(i, st, x, u, false);
            let tol = 1e-15 * (1.0 + e.f.abs().max(self.rhs.abs()));
            if e.f.abs() <= tol {
                return Some(x);
            }
            if !(e.df > 0.0) {
                return if e.f <= 0.0 { Some(x) } else { None };
            }
            let step = e.f / e.df;
            x -= step;
            if step.abs() <= 1e-14 * (1.0 + x.abs()) {
                return Some(x);
            }
        }
        Some(x)
    }

    /// Residual `F(u)` at every free node (zero at fixed nodes).
    pub fn residual(&self, u: &[f64]) -> Vec<f64> {
        (0..self.lat.len())
            .into_par_iter()
            .map(|i| {
                if self.fixed[i] {
                    0.0
                } else {
                    let st = self.stencil(i);
                    self.eval(i, &st, u[i], u, false).f
                }
            })
            .collect()
    }
}

pub(crate) fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Visit every node of `lat` in the order given by the per-axis direction
/// bits of `mask` (bit set: descending).
pub(crate) fn for_each_ordered<F: FnMut(usize)>(lat: &Lattice, mask: usize, mut f: F) {
    let d = lat.dim;
    let mut n = [1usize; MAX_DIM];
    n[..d].copy_from_slice(&lat.shape[..d]);
    let s = lat.strides();
    let order = |k: usize, j: usize| if (mask >> k) & 1 == 1 { n[k] - 1 - j } else { j };
    for a in 0..n[0] {
        let i0 = order(0, a);
        for b in 0..n[1] {
            let i1 = order(1, b);
            for c in 0..n[2] {
                let i2 = order(2, c);
                f(i0 * s[0] + i1 * s[1] + i2 * s[2]);
            }
        }
    }
}

/// Outcome of an iterative steady-state solve.
#[derive(Clone, Debug, Default)]
pub(crate) struct IterLog {
    pub iterations: usize,
    pub residual: f64,
    /// `(iteration, residual, step)` rows.
    pub trace: Vec<(usize, f64, f64)>,
    pub converged: bool,
}

pub(crate) struct StopRule {
    pub tol_residual: f64,
    pub tol_update: f64,
    pub max_iter: usize,
    /// Residuals are divided by this before comparing with `tol_residual`.
    pub scale: f64,
    /// Values below this bound mean the iteration runs away.
    pub floor: f64,
}

pub(crate) enum IterError {
    NoRoot(usize),
    Diverged(Vec<f64>),
    MaxIter(Vec<f64>),
}

fn last_residuals(log: &IterLog) -> Vec<f64> {
    log.trace.iter().rev().take(5).map(|r| r.1).collect()
}

/// Gauss–Seidel sweeps over the `2^d` axis orderings.
pub(crate) fn sweep(s: &Scheme, u: &mut [f64], rule: &StopRule) -> Result<IterLog, IterError> {
    let d = s.lat.dim;
    let stencils: Option<Vec<Stencil>> = if s.lat.len() <= 4_000_000 {
        Some((0..s.lat.len()).map(|i| s.stencil(i)).collect())
    } else {
        None
    };
    let mut log = IterLog::default();
    let orders = 1usize << d;
    let mut cycle_change = 0.0f64;
    for it in 1..=rule.max_iter {
        let mask = (it - 1) % orders;
        let mut change = 0.0f64;
        let mut fail = None;
        for_each_ordered(&s.lat, mask, |i| {
            if s.fixed[i] || fail.is_some() {
                return;
            }
            let st = match &stencils {
                Some(v) => v[i],
                None => s.stencil(i),
            };
            match s.local_solve(i, &st, u) {
                Some(x) => {
                    change = change.max((x - u[i]).abs());
                    u[i] = x;
                }
                None => fail = Some(i),
            }
        });
        if let Some(i) = fail {
            return Err(IterError::NoRoot(i));
        }
        cycle_change = cycle_change.max(change);
        log.iterations = it;
        log.trace.push((it, f64::NAN, change));
        if u.iter().any(|x| *x < rule.floor) {
            return Err(IterError::Diverged(vec![change]));
        }
        if mask == orders - 1 {
            if cycle_change <= rule.tol_update {
                log.converged = true;
                break;
            }
            cycle_change = 0.0;
        }
    }
    let r = sup_norm(&s.residual(u)) / rule.scale;
    log.residual = r;
    if let Some(last) = log.trace.last_mut() {
        last.1 = r;
    }
    if !log.converged {
        if r < rule.tol_residual {
            log.converged = true;
        } else {
            return Err(IterError::MaxIter(vec![r]));
        }
    }
    Ok(log)
}

/// Newton's method on the full system; the Jacobians are M-matrices, so
/// after the first step the iterates decrease monotonically.
pub(crate) fn newton(s: &Scheme, u: &mut [f64], rule: &StopRule) -> Result<IterLog, IterError> {
    let n = s.lat.len();
    let stencils: Vec<Stencil> = (0..n).into_par_iter().map(|i| s.stencil(i)).collect();
    let mut log = IterLog::default();
    for it in 0..=rule.max_iter {
        let evals: Vec<(f64, Vec<(usize, f64)>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                if s.fixed[i] {
                    return (0.0, vec![(i, 1.0)]);
                }
                let e = s.eval(i, &stencils[i], u[i], u, true);
                let mut row = Vec::with_capacity(e.n_nb + 1);
                row.push((i, e.df));
                row.extend_from_slice(&e.nb[..e.n_nb]);
                (e.f, row)
            })
            .collect();
        let res = evals.iter().fold(0.0f64, |m, e| m.max(e.0.abs())) / rule.scale;
        log.residual = res;
        log.iterations = it;
        if res < rule.tol_residual {
            log.trace.push((it, res, 0.0));
            log.converged = true;
            return Ok(log);
        }
        if it == rule.max_iter {
            log.trace.push((it, res, f64::NAN));
            return Err(IterError::MaxIter(last_residuals(&log)));
        }
        let mut rhs = Vec::with_capacity(n);
        let mut rows = Vec::with_capacity(n);
        for (f, r) in evals {
            rhs.push(-f);
            rows.push(r);
        }
        let a = Csr::from_rows(rows);
        let mut delta = vec![0.0; n];
        let (lin, _) = bicgstab(&a, &rhs, &mut delta, 1e-12, 4000);
        if !lin.is_finite() || lin > 1e-6 {
            log.trace.push((it, res, f64::NAN));
            return Err(IterError::Diverged(last_residuals(&log)));
        }
        let upd = sup_norm(&delta);
        for (x, dx) in u.iter_mut().zip(&delta) {
            *x += dx;
        }
        log.trace.push((it, res, upd));
        if u.iter().any(|x| *x < rule.floor || !x.is_finite()) {
            return Err(IterError::Diverged(last_residuals(&log)));
        }
        if upd < rule.tol_update {
            log.residual = sup_norm(&s.residual(u)) / rule.scale;
            log.iterations = it + 1;
            log.trace.push((it + 1, log.residual, 0.0));
            log.converged = true;
            return Ok(log);
        }
    }
    unreachable!()
}

/// Explicit pseudo-time marching `u <- u - dτ F(u)` with the largest
/// monotone step.
pub(crate) fn pseudo_time(s: &Scheme, u: &mut [f64], rule: &StopRule) -> Result<IterLog, IterError> {
    let n = s.lat.len();
    let stencils: Vec<Stencil> = (0..n).into_par_iter().map(|i| s.stencil(i)).collect();
    let mut log = IterLog::default();
    let mut next = u.to_vec();
    for it in 1..=rule.max_iter {
        let evals: Vec<(f64, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                if s.fixed[i] {
                    (0.0, 0.0)
                } else {
                    let e = s.eval(i, &stencils[i], u[i], u, false);
                    (e.f, e.df)
                }
            })
            .collect();
        let dmax = evals.iter().fold(0.0f64, |m, e| m.max(e.1));
        let res = evals.iter().fold(0.0f64, |m, e| m.max(e.0.abs())) / rule.scale;
        let dt = if dmax > 0.0 { 0.9 / dmax } else { 1.0 };
        let mut upd = 0.0f64;
        for i in 0..n {
            next[i] = u[i] - dt * evals[i].0;
            upd = upd.max((next[i] - u[i]).abs());
        }
        u.copy_from_slice(&next);
        log.iterations = it;
        log.residual = res;
        if it % 50 == 1 || res < rule.tol_residual {
            log.trace.push((it, res, dt));
        }
        if res < rule.tol_residual || upd / dt < rule.tol_update {
            log.converged = true;
            return Ok(log);
        }
        if u.iter().any(|x| *x < rule.floor || !x.is_finite()) {
            return Err(IterError::Diverged(last_residuals(&log)));
        }
    }
    Err(IterError::MaxIter(last_residuals(&log)))
}

/// Whether the environment carries a diffusion matrix with nonzero
/// off-diagonal entries.
pub(crate) fn has_offdiagonal(cs: &CoefficientSet) -> bool {
    let d = cs.dim();
    cs.amat
        .chunks(d * d)
        .any(|m| (0..d).any(|r| (0..d).any(|c| r != c && m[r * d + c] != 0.0)))
}

pub(crate) fn default_flux(cs: &CoefficientSet) -> Flux {
    match cs.spec.hamiltonian {
        HamiltonianKind::Power => Flux::PowerGodunov,
        HamiltonianKind::QuadraticDrift if !has_offdiagonal(cs) => Flux::SeparableGodunov,
        HamiltonianKind::QuadraticDrift => Flux::Llf { p_max: f64::NAN },
    }
}
