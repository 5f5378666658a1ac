//! Monotone finite-difference solvers for the viscous Hamilton–Jacobi
//! problems of the crate: the metric (maximal subsolution) problem on a box,
//! the discounted cell problem on the torus and the time-dependent problem.
//!
//! All node operators are monotone and convex in the unknowns. Stationary
//! problems are solved by Gauss–Seidel sweeping (closed-form eikonal updates
//! when `A ≡ 0`), by Newton's method with an ILU(0)/BiCGSTAB inner solver, or
//! by explicit pseudo-time marching.

mod eikonal;
mod scheme;

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::environment::compute_kmu;
use crate::environment::{CoefficientSet, HamiltonianKind, HamiltonianModel, LocalCoeffs};
use crate::error::{Error, Result};
use crate::gridio::{write_bundle, GridBundle};
use crate::lattice::{Lattice, MAX_DIM};
use scheme::{default_flux, is_uniform, CoeffStore, Flux, IterError, IterLog, Scheme, StopRule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Outer nodes fixed to the cone `β_hi (|y - z| - 1)₊`.
    DirichletCone,
    /// Outer nodes keep their initial values.
    FrozenValue,
    Periodic,
}

/// A solver lattice with its boundary treatment. Boxes have an odd node
/// count per axis so the center is a node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverGrid {
    pub lattice: Lattice,
    pub boundary: Boundary,
}

impl SolverGrid {
    /// Box `[c - R, c + R]^d` with spacing `h`; `R / h` must be an integer.
    pub fn centered_box(center: &[f64], half_width: f64, h: f64, boundary: Boundary) -> Result<Self> {
        if boundary == Boundary::Periodic {
            return Err(Error::config("boundary", "a box cannot be periodic"));
        }
        if !(h > 0.0) || !(half_width > 0.0) {
            return Err(Error::config("spacing", "spacing and half-width must be positive"));
        }
        let r = half_width / h;
        let n = r.round();
        if (r - n).abs() > 1e-9 * r.max(1.0) || n < 1.0 {
            return Err(Error::config("half_width", format!("half-width/spacing = {r} is not an integer")));
        }
        Ok(SolverGrid {
            lattice: Lattice::centered_box(center, n as usize, h)?,
            boundary,
        })
    }

    /// Periodic grid of the given period starting at the origin.
    pub fn torus(dim: usize, period: f64, h: f64) -> Result<Self> {
        let r = period / h;
        let n = r.round();
        if !(h > 0.0) || (r - n).abs() > 1e-9 * r.max(1.0) || n < 2.0 {
            return Err(Error::config("spacing", format!("period/spacing = {r} is not an integer >= 2")));
        }
        Ok(SolverGrid {
            lattice: Lattice::torus(dim, n as usize, h)?,
            boundary: Boundary::Periodic,
        })
    }

    /// Torus grid matching the environment lattice.
    pub fn env_torus(cs: &CoefficientSet) -> Result<Self> {
        SolverGrid::torus(cs.dim(), cs.period(), cs.spacing())
    }

    pub fn spacing(&self) -> f64 {
        self.lattice.step[0]
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.lattice.shape[0] - 1) as f64 * self.spacing()
    }

    pub fn center(&self) -> [f64; MAX_DIM] {
        let mut c = [0.0; MAX_DIM];
        for k in 0..self.lattice.dim {
            c[k] = self.lattice.origin[k] + self.half_width();
        }
        c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Sweeping when `A ≡ 0` for the metric problem, Newton otherwise.
    Auto,
    Sweeping,
    Newton,
    PseudoTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FluxChoice {
    /// Godunov for the power model and for the quadratic model with diagonal
    /// `A`, local Lax–Friedrichs otherwise.
    Auto,
    Godunov,
    LaxFriedrichs,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub method: Method,
    pub flux: FluxChoice,
    pub tol_residual: f64,
    pub tol_update: f64,
    pub max_iter: Option<usize>,
    /// Momentum bound for the Lax–Friedrichs dissipation.
    pub p_max: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            method: Method::Auto,
            flux: FluxChoice::Auto,
            tol_residual: 1e-8,
            tol_update: 1e-10,
            max_iter: None,
            p_max: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub method: Method,
    pub flux: String,
    pub iterations: usize,
    /// Final scaled residual.
    pub residual: f64,
    /// `(iteration, residual, step)`; the residual is `NaN` on sweeps where
    /// it was not evaluated.
    pub trace: Vec<(usize, f64, f64)>,
}

/// Discrete maximal subsolution `m_μ(·, z)` on a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricField {
    pub mu: f64,
    pub z: Vec<f64>,
    pub lattice: Lattice,
    pub values: Vec<f64>,
    /// Slope of the outer Dirichlet cone.
    pub beta_hi: f64,
    pub stats: SolveStats,
}

impl MetricField {
    pub fn value_at(&self, y: &[f64]) -> Option<f64> {
        self.lattice.interpolate(&self.values, y)
    }

    pub fn export(&self, path: &Path) -> Result<()> {
        let mut b = GridBundle::new(self.lattice);
        b.push("m", 1, self.values.clone());
        let meta = serde_json::json!({
            "kind": "metric-field",
            "mu": self.mu,
            "z": self.z,
            "beta_hi": self.beta_hi,
            "method": self.stats.method,
            "flux": self.stats.flux,
            "iterations": self.stats.iterations,
            "residual": self.stats.residual,
        });
        write_bundle(path, &b, &meta)
    }
}

/// Solution of the discounted cell problem on the torus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscountedField {
    pub eps: f64,
    pub p: Vec<f64>,
    pub lattice: Lattice,
    pub values: Vec<f64>,
    pub stats: SolveStats,
}

impl DiscountedField {
    pub fn value_at(&self, y: &[f64]) -> Option<f64> {
        self.lattice.interpolate(&self.values, y)
    }

    pub fn export(&self, path: &Path) -> Result<()> {
        let mut b = GridBundle::new(self.lattice);
        b.push("v", 1, self.values.clone());
        let meta = serde_json::json!({
            "kind": "discounted-field",
            "eps": self.eps,
            "p": self.p,
            "method": self.stats.method,
            "flux": self.stats.flux,
            "iterations": self.stats.iterations,
            "residual": self.stats.residual,
        });
        write_bundle(path, &b, &meta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CflReport {
    pub dt: f64,
    /// `0.4 min(hyperbolic, parabolic)`.
    pub limit: f64,
    pub hyperbolic: f64,
    pub parabolic: f64,
    pub p_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionField {
    pub lattice: Lattice,
    pub eps_scale: f64,
    pub dt: f64,
    pub times: Vec<f64>,
    pub snapshots: Vec<Vec<f64>>,
    pub g: Vec<f64>,
    pub cfl: CflReport,
    /// `u >= min g - Λ₁ t` held at every snapshot.
    pub lower_bound_ok: bool,
}

impl EvolutionField {
    pub fn last(&self) -> &[f64] {
        self.snapshots.last().map(|v| v.as_slice()).unwrap_or(&self.g)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IvpOptions {
    /// Time step; defaults to the CFL limit.
    pub dt: Option<f64>,
    /// Times at which to store snapshots besides `0` and `T`.
    pub snapshot_times: Vec<f64>,
    pub flux: FluxChoice,
    /// Momentum bound for the dissipation and the CFL condition; defaults
    /// to `1.5 max(1, Lip g)`.
    pub p_max: Option<f64>,
}

impl Default for IvpOptions {
    fn default() -> Self {
        IvpOptions {
            dt: None,
            snapshot_times: Vec::new(),
            flux: FluxChoice::Auto,
            p_max: None,
        }
    }
}

fn llf_value(model: &HamiltonianModel, c: &LocalCoeffs, pm: &[f64], pp: &[f64], alpha: &[f64]) -> f64 {
    let d = model.dim;
    let mut pb = [0.0; MAX_DIM];
    for k in 0..d {
        pb[k] = 0.5 * (pm[k] + pp[k]);
    }
    let mut h = model.eval(c, &pb[..d]);
    for k in 0..d {
        h -= 0.5 * alpha[k] * (pp[k] - pm[k]);
    }
    h
}

/// Local Lax–Friedrichs flux `H(p̄, y) - Σ α_k (p⁺_k - p⁻_k)/2` with
/// `α_k` bounding `|∂H/∂p_k|` on the ball of radius `max(|p⁻|, |p⁺|)`.
pub fn numerical_hamiltonian(cs: &CoefficientSet, p_minus: &[f64], p_plus: &[f64], y: &[f64]) -> f64 {
    let d = cs.dim();
    let c = cs.at(y);
    let model = cs.model();
    let norm = |v: &[f64]| v[..d].iter().map(|x| x * x).sum::<f64>().sqrt();
    let pm = norm(p_minus).max(norm(p_plus));
    let mut alpha = [0.0; MAX_DIM];
    for (k, a) in alpha.iter_mut().enumerate().take(d) {
        *a = model.axis_speed_bound(&c, pm, k);
    }
    llf_value(&model, &c, p_minus, p_plus, &alpha[..d])
}

/// Lax–Friedrichs flux with explicit dissipation coefficients; zero
/// coefficients give the central flux.
pub fn numerical_hamiltonian_with(cs: &CoefficientSet, p_minus: &[f64], p_plus: &[f64], y: &[f64], alpha: &[f64]) -> f64 {
    let c = cs.at(y);
    llf_value(&cs.model(), &c, p_minus, p_plus, alpha)
}

fn resolve_flux(cs: &CoefficientSet, choice: FluxChoice, p_max: f64) -> Result<Flux> {
    let f = match choice {
        FluxChoice::Auto => default_flux(cs),
        FluxChoice::LaxFriedrichs => Flux::Llf { p_max },
        FluxChoice::Godunov => match cs.spec.hamiltonian {
            HamiltonianKind::Power => Flux::PowerGodunov,
            HamiltonianKind::QuadraticDrift => {
                if scheme::has_offdiagonal(cs) {
                    return Err(Error::config(
                        "flux",
                        "the Godunov flux needs a diagonal diffusion matrix for the quadratic model",
                    ));
                }
                Flux::SeparableGodunov
            }
        },
    };
    Ok(match f {
        Flux::Llf { .. } => Flux::Llf { p_max },
        other => other,
    })
}

fn flux_name(f: Flux) -> String {
    match f {
        Flux::PowerGodunov => "godunov".into(),
        Flux::SeparableGodunov => "godunov-separable".into(),
        Flux::Llf { p_max } => format!("lax-friedrichs(p_max={p_max})"),
    }
}

/// Slope `β_hi` of the outer cone: the root of `a β^q - c β = μ + max V`,
/// where `a` bounds the coercivity from below and `c` absorbs the cone's
/// curvature against the diffusion and the drift. Concave in `μ`.
pub fn cone_slope(cs: &CoefficientSet, mu: f64) -> Result<f64> {
    let d = cs.dim();
    let e = cs.extremes();
    let curv = (d as f64 - 1.0) * e.lambda_max;
    let (a, q, c) = match cs.spec.hamiltonian {
        HamiltonianKind::Power => (e.a_min, cs.spec.q, curv),
        HamiltonianKind::QuadraticDrift => (e.lambda_min, 2.0, curv + e.drift_max),
    };
    if !(a > 0.0) {
        return Err(Error::domain("the Hamiltonian is not coercive: cannot bound the metric growth"));
    }
    let target = mu + e.v_max;
    if target <= 0.0 {
        return Ok(0.0);
    }
    if q == 1.0 {
        if a <= c {
            return Err(Error::domain("q = 1 with a curvature term larger than the coercivity"));
        }
        return Ok(target / (a - c));
    }
    let g = |b: f64| a * b.powf(q) - c * b - target;
    let mut lo = if c > 0.0 { (c / (a * q)).powf(1.0 / (q - 1.0)) } else { 0.0 };
    let mut hi = lo.max(1.0);
    while g(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(hi)
}

fn iter_error_to_metric(mu: f64, e: IterError, lat: &Lattice) -> Error {
    match e {
        IterError::NoRoot(i) => Error::Subcritical {
            mu,
            reason: format!("the node equation at {:?} has no solution", &lat.point(i)[..lat.dim]),
        },
        IterError::Diverged(trace) => Error::Subcritical {
            mu,
            reason: format!("iterates run away to -infinity (residuals {trace:?})"),
        },
        IterError::MaxIter(trace) => Error::Subcritical {
            mu,
            reason: format!("no convergence within the iteration limit (residuals {trace:?})"),
        },
    }
}

fn iter_error_to_solver(e: IterError) -> Error {
    match e {
        IterError::NoRoot(i) => Error::Solver {
            msg: format!("node {i} has no root"),
            trace: vec![],
        },
        IterError::Diverged(trace) => Error::Solver {
            msg: "diverged".into(),
            trace,
        },
        IterError::MaxIter(trace) => Error::Solver {
            msg: "no convergence within the iteration limit".into(),
            trace,
        },
    }
}

fn run(s: &Scheme, u: &mut [f64], method: Method, rule: &StopRule) -> std::result::Result<IterLog, IterError> {
    match method {
        Method::Sweeping => scheme::sweep(s, u, rule),
        Method::PseudoTime => scheme::pseudo_time(s, u, rule),
        Method::Newton | Method::Auto => scheme::newton(s, u, rule),
    }
}

fn default_max_iter(method: Method) -> usize {
    match method {
        Method::Sweeping => 400_000,
        Method::PseudoTime => 2_000_000,
        Method::Newton | Method::Auto => 200,
    }
}

fn check_point(cs: &CoefficientSet, v: &[f64], what: &str) -> Result<[f64; MAX_DIM]> {
    let d = cs.dim();
    if v.len() != d || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain(format!("{what} must be a finite vector with {d} components")));
    }
    let mut o = [0.0; MAX_DIM];
    o[..d].copy_from_slice(v);
    Ok(o)
}

/// Solve the metric problem at level `μ` with vertex `z`: the largest
/// discrete subsolution of `-tr(A D²m) + H(Dm, y) = μ` that vanishes on
/// `B̄₁(z)` and is bounded by the cone `β_hi (|y - z| - 1)₊` on the boundary.
pub fn solve_metric(cs: &CoefficientSet, mu: f64, z: &[f64], grid: &SolverGrid, opts: &SolverOptions) -> Result<MetricField> {
    let d = cs.dim();
    let z = check_point(cs, z, "z")?;
    if !mu.is_finite() {
        return Err(Error::domain("mu must be finite"));
    }
    let lat = grid.lattice;
    if lat.dim != d {
        return Err(Error::domain("grid and environment dimensions differ"));
    }
    if grid.boundary == Boundary::Periodic {
        return Err(Error::config("boundary", "the metric problem needs a box grid"));
    }
    let h = grid.spacing();
    lat.ball_nodes(&z[..d], 1.0 + h)
        .map_err(|_| Error::domain("the grid must cover the closed unit ball around z with one cell to spare"))?;
    let beta = cone_slope(cs, mu)?;
    let n = lat.len();
    let dist = |i: usize| -> f64 {
        let x = lat.point(i);
        (0..d).map(|k| (x[k] - z[k]) * (x[k] - z[k])).sum::<f64>().sqrt()
    };
    let mut fixed = vec![false; n];
    let mut u = vec![0.0; n];
    for i in 0..n {
        let r = dist(i);
        if r <= 1.0 + 1e-12 {
            fixed[i] = true;
            u[i] = 0.0;
        } else {
            u[i] = beta * (r - 1.0);
            if lat.is_boundary(&lat.coords(i)) {
                fixed[i] = true;
            }
        }
    }
    let p_max = opts.p_max.unwrap_or(2.0 * beta + 1.0);
    let flux = resolve_flux(cs, opts.flux, p_max)?;
    let e = cs.extremes();
    let scale = 1.0 + mu.abs() + e.v_max.abs();
    let eikonal = cs.sigma_vanishes()
        && cs.spec.hamiltonian == HamiltonianKind::Power
        && flux == Flux::PowerGodunov
        && matches!(opts.method, Method::Auto | Method::Sweeping);
    if eikonal {
        let q = cs.spec.q;
        let speed = |c: &LocalCoeffs| -> f64 { h * ((mu + c.v).max(0.0) / c.a).powf(1.0 / q) };
        let r = if is_uniform(cs) {
            let c = cs.node(0);
            if mu + c.v < 0.0 {
                return Err(Error::Subcritical {
                    mu,
                    reason: format!("mu + V = {} < 0 everywhere", mu + c.v),
                });
            }
            eikonal::Speed::Uniform(speed(&c))
        } else {
            let vals: Vec<std::result::Result<f64, usize>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    if fixed[i] {
                        return Ok(0.0);
                    }
                    let c = cs.at(&lat.point(i)[..d]);
                    if mu + c.v < 0.0 {
                        Err(i)
                    } else {
                        Ok(speed(&c))
                    }
                })
                .collect();
            let mut r = Vec::with_capacity(n);
            for v in vals {
                match v {
                    Ok(x) => r.push(x),
                    Err(i) => {
                        return Err(Error::Subcritical {
                            mu,
                            reason: format!(
                                "mu + V < 0 at {:?}: no subsolution exists there",
                                &lat.point(i)[..d]
                            ),
                        })
                    }
                }
            }
            eikonal::Speed::Nodes(r)
        };
        for i in 0..n {
            if !fixed[i] {
                u[i] = f64::INFINITY;
            }
        }
        let max_cycles = opts.max_iter.unwrap_or(100_000);
        let log = eikonal::sweep_box(&lat, &fixed, &r, &mut u, opts.tol_update, max_cycles);
        if !log.converged {
            return Err(Error::Subcritical {
                mu,
                reason: "sweeping did not settle within the cycle limit".into(),
            });
        }
        return Ok(MetricField {
            mu,
            z: z[..d].to_vec(),
            lattice: lat,
            values: u,
            beta_hi: beta,
            stats: SolveStats {
                method: Method::Sweeping,
                flux: "godunov".into(),
                iterations: log.iterations,
                residual: log.residual,
                trace: log.trace,
            },
        });
    }
    let coeffs = CoeffStore::build(cs, &lat, 1.0);
    let s = Scheme::new(lat, cs.model(), coeffs, flux, 1.0, [0.0; MAX_DIM], 0.0, mu, fixed);
    let method = match opts.method {
        Method::Auto => Method::Newton,
        m => m,
    };
    let cone_max = u.iter().fold(0.0f64, |m, x| m.max(*x));
    let rule = StopRule {
        tol_residual: opts.tol_residual,
        tol_update: opts.tol_update,
        max_iter: opts.max_iter.unwrap_or(default_max_iter(method)),
        scale,
        floor: -1e3 * (1.0 + cone_max),
    };
    let log = run(&s, &mut u, method, &rule).map_err(|e| iter_error_to_metric(mu, e, &lat))?;
    Ok(MetricField {
        mu,
        z: z[..d].to_vec(),
        lattice: lat,
        values: u,
        beta_hi: beta,
        stats: SolveStats {
            method,
            flux: flux_name(flux),
            iterations: log.iterations,
            residual: log.residual,
            trace: log.trace,
        },
    })
}

/// Solve `εv - tr(A D²v) + H(p + Dv, y) = 0` on the periodic grid.
pub fn solve_discounted(cs: &CoefficientSet, eps: f64, p: &[f64], grid: &SolverGrid, opts: &SolverOptions) -> Result<DiscountedField> {
    let d = cs.dim();
    let pv = check_point(cs, p, "p")?;
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::domain(format!("discount must be positive, got {eps}")));
    }
    check_env_torus(cs, grid)?;
    let lat = grid.lattice;
    let model = cs.model();
    let coeffs = CoeffStore::build(cs, &lat, 1.0);
    let mut hmin = f64::INFINITY;
    let mut hmax = f64::NEG_INFINITY;
    coeffs.for_each(|c| {
        let hv = model.eval(c, &pv[..d]);
        hmin = hmin.min(hv);
        hmax = hmax.max(hv);
    });
    let flux = resolve_flux(cs, opts.flux, cell_p_max(cs, &pv[..d], opts))?;
    let n = lat.len();
    let s = Scheme::new(lat, model, coeffs, flux, 1.0, pv, eps, 0.0, vec![false; n]);
    let mut u = vec![-hmin / eps; n];
    let method = match opts.method {
        Method::Auto => Method::Newton,
        m => m,
    };
    let rule = StopRule {
        tol_residual: opts.tol_residual,
        tol_update: opts.tol_update,
        max_iter: opts.max_iter.unwrap_or(default_max_iter(method)),
        scale: 1.0 + hmin.abs().max(hmax.abs()),
        floor: f64::NEG_INFINITY,
    };
    let (log, used) = match run(&s, &mut u, method, &rule) {
        Ok(l) => (l, method),
        Err(e) if opts.method == Method::Auto => {
            log::warn!("Newton failed on the discounted problem ({e:?}); falling back to sweeping");
            u.iter_mut().for_each(|x| *x = -hmin / eps);
            let rule = StopRule {
                max_iter: default_max_iter(Method::Sweeping),
                ..rule
            };
            (scheme::sweep(&s, &mut u, &rule).map_err(iter_error_to_solver)?, Method::Sweeping)
        }
        Err(e) => return Err(iter_error_to_solver(e)),
    };
    let sub = -hmax / eps;
    for x in u.iter_mut() {
        if *x < sub {
            *x = sub;
        }
    }
    Ok(DiscountedField {
        eps,
        p: pv[..d].to_vec(),
        lattice: lat,
        values: u,
        stats: SolveStats {
            method: used,
            flux: flux_name(flux),
            iterations: log.iterations,
            residual: log.residual,
            trace: log.trace,
        },
    })
}

fn cell_p_max(cs: &CoefficientSet, p: &[f64], opts: &SolverOptions) -> f64 {
    let pn = p.iter().map(|x| x * x).sum::<f64>().sqrt();
    opts.p_max.unwrap_or_else(|| {
        let e = cs.extremes();
        let a = match cs.spec.hamiltonian {
            HamiltonianKind::Power => e.a_min,
            HamiltonianKind::QuadraticDrift => e.lambda_min,
        };
        let q = cs.spec.q;
        let level = cs.spec.lambda1 * (pn.powf(q) + 1.0) + e.v_max + 1.0;
        if a > 0.0 {
            (level / a).powf(1.0 / q) + pn
        } else {
            pn + 10.0
        }
    })
}

fn check_env_torus(cs: &CoefficientSet, grid: &SolverGrid) -> Result<()> {
    let lat = grid.lattice;
    if grid.boundary != Boundary::Periodic || lat.dim != cs.dim() {
        return Err(Error::config("boundary", "the cell problem needs a periodic grid of the environment dimension"));
    }
    for k in 0..lat.dim {
        if (lat.period(k) - cs.period()).abs() > 1e-9 * cs.period() {
            return Err(Error::domain("the grid period must equal the environment period"));
        }
    }
    Ok(())
}

/// Node values of the stationary operator `-tr(A D²(p·y + w)) + H(p + Dw, y)`
/// for a periodic grid function `w`, with the same stencils as the cell problem.
pub fn stationary_operator(cs: &CoefficientSet, p: &[f64], w: &[f64], grid: &SolverGrid, opts: &SolverOptions) -> Result<Vec<f64>> {
    let d = cs.dim();
    let pv = check_point(cs, p, "p")?;
    check_env_torus(cs, grid)?;
    let lat = grid.lattice;
    if w.len() != lat.len() {
        return Err(Error::domain(format!("w has {} values for a grid of {} nodes", w.len(), lat.len())));
    }
    let flux = resolve_flux(cs, opts.flux, cell_p_max(cs, &pv[..d], opts))?;
    let coeffs = CoeffStore::build(cs, &lat, 1.0);
    let s = Scheme::new(lat, cs.model(), coeffs, flux, 1.0, pv, 0.0, 0.0, vec![false; lat.len()]);
    Ok(s.residual(w))
}

impl std::fmt::Debug for IterError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IterError::NoRoot(i) => write!(f, "no root at node {i}"),
            IterError::Diverged(t) => write!(f, "diverged {t:?}"),
            IterError::MaxIter(t) => write!(f, "iteration limit {t:?}"),
        }
    }
}

fn max_one_sided_slope(lat: &Lattice, g: &[f64]) -> f64 {
    let d = lat.dim;
    let h = lat.step[0];
    let mut m = 0.0f64;
    for i in 0..lat.len() {
        let c = lat.coords(i);
        for k in 0..d {
            if let Some(j) = lat.neighbor(i, &c, k, 1) {
                m = m.max((g[j] - g[i]).abs() / h);
            }
        }
    }
    m
}

/// Time-step limits of the explicit scheme on `grid` at momentum bound
/// `p_max`: `0.4 min(h / Σ α_k, h² / (2 d ε max λ(A)))`.
pub fn cfl_limit(cs: &CoefficientSet, grid: &SolverGrid, eps_scale: f64, p_max: f64) -> CflReport {
    let coeffs = CoeffStore::build(cs, &grid.lattice, eps_scale);
    cfl_from_store(cs, &coeffs, grid, eps_scale, p_max)
}

fn cfl_from_store(cs: &CoefficientSet, coeffs: &CoeffStore, grid: &SolverGrid, eps_scale: f64, p_max: f64) -> CflReport {
    let d = cs.dim();
    let h = grid.spacing();
    let model = cs.model();
    let mut alpha = [0.0f64; MAX_DIM];
    let mut lmax = 0.0f64;
    coeffs.for_each(|c| {
        for (k, a) in alpha.iter_mut().enumerate().take(d) {
            *a = a.max(model.axis_speed_bound(c, p_max, k));
        }
        let mut m = [0.0; MAX_DIM * MAX_DIM];
        for r in 0..d {
            for s in 0..d {
                m[r * d + s] = c.amat[r][s];
            }
        }
        lmax = lmax.max(crate::environment::sample::sym_eig_max(&m[..d * d], d));
    });
    let sa: f64 = alpha[..d].iter().sum();
    let hyperbolic = if sa > 0.0 { h / sa } else { f64::INFINITY };
    let parabolic = if lmax * eps_scale > 0.0 {
        h * h / (2.0 * d as f64 * eps_scale * lmax)
    } else {
        f64::INFINITY
    };
    let limit = 0.4 * hyperbolic.min(parabolic);
    CflReport {
        dt: limit,
        limit,
        hyperbolic,
        parabolic,
        p_max,
    }
}

/// Explicit monotone marching of `u_t - ε tr(A(x/ε) D²u) + H(Du, x/ε) = 0`
/// from `u(·, 0) = g` up to time `t_final`.
pub fn solve_ivp(
    cs: &CoefficientSet,
    g: &[f64],
    t_final: f64,
    grid: &SolverGrid,
    eps_scale: f64,
    opts: &IvpOptions,
) -> Result<EvolutionField> {
    let d = cs.dim();
    let lat = grid.lattice;
    if lat.dim != d || g.len() != lat.len() {
        return Err(Error::domain("initial datum does not match the grid"));
    }
    if !(t_final >= 0.0) || !(eps_scale > 0.0) {
        return Err(Error::domain("need T >= 0 and a positive scale"));
    }
    if grid.boundary == Boundary::DirichletCone {
        return Err(Error::config("boundary", "the time-dependent problem uses frozen-value or periodic boundaries"));
    }
    let p_max = opts
        .p_max
        .unwrap_or_else(|| 1.5 * max_one_sided_slope(&lat, g).max(1.0));
    let coeffs = CoeffStore::build(cs, &lat, eps_scale);
    let mut cfl = cfl_from_store(cs, &coeffs, grid, eps_scale, p_max);
    let dt = match opts.dt {
        Some(dt) => {
            if !(dt > 0.0) || dt > cfl.limit * (1.0 + 1e-12) {
                return Err(Error::config(
                    "dt",
                    format!("time step {dt} violates the CFL limit {}", cfl.limit),
                ));
            }
            dt
        }
        None => cfl.limit,
    };
    let steps = if t_final == 0.0 {
        0
    } else if dt.is_finite() {
        (t_final / dt - 1e-9).ceil().max(1.0) as usize
    } else {
        1
    };
    let dt = if steps > 0 { t_final / steps as f64 } else { dt };
    cfl.dt = dt;
    let n = lat.len();
    let fixed: Vec<bool> = (0..n)
        .map(|i| grid.boundary == Boundary::FrozenValue && lat.is_boundary(&lat.coords(i)))
        .collect();
    let flux = resolve_flux(cs, opts.flux, p_max)?;
    let s = Scheme::new(lat, cs.model(), coeffs, flux, eps_scale, [0.0; MAX_DIM], 0.0, 0.0, fixed);
    let stencils: Vec<scheme::Stencil> = (0..n).into_par_iter().map(|i| s.stencil(i)).collect();
    let gmin = g.iter().fold(f64::INFINITY, |m, x| m.min(*x));
    let lam1 = cs.spec.lambda1;
    let mut wanted: Vec<f64> = opts
        .snapshot_times
        .iter()
        .copied()
        .filter(|t| *t > 0.0 && *t < t_final)
        .collect();
    wanted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut times = vec![0.0];
    let mut snaps = vec![g.to_vec()];
    let mut u = g.to_vec();
    let mut next = vec![0.0; n];
    let mut lower_ok = true;
    let mut w = 0;
    for step in 1..=steps {
        next.par_iter_mut().enumerate().for_each(|(i, x)| {
            *x = if s.fixed[i] {
                u[i]
            } else {
                u[i] - dt * s.eval(i, &stencils[i], u[i], &u, false).f
            };
        });
        std::mem::swap(&mut u, &mut next);
        let t = step as f64 * dt;
        let take_wanted = w < wanted.len() && t >= wanted[w] - 1e-12;
        if take_wanted || step == steps {
            while w < wanted.len() && t >= wanted[w] - 1e-12 {
                w += 1;
            }
            let bound = gmin - lam1 * t;
            if u.iter().any(|x| *x < bound - 1e-12 * (1.0 + bound.abs())) {
                lower_ok = false;
            }
            times.push(t);
            snaps.push(u.clone());
        }
    }
    Ok(EvolutionField {
        lattice: lat,
        eps_scale,
        dt,
        times,
        snapshots: snaps,
        g: g.to_vec(),
        cfl,
        lower_bound_ok: lower_ok,
    })
}

/// `m̃_μ(y, z) = sup_{B₁(y)} m_μ(·, z)` over grid nodes.
pub fn tilde_m(field: &MetricField, y: &[f64]) -> Result<f64> {
    let nodes = field.lattice.ball_nodes(y, 1.0)?;
    Ok(nodes.iter().fold(f64::NEG_INFINITY, |m, &i| m.max(field.values[i])))
}

/// `max - min` of `values` over the nodes of the closed ball.
pub fn oscillation(lattice: &Lattice, values: &[f64], center: &[f64], radius: f64) -> Result<f64> {
    let nodes = lattice.ball_nodes(center, radius)?;
    if nodes.is_empty() {
        return Err(Error::domain("the ball contains no grid node"));
    }
    let (lo, hi) = nodes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
        (lo.min(values[i]), hi.max(values[i]))
    });
    Ok(hi - lo)
}

/// Write `(iter, residual, dt)` rows as CSV.
pub fn write_residual_log(path: &Path, trace: &[(usize, f64, f64)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "iter,residual,dt")?;
    for (i, r, dt) in trace {
        writeln!(f, "{i},{r:e},{dt:e}")?;
    }
    Ok(())
}
