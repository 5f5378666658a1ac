//! Effective quantities extracted from solver output: the homogenized
//! metric `m̄_μ`, the critical level `H̄_*` and the effective Hamiltonian
//! `H̄` by the metric route and by the vanishing-discount route.

mod audit;

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use audit::{
    audit_effective_table, audit_mbar, strict_growth_violations, AuditReport, AuditTolerances, MbarAudit, RouteAudit,
};

use crate::environment::{CoefficientSet, HamiltonianKind, ModelKind};
use crate::error::{Error, Result};
use crate::hjsolver::{
    solve_discounted, solve_metric, stationary_operator, Boundary, SolverGrid, SolverOptions,
};
use crate::lattice::Lattice;
use crate::numerics::{dot, fit_affine, norm};

/// Largest box (in nodes) solved concurrently with others.
const PARALLEL_NODE_LIMIT: usize = 2_000_000;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricRouteOptions {
    /// Grid spacing of the metric boxes.
    pub h: f64,
    /// Distance kept between the largest ladder point and the box boundary.
    pub margin: f64,
    /// Number of trailing ladder points used in the `c + c'/R` fit (0: all).
    pub fit_points: usize,
    pub solver: SolverOptions,
}

impl Default for MetricRouteOptions {
    fn default() -> Self {
        MetricRouteOptions {
            h: 0.1,
            margin: 2.0,
            fit_points: 3,
            solver: SolverOptions::default(),
        }
    }
}

/// Ladder `m_μ(Re, 0)/R` and its extrapolation to `R = ∞`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MbarEstimate {
    pub mu: f64,
    pub e: Vec<f64>,
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub limit: f64,
    /// Coefficient `c'` of the fit `c + c'/R`.
    pub slope: f64,
    /// Spread of the last two ladder values.
    pub error: f64,
    /// Whether the fitted limit lies outside the range of the last two values.
    pub outside_tail: bool,
    pub seeds: Vec<u64>,
}

/// Extrapolation of the ladder `m_μ(Re, 0)/R` by `c + c'/R`. With
/// `nonnegative` set the limit is floored at zero.
fn ladder_estimate(
    mu: f64,
    e: &[f64],
    radii: &[f64],
    values: Vec<f64>,
    fit_points: usize,
    seed: u64,
    nonnegative: bool,
) -> MbarEstimate {
    let n = radii.len();
    let k = if fit_points == 0 { n } else { fit_points.min(n) };
    let inv: Vec<f64> = radii[n - k..].iter().map(|r| 1.0 / r).collect();
    let (c, c1) = fit_affine(&inv, &values[n - k..]);
    let c = if nonnegative { c.max(0.0) } else { c };
    let tail = &values[n.saturating_sub(2)..];
    let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let spread = hi - lo;
    MbarEstimate {
        mu,
        e: e.to_vec(),
        radii: radii.to_vec(),
        values,
        limit: c,
        slope: c1,
        error: spread,
        outside_tail: c < lo - 1e-12 * (1.0 + lo.abs()) || c > hi + 1e-12 * (1.0 + hi.abs()),
        seeds: vec![seed],
    }
}

fn check_ladder(radii: &[f64]) -> Result<()> {
    if radii.is_empty() {
        return Err(Error::config("radii", "the ladder is empty"));
    }
    if radii.iter().any(|r| !(*r > 1.0) || !r.is_finite()) {
        return Err(Error::config("radii", "ladder radii must be finite and larger than 1"));
    }
    if radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("radii", "the ladder must be strictly increasing"));
    }
    Ok(())
}

fn unit(e: &[f64], d: usize) -> Result<Vec<f64>> {
    let n = norm(e);
    if e.len() != d || !(n > 0.0) || !n.is_finite() {
        return Err(Error::domain(format!("direction {e:?} is not a nonzero vector in dimension {d}")));
    }
    Ok(e.iter().map(|x| x / n).collect())
}

/// `m̄_μ(e)` from the ladder `m_μ(Re, 0)/R`.
pub fn estimate_mbar(cs: &CoefficientSet, mu: f64, e: &[f64], radii: &[f64], opts: &MetricRouteOptions) -> Result<MbarEstimate> {
    let t = mbar_table(cs, &[mu], &[e.to_vec()], radii, opts)?;
    Ok(t.estimates.into_iter().next().unwrap().into_iter().next().unwrap())
}

/// Estimates of `m̄_μ(e)` over a grid of levels and a set of directions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MbarTable {
    pub dim: usize,
    pub mus: Vec<f64>,
    pub dirs: Vec<Vec<f64>>,
    /// `estimates[j][k]` belongs to `mus[j]` and `dirs[k]`.
    pub estimates: Vec<Vec<MbarEstimate>>,
}

impl MbarTable {
    pub fn value(&self, j: usize, k: usize) -> f64 {
        self.estimates[j][k].limit
    }

    /// `m̄_{μ_j}(y)` for an arbitrary `y`, by positive homogeneity and
    /// interpolation between the tabulated directions (linear in angle in
    /// 2D, inverse-distance over the three nearest directions in 3D).
    pub fn eval(&self, j: usize, y: &[f64]) -> f64 {
        let r = norm(y);
        if r == 0.0 {
            return 0.0;
        }
        let e: Vec<f64> = y.iter().map(|x| x / r).collect();
        let row = &self.estimates[j];
        let mut best = (f64::INFINITY, 0usize);
        for (k, d) in self.dirs.iter().enumerate() {
            let dist = norm(&d.iter().zip(&e).map(|(a, b)| a - b).collect::<Vec<_>>());
            if dist < best.0 {
                best = (dist, k);
            }
        }
        if best.0 < 1e-12 || self.dim == 1 {
            return r * row[best.1].limit;
        }
        if self.dim == 2 {
            let th = e[1].atan2(e[0]);
            let mut below = (f64::INFINITY, 0usize);
            let mut above = (f64::INFINITY, 0usize);
            for (k, d) in self.dirs.iter().enumerate() {
                let a = d[1].atan2(d[0]);
                let fwd = (a - th).rem_euclid(2.0 * std::f64::consts::PI);
                let back = (th - a).rem_euclid(2.0 * std::f64::consts::PI);
                if fwd < above.0 {
                    above = (fwd, k);
                }
                if back < below.0 {
                    below = (back, k);
                }
            }
            let span = below.0 + above.0;
            let w = if span > 0.0 { below.0 / span } else { 0.0 };
            return r * ((1.0 - w) * row[below.1].limit + w * row[above.1].limit);
        }
        let mut dists: Vec<(f64, usize)> = self
            .dirs
            .iter()
            .enumerate()
            .map(|(k, d)| (norm(&d.iter().zip(&e).map(|(a, b)| a - b).collect::<Vec<_>>()), k))
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0));
        let near = &dists[..3.min(dists.len())];
        let wsum: f64 = near.iter().map(|(dd, _)| 1.0 / dd).sum();
        r * near.iter().map(|(dd, k)| row[*k].limit / dd).sum::<f64>() / wsum
    }

    /// `mu,dir,e0..,R,value` rows, one per ladder point.
    pub fn write_ladders_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let ecols: Vec<String> = (0..self.dim).map(|k| format!("e{k}")).collect();
        writeln!(f, "mu,dir,{},R,value", ecols.join(","))?;
        for (j, row) in self.estimates.iter().enumerate() {
            for (k, est) in row.iter().enumerate() {
                for (r, v) in est.radii.iter().zip(&est.values) {
                    let e: Vec<String> = est.e.iter().map(|x| format!("{x:.17e}")).collect();
                    writeln!(f, "{:.17e},{k},{},{r:.17e},{v:.17e}", self.mus[j], e.join(","))?;
                }
            }
        }
        f.flush()?;
        Ok(())
    }
}

/// One metric solve per level `μ`, with every direction and ladder point read
/// from the same field. Levels are solved concurrently when the boxes are small.
pub fn mbar_table(cs: &CoefficientSet, mus: &[f64], dirs: &[Vec<f64>], radii: &[f64], opts: &MetricRouteOptions) -> Result<MbarTable> {
    let d = cs.dim();
    check_ladder(radii)?;
    if mus.is_empty() || dirs.is_empty() {
        return Err(Error::config("mus", "empty level grid or direction set"));
    }
    if mus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("mus", "levels must be strictly increasing"));
    }
    let dirs: Vec<Vec<f64>> = dirs.iter().map(|e| unit(e, d)).collect::<Result<_>>()?;
    let rmax = *radii.last().unwrap();
    let half = ((rmax + opts.margin.max(opts.h)) / opts.h).ceil() * opts.h;
    let grid = SolverGrid::centered_box(&vec![0.0; d], half, opts.h, Boundary::DirichletCone)?;
    let z = vec![0.0; d];
    // H(0, y) = -V(y) in both families. Once μ >= sup_y H(0, y) the zero
    // function is a subsolution, so m_μ >= 0 and m̄_μ >= 0.
    let zero_sub_level = -cs.extremes().v_min;
    let one = |mu: f64| -> Result<Vec<MbarEstimate>> {
        let field = solve_metric(cs, mu, &z, &grid, &opts.solver)?;
        log::debug!("metric solve at mu = {mu}: {} iterations", field.stats.iterations);
        dirs.iter()
            .map(|e| {
                let values = radii
                    .iter()
                    .map(|r| {
                        let y: Vec<f64> = e.iter().map(|x| r * x).collect();
                        field
                            .value_at(&y)
                            .map(|m| m / r)
                            .ok_or_else(|| Error::domain(format!("ladder point {y:?} lies outside the box")))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Subcritical {
                        mu,
                        reason: "non-finite metric values along the ladder".into(),
                    });
                }
                Ok(ladder_estimate(mu, e, radii, values, opts.fit_points, cs.seed, mu >= zero_sub_level))
            })
            .collect()
    };
    let rows: Vec<Result<Vec<MbarEstimate>>> = if grid.lattice.len() <= PARALLEL_NODE_LIMIT {
        mus.par_iter().map(|&mu| one(mu)).collect()
    } else {
        mus.iter().map(|&mu| one(mu)).collect()
    };
    let estimates = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(MbarTable {
        dim: d,
        mus: mus.to_vec(),
        dirs,
        estimates,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HstarOptions {
    pub grid: SolverGrid,
    pub solver: SolverOptions,
    /// Stop once the bracket is narrower than this.
    pub tol: f64,
    pub max_bisections: usize,
}

impl HstarOptions {
    pub fn new(dim: usize, half_width: f64, h: f64) -> Result<Self> {
        Ok(HstarOptions {
            grid: SolverGrid::centered_box(&vec![0.0; dim], half_width, h, Boundary::DirichletCone)?,
            solver: SolverOptions::default(),
            tol: 1e-3,
            max_bisections: 60,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HstarEstimate {
    pub value: f64,
    /// Largest level where the metric solve failed.
    pub lo: f64,
    /// Smallest level where it succeeded.
    pub hi: f64,
    pub width: f64,
    /// `(μ, converged)` for every solve.
    pub evaluations: Vec<(f64, bool)>,
}

/// Bisection on the outcome of the metric solve: levels below `H̄_*` admit
/// no subsolution and the solver reports them as subcritical.
pub fn estimate_hstar(cs: &CoefficientSet, bracket: (f64, f64), opts: &HstarOptions) -> Result<HstarEstimate> {
    let (mut lo, mut hi) = bracket;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Bracket(format!("invalid bracket [{lo}, {hi}]")));
    }
    let d = cs.dim();
    let z = vec![0.0; d];
    let mut evaluations = Vec::new();
    let mut converges = |mu: f64| -> Result<bool> {
        let ok = match solve_metric(cs, mu, &z, &opts.grid, &opts.solver) {
            Ok(_) => true,
            Err(Error::Subcritical { .. }) => false,
            Err(e) => return Err(e),
        };
        evaluations.push((mu, ok));
        Ok(ok)
    };
    if converges(lo)? {
        return Err(Error::Bracket(format!("the metric problem already converges at the lower end {lo}")));
    }
    if !converges(hi)? {
        return Err(Error::Bracket(format!("the metric problem does not converge at the upper end {hi}")));
    }
    for _ in 0..opts.max_bisections {
        if hi - lo <= opts.tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if converges(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(HstarEstimate {
        value: 0.5 * (lo + hi),
        lo,
        hi,
        width: hi - lo,
        evaluations,
    })
}

/// `H̄(p)` as the smallest level whose homogenized metric dominates `p·e` in
/// every tabulated direction, interpolated linearly between grid levels.
pub fn estimate_hbar_metric(table: &MbarTable, p: &[f64]) -> Result<f64> {
    if p.len() != table.dim {
        return Err(Error::domain("momentum dimension differs from the table"));
    }
    let phi: Vec<f64> = (0..table.mus.len())
        .map(|j| {
            table
                .dirs
                .iter()
                .enumerate()
                .map(|(k, e)| table.value(j, k) - dot(p, e))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let Some(j) = phi.iter().position(|v| *v >= 0.0) else {
        return Err(Error::GridRange(format!(
            "no level up to {} dominates p = {p:?} (min gap {:.3e})",
            table.mus.last().unwrap(),
            phi.last().unwrap()
        )));
    };
    if j == 0 {
        return Ok(table.mus[0]);
    }
    let (m0, m1) = (table.mus[j - 1], table.mus[j]);
    let (f0, f1) = (phi[j - 1], phi[j]);
    Ok(m0 + (m1 - m0) * (-f0) / (f1 - f0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    Metric,
    Cell,
}

/// Where a table came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model: ModelKind,
    pub hamiltonian: HamiltonianKind,
    pub seed: u64,
    pub period: f64,
    pub spacing: f64,
    pub q: f64,
    pub lambda1: f64,
}

impl Provenance {
    pub fn of(cs: &CoefficientSet) -> Self {
        Provenance {
            model: cs.spec.model,
            hamiltonian: cs.spec.hamiltonian,
            seed: cs.seed,
            period: cs.spec.period,
            spacing: cs.spec.spacing,
            q: cs.spec.q,
            lambda1: cs.spec.lambda1,
        }
    }
}

/// `H̄` on a box of momenta, per route. Missing entries are NaN.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EffectiveTable {
    pub lattice: Lattice,
    pub metric: Vec<f64>,
    pub metric_err: Vec<f64>,
    pub cell: Vec<f64>,
    pub cell_err: Vec<f64>,
    pub hstar: Option<HstarEstimate>,
    pub provenance: Provenance,
}

impl EffectiveTable {
    /// Empty table on `{ p : p_k = i step, |i| ≤ half_nodes }`.
    pub fn new(cs: &CoefficientSet, half_nodes: usize, step: f64) -> Result<Self> {
        let lattice = Lattice::centered_box(&vec![0.0; cs.dim()], half_nodes, step)?;
        let n = lattice.len();
        Ok(EffectiveTable {
            lattice,
            metric: vec![f64::NAN; n],
            metric_err: vec![f64::NAN; n],
            cell: vec![f64::NAN; n],
            cell_err: vec![f64::NAN; n],
            hstar: None,
            provenance: Provenance::of(cs),
        })
    }

    pub fn len(&self) -> usize {
        self.lattice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lattice.is_empty()
    }

    pub fn p(&self, i: usize) -> Vec<f64> {
        self.lattice.point(i)[..self.lattice.dim].to_vec()
    }

    pub fn values(&self, route: Route) -> &[f64] {
        match route {
            Route::Metric => &self.metric,
            Route::Cell => &self.cell,
        }
    }

    /// Fill the metric route from an `m̄` table. The error is the change of
    /// `H̄` when every `m̄` is shifted by its ladder error bar.
    pub fn fill_metric(&mut self, table: &MbarTable) -> Result<()> {
        let mut shifted = table.clone();
        for row in shifted.estimates.iter_mut() {
            for est in row.iter_mut() {
                est.limit -= est.error;
            }
        }
        for i in 0..self.len() {
            let p = self.p(i);
            let h = estimate_hbar_metric(table, &p)?;
            let err = match estimate_hbar_metric(&shifted, &p) {
                Ok(hs) => (hs - h).abs(),
                Err(_) => f64::INFINITY,
            };
            self.metric[i] = h;
            self.metric_err[i] = err;
        }
        Ok(())
    }

    pub fn fill_cell(&mut self, cs: &CoefficientSet, eps_ladder: &[f64], opts: &CellRouteOptions) -> Result<()> {
        for i in 0..self.len() {
            let est = estimate_hbar_cell(cs, &self.p(i), eps_ladder, opts)?;
            self.cell[i] = est.limit;
            self.cell_err[i] = est.error;
        }
        Ok(())
    }

    /// `p0..,hbar_metric,err_metric,hbar_cell,err_cell`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let d = self.lattice.dim;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let pcols: Vec<String> = (0..d).map(|k| format!("p{k}")).collect();
        writeln!(f, "{},hbar_metric,err_metric,hbar_cell,err_cell", pcols.join(","))?;
        for i in 0..self.len() {
            let p: Vec<String> = self.p(i).iter().map(|x| format!("{x:.17e}")).collect();
            writeln!(
                f,
                "{},{:.17e},{:.17e},{:.17e},{:.17e}",
                p.join(","),
                self.metric[i],
                self.metric_err[i],
                self.cell[i],
                self.cell_err[i]
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

/// `sup { p·y : H̄(p) ≤ μ }` over the lattice entries of one route.
pub fn support_function(table: &EffectiveTable, route: Route, mu: f64, y: &[f64]) -> Result<f64> {
    if y.len() != table.lattice.dim {
        return Err(Error::domain("y dimension differs from the table"));
    }
    let vals = table.values(route);
    let mut best = f64::NEG_INFINITY;
    for (i, h) in vals.iter().enumerate() {
        if *h <= mu {
            best = best.max(dot(&table.p(i), y));
        }
    }
    if best == f64::NEG_INFINITY {
        return Err(Error::Level(format!("no lattice momentum has H̄ <= {mu}")));
    }
    Ok(best)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CellRouteOptions {
    /// Periodic grid; the environment torus when absent.
    pub grid: Option<SolverGrid>,
    pub solver: SolverOptions,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellEstimate {
    pub p: Vec<f64>,
    pub eps: Vec<f64>,
    /// `-ε v^ε(0)` per discount.
    pub values: Vec<f64>,
    /// `-ε ⟨v^ε⟩` per discount.
    pub means: Vec<f64>,
    pub limit: f64,
    pub slope: f64,
    /// Distance from the limit to the value at the smallest discount.
    pub error: f64,
}

/// `H̄(p)` from `-ε v^ε(0, p)` along a decreasing ladder of discounts,
/// extrapolated by the fit `c + c'ε`.
pub fn estimate_hbar_cell(cs: &CoefficientSet, p: &[f64], eps_ladder: &[f64], opts: &CellRouteOptions) -> Result<CellEstimate> {
    if eps_ladder.is_empty() || eps_ladder.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::config("eps", "discounts must be positive and at least one is needed"));
    }
    if eps_ladder.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::config("eps", "the discount ladder must be strictly decreasing"));
    }
    let grid = match opts.grid {
        Some(g) => g,
        None => SolverGrid::env_torus(cs)?,
    };
    let origin = vec![0.0; cs.dim()];
    let mut values = Vec::with_capacity(eps_ladder.len());
    let mut means = Vec::with_capacity(eps_ladder.len());
    for &eps in eps_ladder {
        let field = solve_discounted(cs, eps, p, &grid, &opts.solver)?;
        let v0 = field.value_at(&origin).ok_or_else(|| Error::domain("origin outside the torus"))?;
        values.push(-eps * v0);
        means.push(-eps * crate::numerics::fsum(field.values.iter().cloned()) / field.values.len() as f64);
    }
    let (limit, slope) = fit_affine(eps_ladder, &values);
    let error = (limit - values.last().unwrap()).abs();
    Ok(CellEstimate {
        p: p.to_vec(),
        eps: eps_ladder.to_vec(),
        values,
        means,
        limit,
        slope,
        error,
    })
}

/// Grid sup of the stationary operator applied to `p·y + w`: an upper bound
/// for the discrete cell-route value up to `ε · osc w`.
pub fn minmax_upper_bound(cs: &CoefficientSet, p: &[f64], w: &[f64], grid: &SolverGrid, opts: &SolverOptions) -> Result<f64> {
    let f = stationary_operator(cs, p, w, grid, opts)?;
    Ok(f.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
}
