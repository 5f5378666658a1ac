//! Discrete Legendre–Fenchel duality on box lattices, the Hopf–Lax formula
//! and the representation `L̄(z) = sup_μ (m̄_μ(z) - μ)`.
//!
//! `f64::INFINITY` marks nodes outside the effective domain; such nodes never
//! enter a supremum.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homogenize::{EffectiveTable, MbarTable, Route};
use crate::lattice::{Lattice, MAX_DIM};

/// Marker for values outside the effective domain.
pub const OUT_OF_DOMAIN: f64 = f64::INFINITY;

/// Relative margin by which a boundary maximizer must beat every interior
/// one before the conjugate is declared infinite.
const EDGE_MARGIN: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexTable {
    pub lattice: Lattice,
    pub values: Vec<f64>,
}

impl ConvexTable {
    pub fn new(lattice: Lattice, values: Vec<f64>) -> Result<Self> {
        if lattice.periodic {
            return Err(Error::domain("convex tables live on box lattices"));
        }
        if values.len() != lattice.len() {
            return Err(Error::domain(format!(
                "{} values for a lattice of {} nodes",
                values.len(),
                lattice.len()
            )));
        }
        if values.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
            return Err(Error::domain("table values must be finite or +inf"));
        }
        Ok(ConvexTable { lattice, values })
    }

    pub fn from_fn(lattice: Lattice, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let d = lattice.dim;
        let values = (0..lattice.len()).map(|i| f(&lattice.point(i)[..d])).collect();
        ConvexTable::new(lattice, values)
    }

    /// One route of an effective table; missing entries become `+inf`.
    pub fn from_effective(table: &EffectiveTable, route: Route) -> Result<Self> {
        let values = table
            .values(route)
            .iter()
            .map(|v| if v.is_finite() { *v } else { OUT_OF_DOMAIN })
            .collect();
        ConvexTable::new(table.lattice, values)
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.lattice.point(i)[..self.lattice.dim].to_vec()
    }

    pub fn in_domain(&self, i: usize) -> bool {
        self.values[i].is_finite()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Multilinear interpolation; `+inf` when a contributing corner is
    /// outside the domain, `None` outside the box.
    pub fn interpolate(&self, x: &[f64]) -> Option<f64> {
        let (base, frac) = self.lattice.locate(x)?;
        let d = self.lattice.dim;
        let s = self.lattice.strides();
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0;
            for k in 0..d {
                let bit = (corner >> k) & 1;
                let i = (base[k] + bit).min(self.lattice.shape[k] - 1);
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                idx += i * s[k];
            }
            if w == 0.0 {
                continue;
            }
            let v = self.values[idx];
            if !v.is_finite() {
                return Some(OUT_OF_DOMAIN);
            }
            acc += w * v;
        }
        Some(acc)
    }

    /// `x0..,value` rows; `inf` marks out-of-domain nodes.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let d = self.lattice.dim;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let cols: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
        writeln!(f, "{},value", cols.join(","))?;
        for i in 0..self.lattice.len() {
            let x: Vec<String> = self.point(i).iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(f, "{},{:.17e}", x.join(","), self.values[i])?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Box of slopes for the conjugate of `f`: per axis it spans the range of
/// finite chord slopes of `f` with `2N - 3` nodes, `N` the node count.
pub fn dual_lattice(f: &ConvexTable) -> Result<Lattice> {
    let lat = &f.lattice;
    let d = lat.dim;
    let mut origin = [0.0; MAX_DIM];
    let mut step = [0.0; MAX_DIM];
    let mut shape = [0usize; MAX_DIM];
    for k in 0..d {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..lat.len() {
            let c = lat.coords(i);
            if let Some(j) = lat.neighbor(i, &c, k, 1) {
                if f.values[i].is_finite() && f.values[j].is_finite() {
                    let s = (f.values[j] - f.values[i]) / lat.step[k];
                    lo = lo.min(s);
                    hi = hi.max(s);
                }
            }
        }
        let n = lat.shape[k];
        if !(lo <= hi) || n < 2 {
            return Err(Error::domain("no finite chord along some axis: cannot size the dual lattice"));
        }
        let nodes = (2 * n).saturating_sub(3).max(2);
        let width = (hi - lo).max(lat.step[k]);
        origin[k] = lo;
        step[k] = width / (nodes - 1) as f64;
        shape[k] = nodes;
    }
    Lattice::new(&origin[..d], &step[..d], &shape[..d], false)
}

/// Axis coordinates of a box lattice.
fn axes(l: &Lattice) -> Vec<Vec<f64>> {
    (0..l.dim)
        .map(|k| (0..l.shape[k]).map(|i| l.origin[k] + i as f64 * l.step[k]).collect())
        .collect()
}

/// The pairing `p·z - f(p)` accumulated innermost axis first:
/// `p0 z0 + (p1 z1 + (p2 z2 - f))`. Both conjugate paths use this order, and
/// rounding is monotone, so the separable sup equals the double loop exactly.
#[inline]
fn pairing(p: &[f64], z: &[f64], fp: f64) -> f64 {
    let d = p.len();
    let mut acc = p[d - 1] * z[d - 1] - fp;
    for k in (0..d - 1).rev() {
        acc = p[k] * z[k] + acc;
    }
    acc
}

fn is_interior(l: &Lattice, c: &[usize; MAX_DIM]) -> bool {
    (0..l.dim).all(|k| c[k] > 0 && c[k] + 1 < l.shape[k])
}

fn has_interior(l: &Lattice) -> bool {
    (0..l.dim).all(|k| l.shape[k] >= 3)
}

fn finish(all: f64, interior: f64, check_edge: bool) -> f64 {
    if all == f64::NEG_INFINITY {
        return OUT_OF_DOMAIN;
    }
    if check_edge && interior > f64::NEG_INFINITY && all > interior + EDGE_MARGIN * (1.0 + interior.abs()) {
        return OUT_OF_DOMAIN;
    }
    all
}

/// Treatment of conjugate values whose supremum sits on the boundary of the
/// momentum box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeRule {
    /// Mark them out of domain: they depend on the truncation of the box.
    Mark,
    /// Keep the supremum over the box.
    Keep,
}

/// Conjugate by the direct double loop over both lattices.
pub fn conjugate_brute(f: &ConvexTable, z_lattice: &Lattice, rule: EdgeRule) -> Result<ConvexTable> {
    check_conjugate_args(f, z_lattice)?;
    let d = f.dim();
    let pl = &f.lattice;
    let edge = rule == EdgeRule::Mark && has_interior(pl);
    let pts: Vec<([f64; MAX_DIM], bool)> = (0..pl.len()).map(|i| (pl.point(i), is_interior(pl, &pl.coords(i)))).collect();
    let values = (0..z_lattice.len())
        .into_par_iter()
        .map(|j| {
            let z = z_lattice.point(j);
            let mut all = f64::NEG_INFINITY;
            let mut inner = f64::NEG_INFINITY;
            for (i, (p, int)) in pts.iter().enumerate() {
                let fp = f.values[i];
                if !fp.is_finite() {
                    continue;
                }
                let v = pairing(&p[..d], &z[..d], fp);
                if v > all {
                    all = v;
                }
                if *int && v > inner {
                    inner = v;
                }
            }
            finish(all, inner, edge)
        })
        .collect();
    ConvexTable::new(*z_lattice, values)
}

fn check_conjugate_args(f: &ConvexTable, z_lattice: &Lattice) -> Result<()> {
    if z_lattice.dim != f.dim() || z_lattice.periodic {
        return Err(Error::domain("the dual lattice must be a box of the same dimension"));
    }
    if !f.values.iter().any(|v| v.is_finite()) {
        return Err(Error::domain("the table has an empty domain"));
    }
    Ok(())
}

/// Separable sup over one axis at a time. `g` holds, for the current axis
/// `k`, values indexed by `(p_0..p_k, z_{k+1}..z_{d-1})`; the pass replaces
/// `p_k` by `z_k`.
fn separable_pass(g: &[f64], shape_in: &[usize], k: usize, pk: &[f64], zk: &[f64], keep: impl Fn(usize) -> bool + Sync) -> (Vec<f64>, Vec<usize>) {
    let d = shape_in.len();
    let mut shape_out = shape_in.to_vec();
    shape_out[k] = zk.len();
    let outer: usize = shape_in[..k].iter().product();
    let inner: usize = shape_in[k + 1..].iter().product();
    let nk = shape_in[k];
    let nz = zk.len();
    let mut out = vec![f64::NEG_INFINITY; outer * nz * inner];
    out.par_chunks_mut(nz * inner).enumerate().for_each(|(o, chunk)| {
        for (jz, z) in zk.iter().enumerate() {
            for r in 0..inner {
                let mut best = f64::NEG_INFINITY;
                for (ip, p) in pk.iter().enumerate() {
                    if !keep(ip) {
                        continue;
                    }
                    let gv = g[(o * nk + ip) * inner + r];
                    let v = if k + 1 == d { p * z - gv } else { p * z + gv };
                    if v > best {
                        best = v;
                    }
                }
                chunk[jz * inner + r] = best;
            }
        }
    });
    (out, shape_out)
}

fn separable_sup(f: &ConvexTable, z_lattice: &Lattice, interior_only: bool) -> Vec<f64> {
    let d = f.dim();
    let pa = axes(&f.lattice);
    let za = axes(z_lattice);
    let mut g: Vec<f64> = f.values.iter().map(|v| if v.is_finite() { *v } else { f64::INFINITY }).collect();
    let mut shape: Vec<usize> = f.lattice.shape[..d].to_vec();
    // Innermost axis first: it carries `p z - f`; outer axes add `p z`.
    for k in (0..d).rev() {
        let n = f.lattice.shape[k];
        let keep = move |ip: usize| !interior_only || (ip > 0 && ip + 1 < n);
        let (out, s) = separable_pass(&g, &shape, k, &pa[k], &za[k], keep);
        g = out;
        shape = s;
    }
    g
}

/// Conjugate `sup_p (p·z - f(p))` on `z_lattice`, computed one axis at a
/// time. Bit-identical to [`conjugate_brute`] with the same rule.
pub fn conjugate(f: &ConvexTable, z_lattice: &Lattice, rule: EdgeRule) -> Result<ConvexTable> {
    check_conjugate_args(f, z_lattice)?;
    let all = separable_sup(f, z_lattice, false);
    let values = if rule == EdgeRule::Mark && has_interior(&f.lattice) {
        let inner = separable_sup(f, z_lattice, true);
        all.iter().zip(&inner).map(|(a, i)| finish(*a, *i, true)).collect()
    } else {
        all.iter().map(|a| finish(*a, f64::NEG_INFINITY, false)).collect()
    };
    ConvexTable::new(*z_lattice, values)
}

/// `f*(z) = sup_p (p·z - f(p))` on `z_lattice`. A node whose supremum is
/// attained only on the boundary of the momentum box is marked out of
/// domain.
pub fn legendre_transform(f: &ConvexTable, z_lattice: &Lattice) -> Result<ConvexTable> {
    conjugate(f, z_lattice, EdgeRule::Mark)
}

pub fn legendre_transform_brute(f: &ConvexTable, z_lattice: &Lattice) -> Result<ConvexTable> {
    conjugate_brute(f, z_lattice, EdgeRule::Mark)
}

/// Convex envelope `f**` of `f` on its own lattice, through the dual
/// lattice of `f`.
pub fn biconjugate(f: &ConvexTable) -> Result<ConvexTable> {
    let z = dual_lattice(f)?;
    biconjugate_on(f, &z)
}

/// `f**` with slopes restricted to `z_lattice`.
pub fn biconjugate_on(f: &ConvexTable, z_lattice: &Lattice) -> Result<ConvexTable> {
    let fs = conjugate(f, z_lattice, EdgeRule::Keep)?;
    conjugate(&fs, &f.lattice, EdgeRule::Keep)
}

/// Grid function on a box lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub lattice: Lattice,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopfLaxValue {
    pub value: f64,
    pub argmin: Vec<f64>,
    /// The minimizer used `L̄` outside its table, where it is extrapolated.
    pub extrapolated: bool,
}

fn extrapolate(l: &ConvexTable, z: &[f64], slope: f64) -> f64 {
    let lat = &l.lattice;
    let d = lat.dim;
    let mut proj = [0.0; MAX_DIM];
    let mut dist2 = 0.0;
    for k in 0..d {
        let top = lat.origin[k] + (lat.shape[k] - 1) as f64 * lat.step[k];
        proj[k] = z[k].clamp(lat.origin[k], top);
        dist2 += (z[k] - proj[k]) * (z[k] - proj[k]);
    }
    let base = l.interpolate(&proj[..d]).unwrap_or(OUT_OF_DOMAIN);
    let dist = dist2.sqrt();
    base + slope * dist + dist2
}

fn max_chord_slope(l: &ConvexTable) -> f64 {
    let lat = &l.lattice;
    let mut s = 0.0f64;
    for i in 0..lat.len() {
        let c = lat.coords(i);
        for k in 0..lat.dim {
            if let Some(j) = lat.neighbor(i, &c, k, 1) {
                if l.values[i].is_finite() && l.values[j].is_finite() {
                    s = s.max((l.values[j] - l.values[i]).abs() / lat.step[k]);
                }
            }
        }
    }
    s
}

/// `u(x, t) = inf_y (t L̄((x - y)/t) + g(y))` over the nodes `y` of `g`.
/// Beyond its box `L̄` is continued by `L̄(π z) + s |z - π z| + |z - π z|²`
/// with `π` the projection on the box and `s` the largest chord slope.
pub fn hopf_lax(l: &ConvexTable, g: &GridFunction, x: &[f64], t: f64) -> Result<HopfLaxValue> {
    let slope = max_chord_slope(l);
    hopf_lax_with(l, g, x, t, slope)
}

fn hopf_lax_with(l: &ConvexTable, g: &GridFunction, x: &[f64], t: f64, slope: f64) -> Result<HopfLaxValue> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::domain(format!("Hopf-Lax needs t > 0, got {t}")));
    }
    let d = l.dim();
    if x.len() != d || g.lattice.dim != d || g.values.len() != g.lattice.len() {
        return Err(Error::domain("dimension mismatch between L, g and x"));
    }
    let mut best = HopfLaxValue {
        value: f64::INFINITY,
        argmin: vec![f64::NAN; d],
        extrapolated: false,
    };
    let mut z = [0.0; MAX_DIM];
    for i in 0..g.lattice.len() {
        let y = g.lattice.point(i);
        for k in 0..d {
            z[k] = (x[k] - y[k]) / t;
        }
        let (lv, ext) = match l.interpolate(&z[..d]) {
            Some(v) => (v, false),
            None => (extrapolate(l, &z[..d], slope), true),
        };
        if !lv.is_finite() {
            continue;
        }
        let v = t * lv + g.values[i];
        if v < best.value {
            best.value = v;
            best.argmin = y[..d].to_vec();
            best.extrapolated = ext;
        }
    }
    if !best.value.is_finite() {
        return Err(Error::domain("every candidate lies outside the domain of L"));
    }
    Ok(best)
}

/// Hopf–Lax values at a batch of `(x, t)` queries.
pub fn hopf_lax_batch(l: &ConvexTable, g: &GridFunction, queries: &[(Vec<f64>, f64)]) -> Result<Vec<HopfLaxValue>> {
    let slope = max_chord_slope(l);
    queries.par_iter().map(|(x, t)| hopf_lax_with(l, g, x, *t, slope)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridEdge {
    Bottom,
    Top,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagrangianValue {
    /// `L̄(z)`.
    pub value: f64,
    /// `sup_μ (m̄_μ(z) - (μ - H̄_*))`, the value for the Hamiltonian
    /// normalized to have minimum zero.
    pub normalized: f64,
    pub mu_star: f64,
    /// Set when the supremum sits at an end of the level grid.
    pub edge: Option<GridEdge>,
}

/// `L̄(z) = sup_μ (m̄_μ(z) - μ)` over the level grid of `mbar`, evaluated
/// after shifting levels by `H̄_*` so that the Hamiltonian has minimum zero.
pub fn lagrangian_from_mbar(mbar: &MbarTable, hstar: f64, z: &[f64]) -> Result<LagrangianValue> {
    if mbar.mus.is_empty() {
        return Err(Error::domain("empty level grid"));
    }
    if z.len() != mbar.dim {
        return Err(Error::domain("z dimension differs from the table"));
    }
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    for (j, mu) in mbar.mus.iter().enumerate() {
        let v = mbar.eval(j, z) - (mu - hstar);
        if v > best {
            best = v;
            arg = j;
        }
    }
    let n = mbar.mus.len();
    let edge = if arg == 0 {
        Some(GridEdge::Bottom)
    } else if arg + 1 == n {
        Some(GridEdge::Top)
    } else {
        None
    };
    Ok(LagrangianValue {
        value: best - hstar,
        normalized: best,
        mu_star: mbar.mus[arg],
        edge,
    })
}
