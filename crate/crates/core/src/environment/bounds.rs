use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sample::{matrix_op_norm, sigma_lipschitz, sym_eig_min};
use super::{CoefficientSet, HamiltonianKind};
use crate::error::{Error, Result};
use crate::lattice::MAX_DIM;
use crate::numerics::fsum;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalBounds {
    pub radius: f64,
    /// Coercivity constant, in `(0, 1]`.
    pub a_r: f64,
    /// Lipschitz/offset constant, at least 1.
    pub m_r: f64,
}

/// Magnitudes of the momentum sample used to certify the bounds.
const P_MAGNITUDES: [f64; 6] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

fn p_sample(cs: &CoefficientSet) -> Vec<[f64; MAX_DIM]> {
    let d = cs.dim();
    let mut dirs: Vec<[f64; MAX_DIM]> = Vec::new();
    match cs.spec.hamiltonian {
        HamiltonianKind::Power => {
            let mut e = [0.0; MAX_DIM];
            e[0] = 1.0;
            dirs.push(e);
        }
        HamiltonianKind::QuadraticDrift => {
            for k in 0..d {
                for s in [1.0, -1.0] {
                    let mut e = [0.0; MAX_DIM];
                    e[k] = s;
                    dirs.push(e);
                }
            }
            if d > 1 {
                for mask in 0..(1usize << d) {
                    let mut e = [0.0; MAX_DIM];
                    for (k, ek) in e.iter_mut().enumerate().take(d) {
                        *ek = if (mask >> k) & 1 == 1 { -1.0 } else { 1.0 } / (d as f64).sqrt();
                    }
                    dirs.push(e);
                }
            }
        }
    }
    let mut out = vec![[0.0; MAX_DIM]];
    for m in P_MAGNITUDES {
        for e in &dirs {
            let mut p = [0.0; MAX_DIM];
            for k in 0..d {
                p[k] = m * e[k];
            }
            out.push(p);
        }
    }
    out
}

/// Nodes whose coefficients influence `B_R(center)`: the ball enlarged by one
/// cell diagonal, so every interpolation corner is scanned.
fn scan_nodes(cs: &CoefficientSet, center: &[f64], radius: f64) -> Result<Vec<usize>> {
    let d = cs.dim();
    let l = &cs.lattice;
    let reach = radius + (d as f64).sqrt() * cs.spacing();
    let mut c = [0.0; MAX_DIM];
    for k in 0..d {
        c[k] = center[k] + cs.offset[k];
    }
    match l.ball_nodes(&c[..d], reach) {
        Ok(v) => Ok(v),
        Err(_) => Ok((0..l.len()).collect()),
    }
}

fn bounds_on_nodes(cs: &CoefficientSet, nodes: &[usize], radius: f64) -> Result<LocalBounds> {
    let d = cs.dim();
    let h = cs.spacing();
    let model = cs.model();
    let q = cs.spec.q;
    let lam1 = cs.spec.lambda1;
    let samples = p_sample(cs);
    let ns = samples.len();
    let local: HashMap<usize, usize> = nodes.iter().enumerate().map(|(j, &i)| (i, j)).collect();
    let mut hv = vec![0.0; nodes.len() * ns];
    for (j, &i) in nodes.iter().enumerate() {
        let c = cs.node(i);
        for (s, p) in samples.iter().enumerate() {
            hv[j * ns + s] = model.eval(&c, &p[..d]);
        }
    }
    // Lipschitz part of M_R.
    let mut lk = vec![0.0f64; ns * d];
    for (j, &i) in nodes.iter().enumerate() {
        let coord = cs.lattice.coords(i);
        for k in 0..d {
            let Some(nb) = cs.lattice.neighbor(i, &coord, k, 1) else { continue };
            let Some(&jn) = local.get(&nb) else { continue };
            for s in 0..ns {
                let g = (hv[j * ns + s] - hv[jn * ns + s]).abs() / h;
                if g > lk[s * d + k] {
                    lk[s * d + k] = g;
                }
            }
        }
    }
    let mut m_lip = 0.0f64;
    for (s, p) in samples.iter().enumerate() {
        let lip: f64 = (0..d).map(|k| lk[s * d + k] * lk[s * d + k]).sum::<f64>().sqrt();
        let pn = p[..d].iter().map(|x| x * x).sum::<f64>().sqrt();
        m_lip = m_lip.max(lip - lam1 * pn.powf(q));
    }
    // Offset part of M_R: the value at p = 0, plus the drift absorption for the
    // quadratic model.
    let mut m0 = 0.0f64;
    for &i in nodes {
        let c = cs.node(i);
        let extra = match cs.spec.hamiltonian {
            HamiltonianKind::Power => 0.0,
            HamiltonianKind::QuadraticDrift => {
                let lmin = sym_eig_min(&cs.amat[i * d * d..(i + 1) * d * d], d);
                let b2: f64 = c.b[..d].iter().map(|x| x * x).sum();
                if b2 == 0.0 {
                    0.0
                } else if lmin <= 0.0 {
                    return Err(Error::domain("quadratic model with degenerate A and nonzero drift is not coercive"));
                } else {
                    b2 / (2.0 * lmin)
                }
            }
        };
        m0 = m0.max(c.v + extra);
    }
    let m_r = 1.0f64.max(m_lip).max(m0);
    let mut a_r = 1.0f64;
    for &i in nodes {
        let c = cs.node(i);
        let a = match cs.spec.hamiltonian {
            HamiltonianKind::Power => c.a,
            HamiltonianKind::QuadraticDrift => {
                let lmin = sym_eig_min(&cs.amat[i * d * d..(i + 1) * d * d], d);
                let b2: f64 = c.b[..d].iter().map(|x| x * x).sum();
                if b2 == 0.0 {
                    lmin
                } else {
                    lmin - b2 / (4.0 * (m_r - c.v))
                }
            }
        };
        a_r = a_r.min(a);
    }
    for (j, _) in nodes.iter().enumerate() {
        for (s, p) in samples.iter().enumerate().skip(1) {
            let pq = p[..d].iter().map(|x| x * x).sum::<f64>().sqrt().powf(q);
            a_r = a_r.min((hv[j * ns + s] + m_r) / pq);
        }
    }
    if !(a_r > 0.0) {
        return Err(Error::domain(format!("coercivity constant vanishes on B_{radius}")));
    }
    Ok(LocalBounds { radius, a_r, m_r })
}

fn check_radius(cs: &CoefficientSet, radius: f64) -> Result<()> {
    if !(radius > 0.0) || radius > cs.period() / 2.0 {
        return Err(Error::domain(format!(
            "radius {radius} must lie in (0, L/2] with L = {}",
            cs.period()
        )));
    }
    Ok(())
}

/// `a_R` and `M_R` on the ball `B_R` centered at the origin.
pub fn local_bounds(cs: &CoefficientSet, radius: f64) -> Result<LocalBounds> {
    local_bounds_at(cs, &[0.0; MAX_DIM][..cs.dim()], radius)
}

/// `a_R` and `M_R` on `B_R(center)`, i.e. the bounds of `τ_center` at the origin.
pub fn local_bounds_at(cs: &CoefficientSet, center: &[f64], radius: f64) -> Result<LocalBounds> {
    check_radius(cs, radius)?;
    let nodes = scan_nodes(cs, center, radius)?;
    bounds_on_nodes(cs, &nodes, radius)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakCoercivityReport {
    pub alpha: f64,
    /// Spatial average of `(Λ₂/a₁)^{2α/(q-1)} + (M₁/a₁)^{α/q}` over node translates.
    pub moment: f64,
    /// Share of the sum carried by the largest 10% of the terms.
    pub top_decile_share: f64,
    /// `top_decile_share > 0.5`.
    pub heavy_tail: bool,
    pub samples: usize,
}

/// One term of the weak coercivity moment.
pub fn weak_coercivity_term(lambda2: f64, q: f64, alpha: f64, b: &LocalBounds) -> f64 {
    let first = if lambda2 == 0.0 || q == 1.0 {
        0.0
    } else {
        (lambda2 / b.a_r).powf(2.0 * alpha / (q - 1.0))
    };
    first + (b.m_r / b.a_r).powf(alpha / q)
}

/// Average of the weak coercivity moment over all node translates.
pub fn weak_coercivity_diagnostic(cs: &CoefficientSet, alpha: f64) -> Result<WeakCoercivityReport> {
    let d = cs.dim();
    if !(alpha > d as f64) {
        return Err(Error::config("alpha", format!("must exceed the dimension {d}, got {alpha}")));
    }
    check_radius(cs, 1.0)?;
    let lambda2 = cs.spec.lambda2;
    let q = cs.spec.q;
    let terms: Result<Vec<f64>> = (0..cs.lattice.len())
        .into_par_iter()
        .map(|i| {
            let y = cs.node_position(i);
            let b = local_bounds_at(cs, &y[..d], 1.0)?;
            Ok(weak_coercivity_term(lambda2, q, alpha, &b))
        })
        .collect();
    let mut terms = terms?;
    let n = terms.len();
    let total = fsum(terms.iter().copied());
    terms.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let top = (n / 10).max(1);
    let share = if total > 0.0 {
        fsum(terms[..top].iter().copied()) / total
    } else {
        0.0
    };
    Ok(WeakCoercivityReport {
        alpha,
        moment: total / n as f64,
        top_decile_share: share,
        heavy_tail: share > 0.5,
        samples: n,
    })
}

/// The oscillation scale `K_μ(y)` built from the bounds on `B_2(y)`:
/// `C [((1+Λ₁)^{1/2} ‖σ‖_{C^{0,1}(B₂)} / a₂)^{2/(q-1)} + ((M₂ + μ)/a₂)^{1/q}]`.
pub fn compute_kmu(cs: &CoefficientSet, mu: f64, y: &[f64], c_cal: f64) -> Result<f64> {
    let d = cs.dim();
    let radius = 2.0f64.min(cs.period() / 2.0);
    check_radius(cs, radius)?;
    let nodes = scan_nodes(cs, y, radius)?;
    let b = bounds_on_nodes(cs, &nodes, radius)?;
    let mut sup = 0.0f64;
    for &i in &nodes {
        sup = sup.max(matrix_op_norm(&cs.sigma[i * d * d..(i + 1) * d * d], d));
    }
    let snorm = sup + sigma_lipschitz(cs, Some(&nodes));
    let q = cs.spec.q;
    let first = if snorm == 0.0 || q == 1.0 {
        0.0
    } else {
        ((1.0 + cs.spec.lambda1).sqrt() * snorm / b.a_r).powf(2.0 / (q - 1.0))
    };
    let second = ((b.m_r + mu).max(0.0) / b.a_r).powf(1.0 / q);
    Ok(c_cal * (first + second))
}
