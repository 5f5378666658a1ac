//! Fast sweeping for `a|Du|^q - V = μ` without diffusion: the Godunov node
//! equation has the closed-form update `Σ_k ((u - m_k)⁺)² = r²`.

use crate::lattice::{Lattice, MAX_DIM};

use super::scheme::{for_each_ordered, IterLog};

pub(crate) enum Speed {
    Uniform(f64),
    Nodes(Vec<f64>),
}

impl Speed {
    #[inline]
    fn get(&self, i: usize) -> f64 {
        match self {
            Speed::Uniform(r) => *r,
            Speed::Nodes(v) => v[i],
        }
    }
}

#[inline]
fn update(m: &mut [f64], r: f64) -> f64 {
    m.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mut x = m[0] + r;
    if !x.is_finite() {
        return x;
    }
    let mut sum = m[0];
    let mut sq = m[0] * m[0];
    for j in 1..m.len() {
        if x <= m[j] {
            break;
        }
        sum += m[j];
        sq += m[j] * m[j];
        let n = (j + 1) as f64;
        let disc = (sum * sum - n * (sq - r * r)).max(0.0);
        x = (sum + disc.sqrt()) / n;
    }
    x
}

/// Sweep a box lattice whose boundary nodes are all fixed. `r[i]` is
/// `h ((μ + V)/a)^{1/q}` at node `i`. Values only decrease.
pub(crate) fn sweep_box(lat: &Lattice, fixed: &[bool], r: &Speed, u: &mut [f64], tol: f64, max_cycles: usize) -> IterLog {
    let d = lat.dim;
    let s = lat.strides();
    let orders = 1usize << d;
    let mut log = IterLog::default();
    let mut it = 0;
    for _cycle in 0..max_cycles {
        let mut cycle_change = 0.0f64;
        for mask in 0..orders {
            let mut change = 0.0f64;
            for_each_ordered(lat, mask, |i| {
                if fixed[i] {
                    return;
                }
                let mut m = [0.0; MAX_DIM];
                for k in 0..d {
                    m[k] = u[i - s[k]].min(u[i + s[k]]);
                }
                let x = update(&mut m[..d], r.get(i));
                if x < u[i] {
                    let c = u[i] - x;
                    if c > change {
                        change = c;
                    }
                    u[i] = x;
                }
            });
            it += 1;
            log.trace.push((it, f64::NAN, change));
            cycle_change = cycle_change.max(change);
        }
        if cycle_change <= tol {
            log.converged = true;
            break;
        }
    }
    log.iterations = it;
    log.residual = residual_box(lat, fixed, r, u);
    if let Some(last) = log.trace.last_mut() {
        last.1 = log.residual;
    }
    log
}

/// Sup over free nodes of `| |G| - r/h |` with `G` the upwind gradient.
pub(crate) fn residual_box(lat: &Lattice, fixed: &[bool], r: &Speed, u: &[f64]) -> f64 {
    let d = lat.dim;
    let s = lat.strides();
    let h = lat.step[0];
    let mut res = 0.0f64;
    for i in 0..lat.len() {
        if fixed[i] {
            continue;
        }
        let mut g2 = 0.0;
        for k in 0..d {
            let m = u[i - s[k]].min(u[i + s[k]]);
            let t = (u[i] - m).max(0.0);
            g2 += t * t;
        }
        res = res.max((g2.sqrt() - r.get(i)).abs() / h);
    }
    res
}
