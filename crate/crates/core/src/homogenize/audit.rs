//! Structural checks on effective tables: convexity, the a priori bounds,
//! agreement of the two routes and the location of the minimum.

use serde::{Deserialize, Serialize};

use super::{EffectiveTable, MbarTable, Route};
use crate::numerics::norm;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditTolerances {
    /// Second differences must be `>= -convexity_rel * max(1, max|H̄|)`.
    pub convexity_rel: f64,
    /// Slack on the bounds `H̄_* <= H̄ <= Λ₁(|p|^q + 1)`.
    pub bound: f64,
    pub route_abs: f64,
    pub route_rel: f64,
    /// Slack added to the bisection bracket width when comparing the
    /// table minimum with `H̄_*`.
    pub hstar: f64,
}

impl Default for AuditTolerances {
    fn default() -> Self {
        AuditTolerances {
            convexity_rel: 1e-3,
            bound: 1e-9,
            route_abs: 0.05,
            route_rel: 0.05,
            hstar: 1e-9,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RouteAudit {
    pub route: Route,
    pub entries: usize,
    /// Entries where a second difference along some axis is too negative.
    pub convexity_violations: Vec<usize>,
    pub worst_second_difference: f64,
    pub bound_violations: Vec<usize>,
    pub min_value: f64,
    pub argmin: Vec<f64>,
    /// `|min H̄ - H̄_*|` when `H̄_*` is known.
    pub hstar_discrepancy: Option<f64>,
    pub hstar_ok: bool,
}

impl RouteAudit {
    pub fn clean(&self) -> bool {
        self.convexity_violations.is_empty() && self.bound_violations.is_empty() && self.hstar_ok
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AuditReport {
    pub tolerances: AuditTolerances,
    pub routes: Vec<RouteAudit>,
    /// `|H̄_metric - H̄_cell|` per entry, NaN where a route is missing.
    pub route_disagreement: Vec<f64>,
    pub max_route_disagreement: f64,
    pub route_violations: Vec<usize>,
    pub clean: bool,
}

fn audit_route(table: &EffectiveTable, route: Route, tol: &AuditTolerances) -> Option<RouteAudit> {
    let vals = table.values(route);
    let entries = vals.iter().filter(|v| v.is_finite()).count();
    if entries == 0 {
        return None;
    }
    let lat = &table.lattice;
    let d = lat.dim;
    let scale = vals.iter().filter(|v| v.is_finite()).fold(1.0f64, |m, v| m.max(v.abs()));
    let ctol = tol.convexity_rel * scale;
    let mut convexity_violations = Vec::new();
    let mut worst = f64::INFINITY;
    let mut bound_violations = Vec::new();
    let mut min_value = f64::INFINITY;
    let mut argmin = vec![0.0; d];
    let q = table.provenance.q;
    let l1 = table.provenance.lambda1;
    let lower = table.hstar.as_ref().map(|h| h.lo);
    for i in 0..lat.len() {
        let f = vals[i];
        if !f.is_finite() {
            continue;
        }
        let c = lat.coords(i);
        let mut bad = false;
        for k in 0..d {
            let (Some(a), Some(b)) = (lat.neighbor(i, &c, k, -1), lat.neighbor(i, &c, k, 1)) else {
                continue;
            };
            if !vals[a].is_finite() || !vals[b].is_finite() {
                continue;
            }
            let sd = vals[a] - 2.0 * f + vals[b];
            worst = worst.min(sd);
            if sd < -ctol {
                bad = true;
            }
        }
        if bad {
            convexity_violations.push(i);
        }
        let p = table.p(i);
        let upper = l1 * (norm(&p).powf(q) + 1.0);
        if f > upper + tol.bound || lower.is_some_and(|lo| f < lo - tol.bound) {
            bound_violations.push(i);
        }
        if f < min_value {
            min_value = f;
            argmin = p;
        }
    }
    let (hstar_discrepancy, hstar_ok) = match &table.hstar {
        Some(h) => {
            let disc = (min_value - h.value).abs();
            (Some(disc), disc <= h.width + tol.hstar)
        }
        None => (None, true),
    };
    Some(RouteAudit {
        route,
        entries,
        convexity_violations,
        worst_second_difference: if worst.is_finite() { worst } else { 0.0 },
        bound_violations,
        min_value,
        argmin,
        hstar_discrepancy,
        hstar_ok,
    })
}

/// Report-only audit of a populated table.
pub fn audit_effective_table(table: &EffectiveTable, tol: &AuditTolerances) -> AuditReport {
    let routes: Vec<RouteAudit> = [Route::Metric, Route::Cell]
        .into_iter()
        .filter_map(|r| audit_route(table, r, tol))
        .collect();
    let mut route_disagreement = Vec::with_capacity(table.len());
    let mut route_violations = Vec::new();
    let mut max_dis = 0.0f64;
    for i in 0..table.len() {
        let (m, c) = (table.metric[i], table.cell[i]);
        if m.is_finite() && c.is_finite() {
            let dis = (m - c).abs();
            max_dis = max_dis.max(dis);
            if dis > tol.route_abs + tol.route_rel * c.abs() {
                route_violations.push(i);
            }
            route_disagreement.push(dis);
        } else {
            route_disagreement.push(f64::NAN);
        }
    }
    let clean = routes.iter().all(|r| r.clean()) && route_violations.is_empty();
    AuditReport {
        tolerances: *tol,
        routes,
        route_disagreement,
        max_route_disagreement: max_dis,
        route_violations,
        clean,
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MbarAudit {
    /// `(level index, direction index)` where `m̄` decreases in `μ`.
    pub monotonicity_violations: Vec<(usize, usize)>,
    /// `(level index, direction index)` where `m̄` lies below the chord of
    /// its two neighbors in `μ`.
    pub concavity_violations: Vec<(usize, usize)>,
}

pub fn audit_mbar(table: &MbarTable, tol: f64) -> MbarAudit {
    let mut out = MbarAudit::default();
    let n = table.mus.len();
    for k in 0..table.dirs.len() {
        for j in 1..n {
            if table.value(j, k) < table.value(j - 1, k) - tol {
                out.monotonicity_violations.push((j, k));
            }
            if j + 1 < n {
                let (m0, m1, m2) = (table.mus[j - 1], table.mus[j], table.mus[j + 1]);
                let w = (m1 - m0) / (m2 - m0);
                let chord = (1.0 - w) * table.value(j - 1, k) + w * table.value(j + 1, k);
                if table.value(j, k) < chord - tol {
                    out.concavity_violations.push((j, k));
                }
            }
        }
    }
    out
}

/// Pairs `ν < μ` (as level indices) and directions violating
/// `m̄_μ(e) >= m̄_ν(e) + c μ^{-(q-1)/q} (μ - ν) - tol`.
pub fn strict_growth_violations(table: &MbarTable, c: f64, q: f64, tol: f64) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for j in 0..table.mus.len() {
        let mu = table.mus[j];
        if mu <= 0.0 {
            continue;
        }
        let rate = c * mu.powf(-(q - 1.0) / q);
        for i in 0..j {
            let nu = table.mus[i];
            for k in 0..table.dirs.len() {
                if table.value(j, k) < table.value(i, k) + rate * (mu - nu) - tol {
                    out.push((i, j, k));
                }
            }
        }
    }
    out
}
