//! Acceptance suite: one PASS/FAIL line per criterion. Pass criterion ids
//! (`c1` .. `c11`) as arguments to run a subset.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::{constant, diffusion, oracle_hbar_1d, potential_1d, shot_noise};
use hjlab::convexanalysis::*;
use hjlab::environment::{sample_environment, CoefficientSet, EnvSpec, ModelKind};
use hjlab::hjsolver::{solve_discounted, solve_metric, tilde_m, Boundary, MetricField, SolverGrid, SolverOptions};
use hjlab::homogenize::*;
use hjlab::lattice::Lattice;
use hjlab::ldp::*;
use hjlab::numerics::{keyed_rng, norm, sphere_directions};
use rand::Rng;

// C1
const C1_REL: f64 = 0.05;
const C1_P_MAX: f64 = 2.0;
const C1_STEP: f64 = 0.25;
const C1_H: f64 = 0.05;
const C1_RADII: [f64; 4] = [8.0, 16.0, 32.0, 64.0];
/// Levels are uniform in `√μ` with this spacing, plus a first level near 0.
const C1_SQRT_MU_STEP: f64 = 0.0625;
const C1_FIRST_MU: f64 = 1e-6;
/// Absolute floor of the tolerance, used at `p = 0` where `|p|² = 0`.
const C1_ABS_FLOOR: f64 = 1e-3;
// C2
const C2_H: f64 = 0.1;
const C2_BOX: f64 = 32.0;
const C2_SUP_IN_H: f64 = 2.0;
// C3
const C3_REL: f64 = 0.03;
const C3_P_MAX: f64 = 3.0;
// C4
const C4_CONVEXITY_REL: f64 = 1e-3;
const C4_STEP: f64 = 0.25;
const C4_HALF_NODES: usize = 4;
const C4_SEED: u64 = 4;
/// The `c + c'ε` fit leaves an O(ε²) bias; at [0.1, 0.05, 0.025] it dips
/// second differences to -2.6e-3.
const C4_EPS: [f64; 3] = [0.05, 0.025, 0.0125];
// C5
const C5_REL: f64 = 0.05;
const C5_MUS: [f64; 3] = [0.5, 1.0, 2.0];
const C5_DIRECTIONS: usize = 8;
const C5_PERIOD: f64 = 64.0;
const C5_SEEDS: [u64; 2] = [51, 52];
// C6
const C6_SAMPLES: usize = 200;
const C6_H: f64 = 0.1;
const C6_BOX: f64 = 12.0;
const C6_LIP_FACTOR: f64 = 3.0;
// C7
const C7_SAMPLES: usize = 100;
const C7_EPS: f64 = 0.1;
const C7_LIP_FACTOR: f64 = 3.0;
// C8
const C8_TABLES: usize = 50;
const C8_IDEMPOTENT_REL: f64 = 1e-12;
const C8_REL: f64 = 0.05;
// C9
const C9_REL: f64 = 0.15;
const C9_PATHS: usize = 1_000_000;
const C9_T: f64 = 8.0;
const C9_TABLE_STEP: f64 = 0.125;
// C10
const C10_PROBES: usize = 10;
const C10_T: f64 = 2.0;
const C10_PATHS: usize = 20_000;
const C10_DT: f64 = 0.005;
const C10_SE: f64 = 3.0;
const C10_RATIO: f64 = 1.8;
// C11
const C11_GAP: f64 = 1e-3;
const C11_TIMES: [f64; 3] = [4.0, 8.0, 16.0];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

type Criterion = fn() -> Outcome;

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, &str, Criterion); 11] = [
        ("c1", "constant-coefficient exactness", c1),
        ("c2", "eikonal cone oracle", c2),
        ("c3", "1D periodic oracle", c3),
        ("c4", "structural audit", c4),
        ("c5", "shape stability", c5),
        ("c6", "metric-problem properties", c6),
        ("c7", "cell-problem properties", c7),
        ("c8", "duality round trip", c8),
        ("c9", "Gaussian LDP closed form", c9),
        ("c10", "Feynman-Kac consistency", c10),
        ("c11", "survival asymptotic", c11),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|x| x == id) {
            continue;
        }
        ran += 1;
        let t0 = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if out.pass { "PASS" } else { "FAIL" };
        if !out.pass {
            failed += 1;
        }
        println!("{tag} {} {name}: {} [{:.1} s]", id.to_uppercase(), out.detail, t0.elapsed().as_secs_f64());
    }
    println!("acceptance: {}/{ran} passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn metric_opts(h: f64) -> MetricRouteOptions {
    MetricRouteOptions {
        h,
        ..MetricRouteOptions::default()
    }
}

fn lattice_momenta(dim: usize, step: f64, p_max: f64) -> Vec<Vec<f64>> {
    let n = (p_max / step).round() as i64;
    let mut out = Vec::new();
    let mut idx = vec![-n; dim];
    loop {
        let p: Vec<f64> = idx.iter().map(|i| *i as f64 * step).collect();
        if p.iter().map(|x| x * x).sum::<f64>() <= p_max * p_max + 1e-12 {
            out.push(p);
        }
        let mut k = 0;
        loop {
            if k == dim {
                return out;
            }
            idx[k] += 1;
            if idx[k] <= n {
                break;
            }
            idx[k] = -n;
            k += 1;
        }
    }
}

fn c1() -> Outcome {
    let cs = constant(2, 2.0, 1.0, 0.0);
    let momenta = lattice_momenta(2, C1_STEP, C1_P_MAX);
    let mut dirs = sphere_directions(2, 64);
    for p in &momenta {
        let n = p[0].hypot(p[1]);
        if n > 0.0 {
            let e = vec![p[0] / n, p[1] / n];
            if !dirs.iter().any(|d| (d[0] - e[0]).abs() + (d[1] - e[1]).abs() < 1e-12) {
                dirs.push(e);
            }
        }
    }
    let top = (C1_P_MAX * C1_P_MAX).sqrt() + 2.0 * C1_SQRT_MU_STEP;
    let mut mus = vec![C1_FIRST_MU];
    let mut k = 1;
    while (k as f64) * C1_SQRT_MU_STEP <= top {
        let s = k as f64 * C1_SQRT_MU_STEP;
        mus.push(s * s);
        k += 1;
    }
    let table = mbar_table(&cs, &mus, &dirs, &C1_RADII, &metric_opts(C1_H)).unwrap();
    let eps = [0.1, 0.05];
    let mut worst_metric = 0.0f64;
    let mut worst_cell = 0.0f64;
    let mut bad = Vec::new();
    for p in &momenta {
        let exact = p[0] * p[0] + p[1] * p[1];
        let tol = (C1_REL * exact).max(C1_ABS_FLOOR);
        let metric = estimate_hbar_metric(&table, p).unwrap();
        let cell = estimate_hbar_cell(&cs, p, &eps, &CellRouteOptions::default()).unwrap().limit;
        worst_metric = worst_metric.max((metric - exact).abs() / tol);
        worst_cell = worst_cell.max((cell - exact).abs() / tol);
        if (metric - exact).abs() > tol || (cell - exact).abs() > tol {
            bad.push(format!("p={p:?} metric {metric:.5} cell {cell:.5} exact {exact}"));
        }
    }
    outcome(
        bad.is_empty(),
        format!(
            "{} momenta, {} levels, {} directions; worst error/tolerance metric {worst_metric:.3} cell {worst_cell:.3}{}",
            momenta.len(),
            mus.len(),
            dirs.len(),
            bad.first().map(|b| format!("; first failure {b}")).unwrap_or_default()
        ),
    )
}

fn c2() -> Outcome {
    let cs = constant(2, 1.0, 1.0, 0.0);
    let grid = SolverGrid::centered_box(&[0.0, 0.0], C2_BOX, C2_H, Boundary::DirichletCone).unwrap();
    let f = solve_metric(&cs, 1.0, &[0.0, 0.0], &grid, &SolverOptions::default()).unwrap();
    let mut sup = 0.0f64;
    let mut at = [0.0; 2];
    for i in 0..f.lattice.len() {
        let y = f.lattice.point(i);
        let r = y[0].hypot(y[1]);
        if r <= C2_BOX {
            let e = (f.values[i] - (r - 1.0).max(0.0)).abs();
            if e > sup {
                sup = e;
                at = [y[0], y[1]];
            }
        }
    }
    outcome(
        sup <= C2_SUP_IN_H * C2_H,
        format!("sup error {sup:.4} at {at:?} (bound {:.2})", C2_SUP_IN_H * C2_H),
    )
}

fn c3() -> Outcome {
    let period = 4.0;
    let v = |x: f64| 0.5 + 0.4 * (2.0 * std::f64::consts::PI * x / period).cos();
    let vmin = 0.1;
    let cs: CoefficientSet = potential_1d(period, 0.05, 1.0, 1.0, v);
    let top = C3_P_MAX + 0.5;
    let mus: Vec<f64> = (0..).map(|i| -vmin + 1e-9 + 0.05 * i as f64).take_while(|m| *m <= top).collect();
    let dirs = vec![vec![1.0], vec![-1.0]];
    let table = mbar_table(&cs, &mus, &dirs, &[8.0, 16.0, 32.0], &metric_opts(0.05)).unwrap();
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    let n = (C3_P_MAX / 0.25).round() as i64;
    for i in -n..=n {
        let p = i as f64 * 0.25;
        let exact = oracle_hbar_1d(v, 1.0, 1.0, period, p);
        let tol = C3_REL * exact.abs().max(vmin);
        let metric = estimate_hbar_metric(&table, &[p]).unwrap();
        let cell = estimate_hbar_cell(&cs, &[p], &[0.1, 0.05, 0.025], &CellRouteOptions::default()).unwrap().limit;
        worst = worst.max((metric - exact).abs() / tol).max((cell - exact).abs() / tol);
        if (metric - exact).abs() > tol || (cell - exact).abs() > tol {
            bad.push(format!("p {p}: metric {metric:.5} cell {cell:.5} oracle {exact:.5}"));
        }
    }
    outcome(
        bad.is_empty(),
        format!(
            "{} momenta in [-{C3_P_MAX}, {C3_P_MAX}]; worst error/tolerance {worst:.3}{}",
            2 * n + 1,
            bad.first().map(|b| format!("; first failure {b}")).unwrap_or_default()
        ),
    )
}

/// First-order shot noise: `H = |p|² - V` with nonnegative bumps of height 1
/// and radius 1, so `min V = 0` wherever no bump reaches.
fn first_order_shot_noise(period: f64, h: f64, seed: u64) -> CoefficientSet {
    let mut spec = EnvSpec::constant_power(2, 2.0, 1.0, 0.0);
    spec.model = ModelKind::ShotNoise;
    spec.period = period;
    spec.spacing = h;
    spec.params.bump_radius = 1.0;
    spec.params.bump_amplitude = 1.0;
    spec.params.intensity = 0.2;
    spec.lambda1 = 4.0;
    sample_environment(&spec, seed).unwrap()
}

fn max_v(cs: &CoefficientSet) -> f64 {
    cs.extremes().v_max
}

fn first_failure(bad: &[String]) -> String {
    bad.first().map(|b| format!("; first failure {b}")).unwrap_or_default()
}

fn c4() -> Outcome {
    let cs = first_order_shot_noise(8.0, 0.125, C4_SEED);
    let hopts = HstarOptions::new(2, 8.0, 0.1).unwrap();
    let hstar = estimate_hstar(&cs, (-1.5, 0.5), &hopts).unwrap();
    let mut table = EffectiveTable::new(&cs, C4_HALF_NODES, C4_STEP).unwrap();
    // Metric levels start at the top of the bisection bracket and are
    // uniform in the square root of the excess.
    let p_max = C4_STEP * C4_HALF_NODES as f64 * 2f64.sqrt();
    let mut mus = Vec::new();
    let mut k = 0;
    loop {
        let s = 0.0625 * k as f64;
        mus.push(hstar.hi + s * s);
        if s > p_max + 0.15 {
            break;
        }
        k += 1;
    }
    let mbar = mbar_table(&cs, &mus, &sphere_directions(2, 64), &[4.0, 8.0, 16.0], &metric_opts(0.1)).unwrap();
    table.fill_metric(&mbar).unwrap();
    table.fill_cell(&cs, &C4_EPS, &CellRouteOptions::default()).unwrap();
    table.hstar = Some(hstar.clone());
    let tol = AuditTolerances {
        convexity_rel: C4_CONVEXITY_REL,
        ..AuditTolerances::default()
    };
    let rep = audit_effective_table(&table, &tol);
    let parts: Vec<String> = rep
        .routes
        .iter()
        .map(|r| {
            format!(
                "{:?}: worst second difference {:.2e}, {} convexity / {} bound violations, min {:.4} vs H*_ {:.4}",
                r.route,
                r.worst_second_difference,
                r.convexity_violations.len(),
                r.bound_violations.len(),
                r.min_value,
                hstar.value
            )
        })
        .collect();
    let pass = rep.routes.len() == 2 && rep.routes.iter().all(|r| r.clean());
    outcome(
        pass,
        format!("{} entries, bracket width {:.1e}; {}", table.len(), hstar.width, parts.join("; ")),
    )
}

fn c5() -> Outcome {
    let dirs = sphere_directions(2, C5_DIRECTIONS);
    let mut tables = Vec::new();
    for seed in C5_SEEDS {
        let cs = first_order_shot_noise(C5_PERIOD, 0.1, seed);
        let t = mbar_table(&cs, &C5_MUS, &dirs, &[8.0, 16.0, 32.0, 64.0], &metric_opts(0.1)).unwrap();
        tables.push(t);
    }
    let mut worst_shape = 0.0f64;
    let mut worst_seed = 0.0f64;
    let mut bad = Vec::new();
    for (j, mu) in C5_MUS.iter().enumerate() {
        for (k, e) in dirs.iter().enumerate() {
            for (s, t) in tables.iter().enumerate() {
                let est = &t.estimates[j][k];
                let (a, b) = (est.values[2], est.values[3]);
                let rel = (a - b).abs() / b.abs();
                worst_shape = worst_shape.max(rel);
                if rel > C5_REL {
                    bad.push(format!("seed {} mu {mu} e {e:?}: m/R {a:.4} vs {b:.4}", C5_SEEDS[s]));
                }
            }
            let (x, y) = (tables[0].estimates[j][k].limit, tables[1].estimates[j][k].limit);
            let rel = (x - y).abs() / x.abs().max(y.abs());
            worst_seed = worst_seed.max(rel);
            if rel > C5_REL {
                bad.push(format!("mu {mu} e {e:?}: seeds give {x:.4} and {y:.4}"));
            }
        }
    }
    outcome(
        bad.is_empty(),
        format!(
            "{} directions x {} levels x {} seeds; worst ladder change {:.2}%, worst seed disagreement {:.2}%{}",
            dirs.len(),
            C5_MUS.len(),
            C5_SEEDS.len(),
            100.0 * worst_shape,
            100.0 * worst_seed,
            first_failure(&bad)
        ),
    )
}

fn metric_field(cs: &CoefficientSet, mu: f64, z: &[f64]) -> MetricField {
    let grid = SolverGrid::centered_box(z, C6_BOX, C6_H, Boundary::DirichletCone).unwrap();
    solve_metric(cs, mu, z, &grid, &SolverOptions::default()).unwrap()
}

/// Random point of the `h` lattice inside the box `|y_k| <= half`.
fn lattice_point(rng: &mut impl Rng, h: f64, half: f64) -> Vec<f64> {
    let n = (half / h).round() as i64;
    (0..2).map(|_| rng.random_range(-n..=n) as f64 * h).collect()
}

fn c6() -> Outcome {
    let cs = first_order_shot_noise(8.0, C6_H, 6);
    let vmax = max_v(&cs);
    let mut rng = keyed_rng(6, "acceptance/c6", 0);
    let mut bad = Vec::new();

    // Subadditivity of m̃ = sup over the unit ball of m, with b, c from a
    // pool of poles.
    let mu = 1.0;
    let lip = (mu + vmax).sqrt();
    let sub_tol = C6_LIP_FACTOR * C6_H * lip;
    let mut poles = vec![vec![0.0, 0.0]];
    while poles.len() < 8 {
        let z = lattice_point(&mut rng, C6_H, 4.0);
        if !poles.contains(&z) {
            poles.push(z);
        }
    }
    let fields: Vec<MetricField> = poles.iter().map(|z| metric_field(&cs, mu, z)).collect();
    let mut worst_sub = f64::NEG_INFINITY;
    for _ in 0..C6_SAMPLES {
        let a = lattice_point(&mut rng, C6_H, 6.0);
        let b = rng.random_range(0..poles.len());
        let mut c = rng.random_range(0..poles.len() - 1);
        if c >= b {
            c += 1;
        }
        let ac = tilde_m(&fields[c], &a).unwrap();
        let ab = tilde_m(&fields[b], &a).unwrap();
        let bc = tilde_m(&fields[c], &poles[b]).unwrap();
        let excess = ac - ab - bc;
        worst_sub = worst_sub.max(excess);
        if excess > sub_tol {
            bad.push(format!("subadditivity at {a:?} via {:?} to {:?}: excess {excess:.4}", poles[b], poles[c]));
        }
    }

    // Concavity in the level, on a grid where λ μ_i + (1 - λ) μ_j is a level.
    let levels: Vec<f64> = (0..=16).map(|i| 0.25 + 0.125 * i as f64).collect();
    let z = [0.0, 0.0];
    let level_fields: Vec<MetricField> = levels.iter().map(|m| metric_field(&cs, *m, &z)).collect();
    let top = *levels.last().unwrap();
    let cav_tol = C6_LIP_FACTOR * C6_H * (top + vmax).sqrt();
    let mut worst_cav = f64::NEG_INFINITY;
    for _ in 0..C6_SAMPLES {
        let i = rng.random_range(0..levels.len());
        let gaps: Vec<i64> = [-16i64, -12, -8, -4, 4, 8, 12, 16]
            .into_iter()
            .filter(|g| (0..levels.len() as i64).contains(&(i as i64 + g)))
            .collect();
        let j = (i as i64 + gaps[rng.random_range(0..gaps.len())]) as usize;
        let quarters = rng.random_range(1..=3i64);
        let lambda = quarters as f64 / 4.0;
        let mid = (i as i64 * quarters + j as i64 * (4 - quarters)) / 4;
        let y = lattice_point(&mut rng, C6_H, 6.0);
        let f = |k: usize| level_fields[k].value_at(&y).unwrap();
        let excess = lambda * f(i) + (1.0 - lambda) * f(j) - f(mid as usize);
        worst_cav = worst_cav.max(excess);
        if excess > cav_tol {
            bad.push(format!(
                "concavity at {y:?}, levels {} {} λ {lambda}: excess {excess:.4}",
                levels[i], levels[j]
            ));
        }
    }

    // Cone bound: μ >= Λ₁(β^q + 1) forces m >= β(|y - z| - 1).
    let l1 = cs.spec.lambda1;
    let mut cone_violations = 0;
    let mut cone_nodes = 0;
    for m in [5.0, 8.0, 12.0] {
        let beta = (m / l1 - 1.0).sqrt();
        let f = metric_field(&cs, m, &z);
        for i in 0..f.lattice.len() {
            let y = f.lattice.point(i);
            cone_nodes += 1;
            if f.values[i] < beta * (norm(&y[..2]) - 1.0) - beta * C6_H {
                cone_violations += 1;
            }
        }
    }
    if cone_violations > 0 {
        bad.push(format!("{cone_violations} cone violations"));
    }
    outcome(
        bad.is_empty(),
        format!(
            "subadditivity worst excess {worst_sub:.2e} (tol {sub_tol:.3}); concavity worst excess {worst_cav:.2e} (tol {cav_tol:.3}); cone violations {cone_violations}/{cone_nodes}{}",
            first_failure(&bad)
        ),
    )
}

fn c7() -> Outcome {
    let cs = shot_noise(2, 8.0, 0.25, 7);
    let h = cs.spec.spacing;
    let grid = SolverGrid::env_torus(&cs).unwrap();
    let half = 4i64;
    let step = 0.25;
    let side = (2 * half + 1) as usize;
    let idx = |a: i64, b: i64| ((a + half) as usize) * side + (b + half) as usize;
    let mut fields = Vec::with_capacity(side * side);
    for a in -half..=half {
        for b in -half..=half {
            let p = [a as f64 * step, b as f64 * step];
            let f = solve_discounted(&cs, C7_EPS, &p, &grid, &SolverOptions::default()).unwrap();
            fields.push(f.values.iter().map(|v| C7_EPS * v).collect::<Vec<f64>>());
        }
    }
    let mut bad = Vec::new();
    // Lower bound, exact.
    let l1 = cs.spec.lambda1;
    let mut lower_violations = 0;
    for a in -half..=half {
        for b in -half..=half {
            let p = [a as f64 * step, b as f64 * step];
            let floor = -l1 * (norm(&p).powf(cs.spec.q) + 1.0);
            lower_violations += fields[idx(a, b)].iter().filter(|v| **v < floor).count();
        }
    }
    if lower_violations > 0 {
        bad.push(format!("{lower_violations} nodes below the lower bound"));
    }
    // Lipschitz constant of p -> ε v^ε, measured between lattice neighbours.
    let mut lip = 0.0f64;
    for a in -half..=half {
        for b in -half..=half {
            for (da, db) in [(1, 0), (0, 1)] {
                if a + da > half || b + db > half {
                    continue;
                }
                let (u, w) = (&fields[idx(a, b)], &fields[idx(a + da, b + db)]);
                let d = u.iter().zip(w).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
                lip = lip.max(d / step);
            }
        }
    }
    let tol = C7_LIP_FACTOR * h * lip;
    let mut rng = keyed_rng(7, "acceptance/c7", 0);
    let mut worst = f64::NEG_INFINITY;
    let mut n = 0;
    while n < C7_SAMPLES {
        let quarters = rng.random_range(1..=3i64);
        let unit = if quarters == 2 { 2 } else { 4 };
        let p1 = [rng.random_range(-half..=half), rng.random_range(-half..=half)];
        let offs: Vec<i64> = (-2 * half..=2 * half).filter(|o| o % unit == 0).collect();
        let p2 = [
            p1[0] + offs[rng.random_range(0..offs.len())],
            p1[1] + offs[rng.random_range(0..offs.len())],
        ];
        if p2 == p1 || p2.iter().any(|c| c.abs() > half) {
            continue;
        }
        n += 1;
        let mid = [
            (quarters * p1[0] + (4 - quarters) * p2[0]) / 4,
            (quarters * p1[1] + (4 - quarters) * p2[1]) / 4,
        ];
        let lambda = quarters as f64 / 4.0;
        let (f1, f2, fm) = (&fields[idx(p1[0], p1[1])], &fields[idx(p2[0], p2[1])], &fields[idx(mid[0], mid[1])]);
        for i in 0..fm.len() {
            let excess = lambda * f1[i] + (1.0 - lambda) * f2[i] - fm[i];
            worst = worst.max(excess);
            if excess > tol {
                bad.push(format!("concavity between {p1:?} and {p2:?} at node {i}: excess {excess:.2e}"));
                break;
            }
        }
    }
    outcome(
        bad.is_empty(),
        format!(
            "{} momenta, {C7_SAMPLES} triples; worst concavity excess {worst:.2e} (tol {tol:.2e}, Lip {lip:.3}); lower-bound violations {lower_violations}{}",
            fields.len(),
            first_failure(&bad)
        ),
    )
}

fn random_convex_table(rng: &mut impl Rng, dim: usize) -> ConvexTable {
    let (lo, hi) = match dim {
        1 => (5, 40),
        2 => (4, 12),
        _ => (3, 6),
    };
    let shape: Vec<usize> = (0..dim).map(|_| rng.random_range(lo..=hi)).collect();
    let step: Vec<f64> = (0..dim).map(|_| rng.random_range(0.1..0.5)).collect();
    let origin: Vec<f64> = (0..dim).map(|k| -step[k] * rng.random_range(0.0..shape[k] as f64)).collect();
    let lat = Lattice::new(&origin, &step, &shape, false).unwrap();
    let pieces: Vec<(Vec<f64>, f64)> = (0..rng.random_range(1..6))
        .map(|_| ((0..dim).map(|_| rng.random_range(-3.0..3.0)).collect(), rng.random_range(-1.0..1.0)))
        .collect();
    let w = rng.random_range(0.0..2.0);
    ConvexTable::from_fn(lat, |p| {
        let aff = pieces
            .iter()
            .map(|(a, c)| a.iter().zip(p).map(|(x, y)| x * y).sum::<f64>() + c)
            .fold(f64::NEG_INFINITY, f64::max);
        aff + w * p.iter().map(|x| x * x).sum::<f64>()
    })
    .unwrap()
}

fn c8() -> Outcome {
    let mut rng = keyed_rng(8, "acceptance/c8", 0);
    let mut bad = Vec::new();
    let mut worst_idem = 0.0f64;
    for n in 0..C8_TABLES {
        let f = random_convex_table(&mut rng, 1 + n % 3);
        let z = dual_lattice(&f).unwrap();
        let fast = legendre_transform(&f, &z).unwrap();
        let brute = legendre_transform_brute(&f, &z).unwrap();
        let mismatches = fast.values.iter().zip(&brute.values).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
        if mismatches > 0 {
            bad.push(format!("table {n}: {mismatches} entries differ from the brute-force conjugate"));
        }
        // Idempotence holds for a fixed pair of lattices.
        let g = biconjugate_on(&f, &z).unwrap();
        let gg = biconjugate_on(&g, &z).unwrap();
        let scale = 1.0 + g.values.iter().filter(|v| v.is_finite()).fold(0.0f64, |m, v| m.max(v.abs()));
        let idem = g
            .values
            .iter()
            .zip(&gg.values)
            .map(|(a, b)| if a == b { 0.0 } else { (a - b).abs() })
            .fold(0.0f64, f64::max)
            / scale;
        worst_idem = worst_idem.max(idem);
        if !(idem <= C8_IDEMPOTENT_REL) {
            bad.push(format!("table {n}: biconjugate moves by {idem:.2e}"));
        }
    }

    // Both routes to L̄ on H = |p|², where L̄(z) = |z|²/4.
    let cs = constant(2, 2.0, 1.0, 0.0);
    let mus: Vec<f64> = (0..=24).map(|k| (0.05 * k as f64).powi(2)).collect();
    let dirs = sphere_directions(2, 32);
    let mbar = mbar_table(&cs, &mus, &dirs, &[4.0, 8.0, 16.0], &metric_opts(0.1)).unwrap();
    let mut table = EffectiveTable::new(&cs, 12, 0.125).unwrap();
    table.fill_cell(&cs, &[0.1], &CellRouteOptions::default()).unwrap();
    let hbar = ConvexTable::from_effective(&table, Route::Cell).unwrap();
    let l = legendre_transform(&hbar, &dual_lattice(&hbar).unwrap()).unwrap();
    let mut worst_rel = 0.0f64;
    for r in [1.0, 1.5, 2.0] {
        for e in dirs.iter().step_by(4) {
            let z: Vec<f64> = e.iter().map(|x| r * x).collect();
            let a = lagrangian_from_mbar(&mbar, 0.0, &z).unwrap().value;
            let b = l.interpolate(&z).unwrap();
            let rel = (a - b).abs() / b.abs();
            worst_rel = worst_rel.max(rel);
            if rel > C8_REL {
                bad.push(format!("z {z:?}: from m̄ {a:.4}, from the table {b:.4}"));
            }
        }
    }
    outcome(
        bad.is_empty(),
        format!(
            "{C8_TABLES} tables bit-exact; worst biconjugate drift {worst_idem:.1e}; worst L̄ route disagreement {:.2}%{}",
            100.0 * worst_rel,
            first_failure(&bad)
        ),
    )
}

fn c9() -> Outcome {
    let r = 1.0;
    let exact = r * r / 4.0;
    let cs = diffusion(2, 2f64.sqrt(), 0.0, &[0.0, 0.0]);
    let k = TargetSet::BallComplement {
        center: vec![0.0, 0.0],
        radius: r,
    };
    let opts = PathOptions {
        // Brownian paths without potential are exact at any step.
        dt: 0.5,
        n_paths: C9_PATHS,
        seed: 9,
        tilt: Some(Tilt::radial(2, r / 2f64.sqrt(), 16)),
        batches: 100,
    };
    let ens = simulate_paths(&cs, &[0.0, 0.0], C9_T, &opts).unwrap();
    let rate = empirical_rate(&ens, &k, &[0.0, 0.0]).unwrap();
    let empirical = rate.empirical.unwrap_or(f64::NAN);
    let mc_ok = (empirical - exact).abs() <= C9_REL * exact;

    let n = (2.0 / C9_TABLE_STEP).round() as usize;
    let mut table = EffectiveTable::new(&cs, n, C9_TABLE_STEP).unwrap();
    table.fill_cell(&cs, &[0.1], &CellRouteOptions::default()).unwrap();
    let hbar = ConvexTable::from_effective(&table, Route::Cell).unwrap();
    let hbar0 = hbar.interpolate(&[0.0, 0.0]).unwrap();
    let l = legendre_transform(&hbar, &dual_lattice(&hbar).unwrap()).unwrap();
    let prediction = ldp_prediction(&l, hbar0, &k, &[0.0, 0.0]).unwrap();
    // Conjugating |p|² sampled at step s is exact up to d s²/4.
    let interp = 2.0 * C9_TABLE_STEP * C9_TABLE_STEP / 4.0;
    let pred_ok = (prediction - exact).abs() <= interp;
    outcome(
        mc_ok && pred_ok,
        format!(
            "empirical {empirical:.4} ± {:.4} ({} hits), prediction {prediction:.4} (tol {interp:.4}), exact {exact}",
            rate.stderr, rate.hits
        ),
    )
}

fn c10() -> Outcome {
    let mut bad = Vec::new();
    let cs = shot_noise(2, 8.0, 0.125, 10);
    let grid = SolverGrid::env_torus(&cs).unwrap();
    let pde = pde_partition_function(&cs, C10_T, &grid, &PdeOptions::default()).unwrap();
    let mut rng = keyed_rng(10, "acceptance/c10", 0);
    let mut worst = 0.0f64;
    for i in 0..C10_PROBES {
        let x: Vec<f64> = (0..2).map(|_| rng.random_range(0.0..8.0)).collect();
        let s_pde = pde.value_at(pde.snapshots.len() - 1, &x).unwrap();
        let opts = PathOptions {
            dt: C10_DT,
            n_paths: C10_PATHS,
            seed: 100 + i as u64,
            tilt: None,
            batches: 100,
        };
        let ens = simulate_paths(&cs, &x, C10_T, &opts).unwrap();
        let (s_mc, se) = partition_function(&ens).unwrap();
        let z = (s_mc - s_pde).abs() / se;
        worst = worst.max(z);
        if z > C10_SE {
            bad.push(format!("x {x:.3?}: MC {s_mc:.5} ± {se:.5}, PDE {s_pde:.5}"));
        }
    }

    // Hopf–Cole residual under halving of (h, dt).
    let coarse = shot_noise(2, 8.0, 0.25, 10);
    let fine = shot_noise(2, 8.0, 0.125, 10);
    let probe = pde_partition_function(&coarse, 0.01, &SolverGrid::env_torus(&coarse).unwrap(), &PdeOptions::default())
        .unwrap();
    let dt0 = 0.4 * probe.dt_limit;
    let residual = |cs: &CoefficientSet, dt: f64| {
        let opts = PdeOptions {
            dt: Some(dt),
            record_times: vec![],
            record_every: Some(1),
        };
        let f = pde_partition_function(cs, C10_T, &SolverGrid::env_torus(cs).unwrap(), &opts).unwrap();
        hopf_cole_residual(&f, cs, 1.0).unwrap()
    };
    let r0 = residual(&coarse, dt0);
    let r1 = residual(&fine, dt0 / 2.0);
    let ratio = r0.sup / r1.sup;
    if !(ratio >= C10_RATIO) {
        bad.push(format!("residual ratio {ratio:.3}"));
    }
    outcome(
        bad.is_empty(),
        format!(
            "worst |MC - PDE|/se {worst:.2} over {C10_PROBES} probes; sup residual {:.4} -> {:.4} (ratio {ratio:.2}, mean ratio {:.2}){}",
            r0.sup,
            r1.sup,
            r0.mean / r1.mean,
            first_failure(&bad)
        ),
    )
}

fn c11() -> Outcome {
    let c = 0.5;
    let cs = diffusion(2, 2f64.sqrt(), c, &[0.0, 0.0]);
    let flat = survival_rate_check(&cs, &[0.0, 0.0], &[16.0], -c, None, &PdeOptions::default()).unwrap();
    let flat_gap = flat.rows[0].gap;

    let cs = shot_noise(2, 8.0, 0.125, 11);
    let hbar0 = estimate_hbar_cell(&cs, &[0.0, 0.0], &[0.1, 0.05, 0.025], &CellRouteOptions::default())
        .unwrap()
        .limit;
    let rep = survival_rate_check(&cs, &[0.0, 0.0], &C11_TIMES, hbar0, None, &PdeOptions::default()).unwrap();
    let gaps: Vec<String> = rep.rows.iter().map(|r| format!("{:.4}", r.gap)).collect();
    outcome(
        flat_gap <= C11_GAP && rep.gap_decreasing,
        format!(
            "constant gap {flat_gap:.1e} at t = 16; random H̄(0) {hbar0:.4}, gaps at t = {C11_TIMES:?}: {}",
            gaps.join(", ")
        ),
    )
}
