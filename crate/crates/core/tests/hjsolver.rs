use hjlab::environment::{sample_environment, CoefficientSet, EnvSpec, HamiltonianKind};
use hjlab::hjsolver::*;
use hjlab::Error;

fn constant(dim: usize, q: f64, a: f64, v: f64) -> CoefficientSet {
    sample_environment(&EnvSpec::constant_power(dim, q, a, v), 0).unwrap()
}

fn diffusive(dim: usize, sigma: f64, kind: HamiltonianKind) -> CoefficientSet {
    let mut spec = EnvSpec::constant_power(dim, 2.0, 1.0, 0.0);
    spec.hamiltonian = kind;
    spec.params.sigma_scale = sigma;
    spec.lambda2 = sigma;
    spec.lambda1 = 2.0;
    sample_environment(&spec, 0).unwrap()
}

fn radius(field: &MetricField, i: usize) -> f64 {
    let x = field.lattice.point(i);
    (0..field.lattice.dim).map(|k| x[k] * x[k]).sum::<f64>().sqrt()
}

#[test]
fn eikonal_cone_for_the_norm() {
    let cs = constant(2, 1.0, 1.0, 0.0);
    let h = 0.1;
    let grid = SolverGrid::centered_box(&[0.0, 0.0], 6.0, h, Boundary::DirichletCone).unwrap();
    let f = solve_metric(&cs, 1.0, &[0.0, 0.0], &grid, &SolverOptions::default()).unwrap();
    let mut err = 0.0f64;
    for i in 0..f.values.len() {
        let r = radius(&f, i);
        err = err.max((f.values[i] - (r - 1.0).max(0.0)).abs());
        if r <= 1.0 {
            assert_eq!(f.values[i], 0.0);
        }
    }
    assert!(err <= 2.0 * h, "sup error {err}");
}

#[test]
fn eikonal_cone_for_the_square() {
    let cs = constant(2, 2.0, 1.0, 0.0);
    let h = 0.1;
    let grid = SolverGrid::centered_box(&[0.0, 0.0], 5.0, h, Boundary::DirichletCone).unwrap();
    let f = solve_metric(&cs, 4.0, &[0.0, 0.0], &grid, &SolverOptions::default()).unwrap();
    for i in 0..f.values.len() {
        let r = radius(&f, i);
        assert!((f.values[i] - 2.0 * (r - 1.0).max(0.0)).abs() <= 4.0 * h);
    }
    // Along the axes the upwind scheme is exact up to the ball geometry.
    let v = f.value_at(&[3.0, 0.0]).unwrap();
    assert!((v - 4.0).abs() < 1e-9, "{v}");
}

#[test]
fn metric_sup_and_oscillation_on_the_cone() {
    let cs = constant(2, 1.0, 1.0, 0.0);
    let h = 0.05;
    let grid = SolverGrid::centered_box(&[0.0, 0.0], 5.0, h, Boundary::DirichletCone).unwrap();
    let f = solve_metric(&cs, 1.0, &[0.0, 0.0], &grid, &SolverOptions::default()).unwrap();
    let y = [3.0, 0.0];
    assert!((tilde_m(&f, &y).unwrap() - 3.0).abs() <= 2.0 * h);
    assert!((oscillation(&f.lattice, &f.values, &y, 1.0).unwrap() - 2.0).abs() <= 2.0 * h);
    assert!(tilde_m(&f, &y).unwrap() >= f.value_at(&y).unwrap());
    assert!(matches!(tilde_m(&f, &[4.5, 0.0]), Err(Error::Domain(_))));
}

#[test]
fn metric_below_the_critical_level_is_rejected() {
    let cs = constant(2, 2.0, 1.0, 0.0);
    let grid = SolverGrid::centered_box(&[0.0, 0.0], 3.0, 0.1, Boundary::DirichletCone).unwrap();
    let r = solve_metric(&cs, -0.5, &[0.0, 0.0], &grid, &SolverOptions::default());
    assert!(matches!(r, Err(Error::Subcritical { .. })), "{r:?}");
}

#[test]
fn metric_with_diffusion_newton_matches_pseudo_time() {
    let cs = diffusive(2, 0.5, HamiltonianKind::Power);
    let grid = SolverGrid::centered_box(&[0.0, 0.0], 3.0, 0.25, Boundary::DirichletCone).unwrap();
    let newton = solve_metric(&cs, 1.0, &[0.0, 0.0], &grid, &SolverOptions::default()).unwrap();
    assert_eq!(newton.stats.method, Method::Newton);
    assert!(newton.stats.residual < 1e-8);
    let opts = SolverOptions {
        method: Method::PseudoTime,
        tol_residual: 1e-11,
        ..SolverOptions::default()
    };
    let pt = solve_metric(&cs, 1.0, &[0.0, 0.0], &grid, &opts).unwrap();
    let gs = solve_metric(
        &cs,
        1.0,
        &[0.0, 0.0],
        &grid,
        &SolverOptions {
            method: Method::Sweeping,
            ..SolverOptions::default()
        },
    )
    .unwrap();
    for i in 0..pt.values.len() {
        assert!((pt.values[i] - newton.values[i]).abs() < 1e-7);
        assert!((gs.values[i] - newton.values[i]).abs() < 1e-7);
    }
    // Monotone in the level.
    let hi = solve_metric(&cs, 2.0, &[0.0, 0.0], &grid, &SolverOptions::default()).unwrap();
    assert!(hi.values.iter().zip(&newton.values).all(|(a, b)| *a >= *b - 1e-10));
}

#[test]
fn discounted_constant_coefficients() {
    let cs = constant(2, 2.0, 1.0, 0.5);
    let grid = SolverGrid::env_torus(&cs).unwrap();
    let p = [0.3, -0.7];
    let eps = 0.1;
    let f = solve_discounted(&cs, eps, &p, &grid, &SolverOptions::default()).unwrap();
    let hp = 0.09 + 0.49 - 0.5;
    for v in &f.values {
        assert!((v + hp / eps).abs() < 1e-10);
    }
}

#[test]
fn discounted_zero_momentum_without_potential() {
    let mut spec = EnvSpec::constant_power(2, 2.0, 1.0, 0.0);
    spec.model = hjlab::environment::ModelKind::SpectralField;
    spec.params.a_amp = 0.3;
    spec.lambda1 = 2.0;
    spec.period = 4.0;
    spec.spacing = 0.25;
    let cs = sample_environment(&spec, 3).unwrap();
    let grid = SolverGrid::env_torus(&cs).unwrap();
    let f = solve_discounted(&cs, 0.5, &[0.0, 0.0], &grid, &SolverOptions::default()).unwrap();
    assert!(f.values.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn discounted_with_diffusion_agrees_across_methods() {
    let mut spec = EnvSpec::constant_power(1, 2.0, 1.0, 0.0);
    spec.model = hjlab::environment::ModelKind::SpectralField;
    spec.params.v_amp = 1.0;
    spec.params.sigma_scale = 0.6;
    spec.lambda2 = 1.0;
    spec.lambda1 = 2.0;
    spec.period = 8.0;
    spec.spacing = 0.125;
    let cs = sample_environment(&spec, 11).unwrap();
    let grid = SolverGrid::env_torus(&cs).unwrap();
    let p = [0.4];
    let newton = solve_discounted(&cs, 0.3, &p, &grid, &SolverOptions::default()).unwrap();
    let gs = solve_discounted(
        &cs,
        0.3,
        &p,
        &grid,
        &SolverOptions {
            method: Method::Sweeping,
            ..SolverOptions::default()
        },
    )
    .unwrap();
    for (a, b) in newton.values.iter().zip(&gs.values) {
        assert!((a - b).abs() < 1e-7, "{a} {b}");
    }
}

#[test]
fn numerical_hamiltonian_consistency_and_dissipation() {
    let cs = constant(1, 2.0, 1.0, 0.0);
    for p in [-1.5, 0.0, 0.3, 2.0] {
        assert_eq!(numerical_hamiltonian(&cs, &[p], &[p], &[0.4]), p * p);
    }
    let s = 0.2;
    let v = numerical_hamiltonian(&cs, &[0.0], &[s], &[0.0]);
    assert!((v - (s * s / 4.0 - 2.0 * s * s / 2.0)).abs() < 1e-15);
    assert!(v <= (s / 2.0) * (s / 2.0));
    assert_eq!(numerical_hamiltonian_with(&cs, &[0.0], &[s], &[0.0], &[0.0]), s * s / 4.0);
}

fn box_grid_1d(half: f64, h: f64) -> SolverGrid {
    SolverGrid::centered_box(&[0.0], half, h, Boundary::FrozenValue).unwrap()
}

#[test]
fn ivp_constants_are_stationary() {
    let cs = constant(1, 2.0, 1.0, 0.0);
    let grid = box_grid_1d(2.0, 0.05);
    let n = grid.lattice.len();
    for c in [0.0, 1.7] {
        let e = solve_ivp(&cs, &vec![c; n], 1.0, &grid, 1.0, &IvpOptions::default()).unwrap();
        assert!(e.last().iter().all(|x| *x == c));
        assert!(e.lower_bound_ok);
    }
}

#[test]
fn ivp_matches_hopf_lax_for_the_square() {
    let cs = constant(1, 2.0, 1.0, 0.0);
    let h = 0.02;
    let grid = box_grid_1d(3.0, h);
    let l = grid.lattice;
    let g: Vec<f64> = (0..l.len()).map(|i| l.point(i)[0].abs().min(1.0)).collect();
    let t = 0.25;
    let e = solve_ivp(&cs, &g, t, &grid, 1.0, &IvpOptions::default()).unwrap();
    let u = e.last();
    for i in 0..l.len() {
        let x = l.point(i)[0];
        if x.abs() > 1.5 {
            continue;
        }
        // inf over a fine y-grid of |x-y|²/(4t) + min(|y|,1).
        let oracle = (-4000..=4000)
            .map(|j| {
                let y = j as f64 * 1e-3;
                (x - y).powi(2) / (4.0 * t) + y.abs().min(1.0)
            })
            .fold(f64::INFINITY, f64::min);
        assert!((u[i] - oracle).abs() <= 3.0 * h, "x={x} u={} oracle={oracle}", u[i]);
    }
}

#[test]
fn ivp_rejects_cfl_violation() {
    let cs = constant(1, 2.0, 1.0, 0.0);
    let grid = box_grid_1d(1.0, 0.1);
    let n = grid.lattice.len();
    let opts = IvpOptions {
        dt: Some(1.0),
        ..IvpOptions::default()
    };
    assert!(matches!(
        solve_ivp(&cs, &vec![0.0; n], 1.0, &grid, 1.0, &opts),
        Err(Error::Config { .. })
    ));
}

#[test]
fn ivp_comparison_and_contraction() {
    let mut spec = EnvSpec::constant_power(1, 2.0, 1.0, 0.0);
    spec.model = hjlab::environment::ModelKind::SpectralField;
    spec.params.v_amp = 1.0;
    spec.params.sigma_scale = 0.5;
    spec.lambda2 = 1.0;
    spec.lambda1 = 2.0;
    spec.period = 4.0;
    spec.spacing = 0.125;
    let cs = sample_environment(&spec, 5).unwrap();
    let grid = SolverGrid::torus(1, 4.0, 0.0625).unwrap();
    let l = grid.lattice;
    let g1: Vec<f64> = (0..l.len()).map(|i| (l.point(i)[0] * 1.5).sin()).collect();
    let g2: Vec<f64> = g1.iter().enumerate().map(|(i, x)| x + 0.1 + 0.05 * (i % 3) as f64).collect();
    let opts = IvpOptions {
        p_max: Some(4.0),
        snapshot_times: vec![0.25, 0.5],
        ..IvpOptions::default()
    };
    let e1 = solve_ivp(&cs, &g1, 1.0, &grid, 1.0, &opts).unwrap();
    let e2 = solve_ivp(&cs, &g2, 1.0, &grid, 1.0, &opts).unwrap();
    assert_eq!(e1.times.len(), 4);
    let mut prev = f64::INFINITY;
    for (s1, s2) in e1.snapshots.iter().zip(&e2.snapshots) {
        assert!(s1.iter().zip(s2).all(|(a, b)| a <= b));
        let dist = s1.iter().zip(s2).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(dist <= prev + 1e-12);
        prev = dist;
    }
}

#[test]
fn quadratic_model_metric_solves() {
    let cs = diffusive(2, 2f64.sqrt(), HamiltonianKind::QuadraticDrift);
    let grid = SolverGrid::centered_box(&[0.0, 0.0], 3.0, 0.25, Boundary::DirichletCone).unwrap();
    let f = solve_metric(&cs, 1.0, &[0.0, 0.0], &grid, &SolverOptions::default()).unwrap();
    assert!(f.stats.flux.starts_with("godunov"));
    assert!(f.values.iter().all(|v| v.is_finite() && *v >= -1e-12));
}

#[test]
fn residual_log_is_written() {
    let cs = constant(2, 2.0, 1.0, 0.0);
    let grid = SolverGrid::centered_box(&[0.0, 0.0], 2.0, 0.25, Boundary::DirichletCone).unwrap();
    let f = solve_metric(&cs, 1.0, &[0.0, 0.0], &grid, &SolverOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("log.csv");
    write_residual_log(&p, &f.stats.trace).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("iter,residual,dt\n"));
    f.export(&dir.path().join("m.grid")).unwrap();
}
