mod common;

use hjlab::convexanalysis::*;
use hjlab::homogenize::{mbar_table, MetricRouteOptions};
use hjlab::lattice::Lattice;
use hjlab::numerics::sphere_directions;
use hjlab::Error;
use proptest::prelude::*;

fn grid(dim: usize, half: usize, h: f64) -> Lattice {
    Lattice::centered_box(&vec![0.0; dim], half, h).unwrap()
}

fn bits(t: &ConvexTable) -> Vec<u64> {
    t.values.iter().map(|v| v.to_bits()).collect()
}

#[test]
fn half_square_is_self_dual() {
    let p = grid(2, 12, 0.25);
    let f = ConvexTable::from_fn(p, |x| 0.5 * (x[0] * x[0] + x[1] * x[1])).unwrap();
    let z = grid(2, 8, 0.25);
    let fs = legendre_transform(&f, &z).unwrap();
    for j in 0..z.len() {
        let x = z.point(j);
        assert!((fs.values[j] - 0.5 * (x[0] * x[0] + x[1] * x[1])).abs() < 1e-12);
    }
}

#[test]
fn norm_conjugates_to_the_indicator_of_the_unit_ball() {
    let p = grid(1, 20, 0.1);
    let f = ConvexTable::from_fn(p, |x| x[0].abs()).unwrap();
    let z = grid(1, 15, 0.1);
    let fs = legendre_transform(&f, &z).unwrap();
    for j in 0..z.len() {
        let x = z.point(j)[0];
        if x.abs() <= 1.0 + 1e-12 {
            assert_eq!(fs.values[j], 0.0, "z = {x}");
        } else {
            assert_eq!(fs.values[j], OUT_OF_DOMAIN, "z = {x}");
        }
    }
    let p2 = grid(2, 10, 0.2);
    let f2 = ConvexTable::from_fn(p2, |x| (x[0] * x[0] + x[1] * x[1]).sqrt()).unwrap();
    let fs2 = legendre_transform(&f2, &grid(2, 10, 0.2)).unwrap();
    assert_eq!(fs2.interpolate(&[0.4, 0.4]).unwrap(), 0.0);
    assert_eq!(fs2.interpolate(&[1.6, 0.0]).unwrap(), OUT_OF_DOMAIN);
}

#[test]
fn empty_domain_is_rejected() {
    let p = grid(1, 3, 1.0);
    let f = ConvexTable::new(p, vec![OUT_OF_DOMAIN; p.len()]).unwrap();
    assert!(matches!(legendre_transform(&f, &p), Err(Error::Domain(_))));
}

#[test]
fn biconjugate_of_a_spike() {
    let p = grid(1, 1, 1.0);
    let f = ConvexTable::new(p, vec![0.0, 5.0, 0.0]).unwrap();
    let e = biconjugate(&f).unwrap();
    assert_eq!(e.values, vec![0.0, 0.0, 0.0]);
    let p = grid(1, 4, 0.5);
    let mut vals: Vec<f64> = (0..p.len()).map(|i| p.point(i)[0].powi(2)).collect();
    vals[5] += 1.0;
    let f = ConvexTable::new(p, vals).unwrap();
    let e = biconjugate(&f).unwrap();
    let expect = 0.5 * (f.values[4] + f.values[6]);
    assert!((e.values[5] - expect).abs() < 1e-12, "{} vs {expect}", e.values[5]);
    for i in [0, 1, 2, 3, 4, 6, 7, 8] {
        assert!((e.values[i] - f.values[i]).abs() < 1e-12);
    }
}

#[test]
fn biconjugate_reproduces_quadratics() {
    let p = grid(2, 8, 0.25);
    let f = ConvexTable::from_fn(p, |x| 1.5 * x[0] * x[0] + 0.5 * x[1] * x[1] + 0.2 * x[0]).unwrap();
    let e = biconjugate(&f).unwrap();
    for i in 0..p.len() {
        assert!((e.values[i] - f.values[i]).abs() < 1e-12);
    }
}

#[test]
fn hopf_lax_quadratic_oracle() {
    let l = ConvexTable::from_fn(grid(1, 400, 0.05), |z| 0.5 * z[0] * z[0]).unwrap();
    let gl = grid(1, 800, 0.005);
    let g = GridFunction {
        lattice: gl,
        values: (0..gl.len()).map(|i| gl.point(i)[0].powi(2)).collect(),
    };
    for (x, t) in [(0.5, 0.5), (1.0, 1.0), (-1.5, 0.25), (2.0, 2.0)] {
        let u = hopf_lax(&l, &g, &[x], t).unwrap();
        let exact = x * x / (1.0 + 2.0 * t);
        assert!((u.value - exact).abs() < 1e-3, "x {x} t {t}: {} vs {exact}", u.value);
        assert!(!u.extrapolated);
    }
    // Small times recover g.
    let u = hopf_lax(&l, &g, &[0.7], 1e-4).unwrap();
    assert!((u.value - 0.49).abs() < 1e-3);
    assert!(matches!(hopf_lax(&l, &g, &[0.0], 0.0), Err(Error::Domain(_))));
}

#[test]
fn hopf_lax_of_constants() {
    let p = grid(2, 8, 0.25);
    let hbar = ConvexTable::from_fn(p, |x| x[0] * x[0] + x[1] * x[1] - 0.3).unwrap();
    let l = legendre_transform(&hbar, &grid(2, 6, 0.25)).unwrap();
    assert!((l.min() - 0.3).abs() < 1e-12);
    let gl = grid(2, 10, 0.2);
    for c in [0.0, 1.5] {
        let g = GridFunction {
            lattice: gl,
            values: vec![c; gl.len()],
        };
        for t in [0.5, 1.0, 3.0] {
            let u = hopf_lax(&l, &g, &[0.4, -0.2], t).unwrap();
            assert!((u.value - (c + 0.3 * t)).abs() < 1e-12, "{}", u.value);
        }
    }
}

#[test]
fn lagrangian_from_the_constant_square_metric() {
    let cs = common::constant(2, 2.0, 1.0, 0.0);
    let mus: Vec<f64> = (0..=24).map(|i| (i as f64 * 0.125).powi(2)).collect();
    let dirs = sphere_directions(2, 16);
    let opts = MetricRouteOptions {
        h: 0.1,
        ..MetricRouteOptions::default()
    };
    let t = mbar_table(&cs, &mus, &dirs, &[4.0, 8.0, 16.0], &opts).unwrap();
    for z in [[1.0, 0.0], [0.5, 1.0], [-2.0, 1.0]] {
        let v = lagrangian_from_mbar(&t, 0.0, &z).unwrap();
        let exact = (z[0] * z[0] + z[1] * z[1]) / 4.0;
        assert!((v.value - exact).abs() < 0.05 * exact, "{z:?}: {}", v.value);
        assert!(v.edge.is_none());
    }
    let v = lagrangian_from_mbar(&t, 0.0, &[0.0, 0.0]).unwrap();
    assert_eq!(v.value, 0.0);
    assert_eq!(v.edge, Some(GridEdge::Bottom));
    let hbar = ConvexTable::from_fn(grid(2, 8, 0.25), |x| x[0] * x[0] + x[1] * x[1]).unwrap();
    let lt = legendre_transform(&hbar, &grid(2, 8, 0.25)).unwrap();
    let direct = lt.interpolate(&[1.0, 0.5]).unwrap();
    let via = lagrangian_from_mbar(&t, 0.0, &[1.0, 0.5]).unwrap().value;
    assert!((direct - via).abs() < 0.05 * direct);
    let mut empty = t.clone();
    empty.mus.clear();
    assert!(lagrangian_from_mbar(&empty, 0.0, &[1.0, 0.0]).is_err());
}

/// Convex table: max of affine pieces plus a quadratic, on an integer-spaced box.
fn random_convex(dim: usize, half: usize, step: f64, pieces: &[(Vec<f64>, f64)], quad: f64) -> ConvexTable {
    ConvexTable::from_fn(grid(dim, half, step), |x| {
        let aff = pieces
            .iter()
            .map(|(a, b)| a.iter().zip(x).map(|(ai, xi)| ai * xi).sum::<f64>() + b)
            .fold(f64::NEG_INFINITY, f64::max);
        aff + quad * x.iter().map(|v| v * v).sum::<f64>()
    })
    .unwrap()
}

fn table_strategy() -> impl Strategy<Value = ConvexTable> {
    (1usize..=3, 2usize..=5)
        .prop_flat_map(|(dim, half)| {
            (
                Just(dim),
                Just(half),
                0.1f64..0.6,
                prop::collection::vec((prop::collection::vec(-2.0f64..2.0, dim), -1.0f64..1.0), 1..5),
                0.0f64..2.0,
            )
        })
        .prop_map(|(dim, half, step, pieces, quad)| random_convex(dim, half, step, &pieces, quad))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn fast_conjugate_equals_brute_force_bitwise(f in table_strategy(), zh in 0.1f64..1.0, zn in 1usize..6) {
        let z = grid(f.dim(), zn, zh);
        for rule in [EdgeRule::Mark, EdgeRule::Keep] {
            let a = conjugate(&f, &z, rule).unwrap();
            let b = conjugate_brute(&f, &z, rule).unwrap();
            prop_assert_eq!(bits(&a), bits(&b));
        }
    }

    #[test]
    fn fenchel_young_and_envelope(f in table_strategy()) {
        let z = dual_lattice(&f).unwrap();
        let fs = conjugate(&f, &z, EdgeRule::Keep).unwrap();
        let d = f.dim();
        for i in 0..f.lattice.len() {
            let p = f.point(i);
            for j in 0..z.len() {
                let zz = z.point(j);
                let mut acc = p[d - 1] * zz[d - 1] - f.values[i];
                for k in (0..d - 1).rev() {
                    acc = p[k] * zz[k] + acc;
                }
                prop_assert!(fs.values[j] >= acc);
            }
        }
        let e = biconjugate_on(&f, &z).unwrap();
        let scale = 1.0 + f.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..e.values.len() {
            prop_assert!(e.values[i] <= f.values[i] + 1e-12 * scale);
        }
        let ee = biconjugate_on(&e, &z).unwrap();
        for i in 0..e.values.len() {
            prop_assert!((ee.values[i] - e.values[i]).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn conjugation_reverses_order(f in table_strategy(), shift in prop::collection::vec(0.0f64..1.0, 125)) {
        let g = ConvexTable::new(f.lattice, f.values.iter().zip(shift.iter().cycle()).map(|(v, s)| v + s).collect()).unwrap();
        let z = dual_lattice(&f).unwrap();
        let fs = conjugate(&f, &z, EdgeRule::Keep).unwrap();
        let gs = conjugate(&g, &z, EdgeRule::Keep).unwrap();
        let hi = ConvexTable::new(f.lattice, f.values.iter().zip(&g.values).map(|(a, b)| a.max(*b)).collect()).unwrap();
        let lo = ConvexTable::new(f.lattice, f.values.iter().zip(&g.values).map(|(a, b)| a.min(*b)).collect()).unwrap();
        let his = conjugate(&hi, &z, EdgeRule::Keep).unwrap();
        let los = conjugate(&lo, &z, EdgeRule::Keep).unwrap();
        for j in 0..z.len() {
            prop_assert!(gs.values[j] <= fs.values[j]);
            prop_assert!(his.values[j] <= fs.values[j].min(gs.values[j]));
            prop_assert_eq!(los.values[j].to_bits(), fs.values[j].max(gs.values[j]).to_bits());
        }
    }

    #[test]
    fn hopf_lax_is_nonexpansive(shift in prop::collection::vec(-1.0f64..1.0, 21), x in -1.0f64..1.0, t in 0.1f64..2.0) {
        let l = ConvexTable::from_fn(grid(1, 40, 0.1), |z| 0.5 * z[0] * z[0]).unwrap();
        let gl = grid(1, 10, 0.2);
        let g1 = GridFunction { lattice: gl, values: (0..gl.len()).map(|i| gl.point(i)[0].abs()).collect() };
        let g2 = GridFunction { lattice: gl, values: g1.values.iter().zip(&shift).map(|(a, b)| a + b).collect() };
        let dist = shift.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        let u1 = hopf_lax(&l, &g1, &[x], t).unwrap().value;
        let u2 = hopf_lax(&l, &g2, &[x], t).unwrap().value;
        prop_assert!((u1 - u2).abs() <= dist + 1e-12);
    }
}

#[test]
fn tables_write_csv() {
    let f = ConvexTable::from_fn(grid(1, 2, 1.0), |x| if x[0] > 1.5 { OUT_OF_DOMAIN } else { x[0] }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    f.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("x0,value\n"));
    assert!(text.trim_end().ends_with("inf"));
}
