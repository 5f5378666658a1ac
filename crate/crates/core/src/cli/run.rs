use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::RngCore;

use super::config::{ExperimentConfig, ExperimentKind, InitialDatum};
use super::manifest::{Artifact, Check, Failure, Num, RunManifest, RunStatus, Timing};
use crate::convexanalysis::{biconjugate, dual_lattice, hopf_lax_batch, legendre_transform, ConvexTable, GridFunction};
use crate::environment::{sample_environment, weak_coercivity_diagnostic, CoefficientSet};
use crate::error::{Error, Result};
use crate::hjsolver::SolverOptions;
use crate::homogenize::{
    audit_effective_table, audit_mbar, estimate_hstar, mbar_table, AuditTolerances, CellRouteOptions, EffectiveTable,
    HstarOptions, MbarTable, MetricRouteOptions, Route,
};
use crate::lattice::Lattice;
use crate::ldp::{empirical_rate, ldp_prediction, simulate_paths, survival_rate_check, PathOptions, PdeOptions, Tilt};
use crate::numerics::{keyed_rng, norm, sphere_directions};

/// Seed of item `index` of stage `tag`, derived from the master seed.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    keyed_rng(master, tag, index).next_u64()
}

fn num(x: f64) -> String {
    format!("{x:.17e}")
}

/// Run an experiment into its resolved output directory.
pub fn run(cfg: &ExperimentConfig) -> Result<RunManifest> {
    run_in(cfg, &cfg.resolve_output_dir())
}

/// Run an experiment into `out`. Configuration errors are returned; stage
/// errors are recorded in the manifest, which is written in every case.
pub fn run_in(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    let mut r = Runner {
        cfg,
        m: RunManifest::new(cfg, out),
        cs: None,
        mbar: None,
        table: None,
        lbar: None,
    };
    let res = pool.install(|| r.pipeline());
    if let Err(e) = res {
        if r.m.failure.is_none() {
            r.m.failure = Some(Failure {
                stage: "output".into(),
                message: e.to_string(),
            });
        }
        r.m.status = RunStatus::Error;
    } else if r.m.failed_checks().next().is_some() {
        r.m.status = RunStatus::Failed;
    }
    r.m.write()?;
    Ok(r.m)
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    m: RunManifest,
    cs: Option<CoefficientSet>,
    mbar: Option<MbarTable>,
    table: Option<EffectiveTable>,
    lbar: Option<ConvexTable>,
}

impl Runner<'_> {
    fn pipeline(&mut self) -> Result<()> {
        use ExperimentKind::*;
        let kind = self.cfg.kind;
        if kind == Shape {
            return self.stage("shape", Runner::shape);
        }
        self.stage("sample", Runner::sample)?;
        if matches!(kind, EnvAudit | FullPipeline) {
            self.stage("env-audit", Runner::env_audit)?;
        }
        let metric_needed = match kind {
            Metric | FullPipeline => true,
            Hbar | Duality | Ldp => self.cfg.hbar.as_ref().is_some_and(|h| h.routes.contains(&Route::Metric)),
            _ => false,
        };
        if metric_needed {
            self.stage("metric", Runner::metric)?;
        }
        if matches!(kind, Hbar | Duality | Ldp | FullPipeline) {
            self.stage("hstar", Runner::hstar)?;
            self.stage("hbar", Runner::hbar)?;
            self.stage("audit", Runner::audit)?;
        }
        if matches!(kind, Duality | Ldp | FullPipeline) {
            self.stage("duality", Runner::duality)?;
        }
        if matches!(kind, Ldp | FullPipeline) {
            self.stage("ldp", Runner::ldp)?;
            if self.cfg.survival.is_some() {
                self.stage("survival", Runner::survival)?;
            }
        }
        Ok(())
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        log::info!("stage {name}");
        let t0 = Instant::now();
        let res = f(self);
        self.m.timings.push(Timing {
            stage: name.to_string(),
            seconds: t0.elapsed().as_secs_f64(),
        });
        if let Err(e) = &res {
            log::error!("stage {name} failed: {e}");
            self.m.failure = Some(Failure {
                stage: name.to_string(),
                message: e.to_string(),
            });
        }
        res
    }

    fn artifact(&mut self, name: &str, file: &str) -> std::path::PathBuf {
        self.m.artifacts.push(Artifact {
            name: name.to_string(),
            path: file.into(),
        });
        self.m.output_dir.join(file)
    }

    fn check(&mut self, name: &str, value: f64, tolerance: f64, passed: bool, detail: String) {
        if !passed {
            log::warn!("check {name} failed: {detail}");
        }
        self.m.checks.push(Check {
            name: name.to_string(),
            value: Num(value),
            tolerance: Num(tolerance),
            passed,
            detail,
        });
    }

    fn environment(&mut self, replica: u64) -> Result<CoefficientSet> {
        let seed = derive_seed(self.cfg.seed, "cli/env", replica);
        self.m.seeds.insert(format!("env/{replica}"), seed);
        let mut spec = self.cfg.env.clone();
        spec.seed = seed;
        sample_environment(&spec, seed)
    }

    fn cs(&self) -> &CoefficientSet {
        self.cs.as_ref().expect("environment sampled")
    }

    fn sample(&mut self) -> Result<()> {
        let cs = self.environment(0)?;
        let e = cs.extremes();
        for (k, v) in [
            ("env.a_min", e.a_min),
            ("env.a_max", e.a_max),
            ("env.v_min", e.v_min),
            ("env.v_max", e.v_max),
            ("env.lambda_min", e.lambda_min),
            ("env.lambda_max", e.lambda_max),
            ("env.drift_max", e.drift_max),
        ] {
            self.m.diagnostics.insert(k.to_string(), Num(v));
        }
        self.cs = Some(cs);
        Ok(())
    }

    fn env_audit(&mut self) -> Result<()> {
        let d = self.cfg.env.dimension;
        let alpha = self.cfg.env_audit.alpha.unwrap_or(d as f64 + 1.0);
        let rep = weak_coercivity_diagnostic(self.cs(), alpha)?;
        self.m.diagnostics.insert("weak_coercivity".into(), Num(rep.moment));
        self.m.diagnostics.insert("weak_coercivity.top_decile_share".into(), Num(rep.top_decile_share));
        let path = self.artifact("env_audit", "env_audit.csv");
        let mut s = String::from("quantity,value\n");
        for (k, v) in &self.m.diagnostics {
            writeln!(s, "{k},{}", num(v.0)).unwrap();
        }
        writeln!(s, "alpha,{}", num(alpha)).unwrap();
        writeln!(s, "heavy_tail,{}", u8::from(rep.heavy_tail)).unwrap();
        std::fs::write(path, s)?;
        self.check(
            "weak_coercivity_finite",
            rep.moment,
            f64::INFINITY,
            rep.moment.is_finite(),
            format!("moment {} over {} translates", rep.moment, rep.samples),
        );
        Ok(())
    }

    fn metric_options(&self) -> MetricRouteOptions {
        let m = self.cfg.metric.as_ref().expect("validated");
        MetricRouteOptions {
            h: m.h,
            margin: m.margin,
            fit_points: m.fit_points,
            solver: SolverOptions::default(),
        }
    }

    fn mbar_for(&self, cs: &CoefficientSet) -> Result<MbarTable> {
        let m = self.cfg.metric.as_ref().expect("validated");
        let dirs = sphere_directions(cs.dim(), m.directions);
        mbar_table(cs, &m.mus, &dirs, &m.radii, &self.metric_options())
    }

    fn metric(&mut self) -> Result<()> {
        let table = self.mbar_for(self.cs())?;
        table.write_ladders_csv(&self.artifact("ladders", "ladders.csv"))?;
        write_mbar_csv(&table, &self.artifact("mbar", "mbar.csv"))?;
        let tol = self.cfg.tolerances.mbar;
        let a = audit_mbar(&table, tol);
        let n_mono = a.monotonicity_violations.len();
        let n_conc = a.concavity_violations.len();
        self.check(
            "mbar_monotone_in_mu",
            n_mono as f64,
            tol,
            n_mono == 0,
            format!("violations {:?}", a.monotonicity_violations),
        );
        self.check(
            "mbar_concave_in_mu",
            n_conc as f64,
            tol,
            n_conc == 0,
            format!("violations {:?}", a.concavity_violations),
        );
        self.mbar = Some(table);
        Ok(())
    }

    fn shape(&mut self) -> Result<()> {
        let replicas = self.cfg.shape.as_ref().map_or(2, |s| s.replicas);
        let mut tables = Vec::with_capacity(replicas);
        for r in 0..replicas as u64 {
            let cs = self.environment(r)?;
            let t = self.mbar_for(&cs)?;
            let file = if r == 0 {
                "ladders.csv".to_string()
            } else {
                format!("ladders_r{r}.csv")
            };
            t.write_ladders_csv(&self.artifact(&format!("ladders/{r}"), &file))?;
            if r == 0 {
                self.cs = Some(cs);
            }
            tables.push(t);
        }
        let tol = self.cfg.tolerances.shape_rel;
        let radii = &self.cfg.metric.as_ref().expect("validated").radii;
        let mut worst_ladder = 0.0f64;
        let mut worst_at = String::new();
        for (j, row) in tables[0].estimates.iter().enumerate() {
            for (k, est) in row.iter().enumerate() {
                for (a, r) in radii.iter().enumerate() {
                    if let Some(b) = radii.iter().position(|s| (s - 2.0 * r).abs() < 1e-9 * s) {
                        let rel = (est.values[a] - est.values[b]).abs() / est.values[b].abs().max(f64::MIN_POSITIVE);
                        if rel > worst_ladder {
                            worst_ladder = rel;
                            worst_at = format!("mu {} dir {k} R {r}", tables[0].mus[j]);
                        }
                    }
                }
            }
        }
        let mut worst_seed = 0.0f64;
        let mut seed_at = String::new();
        let path = self.artifact("shape", "shape.csv");
        let mut s = String::from("mu,dir,replica,limit,error\n");
        for j in 0..tables[0].mus.len() {
            for k in 0..tables[0].dirs.len() {
                let lims: Vec<f64> = tables.iter().map(|t| t.value(j, k)).collect();
                for (r, t) in tables.iter().enumerate() {
                    let e = &t.estimates[j][k];
                    writeln!(s, "{},{k},{r},{},{}", num(t.mus[j]), num(e.limit), num(e.error)).unwrap();
                }
                let hi = lims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lo = lims.iter().cloned().fold(f64::INFINITY, f64::min);
                let rel = (hi - lo) / hi.abs().max(lo.abs()).max(f64::MIN_POSITIVE);
                if rel > worst_seed {
                    worst_seed = rel;
                    seed_at = format!("mu {} dir {k}", tables[0].mus[j]);
                }
            }
        }
        std::fs::write(path, s)?;
        self.check(
            "shape_ladder_doubling",
            worst_ladder,
            tol,
            worst_ladder <= tol,
            format!("worst relative change {worst_ladder:.3e} at {worst_at}"),
        );
        self.check(
            "shape_replica_agreement",
            worst_seed,
            tol,
            worst_seed <= tol,
            format!("worst relative spread {worst_seed:.3e} at {seed_at}"),
        );
        self.mbar = tables.into_iter().next();
        Ok(())
    }

    fn hstar(&mut self) -> Result<()> {
        let h = self.cfg.hbar.as_ref().expect("validated");
        let Some(p) = &h.hstar else {
            return Ok(());
        };
        let cs = self.cs();
        let mut opts = HstarOptions::new(cs.dim(), p.half_width, p.h)?;
        opts.tol = p.tol;
        let est = estimate_hstar(cs, (p.bracket[0], p.bracket[1]), &opts)?;
        let mut table = EffectiveTable::new(cs, h.half_nodes, h.step)?;
        self.m.diagnostics.insert("hstar".into(), Num(est.value));
        self.m.diagnostics.insert("hstar.lo".into(), Num(est.lo));
        self.m.diagnostics.insert("hstar.hi".into(), Num(est.hi));
        table.hstar = Some(est);
        self.table = Some(table);
        Ok(())
    }

    fn hbar(&mut self) -> Result<()> {
        let h = self.cfg.hbar.as_ref().expect("validated");
        let cs = self.cs.as_ref().expect("environment sampled");
        let mut table = match self.table.take() {
            Some(t) => t,
            None => EffectiveTable::new(cs, h.half_nodes, h.step)?,
        };
        if h.routes.contains(&Route::Metric) {
            table.fill_metric(self.mbar.as_ref().expect("metric stage ran"))?;
        }
        if h.routes.contains(&Route::Cell) {
            table.fill_cell(cs, &h.eps, &CellRouteOptions::default())?;
        }
        table.write_csv(&self.artifact("hbar", "hbar.csv"))?;
        self.table = Some(table);
        Ok(())
    }

    fn audit(&mut self) -> Result<()> {
        let t = &self.cfg.tolerances;
        let tol = AuditTolerances {
            convexity_rel: t.convexity_rel,
            bound: t.bound,
            route_abs: t.route_abs,
            route_rel: t.route_rel,
            hstar: t.hstar,
        };
        let table = self.table.as_ref().expect("hbar stage ran");
        let rep = audit_effective_table(table, &tol);
        std::fs::write(self.artifact("audit", "audit.json"), serde_json::to_string_pretty(&rep)? + "\n")?;
        for ra in &rep.routes {
            let tag = match ra.route {
                Route::Metric => "metric",
                Route::Cell => "cell",
            };
            self.check(
                &format!("hbar_convexity_{tag}"),
                ra.worst_second_difference,
                tol.convexity_rel,
                ra.convexity_violations.is_empty(),
                format!("{} entries flagged", ra.convexity_violations.len()),
            );
            self.check(
                &format!("hbar_bounds_{tag}"),
                ra.bound_violations.len() as f64,
                tol.bound,
                ra.bound_violations.is_empty(),
                format!("{} entries outside the bounds", ra.bound_violations.len()),
            );
            if let Some(disc) = ra.hstar_discrepancy {
                self.check(
                    &format!("hbar_min_vs_hstar_{tag}"),
                    disc,
                    tol.hstar,
                    ra.hstar_ok,
                    format!("min {} at {:?}", ra.min_value, ra.argmin),
                );
            }
        }
        if rep.routes.len() == 2 {
            self.check(
                "hbar_route_agreement",
                rep.max_route_disagreement,
                tol.route_rel,
                rep.route_violations.is_empty(),
                format!("{} entries disagree", rep.route_violations.len()),
            );
        }
        Ok(())
    }

    fn primary(&self) -> Route {
        self.cfg.hbar.as_ref().expect("validated").primary
    }

    fn duality(&mut self) -> Result<()> {
        let table = self.table.as_ref().expect("hbar stage ran");
        let f = ConvexTable::from_effective(table, self.primary())?;
        let z = dual_lattice(&f)?;
        let lbar = legendre_transform(&f, &z)?;
        lbar.write_csv(&self.artifact("lbar", "lbar.csv"))?;
        let bi = biconjugate(&f)?;
        let mut gap = 0.0f64;
        let mut scale = 1.0f64;
        for i in 0..f.values.len() {
            if f.in_domain(i) {
                gap = gap.max(f.values[i] - bi.values[i]);
                scale = scale.max(f.values[i].abs());
            }
        }
        let tol = self.cfg.tolerances.biconjugate_rel;
        self.check(
            "biconjugate_gap",
            gap,
            tol * scale,
            gap <= tol * scale,
            format!("max (f - f**) = {gap:.3e}"),
        );
        let du = self.cfg.duality.clone().unwrap_or_default();
        if !du.points.is_empty() {
            let d = f.dim();
            let n = (du.initial_half_width / du.initial_h).round() as usize;
            let lat = Lattice::centered_box(&vec![0.0; d], n.max(1), du.initial_h)?;
            let values = (0..lat.len())
                .map(|i| match du.initial {
                    InitialDatum::Zero => 0.0,
                    InitialDatum::Norm => norm(&lat.point(i)[..d]),
                })
                .collect();
            let g = GridFunction { lattice: lat, values };
            let queries: Vec<(Vec<f64>, f64)> = du
                .times
                .iter()
                .flat_map(|t| du.points.iter().map(move |x| (x.clone(), *t)))
                .collect();
            let vals = hopf_lax_batch(&lbar, &g, &queries)?;
            let xcols: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
            let mut s = format!("t,{},value,extrapolated\n", xcols.join(","));
            for ((x, t), v) in queries.iter().zip(&vals) {
                let xs: Vec<String> = x.iter().map(|c| num(*c)).collect();
                writeln!(s, "{},{},{},{}", num(*t), xs.join(","), num(v.value), u8::from(v.extrapolated)).unwrap();
            }
            std::fs::write(self.artifact("hopf_lax", "hopf_lax.csv"), s)?;
        }
        self.lbar = Some(lbar);
        Ok(())
    }

    fn hbar0(&self) -> f64 {
        let table = self.table.as_ref().expect("hbar stage ran");
        let hn = (table.lattice.shape[0] - 1) / 2;
        let idx = table.lattice.index(&vec![hn; table.lattice.dim]);
        table.values(self.primary())[idx]
    }

    fn ldp(&mut self) -> Result<()> {
        let l = self.cfg.ldp.clone().expect("validated");
        let hbar0 = self.hbar0();
        let lbar = self.lbar.as_ref().expect("duality stage ran");
        let prediction = ldp_prediction(lbar, hbar0, &l.target, &l.x)?;
        self.m.diagnostics.insert("hbar0".into(), Num(hbar0));
        self.m.diagnostics.insert("ldp.prediction".into(), Num(prediction));
        let d = l.x.len();
        let mut s = String::from("t,empirical,stderr,prediction,probability,hits,lower_bound\n");
        let mut last = None;
        for (k, &t) in l.times.iter().enumerate() {
            let seed = derive_seed(self.cfg.seed, "cli/ldp", k as u64);
            self.m.seeds.insert(format!("ldp/{k}"), seed);
            let x0: Vec<f64> = l.x.iter().map(|v| v * t).collect();
            let opts = PathOptions {
                dt: l.dt,
                n_paths: l.n_paths,
                seed,
                tilt: l.tilt_magnitude.map(|m| Tilt::radial(d, m, l.tilt_directions)),
                batches: l.batches,
            };
            let ens = simulate_paths(self.cs(), &x0, t, &opts)?;
            let mut est = empirical_rate(&ens, &l.target, &l.x)?;
            est.prediction = Some(prediction);
            let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), num);
            writeln!(
                s,
                "{},{},{},{},{},{},{}",
                num(t),
                opt(est.empirical),
                num(est.stderr),
                num(prediction),
                num(est.probability),
                est.hits,
                opt(est.lower_bound)
            )
            .unwrap();
            last = Some(est);
        }
        std::fs::write(self.artifact("ldp_rates", "ldp_rates.csv"), s)?;
        let est = last.expect("at least one horizon");
        let tol = &self.cfg.tolerances;
        let allowed = tol.rate_rel * prediction.abs() + tol.rate_abs;
        match est.empirical {
            Some(e) => self.check(
                "ldp_rate_vs_prediction",
                (e - prediction).abs(),
                allowed,
                (e - prediction).abs() <= allowed,
                format!("empirical {e} ± {} vs prediction {prediction} at t = {}", est.stderr, est.t),
            ),
            None => self.check(
                "ldp_rate_vs_prediction",
                f64::INFINITY,
                allowed,
                false,
                format!("no hits among {} paths", est.n_paths),
            ),
        }
        Ok(())
    }

    fn survival(&mut self) -> Result<()> {
        let s = self.cfg.survival.clone().expect("validated");
        let hbar0 = s.hbar0.unwrap_or_else(|| self.hbar0());
        let rep = survival_rate_check(self.cs(), &s.x, &s.times, hbar0, None, &PdeOptions::default())?;
        rep.write_csv(&self.artifact("survival", "survival.csv"))?;
        let last = rep.rows.last().map_or(f64::NAN, |r| r.gap);
        self.check(
            "survival_gap_decreasing",
            last,
            f64::INFINITY,
            rep.gap_decreasing,
            format!("gaps {:?}", rep.rows.iter().map(|r| r.gap).collect::<Vec<_>>()),
        );
        Ok(())
    }
}

/// `mu,dir,e0..,limit,error,outside_tail`.
fn write_mbar_csv(table: &MbarTable, path: &Path) -> Result<()> {
    let ecols: Vec<String> = (0..table.dim).map(|k| format!("e{k}")).collect();
    let mut s = format!("mu,dir,{},limit,error,outside_tail\n", ecols.join(","));
    for (j, row) in table.estimates.iter().enumerate() {
        for (k, est) in row.iter().enumerate() {
            let e: Vec<String> = est.e.iter().map(|x| num(*x)).collect();
            writeln!(
                s,
                "{},{k},{},{},{},{}",
                num(table.mus[j]),
                e.join(","),
                num(est.limit),
                num(est.error),
                u8::from(est.outside_tail)
            )
            .unwrap();
        }
    }
    std::fs::write(path, s)?;
    Ok(())
}
