use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::environment::EnvSpec;
use crate::error::{Error, Result};
use crate::homogenize::Route;
use crate::ldp::TargetSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    EnvAudit,
    Metric,
    Shape,
    Hbar,
    Duality,
    Ldp,
    FullPipeline,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::EnvAudit => "env-audit",
            ExperimentKind::Metric => "metric",
            ExperimentKind::Shape => "shape",
            ExperimentKind::Hbar => "hbar",
            ExperimentKind::Duality => "duality",
            ExperimentKind::Ldp => "ldp",
            ExperimentKind::FullPipeline => "full-pipeline",
        }
    }
}

/// Declared acceptance tolerances. Every value must be positive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Second differences of `H̄` may dip to `-convexity_rel · scale`.
    pub convexity_rel: f64,
    pub bound: f64,
    pub route_abs: f64,
    pub route_rel: f64,
    pub hstar: f64,
    /// Slack of the monotonicity and concavity checks of `m̄` in `μ`.
    pub mbar: f64,
    /// Relative agreement of ladder points `R`, `2R` and of replicas.
    pub shape_rel: f64,
    /// `max (f - f**) <= biconjugate_rel · max(1, max |f|)`.
    pub biconjugate_rel: f64,
    pub rate_rel: f64,
    pub rate_abs: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            convexity_rel: 1e-3,
            bound: 1e-9,
            route_abs: 0.05,
            route_rel: 0.05,
            hstar: 1e-9,
            mbar: 1e-9,
            shape_rel: 0.05,
            biconjugate_rel: 1e-3,
            rate_rel: 0.15,
            rate_abs: 0.05,
        }
    }
}

impl Tolerances {
    fn entries(&self) -> [(&'static str, f64); 10] {
        [
            ("convexity_rel", self.convexity_rel),
            ("bound", self.bound),
            ("route_abs", self.route_abs),
            ("route_rel", self.route_rel),
            ("hstar", self.hstar),
            ("mbar", self.mbar),
            ("shape_rel", self.shape_rel),
            ("biconjugate_rel", self.biconjugate_rel),
            ("rate_rel", self.rate_rel),
            ("rate_abs", self.rate_abs),
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvAuditParams {
    /// Moment exponent; `dimension + 1` when absent.
    pub alpha: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricParams {
    /// Levels, increasing.
    pub mus: Vec<f64>,
    /// Number of directions (see `sphere_directions`).
    pub directions: usize,
    /// Ladder radii, increasing.
    pub radii: Vec<f64>,
    #[serde(default = "default_metric_h")]
    pub h: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_fit_points")]
    pub fit_points: usize,
}

fn default_metric_h() -> f64 {
    0.1
}

fn default_margin() -> f64 {
    2.0
}

fn default_fit_points() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeParams {
    /// Independent environment samples compared on `m̄`.
    pub replicas: usize,
}

impl Default for ShapeParams {
    fn default() -> Self {
        ShapeParams { replicas: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HstarParams {
    pub bracket: [f64; 2],
    pub half_width: f64,
    pub h: f64,
    #[serde(default = "default_hstar_tol")]
    pub tol: f64,
}

fn default_hstar_tol() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HbarParams {
    pub half_nodes: usize,
    pub step: f64,
    #[serde(default = "default_routes")]
    pub routes: Vec<Route>,
    /// Route fed to the duality and large-deviation stages.
    #[serde(default = "default_primary")]
    pub primary: Route,
    /// Discount ladder of the cell route, decreasing.
    #[serde(default)]
    pub eps: Vec<f64>,
    #[serde(default)]
    pub hstar: Option<HstarParams>,
}

fn default_routes() -> Vec<Route> {
    vec![Route::Cell]
}

fn default_primary() -> Route {
    Route::Cell
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialDatum {
    Zero,
    /// `g(y) = |y|`.
    Norm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualityParams {
    pub initial: InitialDatum,
    /// Half-width and spacing of the lattice carrying the initial datum.
    pub initial_half_width: f64,
    pub initial_h: f64,
    /// Hopf–Lax query points and times.
    pub points: Vec<Vec<f64>>,
    pub times: Vec<f64>,
}

impl Default for DualityParams {
    fn default() -> Self {
        DualityParams {
            initial: InitialDatum::Norm,
            initial_half_width: 4.0,
            initial_h: 0.25,
            points: Vec::new(),
            times: vec![1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdpParams {
    /// Rescaled starting point; paths start at `t x`.
    pub x: Vec<f64>,
    /// Horizons, increasing.
    pub times: Vec<f64>,
    pub target: TargetSet,
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_batches")]
    pub batches: usize,
    /// Length of the importance-sampling drifts; untilted when absent.
    #[serde(default)]
    pub tilt_magnitude: Option<f64>,
    #[serde(default = "default_tilt_directions")]
    pub tilt_directions: usize,
}

fn default_n_paths() -> usize {
    10_000
}

fn default_dt() -> f64 {
    0.01
}

fn default_batches() -> usize {
    100
}

fn default_tilt_directions() -> usize {
    16
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurvivalParams {
    pub x: Vec<f64>,
    /// Horizons, increasing.
    pub times: Vec<f64>,
    /// `H̄(0)`; read from the primary table when absent.
    #[serde(default)]
    pub hbar0: Option<f64>,
}

/// One experiment, read from TOML. `output_dir`, `workers` and `name` do
/// not change results and are left out of the configuration hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Master seed; every stage seed is derived from it.
    #[serde(default)]
    pub seed: u64,
    pub env: EnvSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub env_audit: EnvAuditParams,
    #[serde(default)]
    pub metric: Option<MetricParams>,
    #[serde(default)]
    pub shape: Option<ShapeParams>,
    #[serde(default)]
    pub hbar: Option<HbarParams>,
    #[serde(default)]
    pub duality: Option<DualityParams>,
    #[serde(default)]
    pub ldp: Option<LdpParams>,
    #[serde(default)]
    pub survival: Option<SurvivalParams>,
}

fn default_workers() -> usize {
    1
}

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "HJLAB_OUTPUT_ROOT";

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let key = match e.span() {
                Some(s) => format!("line {}", text[..s.start.min(text.len())].lines().count().max(1)),
                None => String::from("<document>"),
            };
            Error::config(key, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate().map_err(|e| match e {
            Error::Config { key, msg } => Error::config(format!("env.{key}"), msg),
            other => other,
        })?;
        let d = self.env.dimension;
        if self.workers == 0 {
            return Err(Error::config("workers", "must be at least 1"));
        }
        for (k, v) in self.tolerances.entries() {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("tolerances.{k}"), format!("must be positive, got {v}")));
            }
        }
        if let Some(a) = self.env_audit.alpha {
            if !(a > d as f64) {
                return Err(Error::config("env_audit.alpha", format!("must exceed the dimension {d}")));
            }
        }
        if let Some(m) = &self.metric {
            increasing("metric.mus", &m.mus)?;
            increasing("metric.radii", &m.radii)?;
            positive("metric.radii", &m.radii)?;
            positive("metric.h", &[m.h, m.margin])?;
            if m.directions == 0 {
                return Err(Error::config("metric.directions", "must be at least 1"));
            }
        }
        if let Some(h) = &self.hbar {
            positive("hbar.step", &[h.step])?;
            if h.routes.is_empty() {
                return Err(Error::config("hbar.routes", "at least one route is needed"));
            }
            if !h.routes.contains(&h.primary) {
                return Err(Error::config("hbar.primary", "must be one of the computed routes"));
            }
            if h.routes.contains(&Route::Metric) && self.metric.is_none() {
                return Err(Error::config("metric", "the metric route needs a [metric] section"));
            }
            if h.routes.contains(&Route::Cell) {
                if h.eps.is_empty() {
                    return Err(Error::config("hbar.eps", "the cell route needs a discount ladder"));
                }
                positive("hbar.eps", &h.eps)?;
                if h.eps.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(Error::config("hbar.eps", "discounts must be strictly decreasing"));
                }
            }
            if let Some(s) = &h.hstar {
                if !(s.bracket[0] < s.bracket[1]) {
                    return Err(Error::config("hbar.hstar.bracket", "needs lo < hi"));
                }
                positive("hbar.hstar", &[s.half_width, s.h, s.tol])?;
            }
        }
        if let Some(du) = &self.duality {
            positive("duality.initial_h", &[du.initial_h, du.initial_half_width])?;
            positive("duality.times", &du.times)?;
            if let Some(p) = du.points.iter().find(|p| p.len() != d) {
                return Err(Error::config("duality.points", format!("{p:?} is not a point of dimension {d}")));
            }
        }
        if let Some(l) = &self.ldp {
            if l.x.len() != d {
                return Err(Error::config("ldp.x", format!("must have {d} components")));
            }
            increasing("ldp.times", &l.times)?;
            positive("ldp.times", &l.times)?;
            positive("ldp.dt", &[l.dt])?;
            if l.n_paths < 2 || l.batches < 2 || l.batches > l.n_paths {
                return Err(Error::config("ldp.n_paths", "need n_paths >= batches >= 2"));
            }
            if let Some(m) = l.tilt_magnitude {
                positive("ldp.tilt_magnitude", &[m])?;
            }
            let bad_dim = match &l.target {
                TargetSet::Whole => false,
                TargetSet::BallComplement { center, .. } | TargetSet::OpenBall { center, .. } => center.len() != d,
                TargetSet::HalfSpace { normal, .. } => normal.len() != d,
            };
            if bad_dim {
                return Err(Error::config("ldp.target", format!("must live in dimension {d}")));
            }
        }
        if let Some(s) = &self.survival {
            if s.x.len() != d {
                return Err(Error::config("survival.x", format!("must have {d} components")));
            }
            increasing("survival.times", &s.times)?;
            positive("survival.times", &s.times)?;
        }
        let need = |present: bool, key: &str| -> Result<()> {
            if present {
                Ok(())
            } else {
                Err(Error::config(key, format!("required for kind `{}`", self.kind.as_str())))
            }
        };
        match self.kind {
            ExperimentKind::EnvAudit => Ok(()),
            ExperimentKind::Metric => need(self.metric.is_some(), "metric"),
            ExperimentKind::Shape => {
                need(self.metric.is_some(), "metric")?;
                let radii = &self.metric.as_ref().unwrap().radii;
                if !radii.iter().any(|r| radii.iter().any(|s| (s - 2.0 * r).abs() < 1e-9 * s)) {
                    return Err(Error::config("metric.radii", "the shape check needs a pair R, 2R"));
                }
                if self.shape.as_ref().is_some_and(|s| s.replicas < 2) {
                    return Err(Error::config("shape.replicas", "must be at least 2"));
                }
                Ok(())
            }
            ExperimentKind::Hbar | ExperimentKind::Duality => need(self.hbar.is_some(), "hbar"),
            ExperimentKind::Ldp => {
                need(self.hbar.is_some(), "hbar")?;
                need(self.ldp.is_some(), "ldp")
            }
            ExperimentKind::FullPipeline => {
                need(self.metric.is_some(), "metric")?;
                need(self.hbar.is_some(), "hbar")?;
                need(self.ldp.is_some(), "ldp")
            }
        }
    }

    /// SHA-256 of the canonical JSON form (sorted keys, defaults filled in)
    /// without the fields that do not affect results.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("output_dir");
            m.remove("workers");
            m.remove("name");
        }
        let canonical = serde_json::to_string(&v).expect("json value serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// `output_dir` if set, else `$HJLAB_OUTPUT_ROOT/<name>-<hash prefix>`
    /// (the root defaults to `hjlab-runs`).
    pub fn resolve_output_dir(&self) -> PathBuf {
        if let Some(d) = &self.output_dir {
            return d.clone();
        }
        let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("hjlab-runs"));
        let name = self.name.clone().unwrap_or_else(|| self.kind.as_str().to_string());
        root.join(format!("{name}-{}", &self.hash()[..12]))
    }
}

fn increasing(key: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::config(key, "must not be empty"));
    }
    if v.iter().any(|x| !x.is_finite()) || v.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config(key, "must be finite and strictly increasing"));
    }
    Ok(())
}

fn positive(key: &str, v: &[f64]) -> Result<()> {
    if v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(Error::config(key, "values must be positive"));
    }
    Ok(())
}
