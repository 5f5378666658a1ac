//! Experiment orchestration: TOML configurations, pipelines per experiment
//! kind, JSON run manifests and plot-data reports.

mod config;
mod manifest;
mod report;
mod run;

pub use config::{
    DualityParams, EnvAuditParams, ExperimentConfig, ExperimentKind, HbarParams, HstarParams, InitialDatum, LdpParams,
    MetricParams, ShapeParams, SurvivalParams, Tolerances, OUTPUT_ROOT_ENV,
};
pub use manifest::{Artifact, Check, Failure, Num, RunManifest, RunStatus, Timing, MANIFEST_FILE, MANIFEST_SCHEMA, VERSION_TAG};
pub use report::{report, ReportSummary, PLOT_DIR, REPORT_FILE};
pub use run::{derive_seed, run, run_in};
