use std::path::PathBuf;

use thiserror::Error;

/// Error type shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is missing, malformed or violates an invariant.
    #[error("configuration error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    /// An argument lies outside the domain where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// The metric problem failed to converge; the level is probably below
    /// the critical value of the environment.
    #[error("subcritical level suspected at mu = {mu}: {reason}")]
    Subcritical { mu: f64, reason: String },

    /// An iterative solver diverged or ran out of iterations.
    #[error("solver error: {msg} (last residuals: {trace:?})")]
    Solver { msg: String, trace: Vec<f64> },

    /// A bisection bracket does not contain a change of solver outcome.
    #[error("bracket error: {0}")]
    Bracket(String),

    /// The level grid does not reach an admissible value.
    #[error("grid range error: {0}")]
    GridRange(String),

    /// The requested sublevel set is empty on the lattice.
    #[error("level error: {0}")]
    Level(String),

    #[error("missing outputs: {0:?}")]
    MissingOutputs(Vec<PathBuf>),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
