use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the modeling, simulation and reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("point is {distance:.3} mm from the shell surface (tolerance {tolerance} mm)")]
    NoContact { distance: f64, tolerance: f64 },

    #[error("infeasible pose (x={x:.3} mm, alpha={alpha_deg:.3} deg, beta={beta_deg:.3} deg): {reason}")]
    InfeasiblePose {
        x: f64,
        alpha_deg: f64,
        beta_deg: f64,
        reason: String,
    },

    #[error("ill-conditioned contact: moment arm {arm:.4} mm is below 1 mm")]
    IllConditionedContact { arm: f64 },

    #[error("series of length {len} is too short for an order-{order} zero-phase filter")]
    SeriesTooShort { len: usize, order: usize },

    #[error("beam angles never exceed the attach threshold")]
    NoAttach,

    #[error("detach position {x_d:.3} mm does not follow attach position {x_a:.3} mm")]
    DegenerateWindow { x_a: f64, x_d: f64 },

    #[error("reference range is zero; relative error is undefined")]
    UndefinedNormalization,

    #[error("grid axes do not match: {0}")]
    AxisMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("regularized normal equations are not positive definite (diagonal ratio {condition:.3e})")]
    RankDeficient { condition: f64 },

    #[error("missing upstream artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("unknown export kind `{0}`")]
    UnknownKind(String),

    #[error("malformed file {}: {message}", path.display())]
    Malformed { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
