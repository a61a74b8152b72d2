//! Crate-wide error type. Numerical preconditions fail loudly and name the
//! offending quantity instead of propagating NaNs.

use crate::math::Vec3;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("singular kernel evaluated at zero separation (target {at:?})")]
    SingularEvaluation { at: Vec3 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("derivative order {requested} exceeds the supported cap {cap}")]
    DerivativeOrderCap { requested: usize, cap: usize },

    #[error("measures are not comparable: total masses {mass_a} vs {mass_b}")]
    IncomparableMeasures { mass_a: f64, mass_b: f64 },

    #[error("exact assignment limited to {cap} points, got {n}")]
    AssignmentTooLarge { n: usize, cap: usize },

    #[error("probe too close to a source for step {h}: min distance {min_dist}")]
    IllConditionedProbe { h: f64, min_dist: f64 },

    #[error("step size {dt} rejected: tail estimate {estimate} above tolerance")]
    StepRejected { dt: f64, estimate: f64 },

    #[error("non-finite value in {context} at t = {t}")]
    BlowUp { context: String, t: f64 },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("curve passes through control region {region} (min distance {min_dist})")]
    CurveEntersRegion { region: usize, min_dist: f64 },

    #[error("covering leaves {uncovered} particles outside every ball")]
    CoveringInsufficient { uncovered: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
