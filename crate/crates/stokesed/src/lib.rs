//! Particle-based sedimentation lab: singular mobility kernels, transported
//! particle clouds, velocity-field evaluation with a treecode option,
//! high-order time stepping, transport-distance diagnostics, and point-force
//! steering experiments.

pub mod cloud;
pub mod config;
pub mod control;
pub mod error;
pub mod integrator;
pub mod jet;
pub mod kernel;
pub mod math;
pub mod scenario;
pub mod velocity;
pub mod wasserstein;

pub use error::{Error, Result};
