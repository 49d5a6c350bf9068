//! Simulation and Monte Carlo verification engine for hybrid switching
//! diffusions whose discrete regime ranges over a countably infinite set
//! and whose switching intensities depend on the recent history of the
//! continuous state.
//!
//! The crate provides:
//! - segment buffers for the sliding history window ([`history`]);
//! - model declaration with lazily enumerated intensity kernels and
//!   declared dominating bounds ([`model`]);
//! - exact-in-law regime sampling by Poisson thinning ([`switching`]);
//! - Euler-Maruyama integration of the coupled target, frozen-regime, and
//!   Markov-modulated systems with interlaced switching ([`integrator`]);
//! - both sides of the change-of-measure identity as estimators
//!   ([`girsanov`]);
//! - the drift-diffusion-jump operator and its expectation identity as
//!   statistical tests ([`generator`]);
//! - the worked model families ([`examples`]);
//! - Monte Carlo aggregation and continuity probes ([`stats`]);
//! - the full verification battery ([`verify`]).

pub mod error;
pub mod examples;
pub mod generator;
pub mod girsanov;
pub mod history;
pub mod integrator;
pub mod model;
pub mod rng;
pub mod stats;
pub mod switching;
pub mod verify;

pub use error::{Error, Result};
pub use history::Segment;
pub use integrator::{JumpEvent, PathStatus, SimConfig, Trajectory};
pub use model::{HybridModel, Regime};
pub use stats::McEstimate;
