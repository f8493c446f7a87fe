//! Data-driven balanced reduction of nonlinear control systems in a reproducing kernel
//! Hilbert space.
//!
//! The pipeline runs impulse and initial-state experiments on a [`ControlSystem`], balances the
//! resulting sample sets through kernel Gram matrices, and learns a low-dimensional closed
//! system whose input-output behavior approximates the original.

pub mod balancing;
pub mod error;
pub mod gramians;
pub mod kernels;
pub mod numerics;
pub mod reduced;
pub mod rkhs;
pub mod systems;

pub use error::{Error, Result};
pub use numerics::ToleranceConfig;
pub use systems::{ControlSystem, Signal, TimeGrid, Trajectory};
