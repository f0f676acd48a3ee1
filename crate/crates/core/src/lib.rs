//! Meshfree solver for 2D nonlocal diffusion and bond-based peridynamics built
//! on optimization-based quadrature weights.

pub mod error;
pub mod fracture;
pub mod kalthoff;
pub mod kernel;
pub mod operators;
pub mod pointcloud;
pub mod quadrature;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};

/// Library version, echoed in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
