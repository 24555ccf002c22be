//! Dual-branch flow-ODE sampling with Gaussian low-pass relaxation.
//!
//! - [`flowfield`]: analytic rectified-flow velocities over Gaussian
//!   mixtures, their Monte-Carlo estimate, lattices and band-limited noise.
//! - [`relaxation`]: separable Gaussian smoothing of lattice fields with
//!   spectral and Lipschitz diagnostics.
//! - [`attention`]: cross-attention with blurred logits and a toy velocity head.
//! - [`visibility`]: z-buffer visibility weights for voxel states.
//! - [`sampler`]: gated Euler integration of an observation branch and a
//!   relaxed prior branch.
//! - [`metrics`]: path errors, exact W2, Fréchet distance, stability bounds.

pub mod attention;
pub mod error;
pub mod flowfield;
pub mod metrics;
pub mod relaxation;
pub mod sampler;
pub mod visibility;

pub use error::{Error, Result};
pub use flowfield::{GridField, Lattice, VelocityField};
pub use sampler::{BranchPair, Mode, Schedule, Trajectory};
