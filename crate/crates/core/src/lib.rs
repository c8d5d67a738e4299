//! Geometric adversarial attacks and defenses for point-cloud autoencoders.
//!
//! The crate builds up from raw geometry to full experiments:
//!
//! * [`pointcloud`]: clouds, procedural shape generation, exact nearest
//!   neighbors, and file formats.
//! * [`autodiff`]: a reverse-mode tape over the small set of tensor
//!   operations the networks and attack losses need.
//! * [`models`]: a PointNet-style encoder, a fully connected decoder, and a
//!   reduced point classifier, plus checkpointing.
//! * [`training`]: Adam and the training loops.
//! * [`metrics`]: Chamfer distance, off-surface counts, normalized
//!   reconstruction errors, and semantic scores, each with a brute-force
//!   reference implementation.
//! * [`attack`]: latent-space and output-space attacks, target selection,
//!   sweeps, and interpolation diagnostics.
//! * [`defense`]: off-surface and critical-point removal, defense
//!   evaluation, and attack detection.

pub mod attack;
pub mod autodiff;
pub mod defense;
pub mod error;
pub mod metrics;
pub mod models;
pub mod pointcloud;
pub mod training;

pub use error::{Error, Result};
