//! Token pruning for selective-scan state space models.
//!
//! Pruning tokens out of an attention layer only shrinks a matrix; pruning
//! them out of a scan layer silently rewires which tokens are neighbours,
//! because the recurrence couples each token to the ones adjacent to it
//! along the traversal path. This crate implements the machinery to prune
//! tokens without that rewiring:
//!
//! - [`ssm`]: zero-order-hold discretization plus recurrent and
//!   convolutional reference scans for diagonal state space layers.
//! - [`traversal`]: scan-order construction for 2D token grids (forward,
//!   backward and snake paths) and cross-direction merging.
//! - [`pruning`]: token importance metrics, top-k selection and the
//!   position maps that record kept original indices across stages.
//! - [`aligned`]: the position-aligned scan kernel. Kept tokens run the
//!   full recurrence at their original positions; pruned positions apply
//!   only state decay, so every kept token sees its original neighbourhood.
//!   Includes the naive condensed baseline and an independent zeroed-input
//!   oracle.
//! - [`model`]: a small bidirectional block stack (projection, selective
//!   scan per direction, gating, residual) with scheduled pruning stages,
//!   used to exercise and benchmark the kernels end to end.
//! - [`flops`]: analytic multiply counts per layer, cross-checked against
//!   in-kernel counters.
//! - [`bench`]: wall-clock benchmark harness (warmup + median-of-repeats).
//! - [`tensorio`]: raw little-endian tensor files with JSON sidecars.
//! - [`verify`]: randomized equivalence and divergence suites used by the
//!   CLI and the acceptance tests.

pub mod aligned;
pub mod bench;
pub mod error;
pub mod flops;
pub mod model;
pub mod pruning;
pub mod rng;
pub mod ssm;
pub mod tensor;
pub mod tensorio;
pub mod traversal;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::TokenTensor;
