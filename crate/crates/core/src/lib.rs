//! Latent variable recovery from multi-task supervised learning.
//!
//! The pipeline in this crate generates synthetic datasets whose observations
//! and labels are both driven by mutually independent latent factors, trains
//! a small predictor network on the labels, and then post-processes the
//! learned representation with linear maps (PCA, whitening, fixed-point ICA)
//! to test how well the true latents are recovered up to permutation and
//! scaling.
//!
//! Modules:
//! - [`numerics`]: seeded RNG streams and dense linear algebra kernels.
//! - [`datagen`]: invertible generators and (X, Y, Z) dataset sampling.
//! - [`network`]: the predictor architecture, backprop, and SGD training.
//! - [`transform`]: whitening, PCA, and fixed-point ICA on representations.
//! - [`metrics`]: correlation matching (MCC), R², accuracy, readouts.
//! - [`harness`]: experiment grid orchestration, persistence, and reports.

pub mod datagen;
pub mod harness;
pub(crate) mod io;
pub mod metrics;
pub mod network;
pub mod numerics;
pub mod transform;
