//! Hyperspherical embedding classification.
//!
//! An encoder maps inputs to a latent space; a normalized-softmax head keeps
//! its class weights on the unit sphere and scores features by `S·cos θ`.
//! Because trained class weights line up with the mean direction of their
//! class embeddings, a weight for a class never seen in training can be
//! inferred from a handful of labeled samples and appended to the head.
//!
//! Modules:
//! - [`tensor`]: dense matrices with reverse-mode gradients and a
//!   finite-difference checker.
//! - [`model`]: encoder, softmax and normalized-softmax heads, checkpoints.
//! - [`losses`]: cross-entropy variants plus triplet and contrastive baselines.
//! - [`openset`]: prototypes, weight inference and the joint/disjoint evaluators.
//! - [`data`]: datasets, synthetic blobs, IDX files, class views and samplers.
//! - [`metrics`]: confusion-matrix measures and cosine distances.
//! - [`train`]: mini-batch SGD with momentum.
//! - [`config`], [`cli`]: experiment configuration and the command runner.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod openset;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Graph, Matrix, NodeId};
