//! Metric learning over frozen text embeddings.
//!
//! A trainable projection head maps precomputed encoder outputs into a small
//! latent space where per-class subclusters are discriminated with an adaptive
//! density objective. Implicit samples are additionally pulled toward the
//! projections of their implied-meaning annotations, and a focal factor
//! re-weights hard samples. A classification head on top of the projection is
//! trained jointly with alpha-weighted cross-entropy.
//!
//! Modules:
//! - [`dataset`]: the embedding wire format, stratified splits, synthetic data.
//! - [`cluster`]: per-class k-means subclusters and neighborhood sampling.
//! - [`objective`]: the density-discrimination losses and their gradients.
//! - [`model`]: heads, training loop, evaluation and inference.
//! - [`analysis`]: latent-space diagnostics.
//! - [`cli`]: the `fiadd` command surface.

pub mod analysis;
pub mod cli;
pub mod cluster;
pub mod dataset;
pub mod model;
pub mod objective;
pub mod rng;
pub mod vector;

pub use dataset::{ClassId, Dataset, EmbeddedSample, SplitPair};
pub use objective::{ObjectiveConfig, Variant};
