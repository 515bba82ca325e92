//! Training system for channel-attentive non-local (CAN) lung-nodule
//! classifiers with progressive network growing and curriculum learning.
//!
//! The crate is self-contained: a small f64 autodiff tape drives the CAN
//! attention blocks, networks grow extra blocks mid-training behind a
//! Bernoulli-mask blending schedule, and a curriculum orders samples from
//! easy to hard. Everything is seed-deterministic end to end.
//!
//! Module map:
//! - [`numerics`] — tensors, the autodiff graph, Adam, finite differences
//! - [`attention`] — the CAN block and its ablation variants
//! - [`network`] — block stacks, the classifier head, checkpoints
//! - [`progrow`] — growth states, Bernoulli masks, blending
//! - [`curriculum`] — easy/hard labeling and the early-stop rule
//! - [`datapipe`] — CT preprocessing, augmentation, synthetic data
//! - [`metrics`] — confusion metrics, AUC, bootstrap intervals
//! - [`trainer`] — the full training procedure, evaluation, ensembling
//! - [`cli`] — the `procan` command line

pub mod attention;
pub mod checkpoint;
pub mod cli;
pub mod curriculum;
pub mod datapipe;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod network;
pub mod numerics;
pub mod progrow;
pub mod trainer;

pub use error::{ProcanError, Result};
