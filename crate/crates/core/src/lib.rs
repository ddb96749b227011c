//! Noise-robust instance classification with bag-level aggregation.
//!
//! Cells are classified individually by a small feed-forward network trained
//! under label noise (optionally with label-smoothed cross-entropy), and the
//! per-cell predictions are rolled up into per-patient decisions: a fraction
//! threshold for detection and a majority vote for subtype calls.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: cells, bags, datasets, the text file format and the synthetic
//!   Gaussian generator.
//! - [`sampling`]: stratified splits, class-balanced batches, label noise.
//! - [`nn`]: the network, its forward/backward passes and gradient checking.
//! - [`loss`] and [`optim`]: (smoothed) cross-entropy, SGD with momentum, Adam.
//! - [`train`]: the training loop with early stopping and best-epoch restore.
//! - [`aggregate`]: patient threshold, majority vote and evaluation metrics.
//! - [`pipeline`]: the two-stage detection → subtype pipeline and the
//!   experiment driver behind the command-line tool.
//!
//! Data-parallel loops go through [`exec::Execution`]; with the `parallel`
//! feature (on by default) they run on rayon, otherwise sequentially. Results
//! are bit-identical either way.

pub mod aggregate;
pub mod data;
pub mod error;
pub mod exec;
pub mod loss;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod sampling;
pub mod train;

pub use error::{Error, ErrorKind, Result};
