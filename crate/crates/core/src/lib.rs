//! Federated Bayesian learning with distributed Stein variational gradient
//! descent (DSVGD), with importance-driven client selection.
//!
//! The crate is organized bottom-up:
//!
//! - [`kernels`]: RBF kernel, derivatives, median-heuristic bandwidth.
//! - [`models`]: Gaussian toy, Bayesian logistic regression and a one-layer
//!   Bayesian neural network, with hand-derived scores.
//! - [`stein`]: V-statistic estimates of the kernelized Stein discrepancy
//!   and of inner products between SVGD update functions.
//! - [`svgd`]: the SVGD update with AdaGrad, plus KDE utilities.
//! - [`federation`]: server/client state and the per-round protocol.
//! - [`selection`]: KSD-based, HIP-based, round-robin and random selection.
//! - [`data`]: Covertype and MNIST loaders and non-IID partitioning.
//! - [`harness`]: experiment configuration, the run loop, CSV and SVG output.

pub mod check;
pub mod data;
pub mod error;
pub mod federation;
pub mod harness;
pub mod kernels;
pub mod linalg;
pub mod models;
pub mod par;
pub mod rng;
pub mod score;
pub mod selection;
pub mod stein;
pub mod svgd;

pub use error::{Error, Result};
pub use linalg::{Matrix, ParticleSet, ScoreMatrix};
pub use models::{LabeledBatch, ModelSpec};
pub use score::ScoreField;
pub use selection::SelectionScheme;
