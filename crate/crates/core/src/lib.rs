//! Cost-sensitive detection scoring and maximal figure-of-merit (MFoM) training.
//!
//! The crate is split along the lines of a detection evaluation pipeline:
//!
//! * [`scoring`]: discrete metrics over labelled trial scores: threshold
//!   sweeps, equal error rate, actual/minimum detection cost, DET coordinates.
//! * [`mfom`]: smooth, differentiable surrogates of the same metrics
//!   (misclassification measure, smooth error counter, soft miss/false-alarm
//!   rates) with exact analytic gradients.
//! * [`model`]: a two-layer perceptron with hand-written backpropagation.
//! * [`experiment`]: synthetic data, cross-entropy pretraining, MFoM
//!   fine-tuning and multi-seed comparison reports.
//! * [`scorefile`]: the CSV trial score exchange format.

pub mod error;
pub mod experiment;
pub mod mfom;
pub mod model;
pub mod scorefile;
pub mod scoring;

pub use error::{Error, Result};
