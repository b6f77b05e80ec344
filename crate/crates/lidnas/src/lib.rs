//! Desk-scale neural architecture search for compact dense-prediction networks.
//!
//! The engine searches a pyramid encoder-decoder backbone whose blocks are
//! filled from a small pool of convolutional layer options. Untrained
//! candidates are ranked by a training-free score (the log-determinant of a
//! Hamming kernel over binary activation codes), and an assisted tabu search
//! mutates the most promising parents, training only the single
//! highest-reward child per iteration. The objective is a validation grade
//! that mixes thresholded accuracy with a parameter-count compactness term.
//!
//! Modules follow the pipeline:
//!
//! * [`genome`] — search-space encoding, validity, parameter counting
//! * [`mutation`] — swap/replace mutations with budget rebalancing
//! * [`net`] — dense-tensor runtime: compile, forward, backward, init
//! * [`scorer`] — activation codes, Hamming kernel, log-determinant score
//! * [`evaluator`] — synthetic depth task, trainer, grade and reward
//! * [`search`] — seeding, ranking, parent selection, the ATS loop
//! * [`config`] / [`artifacts`] / [`runner`] — run configuration and outputs

pub mod artifacts;
pub mod config;
mod error;
pub mod evaluator;
pub mod genome;
pub mod mutation;
pub mod net;
pub mod runner;
pub mod scorer;
pub mod search;

pub use error::{Error, Result};
