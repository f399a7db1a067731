//! Training sequence forecasters that locally agree with interpretable
//! autoregressive explainers.
//!
//! A predictor network emits per-step Gaussian parameters. During training,
//! explainers (ridge-fitted AR models or constants) are refit on a window
//! around each step and the predictor is penalized for deviating from
//! them. The [`eval`] module reports forecast error, explainer deviation and
//! explanation stability along greedy rollouts.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod explainer;
mod fsutil;
pub mod game;
pub mod numerics;
pub mod parallel;
pub mod predictor;

pub use error::{Error, Result};
