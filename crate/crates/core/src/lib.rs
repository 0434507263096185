//! Budgeted dynamic feature acquisition on regular multivariate time series.
//!
//! An acquirer chooses, at every step, which `b` features the classifier gets
//! to see at the next step. The learned acquirer samples its choices with a
//! straight-through Gumbel-Softmax and is trained jointly with an LSTM
//! classifier through the classification loss. Random, complete and static
//! (random-forest importance) acquirers serve as baselines.

pub mod diffmath;
pub mod error;
pub mod forest;
pub mod cli;
pub mod data;
pub mod dfa;
pub mod nn;
pub mod seeds;
pub mod selection;
pub mod train;

pub use error::{Error, Result};
