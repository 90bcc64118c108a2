//! Label-uncertainty learning with Student-t label models.
//!
//! Annotator disagreement is summarised per frame as a Student-t with ν equal
//! to the number of annotators. A Bayes-by-Backprop regressor predicts a
//! Gaussian per frame from `n` stochastic passes, and is trained on
//! `(1 − CCC) + negative ELBO + KL(t ‖ N)`.

pub mod annotations;
pub mod bayes_net;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod distributions;
pub mod error;
pub mod losses;
pub mod special;
pub mod stats;
pub mod sweep;
pub mod training;

pub use error::{Error, Result};
