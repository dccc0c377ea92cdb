//! Deterministic federated-learning simulator for participants with noisy
//! labels.
//!
//! The pipeline per participant: estimate class-wise noise ratios by
//! three-fold cross-prediction ([`estimator`]), normalize them with
//! noise-free samples requested from the server ([`exchange`]), then train
//! federated rounds whose aggregation weights come from leave-one-out
//! influence on the server's test split ([`contribution`], [`engine`]).
//! [`rounds`] estimates the number of communication rounds needed for a
//! target precision from measured problem constants.

pub mod contribution;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod estimator;
pub mod exchange;
pub mod harness;
pub mod metrics;
pub mod noise;
pub mod rounds;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
