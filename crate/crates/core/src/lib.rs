//! Gaussian process regression whose kernel lengthscales and noise variance
//! are input-dependent polynomial chaos expansions, with a two-stage
//! (random search + TPE, then Adam) hyperparameter search and a k-fold
//! benchmark harness.

pub mod bench;
pub mod data;
pub mod error;
pub mod gp;
pub mod hyper;
pub mod kernel;
pub mod optim;
pub mod poly;

pub use error::{Error, Result};
