//! Small area estimation for binary outcomes under informative sampling.
//!
//! The crate covers the full pipeline: synthetic population generation,
//! probability-proportional-to-size sampling, design-based direct estimators,
//! weighted and sampling-distribution-based hierarchical Bayes models fit with
//! a native HMC engine, classical mixed-model predictors, poststratified
//! prediction, and a simulation harness comparing the estimators.

pub mod bayes_models;
pub mod classical;
pub mod direct;
pub mod error;
pub mod inference;
pub mod population;
pub mod poststrat;
pub mod sampling;
pub mod simharness;

pub use error::{Error, Result};
