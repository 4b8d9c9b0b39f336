//! Forecasting sparse multivariate time series with a dynamic Gaussian
//! mixture deep generative model.

pub mod cli;
pub mod dataset;
pub mod diffnum;
pub mod error;
pub mod evalcast;
mod fsutil;
pub mod generative;
pub mod inference;
pub mod preimpute;
pub mod seeding;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(test)]
mod testutil;
