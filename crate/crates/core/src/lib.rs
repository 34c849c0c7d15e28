pub mod baselines;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod inference;
pub mod ingest;
pub mod joiner;
pub mod query;
pub mod schema;

pub use error::{Error, Result};
