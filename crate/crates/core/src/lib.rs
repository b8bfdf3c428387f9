//! Building-code clause classification and machine-interpretability scoring.

pub mod aripipe;
pub mod classify;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod ngram;
pub mod score;
pub mod taxonomy;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
