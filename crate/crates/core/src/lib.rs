//! Desk-scale simulation library for adaptive data analysis: stable
//! query-answering mechanisms, adaptive adversaries, accuracy games, a
//! stability accountant, and Monte Carlo / exact verifiers for the
//! generalization bounds that stability buys.
//!
//! The central reproducible phenomenon: naive empirical answers overfit
//! under adaptively chosen queries, while mechanisms with bounded
//! stability budgets generalize.

pub mod analysts;
pub mod error;
pub mod harness;
pub mod mechanisms;
pub mod query;
pub mod seed;
pub mod stability;
pub mod stats;
pub mod transcript;
pub mod universe;

pub use error::{Error, Result};
pub use query::{Answer, LowSensitivityQuery, MinimizationQuery, Query, StatisticalQuery};
pub use stability::StabilityBudget;
pub use transcript::Transcript;
pub use universe::{Distribution, Sample, Universe};
