//! Scenario factorization, compositional split construction, and a
//! desk-scale multi-modal trajectory predictor with a gated module bank.

pub mod clustering;
pub mod difficulty;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod geometry;
pub mod nn;
pub mod pipeline;
pub mod predictor;
pub mod scenario;
pub mod splits;
pub mod vectorize;

pub use error::{Error, Result};
