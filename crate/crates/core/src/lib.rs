//! Audit toolkit for how closely model-generated offensiveness labels track
//! human annotations, broken down by annotator gender and ethnicity, with
//! confounder-aware alignment regressions.

pub mod aggregate;
pub mod annotate;
pub mod audit;
pub mod confounders;
pub mod data;
pub mod error;
pub mod index;
pub mod ingest;
pub mod regression;
pub mod rng;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
