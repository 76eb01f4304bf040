//! Pool-based batch active learning with an explanation-guided query
//! strategy.
//!
//! The crate simulates a practitioner who inspects explanations of a small
//! random sample, flags pairs whose predictions disagree while their
//! explanations agree, and retrieves similar unlabeled instances for
//! annotation. Entropy, margin and random sampling are provided as
//! baselines, along with a nested tuner for explainer parameters and an
//! experiment harness that writes learning curves.

pub mod dataset;
pub mod error;
pub mod explainer;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod strategy;
pub mod tuner;

pub use error::{Error, Result};
