//! Disclosure-risk assessment for trained classifiers: dataset handling,
//! target models, privacy attacks, a release-gating wrapper and an
//! experiment harness.

pub mod attacks;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod matrix;
pub mod metrics;
pub mod models;
pub mod safemodel;
pub mod seed;

pub use error::{Error, Result};
