//! Desk-scale laboratory for privacy leakage of approximate machine unlearning.

pub mod attacks;
pub mod data;
pub mod error;
pub mod landscape;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod unlearn;

pub use error::{Error, Result};
