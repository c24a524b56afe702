//! Parameter-efficient NTK-based machine unlearning.
//!
//! This crate trains small neural models with masked fine-tuning, removes the
//! influence of a forget set in one shot via a kernel-based parameter update,
//! and evaluates the result against retraining-style baselines.

pub mod error;
pub mod harness;
pub mod models;
pub mod ntk;
pub mod numerics;
pub mod rng;
pub mod scrub;
pub mod trainer;

pub use error::{Error, Result};
