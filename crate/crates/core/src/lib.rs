//! Koopman-style one-step distillation of a diffusion trajectory planner.

pub mod error;
pub mod diffusion;
pub mod distill_data;
pub mod env;
pub mod numkit;
pub mod quality;
pub mod student;
pub mod control;
pub mod metrics;

pub use error::{DnkError, Result};
