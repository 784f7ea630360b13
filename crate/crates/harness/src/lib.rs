//! Config-driven experiment runner for constraint-injected training.

pub mod config;
pub mod error;
pub mod grid;
pub mod plot;
pub mod record;
pub mod runner;
pub mod selftest;

pub use error::{HarnessError, Result};
