//! Training neural models under declarative output constraints.

pub mod autodiff;
pub mod error;

pub use error::{Error, Result};
pub mod softlogic;
pub mod models;
pub mod constraint;
pub mod integrators;
pub mod metrics;
pub mod tasks;
