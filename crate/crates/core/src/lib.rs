pub mod error;
pub mod experiments;
pub mod linalg;
pub mod mechanism;
pub mod mixture;
pub mod problems;
pub mod quadratic;
pub mod sgd;
pub mod thresholds;
pub mod verify;

pub use error::{Error, Result};
