pub mod data;
pub mod discrete;
pub mod error;
pub mod estimators;
pub mod gaussian;
mod kdtree;
pub mod points;
pub mod resampling;
pub mod rng;
pub mod sem;
pub mod smoothers;
pub mod univariate;

pub use error::{Error, Result};
