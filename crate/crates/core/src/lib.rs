pub mod cocycle;
pub mod config;
pub mod dichotomy;
pub mod error;
pub mod linearize;
pub mod report;
pub mod sequence_space;
pub mod spectrum;
pub mod verify;
mod numeric;

pub use error::{Error, Result};
