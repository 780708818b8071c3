//! Label-guided co-speech gesture synthesis.

pub mod apn;
pub mod cli;
pub mod codec;
pub mod conditioning;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod generator;
pub mod manifest;
pub mod motion;
pub mod nn;
pub mod pipeline;
pub mod render;
pub mod training;

pub use error::{Error, Result};
