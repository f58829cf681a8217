pub mod acoustic_model;
pub mod alignment;
pub mod audio;
pub mod augment;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod features;
pub mod manifest;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
