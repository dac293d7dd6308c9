pub mod check;
pub mod cli;
pub mod error;
pub mod extractor;
pub mod geometry;
pub mod model;
pub mod nn;
pub mod regressor;
pub mod render;
pub mod ssm;
pub mod tensor;
pub mod train;
pub mod upsample;

pub use error::{Error, Result};
