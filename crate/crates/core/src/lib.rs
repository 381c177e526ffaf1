pub mod bmd;
pub mod error;
pub mod geometry;
pub mod hcap;
pub mod linalg;
pub mod measures;
pub mod sampler;
pub mod stats;
pub mod sequences;
pub mod stream;

pub use error::{Error, Result};
