pub mod checkpoint;
pub mod cl;
pub mod data;
pub mod error;
pub mod exact;
pub mod kernel;
pub mod likelihood;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod registry;
pub mod sparse;
pub mod train;

pub use error::{Error, ErrorClass, Result};
