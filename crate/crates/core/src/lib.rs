pub mod catalog;
pub mod chronology;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod forest;
pub mod ntl;
pub mod raster;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod sampling;
pub mod synthworld;

pub use error::{Error, ErrorKind, Result};
