//! Simulation of point- and partition-based response designs for land-cover
//! reference data, and a sequential rule that picks how many points to label
//! in each sampling unit.

pub mod adaptive;
pub mod design;
pub mod error;
pub mod harness;
pub mod legend;
pub mod metrics;
pub mod raster;
pub mod report;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
