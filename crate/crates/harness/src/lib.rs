//! File formats, configuration, experiment drivers and the command-line
//! front end for spatially adaptive label-noise reweighting.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod formats;
pub mod raster;

pub use error::{HarnessError, Result};
