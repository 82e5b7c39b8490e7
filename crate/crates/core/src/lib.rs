//! Spatially adaptive meta-reweighting for training a segmentation network
//! from noisy pixel annotations plus a small clean set.
//!
//! The crate is `no_std` + `alloc`. File formats, the command-line harness
//! and anything touching the OS live in the companion `segweight` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod dataio;
pub mod error;
pub mod losses;
pub mod metareweight;
pub mod ndcore;
pub mod noisegen;
pub mod segnet;

pub use error::{Error, Result};
