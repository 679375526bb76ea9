//! Image-quality assessment for fluorescence microscopy: synthetic structures,
//! artifact simulation, Fourier ring correlation labels, a patch-based CNN
//! regressor, and ranking metrics.

pub mod dataset;
pub mod degrade;
pub mod error;
pub mod eval;
pub mod frc;
pub mod image;
pub mod io;
pub mod labels;
pub mod net;
pub mod predict;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use image::{Image, PatchGrid, PatchMap, PATCH_SIZE};
