//! Spatially variant blur-kernel estimation for blind super-resolution.

pub mod degrade;
pub mod error;
pub mod gradcheck;
pub mod image;
pub mod io;
pub mod kernel;
pub mod metrics;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod procgen;
pub mod rng;
pub mod tape;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
