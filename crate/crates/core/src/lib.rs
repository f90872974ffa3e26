//! 4D Gaussian splatting of dynamic scenes with static, rigid and transient
//! Gaussians.

pub mod checkpoint;
pub mod dynmask;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod params;
pub mod losses;
pub mod primitives;
pub mod raster;
pub mod sceneflow;
pub mod trainer;

pub use error::{Error, Result};
