pub mod cli;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod nets;
pub mod pipeline;
pub mod splatter;
pub mod voxelizer;

pub use error::{Error, Result};
