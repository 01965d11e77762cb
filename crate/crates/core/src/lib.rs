//! Code-conditioned coordinate networks for view interpolation.

pub mod cli;
pub mod error;
pub mod eval;
pub mod image;
pub mod io;
pub mod latent;
pub mod model;
pub mod objectives;
pub mod scenes;
pub mod tensor;
pub mod train;

pub use error::{CheckpointError, DataError, Error, Result};
pub use image::{Image, ImageSet};
