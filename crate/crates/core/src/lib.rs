pub mod config;
pub mod detect;
pub mod ct;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
