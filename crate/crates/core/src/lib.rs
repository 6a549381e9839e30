pub mod acoustic;
pub mod adapters;
pub mod config;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod training;
pub mod nn;
pub mod vocoder;

pub use error::{Error, Result};
