pub mod attention;
pub mod config;
pub mod diff;
pub mod eval;
pub mod error;
pub mod formats;
pub mod image;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod signal;
pub mod ssm;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
