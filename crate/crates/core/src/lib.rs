pub mod autodiff;
pub mod backbone;
pub mod cfm;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod fmap;
pub mod formats;
pub mod linalg;
pub mod mesh;
pub mod model;
pub mod nn;
pub mod sglca;
pub mod spectral;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
