pub mod cli;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod latent;
pub mod measures;
pub mod model;
pub mod nn;
pub mod objective;
pub mod sampler;
pub mod tasks;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
