pub mod cli;
pub mod domain;
pub mod error;
pub mod eval;
pub mod featurizer;
pub mod io;
pub mod labelpipe;
pub mod metrics;
pub mod model;
pub mod net;
pub mod synth;
pub mod train;
pub mod value;

pub use error::{Error, OracleError, Result};
