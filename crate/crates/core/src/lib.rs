pub mod basis;
pub mod data;
pub mod error;
pub mod estimation;
pub mod format;
pub mod linalg;
pub mod nuisance;
pub mod population;
pub mod rng;
pub mod simulation;

pub use error::{Error, ErrorKind, Result};
