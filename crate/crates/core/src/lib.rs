pub mod cli;
pub mod data;
pub mod error;
pub mod inference;
pub mod learners;
pub mod numerics;
pub mod policy;
pub mod sdr;
pub mod simulation;

pub use error::{Error, Result};
