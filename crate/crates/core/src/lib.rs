pub mod concentration;
pub mod config;
pub mod error;
pub mod process;
pub mod regress;
pub mod policy;
pub mod rng;
pub mod runner;
pub mod solver;

pub use error::{Error, Result};
