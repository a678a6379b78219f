#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bench;
pub mod classifier;
pub mod dataset;
pub mod error;
pub mod ising;
pub mod learners;
pub mod metrics;
pub mod qubo;
pub mod rgs;
pub mod rng;
pub mod solvers;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
