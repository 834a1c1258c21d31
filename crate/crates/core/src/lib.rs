#![no_std]
extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod error;
pub mod cvae;
pub mod dataset;
pub mod env;
pub mod expert;
pub mod flat;
pub mod gcrl;
pub mod nn;
pub mod planner;
pub mod sac;

pub use error::{Error, Result};
