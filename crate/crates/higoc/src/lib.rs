//! File formats, evaluation, experiment grids and reporting on top of
//! `higoc-core`.

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod files;
pub mod grid;
pub mod report;

pub use error::{Error, Result};
