//! Quantization-aware piecewise-linear lookup tables for non-linear
//! operators: genetic breakpoint search, integer datapath simulation,
//! accuracy evaluation and hardware export.

pub mod cli;
pub mod error;
pub mod evalbench;
pub mod evolve;
pub mod intsim;
pub mod nonlin;
pub mod pwl;
pub mod quant;

pub use error::{Error, Result};
