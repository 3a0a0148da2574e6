//! Single-machine engine for estimating average, conditional, and
//! time-dynamic treatment effects on observational event tables.
//!
//! The pipeline is: [`ingest`] a typed CSV into an encoded table, describe a
//! model with [`design`], optionally [`compress`] the table into sufficient
//! statistics, fit weighted least squares through [`solver`], and read effects
//! off the coefficient vector with [`effects`]. Instrumented designs go
//! through [`tsls`], uncertainty for non-linear statistics through [`blb`],
//! and targeting rules through [`policy`].
//!
//! Everything is deterministic: given the same inputs, seeds, and engine
//! version, results are byte-identical regardless of thread count.

pub mod blb;
pub mod compress;
pub mod design;
pub mod effects;
pub mod error;
pub mod exec;
pub mod ingest;
pub mod linalg;
pub mod memtrack;
pub mod policy;
pub mod solver;
pub mod sparse;
pub mod stats;
pub mod synth;
pub mod tsls;

pub use error::{Error, ErrorClass, Result};
