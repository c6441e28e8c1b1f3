//! A software processing-in-memory machine and four classical training
//! workloads written against it.
//!
//! The [`pimsim`] module models a host plus many PIM cores, each with a
//! private bank and scratchpad, exchanging data only through host transfers.
//! [`kernels`] trains linear regression, logistic regression, a decision tree
//! and K-means on that machine using [`fixedpoint`] arithmetic and a
//! [`lut`]-based sigmoid, with data laid out by [`layout`]. The [`baseline`]
//! module holds double-precision single-machine references for all four.

pub mod baseline;
pub mod error;
pub mod fixedpoint;
pub mod kernels;
pub mod layout;
pub mod lut;
pub mod pimsim;

pub use error::{Error, ErrorKind, Result};
pub use fixedpoint::{FixedScalar, QFormat, WideAccumulator};
pub use kernels::{Algorithm, Arithmetic, Hyperparams, ModelState};
pub use layout::{Dataset, PartitionPlan};
pub use lut::LutTable;
pub use pimsim::{KernelReport, PimConfig, PimDevice};
