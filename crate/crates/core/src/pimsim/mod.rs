//! The machine model.
//!
//! A host with ordinary memory drives `n_cores` PIM cores. Each core owns one
//! bank and one small scratchpad and runs a single instruction stream. Cores
//! never talk to each other: every exchange is a host transfer into or out of
//! a bank, and those transfers are logged and priced per rank. Kernels pay
//! for work through explicit [`CoreContext::charge`] calls and for bank
//! access through DMA.

mod config;
mod device;
mod report;

pub use config::{CostTable, OpClass, PimConfig, DEFAULT_CLOCK_HZ, DEFAULT_CORES, DEFAULT_CORES_PER_RANK};
pub use device::{create_device, CoreContext, Direction, Launch, PimDevice, TransferRecord, TransferSummary};
pub use report::{finalize_report, IterationCost, KernelReport};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid device configuration: {0}")]
    InvalidConfig(String),
    #[error("core {core} does not exist (device has {n_cores})")]
    CoreOutOfRange { core: usize, n_cores: usize },
    #[error("core {core}: range {offset}+{len} exceeds the {bank_bytes}-byte bank")]
    BankOutOfRange {
        core: usize,
        offset: usize,
        len: usize,
        bank_bytes: usize,
    },
    #[error("scratchpad overflow: {requested} bytes requested, {available} free")]
    ScratchpadOverflow { requested: usize, available: usize },
    #[error("unknown operation class {0:?}")]
    UnknownOpClass(String),
    #[error("launch needs one argument per core: got {got}, device has {n_cores}")]
    ArgCount { got: usize, n_cores: usize },
}
