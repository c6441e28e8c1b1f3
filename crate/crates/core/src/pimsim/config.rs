use std::fmt;
use std::str::FromStr;

use super::SimError;

pub const DEFAULT_CORES: usize = 2524;
pub const DEFAULT_CLOCK_HZ: u64 = 425_000_000;
pub const DEFAULT_CORES_PER_RANK: usize = 64;

/// Operation classes a kernel pays for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpClass {
    Add32,
    Mul32,
    Cmp,
    LutLookup,
}

impl OpClass {
    pub const ALL: [OpClass; 4] = [OpClass::Add32, OpClass::Mul32, OpClass::Cmp, OpClass::LutLookup];

    pub fn name(self) -> &'static str {
        match self {
            OpClass::Add32 => "add32",
            OpClass::Mul32 => "mul32",
            OpClass::Cmp => "cmp",
            OpClass::LutLookup => "lut_lookup",
        }
    }
}

impl fmt::Display for OpClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpClass {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| SimError::UnknownOpClass(s.to_string()))
    }
}

/// Cycles charged per operation of each class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostTable {
    pub add32: u64,
    pub mul32: u64,
    pub cmp: u64,
    pub lut_lookup: u64,
}

impl Default for CostTable {
    fn default() -> Self {
        CostTable {
            add32: 1,
            mul32: 4,
            cmp: 1,
            lut_lookup: 2,
        }
    }
}

impl CostTable {
    pub fn cycles(&self, op: OpClass) -> u64 {
        match op {
            OpClass::Add32 => self.add32,
            OpClass::Mul32 => self.mul32,
            OpClass::Cmp => self.cmp,
            OpClass::LutLookup => self.lut_lookup,
        }
    }
}

/// Machine description: core count, memory sizes, clock and cost model.
///
/// Cores are grouped into ranks that share one host link. Transfers to
/// different ranks proceed in parallel; transfers within a rank serialize.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PimConfig {
    pub n_cores: usize,
    pub clock_hz: u64,
    pub bank_bytes: usize,
    pub scratchpad_bytes: usize,
    pub n_ranks: usize,
    pub costs: CostTable,
    /// Fixed DMA setup latency in cycles.
    pub dma_alpha: u64,
    /// DMA bytes moved per cycle.
    pub dma_beta: u64,
    /// Host link bandwidth of one rank.
    pub link_bytes_per_sec: u64,
    /// Cycles charged per host-side reduction or update operation.
    pub host_cycles_per_op: u64,
}

impl Default for PimConfig {
    fn default() -> Self {
        Self::with_cores(DEFAULT_CORES)
    }
}

impl PimConfig {
    /// Default machine with `n_cores` cores at 64 cores per rank.
    pub fn with_cores(n_cores: usize) -> Self {
        PimConfig {
            n_cores,
            clock_hz: DEFAULT_CLOCK_HZ,
            bank_bytes: 64 << 20,
            scratchpad_bytes: 64 << 10,
            n_ranks: n_cores.div_ceil(DEFAULT_CORES_PER_RANK).max(1),
            costs: CostTable::default(),
            dma_alpha: 100,
            dma_beta: 8,
            link_bytes_per_sec: 1_000_000_000,
            host_cycles_per_op: 0,
        }
    }

    /// Changes the core count, keeping 64 cores per rank.
    pub fn resized(&self, n_cores: usize) -> Self {
        PimConfig {
            n_cores,
            n_ranks: n_cores.div_ceil(DEFAULT_CORES_PER_RANK).max(1),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidConfig(msg));
        if self.n_cores == 0 {
            return bad("at least one core is required".into());
        }
        if self.clock_hz == 0 || self.dma_beta == 0 || self.link_bytes_per_sec == 0 {
            return bad("clock, dma_beta and link bandwidth must be positive".into());
        }
        if self.bank_bytes == 0 || self.scratchpad_bytes == 0 {
            return bad("bank and scratchpad sizes must be positive".into());
        }
        if self.scratchpad_bytes >= self.bank_bytes {
            return bad(format!(
                "scratchpad ({} B) must be smaller than the bank ({} B)",
                self.scratchpad_bytes, self.bank_bytes
            ));
        }
        if self.n_ranks == 0 || self.n_ranks > self.n_cores {
            return bad(format!(
                "{} ranks cannot hold {} cores",
                self.n_ranks, self.n_cores
            ));
        }
        if OpClass::ALL.iter().any(|&c| self.costs.cycles(c) == 0) {
            return bad("every operation class must cost at least one cycle".into());
        }
        Ok(())
    }

    /// Cores per rank; the last rank is padded when this does not divide.
    pub fn cores_per_rank(&self) -> usize {
        self.n_cores.div_ceil(self.n_ranks)
    }

    pub fn rank_of(&self, core_id: usize) -> usize {
        core_id / self.cores_per_rank()
    }

    /// Cycles for one DMA of `len` bytes between the bank and the scratchpad.
    pub fn dma_cycles(&self, len: usize) -> u64 {
        self.dma_alpha + (len as u64).div_ceil(self.dma_beta)
    }

    /// Core clock cycles needed to move `bytes` over one rank link.
    pub fn link_cycles(&self, bytes: u64) -> u64 {
        let num = bytes as u128 * self.clock_hz as u128;
        num.div_ceil(self.link_bytes_per_sec as u128) as u64
    }
}
