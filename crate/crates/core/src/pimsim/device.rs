use rayon::prelude::*;

use super::{OpClass, PimConfig, SimError};
use crate::Error;

/// Direction of a host transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    ToDevice,
    FromDevice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransferRecord {
    pub core_id: usize,
    pub rank: usize,
    pub offset: usize,
    pub bytes: usize,
    pub direction: Direction,
}

/// Bytes and link time of a slice of the transfer log.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TransferSummary {
    pub to_device_bytes: u64,
    pub from_device_bytes: u64,
    pub cycles: u64,
}

/// One core's bank. Storage grows to the highest byte written; unwritten
/// bytes read as zero.
#[derive(Debug, Default, Clone)]
struct Bank {
    data: Vec<u8>,
}

impl Bank {
    fn write(&mut self, offset: usize, payload: &[u8]) {
        let end = offset + payload.len();
        if self.data.len() < end {
            self.data.resize(end, 0);
        }
        self.data[offset..end].copy_from_slice(payload);
    }

    fn read_into(&self, offset: usize, out: &mut [u8]) {
        let have = self.data.len().saturating_sub(offset).min(out.len());
        if have > 0 {
            out[..have].copy_from_slice(&self.data[offset..offset + have]);
        }
        out[have..].fill(0);
    }
}

/// The simulated machine: banks, scratchpads, counters and the host
/// transfer log.
#[derive(Debug)]
pub struct PimDevice {
    config: PimConfig,
    banks: Vec<Bank>,
    scratchpads: Vec<Vec<u8>>,
    transfer_log: Vec<TransferRecord>,
    compute_cycles: Vec<u64>,
    dma_cycles: Vec<u64>,
}

pub fn create_device(cfg: PimConfig) -> Result<PimDevice, SimError> {
    PimDevice::new(cfg)
}

impl PimDevice {
    pub fn new(config: PimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let n = config.n_cores;
        Ok(PimDevice {
            config,
            banks: vec![Bank::default(); n],
            scratchpads: vec![Vec::new(); n],
            transfer_log: Vec::new(),
            compute_cycles: vec![0; n],
            dma_cycles: vec![0; n],
        })
    }

    pub fn config(&self) -> &PimConfig {
        &self.config
    }

    pub fn n_cores(&self) -> usize {
        self.config.n_cores
    }

    pub fn transfer_log(&self) -> &[TransferRecord] {
        &self.transfer_log
    }

    pub fn compute_cycles(&self) -> &[u64] {
        &self.compute_cycles
    }

    pub fn dma_cycles(&self) -> &[u64] {
        &self.dma_cycles
    }

    /// Zeroes the per-core cycle counters. The transfer log is kept.
    pub fn reset_counters(&mut self) {
        self.compute_cycles.fill(0);
        self.dma_cycles.fill(0);
    }

    fn check_range(&self, core_id: usize, offset: usize, len: usize) -> Result<(), SimError> {
        if core_id >= self.config.n_cores {
            return Err(SimError::CoreOutOfRange {
                core: core_id,
                n_cores: self.config.n_cores,
            });
        }
        if offset.checked_add(len).is_none_or(|end| end > self.config.bank_bytes) {
            return Err(SimError::BankOutOfRange {
                core: core_id,
                offset,
                len,
                bank_bytes: self.config.bank_bytes,
            });
        }
        Ok(())
    }

    fn log(&mut self, core_id: usize, offset: usize, bytes: usize, direction: Direction) {
        self.transfer_log.push(TransferRecord {
            core_id,
            rank: self.config.rank_of(core_id),
            offset,
            bytes,
            direction,
        });
    }

    pub fn host_write_bank(
        &mut self,
        core_id: usize,
        offset: usize,
        payload: &[u8],
    ) -> Result<(), SimError> {
        self.check_range(core_id, offset, payload.len())?;
        self.banks[core_id].write(offset, payload);
        self.log(core_id, offset, payload.len(), Direction::ToDevice);
        Ok(())
    }

    pub fn host_read_bank(
        &mut self,
        core_id: usize,
        offset: usize,
        len: usize,
    ) -> Result<Vec<u8>, SimError> {
        self.check_range(core_id, offset, len)?;
        let mut out = vec![0; len];
        self.banks[core_id].read_into(offset, &mut out);
        self.log(core_id, offset, len, Direction::FromDevice);
        Ok(out)
    }

    /// Writes the same payload to every core's bank.
    pub fn host_broadcast(&mut self, offset: usize, payload: &[u8]) -> Result<(), SimError> {
        for core in 0..self.n_cores() {
            self.host_write_bank(core, offset, payload)?;
        }
        Ok(())
    }

    /// Position in the transfer log, for [`PimDevice::transfers_since`].
    pub fn transfer_mark(&self) -> usize {
        self.transfer_log.len()
    }

    /// Bytes and link cycles of every transfer logged after `mark`.
    pub fn transfers_since(&self, mark: usize) -> TransferSummary {
        summarize(&self.config, &self.transfer_log[mark..])
    }

    /// Runs `kernel` once per core with that core's entry of `args`.
    ///
    /// Cores execute concurrently on the current rayon pool. Results come
    /// back in ascending core order. The first failing core (lowest id)
    /// aborts the launch.
    pub fn launch<A, R, F>(&mut self, args: &[A], kernel: F) -> Result<Launch<R>, Error>
    where
        A: Sync,
        R: Send,
        F: Fn(&mut CoreContext<'_>, &A) -> Result<R, Error> + Sync,
    {
        if args.len() != self.config.n_cores {
            return Err(SimError::ArgCount {
                got: args.len(),
                n_cores: self.config.n_cores,
            }
            .into());
        }
        let config = &self.config;
        let outcomes: Vec<Result<(R, u64, u64), Error>> = self
            .banks
            .par_iter_mut()
            .zip(self.scratchpads.par_iter_mut())
            .zip(args.par_iter())
            .enumerate()
            .map(|(core_id, ((bank, scratchpad), arg))| {
                let mut ctx = CoreContext {
                    core_id,
                    config,
                    bank,
                    scratchpad,
                    reserved: 0,
                    compute_cycles: 0,
                    dma_cycles: 0,
                };
                let r = kernel(&mut ctx, arg).map_err(|e| Error::Core {
                    core: core_id,
                    source: Box::new(e),
                })?;
                Ok((r, ctx.compute_cycles, ctx.dma_cycles))
            })
            .collect();

        let mut launch = Launch {
            results: Vec::with_capacity(outcomes.len()),
            compute_cycles: Vec::with_capacity(outcomes.len()),
            dma_cycles: Vec::with_capacity(outcomes.len()),
        };
        for outcome in outcomes {
            let (r, c, d) = outcome?;
            launch.results.push(r);
            launch.compute_cycles.push(c);
            launch.dma_cycles.push(d);
        }
        for (i, (c, d)) in launch.compute_cycles.iter().zip(&launch.dma_cycles).enumerate() {
            self.compute_cycles[i] += c;
            self.dma_cycles[i] += d;
        }
        Ok(launch)
    }
}

pub(crate) fn summarize(config: &PimConfig, records: &[TransferRecord]) -> TransferSummary {
    let mut per_rank = vec![0u64; config.n_ranks];
    let mut summary = TransferSummary::default();
    for r in records {
        per_rank[r.rank] += r.bytes as u64;
        match r.direction {
            Direction::ToDevice => summary.to_device_bytes += r.bytes as u64,
            Direction::FromDevice => summary.from_device_bytes += r.bytes as u64,
        }
    }
    let busiest = per_rank.into_iter().max().unwrap_or(0);
    summary.cycles = config.link_cycles(busiest);
    summary
}

/// Per-core outputs and cycle counts of one launch.
#[derive(Debug, Clone)]
pub struct Launch<R> {
    pub results: Vec<R>,
    pub compute_cycles: Vec<u64>,
    pub dma_cycles: Vec<u64>,
}

impl<R> Launch<R> {
    /// The slowest core's compute plus DMA cycles.
    pub fn max_core_cycles(&self) -> u64 {
        self.compute_cycles
            .iter()
            .zip(&self.dma_cycles)
            .map(|(c, d)| c + d)
            .max()
            .unwrap_or(0)
    }
}

/// What a kernel sees while running on one core: its own bank and
/// scratchpad, and the cost counters. Other cores' memories cannot be named.
pub struct CoreContext<'a> {
    core_id: usize,
    config: &'a PimConfig,
    bank: &'a mut Bank,
    scratchpad: &'a mut Vec<u8>,
    reserved: usize,
    compute_cycles: u64,
    dma_cycles: u64,
}

impl CoreContext<'_> {
    pub fn core_id(&self) -> usize {
        self.core_id
    }

    pub fn config(&self) -> &PimConfig {
        self.config
    }

    pub fn compute_cycles(&self) -> u64 {
        self.compute_cycles
    }

    pub fn dma_cycles(&self) -> u64 {
        self.dma_cycles
    }

    /// Scratchpad bytes not claimed by [`CoreContext::reserve`].
    pub fn scratchpad_free(&self) -> usize {
        self.config.scratchpad_bytes - self.reserved
    }

    /// Claims scratchpad space for data that stays resident for the rest of
    /// the launch (weights, tables, histograms).
    pub fn reserve(&mut self, bytes: usize) -> Result<(), SimError> {
        if bytes > self.scratchpad_free() {
            return Err(SimError::ScratchpadOverflow {
                requested: bytes,
                available: self.scratchpad_free(),
            });
        }
        self.reserved += bytes;
        Ok(())
    }

    fn check_bank(&self, offset: usize, len: usize) -> Result<(), SimError> {
        if offset.checked_add(len).is_none_or(|end| end > self.config.bank_bytes) {
            return Err(SimError::BankOutOfRange {
                core: self.core_id,
                offset,
                len,
                bank_bytes: self.config.bank_bytes,
            });
        }
        Ok(())
    }

    /// DMA from the bank into the unreserved part of the scratchpad. The
    /// returned slice is valid until the next transfer.
    pub fn mram_read(&mut self, offset: usize, len: usize) -> Result<&[u8], SimError> {
        if len > self.scratchpad_free() {
            return Err(SimError::ScratchpadOverflow {
                requested: len,
                available: self.scratchpad_free(),
            });
        }
        self.check_bank(offset, len)?;
        let start = self.reserved;
        if self.scratchpad.len() < start + len {
            self.scratchpad.resize(start + len, 0);
        }
        let staging = &mut self.scratchpad[start..start + len];
        self.bank.read_into(offset, staging);
        self.dma_cycles += self.config.dma_cycles(len);
        Ok(&self.scratchpad[start..start + len])
    }

    /// DMA from the scratchpad into the bank.
    pub fn mram_write(&mut self, buf: &[u8], offset: usize) -> Result<(), SimError> {
        if buf.len() > self.config.scratchpad_bytes {
            return Err(SimError::ScratchpadOverflow {
                requested: buf.len(),
                available: self.config.scratchpad_bytes,
            });
        }
        self.check_bank(offset, buf.len())?;
        self.bank.write(offset, buf);
        self.dma_cycles += self.config.dma_cycles(buf.len());
        Ok(())
    }

    /// Writes `buf` in scratchpad-sized pieces.
    pub fn mram_write_chunked(&mut self, buf: &[u8], offset: usize, chunk: usize) -> Result<(), SimError> {
        let chunk = chunk.clamp(1, self.config.scratchpad_bytes);
        for (i, piece) in buf.chunks(chunk).enumerate() {
            self.mram_write(piece, offset + i * chunk)?;
        }
        Ok(())
    }

    pub fn charge(&mut self, op: OpClass, count: u64) {
        self.compute_cycles += self.config.costs.cycles(op) * count;
    }

    /// [`CoreContext::charge`] with the class given by name.
    pub fn charge_named(&mut self, op: &str, count: u64) -> Result<(), SimError> {
        let op: OpClass = op.parse()?;
        self.charge(op, count);
        Ok(())
    }
}
