use super::PimDevice;

/// Cost of one host-orchestrated iteration: the slowest core's compute and
/// DMA time across that iteration's launches, and the host link time of the
/// transfers around them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IterationCost {
    pub core_cycles: u64,
    pub transfer_cycles: u64,
    pub to_device_bytes: u64,
    pub from_device_bytes: u64,
    /// Host-side reduction and update operations.
    pub host_ops: u64,
}

impl IterationCost {
    pub fn add(&mut self, other: IterationCost) {
        self.core_cycles += other.core_cycles;
        self.transfer_cycles += other.transfer_cycles;
        self.to_device_bytes += other.to_device_bytes;
        self.from_device_bytes += other.from_device_bytes;
        self.host_ops += other.host_ops;
    }
}

/// Accounting for one training run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelReport {
    pub compute_cycles: Vec<u64>,
    pub dma_cycles: Vec<u64>,
    pub to_device_bytes: u64,
    pub from_device_bytes: u64,
    pub host_transfer_cycles: u64,
    pub host_compute_cycles: u64,
    /// Compute, then transfer, one after the other each iteration.
    pub serialized_total_cycles: u64,
    /// Compute and transfer overlapped each iteration.
    pub overlapped_total_cycles: u64,
    pub iterations: usize,
    pub per_iteration: Vec<IterationCost>,
}

impl KernelReport {
    pub fn max_compute_cycles(&self) -> u64 {
        self.compute_cycles.iter().copied().max().unwrap_or(0)
    }

    pub fn max_dma_cycles(&self) -> u64 {
        self.dma_cycles.iter().copied().max().unwrap_or(0)
    }

    /// From-device bytes of each iteration, if they are all equal.
    pub fn uniform_from_device_bytes(&self) -> Option<u64> {
        let first = self.per_iteration.first()?.from_device_bytes;
        self.per_iteration
            .iter()
            .all(|c| c.from_device_bytes == first)
            .then_some(first)
    }
}

/// Totals an iteration schedule against the device's per-core counters.
pub fn finalize_report(dev: &PimDevice, schedule: &[IterationCost]) -> KernelReport {
    let host_rate = dev.config().host_cycles_per_op;
    let mut report = KernelReport {
        compute_cycles: dev.compute_cycles().to_vec(),
        dma_cycles: dev.dma_cycles().to_vec(),
        to_device_bytes: 0,
        from_device_bytes: 0,
        host_transfer_cycles: 0,
        host_compute_cycles: 0,
        serialized_total_cycles: 0,
        overlapped_total_cycles: 0,
        iterations: schedule.len(),
        per_iteration: schedule.to_vec(),
    };
    for it in schedule {
        let host = it.host_ops * host_rate;
        report.to_device_bytes += it.to_device_bytes;
        report.from_device_bytes += it.from_device_bytes;
        report.host_transfer_cycles += it.transfer_cycles;
        report.host_compute_cycles += host;
        report.serialized_total_cycles += it.core_cycles + it.transfer_cycles + host;
        report.overlapped_total_cycles += it.core_cycles.max(it.transfer_cycles) + host;
    }
    report
}
