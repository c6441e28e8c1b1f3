//! Report rows and the versioned CSV file holding them.

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use pimml_core::{Hyperparams, KernelReport};

use crate::CliError;

pub const REPORT_VERSION: &str = "pimml-report v1";

/// Column order. Existing columns never move; new ones are appended.
pub const COLUMNS: &[&str] = &[
    "algo",
    "mode",
    "fmt",
    "cores",
    "ranks",
    "dataset",
    "n_rows",
    "n_features",
    "learning_rate",
    "iterations",
    "k",
    "max_depth",
    "min_samples",
    "n_bins",
    "fit_bias",
    "grad_frac_bits",
    "chunk_bytes",
    "seed",
    "metric",
    "metric_value",
    "parity",
    "iterations_run",
    "max_compute_cycles",
    "max_dma_cycles",
    "to_device_bytes",
    "from_device_bytes",
    "from_device_bytes_per_iter",
    "host_transfer_cycles",
    "host_compute_cycles",
    "serialized_total_cycles",
    "overlapped_total_cycles",
    "sweep",
    "wall_time",
];

/// One training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub algo: String,
    pub mode: String,
    pub fmt: String,
    pub cores: usize,
    pub ranks: usize,
    pub dataset: String,
    pub n_rows: usize,
    pub n_features: usize,
    pub hp: Hyperparams,
    pub seed: u64,
    pub metric: String,
    pub metric_value: f64,
    /// `key=value` pairs against the oracle, or empty.
    pub parity: Vec<(String, f64)>,
    pub iterations_run: usize,
    pub max_compute_cycles: u64,
    pub max_dma_cycles: u64,
    pub to_device_bytes: u64,
    pub from_device_bytes: u64,
    pub from_device_bytes_per_iter: Option<u64>,
    pub host_transfer_cycles: u64,
    pub host_compute_cycles: u64,
    pub serialized_total_cycles: u64,
    pub overlapped_total_cycles: u64,
    /// `train`, `strong` or `weak`.
    pub sweep: String,
    /// Seconds.
    pub wall_time: f64,
}

impl RunRecord {
    pub fn apply_report(&mut self, r: &KernelReport) {
        self.iterations_run = r.iterations;
        self.max_compute_cycles = r.max_compute_cycles();
        self.max_dma_cycles = r.max_dma_cycles();
        self.to_device_bytes = r.to_device_bytes;
        self.from_device_bytes = r.from_device_bytes;
        self.from_device_bytes_per_iter = r.uniform_from_device_bytes();
        self.host_transfer_cycles = r.host_transfer_cycles;
        self.host_compute_cycles = r.host_compute_cycles;
        self.serialized_total_cycles = r.serialized_total_cycles;
        self.overlapped_total_cycles = r.overlapped_total_cycles;
    }

    pub fn parity_value(&self, key: &str) -> Option<f64> {
        self.parity.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn parity_field(&self) -> String {
        if self.parity.is_empty() {
            return "na".into();
        }
        self.parity
            .iter()
            .map(|(k, v)| format!("{k}={v:?}"))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn fields(&self) -> Vec<String> {
        let hp = &self.hp;
        vec![
            self.algo.clone(),
            self.mode.clone(),
            self.fmt.clone(),
            self.cores.to_string(),
            self.ranks.to_string(),
            self.dataset.clone(),
            self.n_rows.to_string(),
            self.n_features.to_string(),
            format!("{:?}", hp.learning_rate),
            hp.iterations.to_string(),
            hp.k.to_string(),
            hp.max_depth.to_string(),
            hp.min_samples.to_string(),
            hp.n_bins.to_string(),
            hp.fit_bias.to_string(),
            hp.grad_frac_bits.to_string(),
            hp.chunk_bytes.to_string(),
            self.seed.to_string(),
            self.metric.clone(),
            format!("{:?}", self.metric_value),
            self.parity_field(),
            self.iterations_run.to_string(),
            self.max_compute_cycles.to_string(),
            self.max_dma_cycles.to_string(),
            self.to_device_bytes.to_string(),
            self.from_device_bytes.to_string(),
            self.from_device_bytes_per_iter
                .map_or_else(|| "na".to_string(), |b| b.to_string()),
            self.host_transfer_cycles.to_string(),
            self.host_compute_cycles.to_string(),
            self.serialized_total_cycles.to_string(),
            self.overlapped_total_cycles.to_string(),
            self.sweep.clone(),
            format!("{:.6}", self.wall_time),
        ]
    }
}

fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::failure(format!("{}: {e}", path.display()))
}

/// Appends rows, writing the version line and column header first when the
/// file is new or empty. An existing file must carry the same header.
pub fn append_records(path: &Path, records: &[RunRecord]) -> Result<(), CliError> {
    let fresh = match std::fs::metadata(path) {
        Ok(m) => m.len() == 0,
        Err(_) => true,
    };
    if !fresh {
        let file = std::fs::File::open(path).map_err(|e| io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let version = lines.next().transpose().map_err(|e| io(path, e))?;
        let header = lines.next().transpose().map_err(|e| io(path, e))?;
        if version.as_deref() != Some(REPORT_VERSION) || header.as_deref() != Some(&COLUMNS.join(",")[..]) {
            return Err(CliError::failure(format!(
                "{}: not a {REPORT_VERSION} report",
                path.display()
            )));
        }
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io(path, e))?;
    if fresh {
        writeln!(file, "{REPORT_VERSION}").map_err(|e| io(path, e))?;
    }
    let mut w = csv::WriterBuilder::new().from_writer(file);
    if fresh {
        w.write_record(COLUMNS).map_err(|e| io(path, e))?;
    }
    for r in records {
        w.write_record(r.fields()).map_err(|e| io(path, e))?;
    }
    w.flush().map_err(|e| io(path, e))
}

/// Rows of a report as string fields, header excluded.
pub fn read_report(path: &Path) -> Result<Vec<Vec<String>>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
    let body = text
        .strip_prefix(REPORT_VERSION)
        .and_then(|t| t.strip_prefix('\n'))
        .ok_or_else(|| CliError::failure(format!("{}: not a {REPORT_VERSION} report", path.display())))?;
    let mut r = csv::ReaderBuilder::new().from_reader(body.as_bytes());
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| io(path, e))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(rows)
}
