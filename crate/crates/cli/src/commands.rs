//! The four subcommands as library functions.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use pimml_core::baseline::{oracle_dtree, oracle_kmeans, oracle_linreg, oracle_logreg, OracleResult};
use pimml_core::kernels::{metrics, predict, train};
use pimml_core::layout::{ingest_csv_with, write_csv, CsvOptions};
use pimml_core::layout::{synth_blobs, synth_labels_tree, synth_linear};
use pimml_core::lut::{lut_max_error, Activation, LutTable};
use pimml_core::{Algorithm, Arithmetic, Dataset, Hyperparams, ModelState, PimDevice};

use crate::config::Settings;
use crate::record::RunRecord;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Linear,
    Blobs,
    Tree,
}

impl SynthKind {
    pub fn name(self) -> &'static str {
        match self {
            SynthKind::Linear => "linear",
            SynthKind::Blobs => "blobs",
            SynthKind::Tree => "tree",
        }
    }

    /// Generator used when an algorithm is run on synthetic data by default.
    pub fn for_algorithm(algo: Algorithm) -> SynthKind {
        match algo {
            Algorithm::Linreg => SynthKind::Linear,
            Algorithm::Logreg | Algorithm::Kmeans => SynthKind::Blobs,
            Algorithm::Dtree => SynthKind::Tree,
        }
    }
}

impl FromStr for SynthKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "linear" => Ok(SynthKind::Linear),
            "blobs" => Ok(SynthKind::Blobs),
            "tree" => Ok(SynthKind::Tree),
            _ => Err(CliError::config(format!("unknown synthetic kind {s:?}: use linear, blobs or tree"))),
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Size and shape of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub n: usize,
    pub d: usize,
    /// Cluster count for blobs; `None` follows the algorithm.
    pub k: Option<usize>,
    pub spread: f64,
    pub noise: f64,
    pub depth: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n: 4096,
            d: 8,
            k: None,
            spread: 0.5,
            noise: 0.0,
            depth: 3,
        }
    }
}

impl SynthParams {
    fn generate(&self, kind: SynthKind, k: usize, seed: u64) -> Result<(Dataset, String), CliError> {
        if self.d == 0 {
            return Err(CliError::config("synthetic data needs --d >= 1"));
        }
        let (n, d) = (self.n, self.d);
        Ok(match kind {
            SynthKind::Linear => (
                synth_linear(n, d, self.noise, seed).0,
                format!("synth:linear(n={n},d={d},noise={:?})", self.noise),
            ),
            SynthKind::Blobs => {
                if k == 0 {
                    return Err(CliError::config("blobs need --k >= 1"));
                }
                (
                    synth_blobs(n, d, k, self.spread, seed).0,
                    format!("synth:blobs(n={n},d={d},k={k},spread={:?})", self.spread),
                )
            }
            SynthKind::Tree => (
                synth_labels_tree(n, d, self.depth, seed),
                format!("synth:tree(n={n},d={d},depth={})", self.depth),
            ),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Synth(SynthKind),
}

impl FromStr for DataSource {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s.strip_prefix("synth:") {
            Some(kind) => Ok(DataSource::Synth(kind.parse()?)),
            None => Ok(DataSource::Csv(PathBuf::from(s))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenArgs {
    pub kind: SynthKind,
    pub synth: SynthParams,
    pub seed: u64,
    pub out: PathBuf,
}

/// Writes a generated dataset as CSV and returns it.
pub fn gen_data(args: &GenArgs) -> Result<Dataset, CliError> {
    let k = args.synth.k.unwrap_or(4);
    let (ds, _) = args.synth.generate(args.kind, k, args.seed)?;
    write_csv(&ds, &args.out)?;
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainArgs {
    pub algo: Algorithm,
    pub source: DataSource,
    pub synth: SynthParams,
    /// Overrides `[device] cores`.
    pub cores: Option<usize>,
    pub compare: bool,
    /// The CSV has no label column.
    pub no_labels: bool,
    /// Keep CSV features as read instead of scaling them onto `[-1, 1]`.
    pub no_scale: bool,
    pub model_out: Option<PathBuf>,
}

impl TrainArgs {
    pub fn new(algo: Algorithm) -> Self {
        TrainArgs {
            algo,
            source: DataSource::Synth(SynthKind::for_algorithm(algo)),
            synth: SynthParams::default(),
            cores: None,
            compare: false,
            no_labels: false,
            no_scale: false,
            model_out: None,
        }
    }
}

fn blob_count(algo: Algorithm, synth: &SynthParams, hp: &Hyperparams) -> usize {
    synth.k.unwrap_or(if algo == Algorithm::Logreg { 2 } else { hp.k })
}

fn load_dataset(settings: &Settings, args: &TrainArgs) -> Result<(Dataset, String), CliError> {
    match &args.source {
        DataSource::Synth(kind) => {
            let k = blob_count(args.algo, &args.synth, &settings.hp);
            args.synth.generate(*kind, k, settings.seed)
        }
        DataSource::Csv(path) => {
            let ds = ingest_csv_with(path, CsvOptions { labels: !args.no_labels })?;
            let ds = if args.no_scale { ds } else { ds.min_max_scaled() };
            Ok((ds, path.display().to_string()))
        }
    }
}

fn oracle(algo: Algorithm, ds: &Dataset, hp: &Hyperparams) -> Result<OracleResult, CliError> {
    let hp = Hyperparams {
        learning_rate: hp.effective_learning_rate()?,
        arithmetic: Arithmetic::Real,
        ..hp.clone()
    };
    Ok(match algo {
        Algorithm::Linreg => oracle_linreg(ds, &hp)?,
        Algorithm::Logreg => oracle_logreg(ds, &hp)?,
        Algorithm::Kmeans => oracle_kmeans(&ds.without_labels(), &hp)?,
        Algorithm::Dtree => oracle_dtree(ds, &hp)?,
    })
}

fn agreement(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Kernel-versus-oracle figures for one trained model.
pub fn parity(algo: Algorithm, ds: &Dataset, model: &ModelState, oracle: &ModelState) -> Result<Vec<(String, f64)>, CliError> {
    let ds_used = if algo.uses_labels() { ds.clone() } else { ds.without_labels() };
    let ours = predict(model, &ds_used)?;
    let theirs = predict(oracle, &ds_used)?;
    let mut out = Vec::new();
    match (model, oracle) {
        (ModelState::KMeans(a), ModelState::KMeans(b)) => {
            out.push(("assignments_match".to_string(), agreement(&ours, &theirs)));
            out.push(("max_centroid_diff".to_string(), max_abs_diff(&a.values, &b.values)));
        }
        (ModelState::Tree(a), ModelState::Tree(b)) => {
            out.push(("prediction_agreement".to_string(), agreement(&ours, &theirs)));
            let same = a.nodes == b.nodes && a.n_classes == b.n_classes;
            out.push(("structure_match".to_string(), if same { 1.0 } else { 0.0 }));
        }
        (ModelState::Logistic(_), _) => {
            out.push(("prediction_agreement".to_string(), agreement(&ours, &theirs)));
            out.push(("max_weight_diff".to_string(), max_abs_diff(&model.params(), &oracle.params())));
        }
        _ => {
            out.push(("max_weight_diff".to_string(), max_abs_diff(&model.params(), &oracle.params())));
        }
    }
    Ok(out)
}

fn build_lut(settings: &Settings) -> Result<LutTable, CliError> {
    let fmt = match settings.hp.arithmetic {
        Arithmetic::Fixed(f) => f,
        Arithmetic::Real => pimml_core::QFormat::Q16_16,
    };
    let l = &settings.lut;
    Ok(LutTable::for_activation(Activation::Sigmoid, l.lo, l.hi, l.entries, fmt)
        .map_err(pimml_core::Error::from)?
        .with_mode(l.mode))
}

fn run_on(
    settings: &Settings,
    algo: Algorithm,
    ds: &Dataset,
    descriptor: String,
    cores: usize,
    compare: bool,
    sweep: &str,
) -> Result<(RunRecord, ModelState), CliError> {
    let started = Instant::now();
    let hp = &settings.hp;
    let cfg = settings.device_for(cores);
    let mut dev = PimDevice::new(cfg.clone()).map_err(pimml_core::Error::from)?;
    let lut = if algo == Algorithm::Logreg { Some(build_lut(settings)?) } else { None };
    let out = train(&mut dev, ds, algo, hp, lut.as_ref())?;
    let eval_ds = if algo.uses_labels() { ds.clone() } else { ds.without_labels() };
    let metric = metrics(&out.model, &eval_ds)?;
    let parity = if compare {
        let o = oracle(algo, ds, hp)?;
        parity(algo, ds, &out.model, &o.model)?
    } else {
        Vec::new()
    };
    let (mode, fmt) = match hp.arithmetic {
        Arithmetic::Fixed(f) => ("fixed", f.to_string()),
        Arithmetic::Real => ("real", "f64".to_string()),
    };
    let mut rec = RunRecord {
        algo: algo.name().into(),
        mode: mode.into(),
        fmt,
        cores,
        ranks: cfg.n_ranks,
        dataset: descriptor,
        n_rows: ds.n_rows(),
        n_features: ds.n_features(),
        hp: hp.clone(),
        seed: settings.seed,
        metric: metric.name.into(),
        metric_value: metric.value,
        parity,
        iterations_run: 0,
        max_compute_cycles: 0,
        max_dma_cycles: 0,
        to_device_bytes: 0,
        from_device_bytes: 0,
        from_device_bytes_per_iter: None,
        host_transfer_cycles: 0,
        host_compute_cycles: 0,
        serialized_total_cycles: 0,
        overlapped_total_cycles: 0,
        sweep: sweep.into(),
        wall_time: 0.0,
    };
    rec.apply_report(&out.report);
    rec.wall_time = started.elapsed().as_secs_f64();
    Ok((rec, out.model))
}

/// Trains once and returns the record. Writes the model when asked.
pub fn run_train(settings: &Settings, args: &TrainArgs) -> Result<RunRecord, CliError> {
    let (ds, descriptor) = load_dataset(settings, args)?;
    let cores = args.cores.unwrap_or(settings.device.n_cores);
    let (rec, model) = run_on(settings, args.algo, &ds, descriptor, cores, args.compare, "train")?;
    if let Some(path) = &args.model_out {
        std::fs::write(path, model.to_text())
            .map_err(|e| CliError::failure(format!("{}: {e}", path.display())))?;
    }
    Ok(rec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    /// Total rows fixed.
    Strong,
    /// Rows per core fixed.
    Weak,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Strong => "strong",
            SweepKind::Weak => "weak",
        }
    }
}

impl FromStr for SweepKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "strong" => Ok(SweepKind::Strong),
            "weak" => Ok(SweepKind::Weak),
            _ => Err(CliError::config(format!("unknown sweep {s:?}: use strong or weak"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleArgs {
    pub algo: Algorithm,
    pub sweep: SweepKind,
    pub cores: Vec<usize>,
    /// Total rows for a strong sweep, rows per core for a weak one.
    pub synth: SynthParams,
}

/// One record per core count, in list order.
pub fn run_scale(settings: &Settings, args: &ScaleArgs) -> Result<Vec<RunRecord>, CliError> {
    if args.cores.is_empty() {
        return Err(CliError::config("--cores needs at least one value"));
    }
    if args.cores[0] == 0 || args.cores.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::config("--cores must be positive and strictly ascending"));
    }
    let kind = SynthKind::for_algorithm(args.algo);
    let k = blob_count(args.algo, &args.synth, &settings.hp);
    let mut records = Vec::with_capacity(args.cores.len());
    let mut strong_data = None;
    for &c in &args.cores {
        let (ds, desc) = match args.sweep {
            SweepKind::Strong => strong_data
                .get_or_insert_with(|| args.synth.generate(kind, k, settings.seed))
                .clone()?,
            SweepKind::Weak => {
                let synth = SynthParams {
                    n: args.synth.n * c,
                    ..args.synth.clone()
                };
                synth.generate(kind, k, settings.seed)?
            }
        };
        let (rec, _) = run_on(settings, args.algo, &ds, desc, c, false, args.sweep.name())?;
        records.push(rec);
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LutCheckArgs {
    pub function: Activation,
    pub samples: usize,
}

impl Default for LutCheckArgs {
    fn default() -> Self {
        LutCheckArgs {
            function: Activation::Sigmoid,
            samples: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LutCheckOutcome {
    pub measured: f64,
    pub bound: f64,
}

impl LutCheckOutcome {
    pub fn within_bound(&self) -> bool {
        self.measured <= self.bound
    }
}

/// Dense scan of the table described by `settings.lut` in the format of
/// `settings.hp.arithmetic`.
pub fn lut_check(settings: &Settings, args: &LutCheckArgs) -> Result<LutCheckOutcome, CliError> {
    let fmt = match settings.hp.arithmetic {
        Arithmetic::Fixed(f) => f,
        Arithmetic::Real => return Err(CliError::config("lut-check needs a fixed-point format")),
    };
    let l = &settings.lut;
    let table = LutTable::for_activation(args.function, l.lo, l.hi, l.entries, fmt)
        .map_err(pimml_core::Error::from)?
        .with_mode(l.mode);
    let f = args.function;
    let measured = lut_max_error(&table, |x| f.eval(x), args.samples).map_err(pimml_core::Error::from)?;
    Ok(LutCheckOutcome {
        measured,
        bound: table.error_bound(f.lipschitz()),
    })
}
