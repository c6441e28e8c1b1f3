use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pimml_cli::commands::SynthParams;
use pimml_cli::{
    append_records, gen_data, lut_check, run_scale, run_train, CliError, DataSource, GenArgs, LutCheckArgs,
    ScaleArgs, Settings, SweepKind, SynthKind, TrainArgs,
};
use pimml_core::lut::{Activation, LookupMode};
use pimml_core::{Algorithm, Arithmetic, QFormat};

#[derive(Parser)]
#[command(name = "pimml", version, about = "Train ML workloads on a simulated PIM machine")]
struct Cli {
    /// INI config file. Defaults to $PIMML_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for simulated cores. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV.
    GenData {
        /// linear, blobs or tree
        kind: SynthKind,
        #[command(flatten)]
        synth: SynthFlags,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train once and append a report row.
    Train(TrainFlags),
    /// Run a strong or weak scaling sweep.
    Scale(ScaleFlags),
    /// Measure LUT error against its analytic bound.
    LutCheck(LutFlags),
}

#[derive(Args)]
struct SynthFlags {
    #[arg(long, default_value_t = 4096)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    d: usize,
    /// Blob clusters.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    spread: f64,
    /// Label noise sigma for linear data.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Rule depth for tree data.
    #[arg(long, default_value_t = 3)]
    depth: usize,
}

impl SynthFlags {
    fn params(&self) -> SynthParams {
        SynthParams {
            n: self.n,
            d: self.d,
            k: self.k,
            spread: self.spread,
            noise: self.noise,
            depth: self.depth,
        }
    }
}

/// Overrides for `[arith]` and `[train]`.
#[derive(Args)]
struct HpFlags {
    /// fixed or real
    #[arg(long)]
    mode: Option<String>,
    /// Fixed-point format such as q16.16.
    #[arg(long)]
    fmt: Option<QFormat>,
    #[arg(long)]
    grad_frac: Option<u32>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    min_samples: Option<usize>,
    #[arg(long)]
    n_bins: Option<usize>,
    #[arg(long)]
    fit_bias: bool,
    #[arg(long)]
    chunk_bytes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl HpFlags {
    fn apply(&self, s: &mut Settings) -> Result<(), CliError> {
        let hp = &mut s.hp;
        let fmt = match (self.fmt, hp.arithmetic) {
            (Some(f), _) => f,
            (None, Arithmetic::Fixed(f)) => f,
            (None, Arithmetic::Real) => QFormat::Q16_16,
        };
        hp.arithmetic = match self.mode.as_deref() {
            Some("real") => Arithmetic::Real,
            Some("fixed") => Arithmetic::Fixed(fmt),
            Some(m) => return Err(CliError::config(format!("--mode {m}: use fixed or real"))),
            None if self.fmt.is_some() => Arithmetic::Fixed(fmt),
            None => hp.arithmetic,
        };
        macro_rules! set {
            ($($flag:ident => $field:expr),*) => {
                $(if let Some(v) = self.$flag { $field = v; })*
            };
        }
        set!(grad_frac => hp.grad_frac_bits, learning_rate => hp.learning_rate, iterations => hp.iterations,
             clusters => hp.k, max_depth => hp.max_depth, min_samples => hp.min_samples, n_bins => hp.n_bins,
             chunk_bytes => hp.chunk_bytes, seed => s.seed);
        if self.fit_bias {
            hp.fit_bias = true;
        }
        Ok(())
    }
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    algo: Algorithm,
    /// CSV path or synth:linear|blobs|tree.
    #[arg(long)]
    dataset: Option<DataSource>,
    #[arg(long)]
    cores: Option<usize>,
    /// Also run the double-precision oracle and record parity.
    #[arg(long)]
    compare: bool,
    /// Report file to append to.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    model_out: Option<PathBuf>,
    #[arg(long)]
    no_labels: bool,
    #[arg(long)]
    no_scale: bool,
    #[command(flatten)]
    synth: SynthFlags,
    #[command(flatten)]
    hp: HpFlags,
}

#[derive(Args)]
struct ScaleFlags {
    #[arg(long)]
    algo: Algorithm,
    #[arg(long)]
    sweep: SweepKind,
    /// Ascending core counts, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    cores: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    synth: SynthFlags,
    #[command(flatten)]
    hp: HpFlags,
}

#[derive(Args)]
struct LutFlags {
    #[arg(long)]
    entries: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    hi: Option<f64>,
    #[arg(long)]
    fmt: Option<QFormat>,
    /// sigmoid or identity
    #[arg(long = "fn", default_value = "sigmoid")]
    function: String,
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    /// nearest or interpolate
    #[arg(long)]
    lookup: Option<String>,
}

fn emit(records: &[pimml_cli::RunRecord], out: Option<&PathBuf>) -> Result<(), CliError> {
    match out {
        Some(path) => append_records(path, records),
        None => {
            println!("{}", pimml_cli::record::COLUMNS.join(","));
            for r in records {
                println!("{}", r.fields().join(","));
            }
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let mut settings = Settings::load(cli.config.as_deref())?;
    match cli.cmd {
        Command::GenData { kind, synth, seed, out } => {
            let ds = gen_data(&GenArgs {
                kind,
                synth: synth.params(),
                seed,
                out: out.clone(),
            })?;
            eprintln!("wrote {} rows to {}", ds.n_rows(), out.display());
        }
        Command::Train(f) => {
            f.hp.apply(&mut settings)?;
            let mut args = TrainArgs::new(f.algo);
            if let Some(src) = f.dataset {
                args.source = src;
            }
            args.synth = f.synth.params();
            args.cores = f.cores;
            args.compare = f.compare;
            args.no_labels = f.no_labels;
            args.no_scale = f.no_scale;
            args.model_out = f.model_out;
            let rec = run_train(&settings, &args)?;
            emit(&[rec], f.out.as_ref())?;
        }
        Command::Scale(f) => {
            f.hp.apply(&mut settings)?;
            let args = ScaleArgs {
                algo: f.algo,
                sweep: f.sweep,
                cores: f.cores,
                synth: f.synth.params(),
            };
            let recs = run_scale(&settings, &args)?;
            emit(&recs, f.out.as_ref())?;
        }
        Command::LutCheck(f) => {
            let l = &mut settings.lut;
            if let Some(v) = f.entries {
                l.entries = v;
            }
            if let Some(v) = f.lo {
                l.lo = v;
            }
            if let Some(v) = f.hi {
                l.hi = v;
            }
            match f.lookup.as_deref() {
                None => {}
                Some("nearest") => l.mode = LookupMode::Nearest,
                Some("interpolate") => l.mode = LookupMode::Interpolate,
                Some(m) => return Err(CliError::config(format!("--lookup {m}: use nearest or interpolate"))),
            }
            if let Some(fmt) = f.fmt {
                settings.hp.arithmetic = Arithmetic::Fixed(fmt);
            }
            let function: Activation = f
                .function
                .parse()
                .map_err(|e: pimml_core::lut::LutError| CliError::config(e.to_string()))?;
            let out = lut_check(
                &settings,
                &LutCheckArgs {
                    function,
                    samples: f.samples,
                },
            )?;
            println!("measured={:e} bound={:e}", out.measured, out.bound);
            return Ok(out.within_bound());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("pimml: thread pool: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("pimml: measured error exceeds the bound");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("pimml: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
