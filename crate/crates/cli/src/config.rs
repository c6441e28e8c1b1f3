//! INI run configuration: `[device]`, `[arith]`, `[train]` and `[lut]`.

use std::path::Path;
use std::str::FromStr;

use ini::Ini;
use pimml_core::lut::{LookupMode, DEFAULT_ENTRIES, DEFAULT_HI, DEFAULT_LO};
use pimml_core::{Arithmetic, Hyperparams, PimConfig, QFormat};

use crate::CliError;

pub const CONFIG_ENV: &str = "PIMML_CONFIG";
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq)]
pub struct LutSettings {
    pub lo: f64,
    pub hi: f64,
    pub entries: usize,
    pub mode: LookupMode,
}

impl Default for LutSettings {
    fn default() -> Self {
        LutSettings {
            lo: DEFAULT_LO,
            hi: DEFAULT_HI,
            entries: DEFAULT_ENTRIES,
            mode: LookupMode::Nearest,
        }
    }
}

/// Everything a command needs besides its own flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub device: PimConfig,
    /// Whether `[device] ranks` was given; otherwise ranks follow the core
    /// count at 64 cores per rank.
    pub explicit_ranks: bool,
    pub hp: Hyperparams,
    pub lut: LutSettings,
    pub seed: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            device: PimConfig::default(),
            explicit_ranks: false,
            hp: Hyperparams::default(),
            lut: LutSettings::default(),
            seed: DEFAULT_SEED,
        }
    }
}

fn value<T: FromStr>(section: &str, key: &str, raw: &str) -> Result<T, CliError> {
    raw.trim()
        .parse()
        .map_err(|_| CliError::config(format!("[{section}] {key} = {raw:?} is not valid")))
}

fn flag(section: &str, key: &str, raw: &str) -> Result<bool, CliError> {
    match raw.trim() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(CliError::config(format!("[{section}] {key} = {raw:?} is not a boolean"))),
    }
}

impl Settings {
    /// Reads `path`, or the file named by `PIMML_CONFIG`, or nothing.
    pub fn load(path: Option<&Path>) -> Result<Settings, CliError> {
        let env = std::env::var_os(CONFIG_ENV);
        let path = path.or(env.as_deref().map(Path::new));
        match path {
            None => Ok(Settings::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
                Settings::parse(&text)
            }
        }
    }

    pub fn parse(text: &str) -> Result<Settings, CliError> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::config(format!("config: {e}")))?;
        let mut s = Settings::default();
        let mut fmt = QFormat::Q16_16;
        let mut real = false;
        for (section, props) in ini.iter() {
            let name = section.unwrap_or("");
            for (key, raw) in props.iter() {
                s.apply(name, key, raw, &mut fmt, &mut real)?;
            }
        }
        s.hp.arithmetic = if real { Arithmetic::Real } else { Arithmetic::Fixed(fmt) };
        if !s.explicit_ranks {
            s.device = s.device.resized(s.device.n_cores);
        }
        s.device
            .validate()
            .map_err(|e| CliError::config(format!("config: {e}")))?;
        Ok(s)
    }

    fn apply(&mut self, section: &str, key: &str, raw: &str, fmt: &mut QFormat, real: &mut bool) -> Result<(), CliError> {
        let d = &mut self.device;
        let hp = &mut self.hp;
        match (section, key) {
            ("device", "cores") => d.n_cores = value(section, key, raw)?,
            ("device", "clock_hz") => d.clock_hz = value(section, key, raw)?,
            ("device", "bank_bytes") => d.bank_bytes = value(section, key, raw)?,
            ("device", "scratchpad_bytes") => d.scratchpad_bytes = value(section, key, raw)?,
            ("device", "ranks") => {
                d.n_ranks = value(section, key, raw)?;
                self.explicit_ranks = true;
            }
            ("device", "add32_cycles") => d.costs.add32 = value(section, key, raw)?,
            ("device", "mul32_cycles") => d.costs.mul32 = value(section, key, raw)?,
            ("device", "cmp_cycles") => d.costs.cmp = value(section, key, raw)?,
            ("device", "lut_cycles") => d.costs.lut_lookup = value(section, key, raw)?,
            ("device", "dma_alpha") => d.dma_alpha = value(section, key, raw)?,
            ("device", "dma_beta") => d.dma_beta = value(section, key, raw)?,
            ("device", "link_bytes_per_sec") => d.link_bytes_per_sec = value(section, key, raw)?,
            ("device", "host_cycles_per_op") => d.host_cycles_per_op = value(section, key, raw)?,
            ("arith", "mode") => {
                *real = match raw.trim() {
                    "real" => true,
                    "fixed" => false,
                    _ => return Err(CliError::config(format!("[arith] mode = {raw:?}: use fixed or real"))),
                }
            }
            ("arith", "fmt") => {
                *fmt = raw
                    .trim()
                    .parse()
                    .map_err(|e| CliError::config(format!("[arith] fmt: {e}")))?
            }
            ("arith", "grad_frac") => hp.grad_frac_bits = value(section, key, raw)?,
            ("train", "learning_rate") => hp.learning_rate = value(section, key, raw)?,
            ("train", "iterations") => hp.iterations = value(section, key, raw)?,
            ("train", "k") => hp.k = value(section, key, raw)?,
            ("train", "max_depth") => hp.max_depth = value(section, key, raw)?,
            ("train", "min_samples") => hp.min_samples = value(section, key, raw)?,
            ("train", "n_bins") => hp.n_bins = value(section, key, raw)?,
            ("train", "fit_bias") => hp.fit_bias = flag(section, key, raw)?,
            ("train", "chunk_bytes") => hp.chunk_bytes = value(section, key, raw)?,
            ("train", "seed") => self.seed = value(section, key, raw)?,
            ("lut", "lo") => self.lut.lo = value(section, key, raw)?,
            ("lut", "hi") => self.lut.hi = value(section, key, raw)?,
            ("lut", "entries") => self.lut.entries = value(section, key, raw)?,
            ("lut", "mode") => {
                self.lut.mode = match raw.trim() {
                    "nearest" => LookupMode::Nearest,
                    "interpolate" => LookupMode::Interpolate,
                    _ => return Err(CliError::config(format!("[lut] mode = {raw:?}: use nearest or interpolate"))),
                }
            }
            _ => {
                return Err(CliError::config(format!(
                    "unknown config key [{section}] {key}"
                )))
            }
        }
        Ok(())
    }

    /// Device description for `cores` cores. An explicit rank count is kept,
    /// capped at one core per rank.
    pub fn device_for(&self, cores: usize) -> PimConfig {
        if self.explicit_ranks {
            PimConfig {
                n_cores: cores,
                n_ranks: self.device.n_ranks.min(cores.max(1)),
                ..self.device.clone()
            }
        } else {
            self.device.resized(cores)
        }
    }
}
