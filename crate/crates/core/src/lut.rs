//! Lookup tables for activation functions.
//!
//! A table samples `f` at `n` evenly spaced points of `[lo, hi]` and stores
//! the quantized results. Evaluation turns a fixed-point input into a table
//! index with one multiply and one shift and returns the nearest entry.
//! Inputs outside the domain clamp to the first or last entry.

use std::str::FromStr;

use thiserror::Error;

use crate::fixedpoint::{dequantize, quantize, shift_round_even, FixedError, FixedScalar, QFormat};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LutError {
    #[error("invalid table parameters: {0}")]
    InvalidParams(String),
    #[error("function is not finite at x = {0}")]
    NonFinite(f64),
    #[error(transparent)]
    Fixed(#[from] FixedError),
}

/// Functions a table can be built for by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Lipschitz constant on the whole real line.
    pub fn lipschitz(self) -> f64 {
        match self {
            Activation::Sigmoid => 0.25,
            Activation::Identity => 1.0,
        }
    }
}

impl FromStr for Activation {
    type Err = LutError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" => Ok(Activation::Identity),
            other => Err(LutError::InvalidParams(format!("unknown function {other:?}"))),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LookupMode {
    #[default]
    Nearest,
    /// Linear interpolation between neighbouring entries.
    Interpolate,
}

/// Fraction bits of the precomputed reciprocal step.
const STEP_FRAC: i32 = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct LutTable {
    lo: f64,
    hi: f64,
    values: Vec<FixedScalar>,
    out_fmt: QFormat,
    mode: LookupMode,
    /// `(n - 1) / (hi - lo)` with `STEP_FRAC` fraction bits.
    inv_step: i128,
}

pub const DEFAULT_LO: f64 = -8.0;
pub const DEFAULT_HI: f64 = 8.0;
pub const DEFAULT_ENTRIES: usize = 4096;

/// Samples `f` at `lo + i * (hi - lo) / (n - 1)` for `i in 0..n`.
pub fn build_lut(
    f: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    n: usize,
    fmt: QFormat,
) -> Result<LutTable, LutError> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(LutError::InvalidParams(format!("domain [{lo}, {hi}] is empty")));
    }
    if n < 2 || !n.is_power_of_two() {
        return Err(LutError::InvalidParams(format!(
            "entry count {n} is not a power of two >= 2"
        )));
    }
    let h = (hi - lo) / (n - 1) as f64;
    let values = (0..n)
        .map(|i| {
            let x = lo + i as f64 * h;
            let y = f(x);
            if !y.is_finite() {
                return Err(LutError::NonFinite(x));
            }
            Ok(quantize(y, fmt)?)
        })
        .collect::<Result<Vec<_>, LutError>>()?;
    let inv_step = ((n - 1) as f64 / (hi - lo) * 2f64.powi(STEP_FRAC)).round() as i128;
    Ok(LutTable {
        lo,
        hi,
        values,
        out_fmt: fmt,
        mode: LookupMode::Nearest,
        inv_step,
    })
}

impl LutTable {
    pub fn for_activation(
        act: Activation,
        lo: f64,
        hi: f64,
        n: usize,
        fmt: QFormat,
    ) -> Result<Self, LutError> {
        build_lut(|x| act.eval(x), lo, hi, n, fmt)
    }

    /// 4096-entry sigmoid over `[-8, 8]` in q16.16.
    pub fn sigmoid_default() -> Self {
        Self::for_activation(
            Activation::Sigmoid,
            DEFAULT_LO,
            DEFAULT_HI,
            DEFAULT_ENTRIES,
            QFormat::Q16_16,
        )
        .expect("default sigmoid table parameters are valid")
    }

    pub fn with_mode(mut self, mode: LookupMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn mode(&self) -> LookupMode {
        self.mode
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn n_entries(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[FixedScalar] {
        &self.values
    }

    pub fn out_fmt(&self) -> QFormat {
        self.out_fmt
    }

    /// Sample spacing.
    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n_entries() - 1) as f64
    }

    /// `L * h / 2 + half an output ulp`: the worst-case nearest-entry error
    /// for an `L`-Lipschitz function.
    pub fn error_bound(&self, lipschitz: f64) -> f64 {
        lipschitz * self.step() / 2.0 + self.out_fmt.resolution() / 2.0
    }

    /// Precomputes the integer constants for inputs in `in_fmt`.
    pub fn indexer(&self, in_fmt: QFormat) -> LutIndexer {
        let lo_raw = (self.lo * 2f64.powi(in_fmt.frac_bits() as i32)).round_ties_even() as i128;
        LutIndexer {
            lo_raw,
            inv_step: self.inv_step,
            shift: STEP_FRAC + in_fmt.frac_bits() as i32,
            last: self.n_entries() - 1,
        }
    }

    /// Serialized entries, little-endian at the output format's width.
    pub fn to_bytes(&self) -> Vec<u8> {
        let w = self.out_fmt.elem_bytes();
        let mut out = Vec::with_capacity(w * self.values.len());
        for v in &self.values {
            out.extend_from_slice(&v.raw().to_le_bytes()[..w]);
        }
        out
    }
}

/// Integer-only input-to-index conversion for one input format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LutIndexer {
    lo_raw: i128,
    inv_step: i128,
    shift: i32,
    last: usize,
}

impl LutIndexer {
    /// Position of `raw` in table units, `shift` fraction bits.
    fn position(&self, raw: i64) -> i128 {
        (raw as i128 - self.lo_raw) * self.inv_step
    }

    /// Nearest entry index, clamped to the table.
    pub fn index(&self, raw: i64) -> usize {
        let i = shift_round_even(self.position(raw), self.shift);
        i.clamp(0, self.last as i128) as usize
    }

    /// Lower neighbour index and interpolation weight, `shift` fraction bits.
    fn bracket(&self, raw: i64) -> (usize, i128) {
        let p = self.position(raw);
        if p <= 0 {
            return (0, 0);
        }
        let i = p >> self.shift;
        if i >= self.last as i128 {
            return (self.last, 0);
        }
        (i as usize, p - (i << self.shift))
    }

    pub fn shift(&self) -> i32 {
        self.shift
    }

    /// Table lookup over raw entries, as a core does it from a scratchpad
    /// copy of [`LutTable::to_bytes`]. Returns the raw output and the number
    /// of multiplies spent.
    pub fn lookup_raw(&self, values: &[i64], mode: LookupMode, out_fmt: QFormat, raw: i64) -> (i64, u64) {
        match mode {
            LookupMode::Nearest => (values[self.index(raw)], 1),
            LookupMode::Interpolate => {
                let (i, w) = self.bracket(raw);
                if w == 0 {
                    return (values[i], 1);
                }
                let delta = shift_round_even((values[i + 1] - values[i]) as i128 * w, self.shift);
                (FixedScalar::saturating_from_raw(values[i] as i128 + delta, out_fmt).raw(), 2)
            }
        }
    }
}

/// Evaluates the table at `x`.
pub fn lut_eval(t: &LutTable, x: FixedScalar) -> FixedScalar {
    let ix = t.indexer(x.fmt());
    match t.mode {
        LookupMode::Nearest => t.values[ix.index(x.raw())],
        LookupMode::Interpolate => {
            let (i, w) = ix.bracket(x.raw());
            let a = t.values[i];
            if w == 0 {
                return a;
            }
            let b = t.values[i + 1];
            let delta = shift_round_even((b.raw() - a.raw()) as i128 * w, ix.shift);
            FixedScalar::saturating_from_raw(a.raw() as i128 + delta, t.out_fmt)
        }
    }
}

/// Largest `|lut_eval(x) - f(x)|` over `n_samples` evenly spaced points of
/// the table domain.
///
/// Each scan point is quantized to the table's format first and the
/// reference is evaluated at the quantized input, so the figure measures the
/// table alone.
pub fn lut_max_error(
    t: &LutTable,
    f: impl Fn(f64) -> f64,
    n_samples: usize,
) -> Result<f64, LutError> {
    if n_samples < t.n_entries() || n_samples < 2 {
        return Err(LutError::InvalidParams(format!(
            "{n_samples} samples cannot cover {} entries",
            t.n_entries()
        )));
    }
    let span = t.hi - t.lo;
    let mut worst = 0.0f64;
    for j in 0..n_samples {
        let x = t.lo + span * (j as f64 / (n_samples - 1) as f64);
        let xq = quantize(x, t.out_fmt)?;
        let err = (dequantize(lut_eval(t, xq)) - f(dequantize(xq))).abs();
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    const Q: QFormat = QFormat::Q16_16;

    fn q(x: f64) -> FixedScalar {
        quantize(x, Q).unwrap()
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(build_lut(sigmoid, 1.0, 1.0, 16, Q).is_err());
        assert!(build_lut(sigmoid, 0.0, 1.0, 1, Q).is_err());
        assert!(build_lut(sigmoid, 0.0, 1.0, 100, Q).is_err());
        assert_eq!(
            build_lut(|x| 1.0 / x, 0.0, 1.0, 4, Q),
            Err(LutError::NonFinite(0.0))
        );
    }

    #[test]
    fn identity_two_entries() {
        let t = build_lut(|x| x, 0.0, 1.0, 2, Q).unwrap();
        assert_eq!(t.values(), &[q(0.0), q(1.0)]);
    }

    #[test]
    fn sigmoid_table_entries() {
        let t = LutTable::sigmoid_default();
        // oracle: reference sigmoid in double precision at the first node
        let expected = 1.0 / (1.0 + 8f64.exp());
        assert!((expected - 0.000335).abs() < 5e-7);
        assert_eq!(t.values()[0], q(expected));
        let mid_lo = t.values()[2047].to_f64();
        let mid_hi = t.values()[2048].to_f64();
        assert!(mid_lo < 0.5 && mid_hi > 0.5);
        let at_zero = lut_eval(&t, q(0.0)).to_f64();
        assert!((at_zero - 0.5).abs() <= t.error_bound(0.25));
    }

    #[test]
    fn clamps_outside_domain() {
        let t = LutTable::sigmoid_default();
        assert_eq!(lut_eval(&t, q(-100.0)), t.values()[0]);
        assert_eq!(lut_eval(&t, q(100.0)), t.values()[4095]);
        assert_eq!(lut_eval(&t, Q.min()), t.values()[0]);
        assert_eq!(lut_eval(&t, Q.max()), t.values()[4095]);
        let t = t.with_mode(LookupMode::Interpolate);
        assert_eq!(lut_eval(&t, q(-100.0)), t.values()[0]);
        assert_eq!(lut_eval(&t, q(100.0)), t.values()[4095]);
    }

    #[test]
    fn index_matches_float_rounding_away_from_ties() {
        let t = LutTable::sigmoid_default();
        let ix = t.indexer(Q);
        let h = t.step();
        for raw in (-(9i64 << 16)..(9i64 << 16)).step_by(997) {
            let x = raw as f64 / 65536.0;
            let pos = (x - t.lo()) / h;
            if (pos.fract() - 0.5).abs() < 1e-6 {
                continue;
            }
            let want = pos.round().clamp(0.0, 4095.0) as usize;
            assert_eq!(ix.index(raw), want, "x = {x}");
        }
    }

    #[test]
    fn identity_error_bounds() {
        let t = build_lut(|x| x, 0.0, 1.0, 4096, Q).unwrap();
        let err = lut_max_error(&t, |x| x, 100_000).unwrap();
        assert!(err <= (1.0 / 4095.0) / 2.0 + 2f64.powi(-17));
        assert!(err <= t.error_bound(1.0));

        // two entries: nearest lookup is off by half the domain at x = 0.5
        let t = build_lut(|x| x, 0.0, 1.0, 2, Q).unwrap();
        let err = lut_max_error(&t, |x| x, 10_001).unwrap();
        assert!((err - 0.5).abs() < 1e-4, "{err}");
        assert!(err <= t.error_bound(1.0));
    }

    #[test]
    fn sigmoid_error_scan() {
        let t = LutTable::sigmoid_default();
        let err = lut_max_error(&t, sigmoid, 1_000_000).unwrap();
        assert!(err <= 5.0e-4, "{err}");
        assert!(err <= t.error_bound(0.25));

        let fine = LutTable::for_activation(Activation::Sigmoid, -8.0, 8.0, 8192, Q).unwrap();
        assert!(lut_max_error(&fine, sigmoid, 1_000_000).unwrap() <= err);
    }

    #[test]
    fn scan_needs_enough_samples() {
        let t = LutTable::sigmoid_default();
        assert!(lut_max_error(&t, sigmoid, 100).is_err());
    }

    #[test]
    fn sigmoid_symmetry_and_monotonicity() {
        let t = LutTable::sigmoid_default();
        let mut prev = i64::MIN;
        for raw in (-(10i64 << 16)..=(10i64 << 16)).step_by(61) {
            let x = FixedScalar::from_raw(raw, Q).unwrap();
            let y = lut_eval(&t, x);
            assert!(y.raw() >= prev);
            prev = y.raw();
            let s = y.to_f64() + lut_eval(&t, crate::fixedpoint::fx_neg(x)).to_f64();
            assert!((s - 1.0).abs() <= 2.5e-3, "x = {raw}");
        }
    }

    #[test]
    fn interpolation_is_tighter() {
        let t = LutTable::sigmoid_default().with_mode(LookupMode::Interpolate);
        let err = lut_max_error(&t, sigmoid, 200_000).unwrap();
        // second-order error plus rounding, far below the nearest-entry figure
        assert!(err < 2e-5, "{err}");
    }

    #[test]
    fn byte_image_matches_entries() {
        let t = build_lut(|x| x, -1.0, 1.0, 4, Q).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(bytes.len(), 16);
        let first = i32::from_le_bytes(bytes[..4].try_into().unwrap());
        assert_eq!(first as i64, t.values()[0].raw());
    }

    #[test]
    fn raw_lookup_agrees_with_lut_eval() {
        for mode in [LookupMode::Nearest, LookupMode::Interpolate] {
            let t = LutTable::sigmoid_default().with_mode(mode);
            let raws: Vec<i64> = t.values().iter().map(|v| v.raw()).collect();
            let ix = t.indexer(Q);
            for raw in (-700_000i64..700_000).step_by(997) {
                let (got, _) = ix.lookup_raw(&raws, mode, Q, raw);
                assert_eq!(got, lut_eval(&t, FixedScalar::from_raw(raw, Q).unwrap()).raw());
            }
        }
    }
}
