//! Fixtures shared by the criterion benches.

use pimml_core::fixedpoint::quantize;
use pimml_core::layout::synth_linear;
use pimml_core::{Dataset, FixedScalar, QFormat};

/// Two q16.16 vectors of length `n` with values in `[-2, 2)`.
pub fn fixed_vectors(n: usize) -> (Vec<FixedScalar>, Vec<FixedScalar>) {
    let q = QFormat::Q16_16;
    let v = |i: usize, s: usize| quantize(((i * s) % 4096) as f64 / 1024.0 - 2.0, q).expect("in range");
    ((0..n).map(|i| v(i, 7)).collect(), (0..n).map(|i| v(i, 13)).collect())
}

/// Noise-free linear regression data.
pub fn linear_dataset(n: usize, d: usize) -> Dataset {
    synth_linear(n, d, 0.0, 42).0
}

/// Evenly spaced q16.16 inputs across `[lo, hi]`.
pub fn lut_inputs(n: usize, lo: f64, hi: f64) -> Vec<FixedScalar> {
    (0..n)
        .map(|i| quantize(lo + (hi - lo) * i as f64 / (n - 1) as f64, QFormat::Q16_16).expect("in range"))
        .collect()
}
