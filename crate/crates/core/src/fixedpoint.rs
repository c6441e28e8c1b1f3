//! Signed fixed-point arithmetic.
//!
//! Values are a two's-complement raw integer plus a [`QFormat`] giving the
//! storage width and the fraction position. Scalar operations saturate to the
//! format range and round to nearest, ties to even. Products are accumulated
//! without intermediate rounding in a 64-bit [`WideAccumulator`], which reports
//! overflow as an error instead of wrapping.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FixedError {
    #[error("cannot quantize NaN")]
    NotANumber,
    #[error("invalid fixed-point format: {0}")]
    InvalidFormat(String),
    #[error("format mismatch: {0} vs {1}")]
    FormatMismatch(QFormat, QFormat),
    #[error("raw value {raw} does not fit {fmt}")]
    RawOutOfRange { raw: i64, fmt: QFormat },
    #[error("operand lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("accumulator holds fraction bits {have}, products need {want}")]
    FracMismatch { have: u32, want: u32 },
    #[error("64-bit accumulator overflow")]
    AccumulatorOverflow,
    #[error("value does not fit {0} without saturating")]
    Saturated(QFormat),
}

/// Storage width and binary point of a fixed-point number.
///
/// Written as `q<int>.<frac>` where `int + frac` is the storage width, so
/// `q16.16` is a 32-bit word with 16 fraction bits and `q8.8` a 16-bit word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QFormat {
    total_bits: u32,
    frac_bits: u32,
}

impl QFormat {
    pub const Q16_16: QFormat = QFormat {
        total_bits: 32,
        frac_bits: 16,
    };

    pub fn new(total_bits: u32, frac_bits: u32) -> Result<Self, FixedError> {
        if !matches!(total_bits, 8 | 16 | 32) {
            return Err(FixedError::InvalidFormat(format!(
                "storage width {total_bits} is not 8, 16 or 32"
            )));
        }
        if frac_bits >= total_bits {
            return Err(FixedError::InvalidFormat(format!(
                "{frac_bits} fraction bits leave no sign bit in {total_bits} bits"
            )));
        }
        Ok(QFormat {
            total_bits,
            frac_bits,
        })
    }

    pub fn total_bits(self) -> u32 {
        self.total_bits
    }

    pub fn frac_bits(self) -> u32 {
        self.frac_bits
    }

    /// Bytes per stored element.
    pub fn elem_bytes(self) -> usize {
        (self.total_bits / 8) as usize
    }

    pub fn raw_min(self) -> i64 {
        -(1i64 << (self.total_bits - 1))
    }

    pub fn raw_max(self) -> i64 {
        (1i64 << (self.total_bits - 1)) - 1
    }

    /// One ulp, `2^-frac_bits`.
    pub fn resolution(self) -> f64 {
        pow2(-(self.frac_bits as i32))
    }

    pub fn min_value(self) -> f64 {
        self.raw_min() as f64 * self.resolution()
    }

    pub fn max_value(self) -> f64 {
        self.raw_max() as f64 * self.resolution()
    }

    pub fn one(self) -> FixedScalar {
        FixedScalar {
            raw: saturate(1i128 << self.frac_bits, self),
            fmt: self,
        }
    }

    pub fn zero(self) -> FixedScalar {
        FixedScalar { raw: 0, fmt: self }
    }

    pub fn max(self) -> FixedScalar {
        FixedScalar {
            raw: self.raw_max(),
            fmt: self,
        }
    }

    pub fn min(self) -> FixedScalar {
        FixedScalar {
            raw: self.raw_min(),
            fmt: self,
        }
    }

    /// Every format this crate supports, in width-then-fraction order.
    pub fn all() -> impl Iterator<Item = QFormat> {
        [8u32, 16, 32].into_iter().flat_map(|total| {
            (0..total).map(move |frac| QFormat {
                total_bits: total,
                frac_bits: frac,
            })
        })
    }
}

impl Default for QFormat {
    fn default() -> Self {
        QFormat::Q16_16
    }
}

impl fmt::Display for QFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}.{}", self.total_bits - self.frac_bits, self.frac_bits)
    }
}

impl FromStr for QFormat {
    type Err = FixedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FixedError::InvalidFormat(format!("expected q<int>.<frac>, got {s:?}"));
        let body = s
            .trim()
            .strip_prefix(['q', 'Q'])
            .ok_or_else(bad)?;
        let (int, frac) = body.split_once('.').ok_or_else(bad)?;
        let int: u32 = int.parse().map_err(|_| bad())?;
        let frac: u32 = frac.parse().map_err(|_| bad())?;
        QFormat::new(int + frac, frac)
    }
}

/// A fixed-point value: `raw * 2^-frac_bits`, exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedScalar {
    raw: i64,
    fmt: QFormat,
}

impl FixedScalar {
    pub fn from_raw(raw: i64, fmt: QFormat) -> Result<Self, FixedError> {
        if raw < fmt.raw_min() || raw > fmt.raw_max() {
            return Err(FixedError::RawOutOfRange { raw, fmt });
        }
        Ok(FixedScalar { raw, fmt })
    }

    /// Builds a value from a raw integer, saturating it into range.
    pub fn saturating_from_raw(raw: i128, fmt: QFormat) -> Self {
        FixedScalar {
            raw: saturate(raw, fmt),
            fmt,
        }
    }

    pub fn raw(self) -> i64 {
        self.raw
    }

    pub fn fmt(self) -> QFormat {
        self.fmt
    }

    pub fn to_f64(self) -> f64 {
        dequantize(self)
    }

    pub fn is_saturated(self) -> bool {
        self.raw == self.fmt.raw_min() || self.raw == self.fmt.raw_max()
    }
}

impl fmt::Display for FixedScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

/// Round-to-nearest-even quantization with saturation.
pub fn quantize(x: f64, fmt: QFormat) -> Result<FixedScalar, FixedError> {
    if x.is_nan() {
        return Err(FixedError::NotANumber);
    }
    let scaled = (x * pow2(fmt.frac_bits as i32)).round_ties_even();
    let raw = scaled.clamp(fmt.raw_min() as f64, fmt.raw_max() as f64) as i64;
    Ok(FixedScalar { raw, fmt })
}

pub fn dequantize(v: FixedScalar) -> f64 {
    v.raw as f64 * v.fmt.resolution()
}

fn check_fmt(a: FixedScalar, b: FixedScalar) -> Result<QFormat, FixedError> {
    if a.fmt != b.fmt {
        return Err(FixedError::FormatMismatch(a.fmt, b.fmt));
    }
    Ok(a.fmt)
}

pub fn fx_add(a: FixedScalar, b: FixedScalar) -> Result<FixedScalar, FixedError> {
    let fmt = check_fmt(a, b)?;
    Ok(FixedScalar::saturating_from_raw(
        a.raw as i128 + b.raw as i128,
        fmt,
    ))
}

pub fn fx_sub(a: FixedScalar, b: FixedScalar) -> Result<FixedScalar, FixedError> {
    let fmt = check_fmt(a, b)?;
    Ok(FixedScalar::saturating_from_raw(
        a.raw as i128 - b.raw as i128,
        fmt,
    ))
}

pub fn fx_neg(a: FixedScalar) -> FixedScalar {
    FixedScalar::saturating_from_raw(-(a.raw as i128), a.fmt)
}

/// Multiplies through a double-width product, then shifts back by
/// `frac_bits` with round-to-nearest-even.
pub fn fx_mul(a: FixedScalar, b: FixedScalar) -> Result<FixedScalar, FixedError> {
    let fmt = check_fmt(a, b)?;
    let wide = a.raw as i128 * b.raw as i128;
    Ok(FixedScalar::saturating_from_raw(
        shift_round_even(wide, fmt.frac_bits as i32),
        fmt,
    ))
}

/// Sum of raw products at fraction position `frac_bits`.
///
/// For operands in a format with `f` fraction bits whose magnitude is at most
/// `2^B`, every product is at most `2^(2(B+f))` raw units, so
/// [`safe_accumulation_terms`] of them can never overflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WideAccumulator {
    raw: i64,
    frac_bits: u32,
}

impl WideAccumulator {
    pub fn new(frac_bits: u32) -> Self {
        WideAccumulator { raw: 0, frac_bits }
    }

    /// Empty accumulator positioned for products of two `fmt` values.
    pub fn for_products(fmt: QFormat) -> Self {
        Self::new(2 * fmt.frac_bits)
    }

    pub fn from_raw(raw: i64, frac_bits: u32) -> Self {
        WideAccumulator { raw, frac_bits }
    }

    pub fn raw(self) -> i64 {
        self.raw
    }

    pub fn frac_bits(self) -> u32 {
        self.frac_bits
    }

    pub fn to_f64(self) -> f64 {
        self.raw as f64 * pow2(-(self.frac_bits as i32))
    }

    pub fn add_raw(&mut self, raw: i64) -> Result<(), FixedError> {
        self.raw = self
            .raw
            .checked_add(raw)
            .ok_or(FixedError::AccumulatorOverflow)?;
        Ok(())
    }

    /// Adds `a * b` exactly.
    pub fn add_product(&mut self, a: FixedScalar, b: FixedScalar) -> Result<(), FixedError> {
        let fmt = check_fmt(a, b)?;
        self.expect_frac(2 * fmt.frac_bits)?;
        self.add_raw_product(a.raw, b.raw)
    }

    /// Adds the product of two raw mantissas; the caller guarantees both
    /// share the accumulator's operand format.
    pub fn add_raw_product(&mut self, a: i64, b: i64) -> Result<(), FixedError> {
        let p = a.checked_mul(b).ok_or(FixedError::AccumulatorOverflow)?;
        self.add_raw(p)
    }

    pub fn merge(&mut self, other: WideAccumulator) -> Result<(), FixedError> {
        self.expect_frac(other.frac_bits)?;
        self.add_raw(other.raw)
    }

    fn expect_frac(&self, want: u32) -> Result<(), FixedError> {
        if self.frac_bits != want {
            return Err(FixedError::FracMismatch {
                have: self.frac_bits,
                want,
            });
        }
        Ok(())
    }

    /// Like [`Rescale::rescale`] but fails instead of saturating.
    pub fn rescale_exact_range(self, fmt: QFormat) -> Result<FixedScalar, FixedError> {
        let shifted = shift_round_even(self.raw as i128, self.frac_bits as i32 - fmt.frac_bits as i32);
        if shifted < fmt.raw_min() as i128 || shifted > fmt.raw_max() as i128 {
            return Err(FixedError::Saturated(fmt));
        }
        Ok(FixedScalar {
            raw: shifted as i64,
            fmt,
        })
    }
}

/// Accumulates the dot product of `a` and `b` into `acc` with no
/// intermediate rounding.
pub fn dot_accumulate(
    a: &[FixedScalar],
    b: &[FixedScalar],
    acc: WideAccumulator,
) -> Result<WideAccumulator, FixedError> {
    if a.len() != b.len() {
        return Err(FixedError::LengthMismatch(a.len(), b.len()));
    }
    let mut acc = acc;
    for (&x, &y) in a.iter().zip(b) {
        acc.add_product(x, y)?;
    }
    Ok(acc)
}

/// Number of products guaranteed not to overflow the accumulator when every
/// operand in `fmt` satisfies `|x| <= 2^bound_log2`.
pub fn safe_accumulation_terms(fmt: QFormat, bound_log2: u32) -> u64 {
    let product_bits = 2 * (bound_log2 + fmt.frac_bits);
    match 62u32.checked_sub(product_bits) {
        Some(e) if e < 64 => 1u64 << e,
        _ => 0,
    }
}

/// Moves a value to a new fraction position with round-to-nearest-even,
/// saturating into the target format.
pub trait Rescale {
    fn rescale(&self, fmt: QFormat) -> FixedScalar;
}

impl Rescale for FixedScalar {
    fn rescale(&self, fmt: QFormat) -> FixedScalar {
        let shift = self.fmt.frac_bits as i32 - fmt.frac_bits as i32;
        FixedScalar::saturating_from_raw(shift_round_even(self.raw as i128, shift), fmt)
    }
}

impl Rescale for WideAccumulator {
    fn rescale(&self, fmt: QFormat) -> FixedScalar {
        let shift = self.frac_bits as i32 - fmt.frac_bits as i32;
        FixedScalar::saturating_from_raw(shift_round_even(self.raw as i128, shift), fmt)
    }
}

pub fn rescale<V: Rescale>(v: &V, fmt: QFormat) -> FixedScalar {
    v.rescale(fmt)
}

/// Arithmetic right shift with round-to-nearest-even; negative `shift`
/// shifts left.
pub fn shift_round_even(v: i128, shift: i32) -> i128 {
    if shift <= 0 {
        return v << (-shift) as u32;
    }
    if shift >= 127 {
        return 0;
    }
    let q = v >> shift;
    let r = v - (q << shift);
    let half = 1i128 << (shift - 1);
    if r > half || (r == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

/// `num / den` rounded to nearest, ties to even. `den` must be positive.
pub fn div_round_even(num: i128, den: i128) -> i128 {
    debug_assert!(den > 0);
    let q = num.div_euclid(den);
    let r = num.rem_euclid(den);
    let twice = 2 * r;
    if twice > den || (twice == den && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

pub(crate) fn saturate(raw: i128, fmt: QFormat) -> i64 {
    raw.clamp(fmt.raw_min() as i128, fmt.raw_max() as i128) as i64
}

fn pow2(e: i32) -> f64 {
    2f64.powi(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const Q: QFormat = QFormat::Q16_16;

    fn q(x: f64) -> FixedScalar {
        quantize(x, Q).unwrap()
    }

    #[test]
    fn format_parsing() {
        assert_eq!("q16.16".parse::<QFormat>().unwrap(), Q);
        let q88: QFormat = "q8.8".parse().unwrap();
        assert_eq!((q88.total_bits(), q88.frac_bits()), (16, 8));
        assert_eq!(q88.to_string(), "q8.8");
        assert!("q0.8".parse::<QFormat>().is_err());
        assert!("q12.12".parse::<QFormat>().is_err());
        assert!("16.16".parse::<QFormat>().is_err());
        assert!(QFormat::new(32, 32).is_err());
    }

    #[test]
    fn range_and_resolution() {
        assert_eq!(Q.resolution(), 1.0 / 65536.0);
        assert_eq!(Q.min_value(), -32768.0);
        assert_eq!(Q.max_value(), 32767.0 + 65535.0 / 65536.0);
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(q(0.5).raw(), 32768);
        for fmt in QFormat::all() {
            assert_eq!(quantize(0.0, fmt).unwrap().raw(), 0);
        }
        assert_eq!(q(70000.0).raw(), i32::MAX as i64);
        assert_eq!(q(-70000.0).raw(), i32::MIN as i64);
        assert_eq!(q(f64::INFINITY).raw(), i32::MAX as i64);
        assert_eq!(quantize(f64::NAN, Q), Err(FixedError::NotANumber));
        // ties go to even
        assert_eq!(q(1.5 / 65536.0).raw(), 2);
        assert_eq!(q(2.5 / 65536.0).raw(), 2);
        assert_eq!(q(-1.5 / 65536.0).raw(), -2);
    }

    #[test]
    fn dequantize_examples() {
        assert_eq!(dequantize(FixedScalar::from_raw(32768, Q).unwrap()), 0.5);
        assert_eq!(dequantize(FixedScalar::from_raw(-65536, Q).unwrap()), -1.0);
        assert!(FixedScalar::from_raw(1 << 31, Q).is_err());
    }

    #[test]
    fn add_examples() {
        assert_eq!(fx_add(q(0.25), q(0.25)).unwrap(), q(0.5));
        let ulp = FixedScalar::from_raw(1, Q).unwrap();
        assert_eq!(fx_add(Q.max(), ulp).unwrap(), Q.max());
        assert_eq!(fx_sub(Q.min(), ulp).unwrap(), Q.min());
        let q88: QFormat = "q8.8".parse().unwrap();
        assert!(matches!(
            fx_add(q(1.0), q88.one()),
            Err(FixedError::FormatMismatch(..))
        ));
    }

    #[test]
    fn mul_examples() {
        assert_eq!(fx_mul(q(0.5), q(0.5)).unwrap(), q(0.25));
        assert_eq!(fx_mul(q(-1.5), q(2.0)).unwrap(), q(-3.0));
        assert_eq!(fx_mul(Q.max(), Q.max()).unwrap(), Q.max());
        assert_eq!(fx_mul(Q.min(), Q.max()).unwrap(), Q.min());
    }

    #[test]
    fn dot_examples() {
        let acc = dot_accumulate(
            &[q(1.0), q(2.0)],
            &[q(3.0), q(4.0)],
            WideAccumulator::for_products(Q),
        )
        .unwrap();
        assert_eq!(acc.to_f64(), 11.0);
        assert_eq!(acc.frac_bits(), 32);

        let start = WideAccumulator::from_raw(77, 32);
        assert_eq!(dot_accumulate(&[], &[], start).unwrap(), start);
        assert!(matches!(
            dot_accumulate(&[q(1.0)], &[], start),
            Err(FixedError::LengthMismatch(1, 0))
        ));
        assert!(matches!(
            dot_accumulate(&[q(1.0)], &[q(1.0)], WideAccumulator::new(16)),
            Err(FixedError::FracMismatch { .. })
        ));
    }

    #[test]
    fn accumulator_overflow_is_reported() {
        let mut acc = WideAccumulator::for_products(Q);
        acc.add_product(Q.min(), Q.min()).unwrap();
        // (-2^31)^2 = 2^62; the second term reaches 2^63
        assert_eq!(
            acc.add_product(Q.min(), Q.min()),
            Err(FixedError::AccumulatorOverflow)
        );
    }

    #[test]
    fn safe_term_bound_holds_at_its_limit() {
        // |x| <= 4 in q16.16: products <= 2^36 so 2^26 terms are safe
        assert_eq!(safe_accumulation_terms(Q, 2), 1 << 26);
        assert_eq!(safe_accumulation_terms(Q, 15), 1);
        assert_eq!(safe_accumulation_terms(Q, 16), 0);
        let big = quantize(-4.0, Q).unwrap();
        let mut acc = WideAccumulator::for_products(Q);
        let raw = big.raw() * big.raw();
        // adding the bound's worth of worst-case products in one step
        acc.add_raw(raw * (1 << 26)).unwrap();
        assert!(acc.raw() < i64::MAX);
    }

    #[test]
    fn rescale_examples() {
        let q88: QFormat = "q8.8".parse().unwrap();
        assert_eq!(q(0.5).rescale(q88).raw(), 128);
        let eleven = WideAccumulator::from_raw(11i64 << 32, 32);
        assert_eq!(rescale(&eleven, Q), q(11.0));
        let ulp = FixedScalar::from_raw(1, Q).unwrap();
        assert_eq!(ulp.rescale(q88).raw(), 0);
        let three_halves = FixedScalar::from_raw(384, Q).unwrap();
        // 1.5 ulp of q8.8 rounds to 2
        assert_eq!(three_halves.rescale(q88).raw(), 2);
        assert_eq!(q(1000.0).rescale(q88), q88.max());
        assert_eq!(
            WideAccumulator::from_raw(1 << 62, 32).rescale_exact_range(Q),
            Err(FixedError::Saturated(Q))
        );
    }

    #[test]
    fn rounding_helpers() {
        assert_eq!(shift_round_even(5, 1), 2);
        assert_eq!(shift_round_even(7, 1), 4);
        assert_eq!(shift_round_even(-5, 1), -2);
        assert_eq!(shift_round_even(-7, 1), -4);
        assert_eq!(shift_round_even(3, -2), 12);
        assert_eq!(div_round_even(7, 2), 4);
        assert_eq!(div_round_even(5, 2), 2);
        assert_eq!(div_round_even(-5, 2), -2);
        assert_eq!(div_round_even(-7, 3), -2);
    }

    #[test]
    fn eight_bit_formats_exhaustive() {
        for fmt in QFormat::all().filter(|f| f.total_bits() == 8) {
            let ulp = fmt.resolution();
            for raw in fmt.raw_min()..=fmt.raw_max() {
                let v = FixedScalar::from_raw(raw, fmt).unwrap();
                assert_eq!(quantize(dequantize(v), fmt).unwrap(), v);
                // midpoints round back within half an ulp
                let mid = dequantize(v) + ulp / 2.0;
                let back = quantize(mid, fmt).unwrap();
                assert!((dequantize(back) - mid).abs() <= ulp / 2.0);
                for raw_b in fmt.raw_min()..=fmt.raw_max() {
                    let w = FixedScalar::from_raw(raw_b, fmt).unwrap();
                    for r in [fx_add(v, w), fx_sub(v, w), fx_mul(v, w)] {
                        let r = r.unwrap().raw();
                        assert!(r >= fmt.raw_min() && r <= fmt.raw_max());
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn quantize_is_monotone(x in -40000.0f64..40000.0, y in -40000.0f64..40000.0) {
            let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
            prop_assert!(q(lo).raw() <= q(hi).raw());
        }

        #[test]
        fn round_trip_within_half_ulp(x in -32768.0f64..32767.0) {
            prop_assert!((dequantize(q(x)) - x).abs() <= 2f64.powi(-17));
        }

        #[test]
        fn mul_identity_and_sign(raw_a in -(1i64 << 24)..(1i64 << 24), raw_b in -(1i64 << 20)..(1i64 << 20)) {
            let a = FixedScalar::from_raw(raw_a, Q).unwrap();
            let b = FixedScalar::from_raw(raw_b, Q).unwrap();
            prop_assert_eq!(fx_mul(Q.one(), a).unwrap(), a);
            let lhs = fx_mul(fx_neg(a), b).unwrap();
            let rhs = fx_neg(fx_mul(a, b).unwrap());
            // ties-to-even is symmetric about zero
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn dot_matches_exact_integer_sum(pairs in prop::collection::vec((-65536i64..=65536, -65536i64..=65536), 0..200)) {
            let a: Vec<_> = pairs.iter().map(|p| FixedScalar::from_raw(p.0, Q).unwrap()).collect();
            let b: Vec<_> = pairs.iter().map(|p| FixedScalar::from_raw(p.1, Q).unwrap()).collect();
            let exact: i128 = pairs.iter().map(|p| p.0 as i128 * p.1 as i128).sum();
            let acc = dot_accumulate(&a, &b, WideAccumulator::for_products(Q)).unwrap();
            prop_assert_eq!(acc.raw() as i128, exact);
        }
    }
}
