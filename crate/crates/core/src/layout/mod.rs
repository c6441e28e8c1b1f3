//! Datasets, their partitioning across cores, and the bank image format.
//!
//! A bank image is a 12-byte little-endian header `(row_count, n_features,
//! frac_bits)` followed by the partition's features in row-major order and
//! then its labels. Rows are contiguous so a core can stream them with large
//! sequential DMA reads.

mod csv;
mod synth;

pub use self::csv::{ingest_csv, ingest_csv_with, write_csv, CsvOptions};
pub use self::synth::{synth_blobs, synth_labels_tree, synth_linear};

use crate::fixedpoint::{quantize, QFormat};
use crate::{Error, Result};

/// Rows per reduction block. Real-mode partial sums are formed per block so
/// results do not depend on how blocks are spread over cores.
pub const BLOCK_ROWS: usize = 256;

pub const HEADER_BYTES: usize = 12;

/// Header marker for images holding `f64` elements.
pub const REAL_FRAC_MARKER: u32 = u32::MAX;

/// Row-major feature matrix with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_rows: usize,
    n_features: usize,
    features: Vec<f64>,
    labels: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(n_features: usize, features: Vec<f64>, labels: Option<Vec<f64>>) -> Result<Self> {
        if n_features == 0 {
            if !features.is_empty() {
                return Err(Error::Data("features given for a zero-width dataset".into()));
            }
        } else if !features.len().is_multiple_of(n_features) {
            return Err(Error::Data(format!(
                "{} values do not form rows of {n_features}",
                features.len()
            )));
        }
        let n_rows = if n_features == 0 {
            labels.as_ref().map_or(0, Vec::len)
        } else {
            features.len() / n_features
        };
        if let Some(l) = &labels {
            if l.len() != n_rows {
                return Err(Error::Data(format!("{} labels for {n_rows} rows", l.len())));
            }
        }
        if let Some(i) = features
            .iter()
            .chain(labels.iter().flatten())
            .position(|v| !v.is_finite())
        {
            return Err(Error::Data(format!("non-finite value at position {i}")));
        }
        Ok(Dataset {
            n_rows,
            n_features,
            features,
            labels,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_rows).map(move |i| self.row(i))
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self) -> Result<&[f64]> {
        self.labels()
            .ok_or_else(|| Error::Data("this algorithm needs a label column".into()))
    }

    pub fn without_labels(&self) -> Dataset {
        Dataset {
            labels: None,
            ..self.clone()
        }
    }

    /// Number of classes when labels are class ids `0..C`.
    pub fn class_count(&self) -> Result<usize> {
        let labels = self.require_labels()?;
        let mut max = 0usize;
        for (i, &y) in labels.iter().enumerate() {
            if y < 0.0 || y.fract() != 0.0 || y > u32::MAX as f64 {
                return Err(Error::Data(format!(
                    "label {y} on row {i} is not a class id"
                )));
            }
            max = max.max(y as usize);
        }
        Ok(if labels.is_empty() { 0 } else { max + 1 })
    }

    /// Rescales every feature column linearly onto `[-1, 1]`. Constant
    /// columns map to 0. Labels are left alone.
    pub fn min_max_scaled(&self) -> Dataset {
        let d = self.n_features;
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for row in self.rows() {
            for (j, &v) in row.iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        let features = self
            .features
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let j = i % d;
                let span = hi[j] - lo[j];
                if span > 0.0 {
                    2.0 * (v - lo[j]) / span - 1.0
                } else {
                    0.0
                }
            })
            .collect();
        Dataset {
            features,
            ..self.clone()
        }
    }
}

/// Contiguous row range owned by each core.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    ranges: Vec<(usize, usize)>,
}

impl PartitionPlan {
    pub fn ranges(&self) -> &[(usize, usize)] {
        &self.ranges
    }

    pub fn n_cores(&self) -> usize {
        self.ranges.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.ranges.iter().map(|r| r.1).collect()
    }

    pub fn n_rows(&self) -> usize {
        self.ranges.iter().map(|r| r.1).sum()
    }
}

/// Balanced split: the first `n_rows % n_cores` cores get one extra row.
pub fn partition_rows(n_rows: usize, n_cores: usize) -> PartitionPlan {
    assert!(n_cores >= 1, "a partition needs at least one core");
    let base = n_rows / n_cores;
    let extra = n_rows % n_cores;
    let mut start = 0;
    let ranges = (0..n_cores)
        .map(|c| {
            let count = base + usize::from(c < extra);
            let r = (start, count);
            start += count;
            r
        })
        .collect();
    PartitionPlan { ranges }
}

/// Balanced split of whole `block_rows` blocks; only the core holding the
/// final block may end mid-block.
pub fn partition_blocks(n_rows: usize, n_cores: usize, block_rows: usize) -> PartitionPlan {
    assert!(block_rows >= 1);
    let blocks = partition_rows(n_rows.div_ceil(block_rows), n_cores);
    let ranges = blocks
        .ranges
        .iter()
        .map(|&(b, nb)| {
            let start = (b * block_rows).min(n_rows);
            let end = ((b + nb) * block_rows).min(n_rows);
            (start, end - start)
        })
        .collect();
    PartitionPlan { ranges }
}

/// How elements are stored in a bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Fixed(QFormat),
    /// `f64`, for real-arithmetic runs.
    Real,
}

impl Encoding {
    pub fn elem_bytes(self) -> usize {
        match self {
            Encoding::Fixed(fmt) => fmt.elem_bytes(),
            Encoding::Real => 8,
        }
    }

    fn header_frac(self) -> u32 {
        match self {
            Encoding::Fixed(fmt) => fmt.frac_bits(),
            Encoding::Real => REAL_FRAC_MARKER,
        }
    }

    /// Appends one element.
    pub fn encode(self, v: f64, out: &mut Vec<u8>) -> Result<()> {
        match self {
            Encoding::Fixed(fmt) => {
                let raw = quantize(v, fmt)?.raw();
                out.extend_from_slice(&raw.to_le_bytes()[..fmt.elem_bytes()]);
            }
            Encoding::Real => out.extend_from_slice(&v.to_le_bytes()),
        }
        Ok(())
    }

    /// Decodes element `i` as a real number.
    pub fn decode(self, bytes: &[u8], i: usize) -> f64 {
        match self {
            Encoding::Fixed(fmt) => read_raw(bytes, fmt.elem_bytes(), i) as f64 * fmt.resolution(),
            Encoding::Real => read_f64(bytes, i),
        }
    }
}

impl From<QFormat> for Encoding {
    fn from(fmt: QFormat) -> Self {
        Encoding::Fixed(fmt)
    }
}

/// Sign-extending little-endian read of element `i` of width `elem`.
pub fn read_raw(bytes: &[u8], elem: usize, i: usize) -> i64 {
    let b = &bytes[i * elem..(i + 1) * elem];
    match elem {
        1 => b[0] as i8 as i64,
        2 => i16::from_le_bytes([b[0], b[1]]) as i64,
        4 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as i64,
        8 => i64::from_le_bytes(b.try_into().expect("8-byte slice")),
        _ => panic!("unsupported element width {elem}"),
    }
}

pub fn read_f64(bytes: &[u8], i: usize) -> f64 {
    f64::from_le_bytes(bytes[i * 8..(i + 1) * 8].try_into().expect("8-byte slice"))
}

pub fn decode_raw_into(bytes: &[u8], elem: usize, out: &mut Vec<i64>) {
    out.clear();
    out.extend((0..bytes.len() / elem).map(|i| read_raw(bytes, elem, i)));
}

pub fn decode_f64_into(bytes: &[u8], out: &mut Vec<f64>) {
    out.clear();
    out.extend(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))));
}

pub fn encode_raw(values: impl IntoIterator<Item = i64>, elem: usize) -> Vec<u8> {
    let mut out = Vec::new();
    for v in values {
        out.extend_from_slice(&v.to_le_bytes()[..elem]);
    }
    out
}

pub fn encode_f64(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(f64::to_le_bytes).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageHeader {
    pub row_count: usize,
    pub n_features: usize,
    pub encoding: Encoding,
}

impl ImageHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_BYTES] {
        let mut b = [0u8; HEADER_BYTES];
        b[..4].copy_from_slice(&(self.row_count as u32).to_le_bytes());
        b[4..8].copy_from_slice(&(self.n_features as u32).to_le_bytes());
        b[8..].copy_from_slice(&self.encoding.header_frac().to_le_bytes());
        b
    }

    /// Parses a header; fixed-point images are assumed to use `width`-bit
    /// storage, which the header does not record.
    pub fn parse(bytes: &[u8], width: u32) -> Result<Self> {
        if bytes.len() < HEADER_BYTES {
            return Err(Error::Data("bank image shorter than its header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().unwrap());
        let frac = word(2);
        let encoding = if frac == REAL_FRAC_MARKER {
            Encoding::Real
        } else {
            Encoding::Fixed(QFormat::new(width, frac)?)
        };
        Ok(ImageHeader {
            row_count: word(0) as usize,
            n_features: word(1) as usize,
            encoding,
        })
    }
}

/// One core's packed partition.
#[derive(Debug, Clone, PartialEq)]
pub struct BankImage {
    pub core: usize,
    /// Global index of the partition's first row.
    pub row_start: usize,
    pub header: ImageHeader,
    pub has_labels: bool,
    pub bytes: Vec<u8>,
}

impl BankImage {
    pub fn feature_offset(&self) -> usize {
        HEADER_BYTES
    }

    /// Bank offset of feature `f` of local row `r`.
    pub fn element_offset(&self, r: usize, f: usize) -> usize {
        HEADER_BYTES + (r * self.header.n_features + f) * self.header.encoding.elem_bytes()
    }

    pub fn row_bytes(&self) -> usize {
        self.header.n_features * self.header.encoding.elem_bytes()
    }

    pub fn label_offset(&self) -> usize {
        HEADER_BYTES + self.header.row_count * self.row_bytes()
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.header.row_count == 0
    }

    /// Decodes the image back to real features and labels.
    pub fn unpack(&self) -> (Vec<f64>, Option<Vec<f64>>) {
        let enc = self.header.encoding;
        let n = self.header.row_count * self.header.n_features;
        let feats = &self.bytes[HEADER_BYTES..];
        let features = (0..n).map(|i| enc.decode(feats, i)).collect();
        let labels = self.has_labels.then(|| {
            let lb = &self.bytes[self.label_offset()..];
            (0..self.header.row_count).map(|i| enc.decode(lb, i)).collect()
        });
        (features, labels)
    }
}

/// Quantizes each core's rows into a bank image.
pub fn pack_partition(
    ds: &Dataset,
    plan: &PartitionPlan,
    encoding: impl Into<Encoding>,
    bank_bytes: usize,
) -> Result<Vec<BankImage>> {
    let encoding = encoding.into();
    if plan.n_rows() != ds.n_rows() {
        return Err(Error::Param(format!(
            "plan covers {} rows, dataset has {}",
            plan.n_rows(),
            ds.n_rows()
        )));
    }
    let elem = encoding.elem_bytes();
    plan.ranges()
        .iter()
        .enumerate()
        .map(|(core, &(start, count))| {
            let label_bytes = if ds.labels().is_some() { count * elem } else { 0 };
            let needed = HEADER_BYTES + count * ds.n_features() * elem + label_bytes;
            if needed > bank_bytes {
                return Err(Error::Capacity {
                    core,
                    needed,
                    available: bank_bytes,
                });
            }
            let header = ImageHeader {
                row_count: count,
                n_features: ds.n_features(),
                encoding,
            };
            let mut bytes = Vec::with_capacity(needed);
            bytes.extend_from_slice(&header.to_bytes());
            for &v in &ds.features()[start * ds.n_features()..(start + count) * ds.n_features()] {
                encoding.encode(v, &mut bytes)?;
            }
            if let Some(labels) = ds.labels() {
                for &y in &labels[start..start + count] {
                    encoding.encode(y, &mut bytes)?;
                }
            }
            Ok(BankImage {
                core,
                row_start: start,
                header,
                has_labels: ds.labels().is_some(),
                bytes,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn partition_examples() {
        assert_eq!(partition_rows(10, 4).counts(), vec![3, 3, 2, 2]);
        assert_eq!(partition_rows(8, 8).counts(), vec![1; 8]);
        assert_eq!(partition_rows(0, 4).counts(), vec![0; 4]);
        assert_eq!(partition_rows(10, 4).ranges()[2], (6, 2));
    }

    #[test]
    fn block_partition_is_aligned() {
        let plan = partition_blocks(1000, 3, 256);
        assert_eq!(plan.ranges(), &[(0, 512), (512, 256), (768, 232)]);
        let plan = partition_blocks(100, 4, 256);
        assert_eq!(plan.counts(), vec![100, 0, 0, 0]);
    }

    proptest! {
        #[test]
        fn partitions_cover_exactly(n in 0usize..5000, c in 1usize..70) {
            for plan in [partition_rows(n, c), partition_blocks(n, c, BLOCK_ROWS)] {
                let mut next = 0;
                for &(s, k) in plan.ranges() {
                    prop_assert_eq!(s, next);
                    next += k;
                }
                prop_assert_eq!(next, n);
            }
            let counts = partition_rows(n, c).counts();
            let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
            prop_assert!(spread <= 1);
        }
    }

    fn sample() -> Dataset {
        let features: Vec<f64> = (0..30).map(|i| (i as f64 - 15.0) * 0.1875).collect();
        let labels = (0..10).map(|i| i as f64).collect();
        Dataset::new(3, features, Some(labels)).unwrap()
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(3, vec![0.0; 7], None).is_err());
        assert!(Dataset::new(2, vec![0.0; 4], Some(vec![1.0])).is_err());
        assert!(Dataset::new(1, vec![f64::NAN], None).is_err());
        assert_eq!(sample().class_count().unwrap(), 10);
        let bad = Dataset::new(1, vec![0.0], Some(vec![0.5])).unwrap();
        assert!(bad.class_count().is_err());
    }

    #[test]
    fn min_max_scaling() {
        let ds = Dataset::new(2, vec![0.0, 5.0, 10.0, 5.0, 5.0, 5.0], None).unwrap();
        let s = ds.min_max_scaled();
        assert_eq!(s.features(), &[-1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn pack_layout() {
        let ds = sample();
        let plan = partition_rows(10, 4);
        let images = pack_partition(&ds, &plan, QFormat::Q16_16, 1 << 20).unwrap();
        assert_eq!(images.len(), 4);
        let img = &images[2];
        assert_eq!(img.row_start, 6);
        assert_eq!(img.header.row_count, 2);
        // 2 rows x 3 features x 4 bytes
        assert_eq!(img.label_offset() - img.feature_offset(), 24);
        assert_eq!(img.len(), HEADER_BYTES + 24 + 8);
        let parsed = ImageHeader::parse(&img.bytes, 32).unwrap();
        assert_eq!(parsed, img.header);
        assert_eq!(&img.bytes[..4], &2u32.to_le_bytes());
        assert_eq!(&img.bytes[8..12], &16u32.to_le_bytes());
    }

    #[test]
    fn element_offsets_follow_row_major_order() {
        let ds = Dataset::new(8, vec![0.0; 80], None).unwrap();
        let img = &pack_partition(&ds, &partition_rows(10, 1), QFormat::Q16_16, 1 << 20).unwrap()[0];
        assert_eq!(img.element_offset(5, 2), HEADER_BYTES + 168);
        // streaming: offsets strictly increase with no gaps
        let offsets: Vec<_> = (0..10)
            .flat_map(|r| (0..8).map(move |f| (r, f)))
            .map(|(r, f)| img.element_offset(r, f))
            .collect();
        assert!(offsets.windows(2).all(|w| w[1] == w[0] + 4));
    }

    #[test]
    fn pack_round_trips_quantized_values() {
        let ds = sample();
        let fmt = QFormat::Q16_16;
        let images = pack_partition(&ds, &partition_rows(10, 3), fmt, 1 << 20).unwrap();
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for img in &images {
            let (f, l) = img.unpack();
            feats.extend(f);
            labels.extend(l.unwrap());
        }
        let want: Vec<f64> = ds.features().iter().map(|&v| quantize(v, fmt).unwrap().to_f64()).collect();
        assert_eq!(feats, want);
        assert_eq!(labels, ds.labels().unwrap());

        let real = pack_partition(&ds, &partition_rows(10, 2), Encoding::Real, 1 << 20).unwrap();
        assert_eq!(real[0].unpack().0, ds.features()[..15]);
        assert_eq!(ImageHeader::parse(&real[0].bytes, 32).unwrap().encoding, Encoding::Real);
    }

    #[test]
    fn capacity_error_names_core() {
        let ds = sample();
        let err = pack_partition(&ds, &partition_rows(10, 2), QFormat::Q16_16, 60).unwrap_err();
        assert!(matches!(err, Error::Capacity { core: 0, needed: 92, .. }));
    }

    #[test]
    fn narrow_formats_sign_extend() {
        let fmt: QFormat = "q4.4".parse().unwrap();
        let bytes = encode_raw([-3i64, 127, -128], fmt.elem_bytes());
        let mut out = Vec::new();
        decode_raw_into(&bytes, 1, &mut out);
        assert_eq!(out, vec![-3, 127, -128]);
    }
}
