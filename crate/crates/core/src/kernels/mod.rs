//! Training workloads as host-orchestrated PIM kernels.
//!
//! Every algorithm follows the same loop: the host broadcasts the current
//! model into each bank, every core streams its own rows and writes a
//! partial result back into its bank, and the host gathers the partials in
//! ascending core order, combines them and updates the model.
//!
//! In fixed-point mode partials are exact integer sums per core. In real
//! mode they are `f64` sums per [`BLOCK_ROWS`]-row block, combined in block
//! order, so the result does not depend on the core count as long as the
//! partition is block aligned (see [`partition_blocks`]).

mod dtree;
mod kmeans;
mod linear;
mod model;

pub use dtree::{
    bin_of, choose_split, dtree_train, gini, is_terminal, majority, raw_edges, real_edges, Score, SplitChoice,
};
pub(crate) use kmeans::initial_centroids;
pub use kmeans::kmeans_train;
pub use linear::{linear_gradient, linreg_train, logreg_train};
pub use model::{
    accuracy, inertia, metrics, mse, predict, Centroids, DecisionTree, LinearModel, Metric, ModelState, TreeNode,
};

use std::fmt;
use std::str::FromStr;

use crate::fixedpoint::QFormat;
use crate::layout::{
    decode_f64_into, decode_raw_into, pack_partition, partition_blocks, BankImage, Dataset, Encoding, BLOCK_ROWS,
};
use crate::lut::LutTable;
use crate::pimsim::{CoreContext, KernelReport, PimDevice};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Linreg,
    Logreg,
    Kmeans,
    Dtree,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Linreg, Algorithm::Logreg, Algorithm::Kmeans, Algorithm::Dtree];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Linreg => "linreg",
            Algorithm::Logreg => "logreg",
            Algorithm::Kmeans => "kmeans",
            Algorithm::Dtree => "dtree",
        }
    }

    /// Whether the algorithm reads a label column.
    pub fn uses_labels(self) -> bool {
        !matches!(self, Algorithm::Kmeans)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Param(format!("unknown algorithm {s:?}")))
    }
}

/// Number representation used by a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arithmetic {
    Fixed(QFormat),
    /// Double precision, for verification against the baselines.
    Real,
}

impl Arithmetic {
    pub fn encoding(self) -> Encoding {
        match self {
            Arithmetic::Fixed(fmt) => Encoding::Fixed(fmt),
            Arithmetic::Real => Encoding::Real,
        }
    }

    pub fn mode_name(self) -> &'static str {
        match self {
            Arithmetic::Fixed(_) => "fixed",
            Arithmetic::Real => "real",
        }
    }
}

impl Default for Arithmetic {
    fn default() -> Self {
        Arithmetic::Fixed(QFormat::Q16_16)
    }
}

impl fmt::Display for Arithmetic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arithmetic::Fixed(fmt) => write!(f, "{fmt}"),
            Arithmetic::Real => f.write_str("real"),
        }
    }
}

impl FromStr for Arithmetic {
    type Err = Error;

    /// `real`, `fixed` (q16.16) or an explicit format such as `q8.8`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "real" => Ok(Arithmetic::Real),
            "fixed" => Ok(Arithmetic::default()),
            other => Ok(Arithmetic::Fixed(other.parse()?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// Step size. Fixed-point runs round it to the nearest power of two.
    pub learning_rate: f64,
    pub iterations: usize,
    pub k: usize,
    pub max_depth: usize,
    pub min_samples: usize,
    pub n_bins: usize,
    pub arithmetic: Arithmetic,
    pub fit_bias: bool,
    /// Fraction bits of the 32-bit per-core gradient partials.
    pub grad_frac_bits: u32,
    /// Target size of one streaming DMA read.
    pub chunk_bytes: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 0.125,
            iterations: 100,
            k: 4,
            max_depth: 6,
            min_samples: 2,
            n_bins: 32,
            arithmetic: Arithmetic::default(),
            fit_bias: false,
            grad_frac_bits: 4,
            chunk_bytes: 2048,
        }
    }
}

impl Hyperparams {
    /// Right shift equivalent to the learning rate in fixed-point mode.
    pub fn lr_shift(&self) -> Result<u32> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Param(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        let shift = (-self.learning_rate.log2()).round();
        if !(0.0..=30.0).contains(&shift) {
            return Err(Error::Param(format!(
                "learning rate {} is outside [2^-30, 1]",
                self.learning_rate
            )));
        }
        Ok(shift as u32)
    }

    /// Learning rate actually applied by a run.
    pub fn effective_learning_rate(&self) -> Result<f64> {
        match self.arithmetic {
            Arithmetic::Fixed(_) => Ok(2f64.powi(-(self.lr_shift()? as i32))),
            Arithmetic::Real if self.learning_rate.is_finite() && self.learning_rate > 0.0 => Ok(self.learning_rate),
            Arithmetic::Real => Err(Error::Param(format!(
                "learning rate {} must be positive",
                self.learning_rate
            ))),
        }
    }

    pub fn grad_format(&self, fmt: QFormat) -> Result<QFormat> {
        if self.grad_frac_bits > 2 * fmt.frac_bits() {
            return Err(Error::Param(format!(
                "gradient fraction bits {} exceed product precision {}",
                self.grad_frac_bits,
                2 * fmt.frac_bits()
            )));
        }
        Ok(QFormat::new(32, self.grad_frac_bits)?)
    }
}

/// A trained model, its cost report, and the model after each iteration.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: ModelState,
    pub report: KernelReport,
    /// Flattened parameters (weights or centroids) after every iteration.
    pub snapshots: Vec<Vec<f64>>,
    /// Per-iteration objective where the kernel computes one (K-means
    /// inertia before each update).
    pub trace: Vec<f64>,
}

/// Copies every image into its core's bank at offset 0.
pub fn load_images(dev: &mut PimDevice, images: &[BankImage]) -> Result<()> {
    if images.len() != dev.n_cores() {
        return Err(Error::Param(format!(
            "{} images for {} cores",
            images.len(),
            dev.n_cores()
        )));
    }
    for img in images {
        dev.host_write_bank(img.core, 0, &img.bytes)?;
    }
    Ok(())
}

/// Partitions, packs, loads and trains in one call.
pub fn train(
    dev: &mut PimDevice,
    ds: &Dataset,
    algo: Algorithm,
    hp: &Hyperparams,
    lut: Option<&LutTable>,
) -> Result<TrainOutput> {
    let images = prepare(dev, ds, algo, hp)?;
    match algo {
        Algorithm::Linreg => linreg_train(dev, &images, hp),
        Algorithm::Logreg => {
            let default;
            let lut = match lut {
                Some(t) => t,
                None => {
                    default = LutTable::sigmoid_default();
                    &default
                }
            };
            logreg_train(dev, &images, hp, lut)
        }
        Algorithm::Kmeans => kmeans_train(dev, &images, hp),
        Algorithm::Dtree => dtree_train(dev, &images, hp),
    }
}

/// Block-aligned partition, packing and loading for `algo`.
pub fn prepare(dev: &mut PimDevice, ds: &Dataset, algo: Algorithm, hp: &Hyperparams) -> Result<Vec<BankImage>> {
    let plan = partition_blocks(ds.n_rows(), dev.n_cores(), BLOCK_ROWS);
    let ds = if algo.uses_labels() {
        ds.require_labels()?;
        ds.clone()
    } else {
        ds.without_labels()
    };
    let images = pack_partition(&ds, &plan, hp.arithmetic.encoding(), dev.config().bank_bytes)?;
    load_images(dev, &images)?;
    Ok(images)
}

/// Where one core's rows live in its bank.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Slice {
    pub row_start: usize,
    pub rows: usize,
    pub n_features: usize,
    pub feat_off: usize,
    pub label_off: Option<usize>,
}

impl Slice {
    pub fn of(img: &BankImage) -> Slice {
        Slice {
            row_start: img.row_start,
            rows: img.header.row_count,
            n_features: img.header.n_features,
            feat_off: img.feature_offset(),
            label_off: img.has_labels.then(|| img.label_offset()),
        }
    }

    /// Number of distinct reduction blocks this slice touches.
    pub fn fragments(&self) -> usize {
        if self.rows == 0 {
            return 0;
        }
        let first = self.row_start / BLOCK_ROWS;
        let last = (self.row_start + self.rows - 1) / BLOCK_ROWS;
        last - first + 1
    }
}

/// Bank regions shared by every core, placed after the largest image.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Regions {
    pub params: usize,
    pub results: usize,
    pub state: usize,
}

fn align8(x: usize) -> usize {
    x.div_ceil(8) * 8
}

impl Regions {
    pub fn plan(
        dev: &PimDevice,
        images: &[BankImage],
        params_bytes: usize,
        results_bytes: usize,
        state_bytes: usize,
    ) -> Result<Regions> {
        let base = images.iter().map(BankImage::len).max().unwrap_or(0);
        let params = align8(base);
        let results = align8(params + params_bytes);
        let state = align8(results + results_bytes);
        let end = state + state_bytes;
        let available = dev.config().bank_bytes;
        if end > available {
            return Err(Error::Capacity {
                core: 0,
                needed: end,
                available,
            });
        }
        Ok(Regions { params, results, state })
    }
}

pub(crate) trait Elem: Copy + Default + Send + Sync {
    fn decode_into(bytes: &[u8], elem: usize, out: &mut Vec<Self>);
}

impl Elem for i64 {
    fn decode_into(bytes: &[u8], elem: usize, out: &mut Vec<Self>) {
        decode_raw_into(bytes, elem, out)
    }
}

impl Elem for f64 {
    fn decode_into(bytes: &[u8], _elem: usize, out: &mut Vec<Self>) {
        decode_f64_into(bytes, out)
    }
}

/// Sequential chunked reader over a core's rows.
pub(crate) struct RowChunks {
    slice: Slice,
    elem: usize,
    rows_per_chunk: usize,
    next: usize,
}

impl RowChunks {
    /// Sizes chunks to `chunk_bytes`, or to the free scratchpad if smaller.
    pub fn new(ctx: &CoreContext<'_>, slice: Slice, encoding: Encoding, chunk_bytes: usize) -> RowChunks {
        let elem = encoding.elem_bytes();
        let row_bytes = (slice.n_features * elem).max(1);
        let budget = chunk_bytes.min(ctx.scratchpad_free());
        RowChunks {
            slice,
            elem,
            rows_per_chunk: (budget / row_bytes).max(1),
            next: 0,
        }
    }

    /// Reads the next chunk of features (and labels, if requested). Returns
    /// the local index of its first row and its row count.
    pub fn next<E: Elem>(
        &mut self,
        ctx: &mut CoreContext<'_>,
        feats: &mut Vec<E>,
        labels: Option<&mut Vec<E>>,
    ) -> Result<Option<(usize, usize)>> {
        if self.next >= self.slice.rows {
            return Ok(None);
        }
        let first = self.next;
        let count = self.rows_per_chunk.min(self.slice.rows - first);
        let row_bytes = self.slice.n_features * self.elem;
        let bytes = ctx.mram_read(self.slice.feat_off + first * row_bytes, count * row_bytes)?;
        E::decode_into(bytes, self.elem, feats);
        if let Some(labels) = labels {
            let off = self
                .slice
                .label_off
                .ok_or_else(|| Error::Data("image has no label block".into()))?;
            let bytes = ctx.mram_read(off + first * self.elem, count * self.elem)?;
            E::decode_into(bytes, self.elem, labels);
        }
        self.next += count;
        Ok(Some((first, count)))
    }
}

/// Reads `len` bytes from the bank in scratchpad-sized DMA pieces and
/// returns them as one buffer.
pub(crate) fn read_resident(ctx: &mut CoreContext<'_>, offset: usize, len: usize, chunk: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(len);
    let chunk = chunk.clamp(1, ctx.scratchpad_free().max(1));
    let mut done = 0;
    while done < len {
        let n = chunk.min(len - done);
        out.extend_from_slice(ctx.mram_read(offset + done, n)?);
        done += n;
    }
    Ok(out)
}

/// Host-side decode of every image's rows, in core order.
pub(crate) fn host_rows(images: &[BankImage]) -> (usize, Vec<f64>, Vec<f64>) {
    let d = images.first().map_or(0, |i| i.header.n_features);
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for img in images {
        let (f, l) = img.unpack();
        feats.extend(f);
        labels.extend(l.unwrap_or_default());
    }
    (d, feats, labels)
}

pub(crate) fn check_images(images: &[BankImage], dev: &PimDevice) -> Result<(usize, Encoding)> {
    let first = images
        .first()
        .ok_or_else(|| Error::Param("no bank images".into()))?;
    if images.len() != dev.n_cores() {
        return Err(Error::Param(format!(
            "{} images for {} cores",
            images.len(),
            dev.n_cores()
        )));
    }
    let d = first.header.n_features;
    let enc = first.header.encoding;
    if images.iter().any(|i| i.header.n_features != d || i.header.encoding != enc) {
        return Err(Error::Param("images disagree on width or encoding".into()));
    }
    Ok((d, enc))
}
