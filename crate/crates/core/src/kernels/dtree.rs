//! Level-wise histogram decision tree (Gini impurity).
//!
//! A pre-pass finds each feature's range and the host derives `n_bins - 1`
//! equal-width bin edges. Each level then broadcasts the partial tree; cores
//! route their rows from the root and count `(feature, bin, class)` triples
//! for every frontier node. The host merges the counts and picks splits.

use std::cmp::Ordering;

use super::{
    check_images, host_rows, read_resident, DecisionTree, Elem, Hyperparams, ModelState, Regions, RowChunks, Slice,
    TrainOutput, TreeNode,
};
use crate::layout::{encode_f64, encode_raw, read_f64, read_raw, BankImage, Encoding};
use crate::pimsim::{finalize_report, CoreContext, IterationCost, OpClass, PimDevice};
use crate::{Error, Result};

/// Gini split quality `sum_c L_c^2 / n_L + sum_c R_c^2 / n_R` kept as an
/// exact fraction. Larger is better; a node's own score is
/// `sum_c n_c^2 / n`.
#[derive(Debug, Clone, Copy)]
pub struct Score {
    num: u128,
    den: u128,
}

fn mul_wide(a: u128, b: u128) -> (u128, u128) {
    const M: u128 = u64::MAX as u128;
    let (a1, a0) = (a >> 64, a & M);
    let (b1, b0) = (b >> 64, b & M);
    let p00 = a0 * b0;
    let p01 = a0 * b1;
    let p10 = a1 * b0;
    let p11 = a1 * b1;
    let mid = (p00 >> 64) + (p01 & M) + (p10 & M);
    let lo = (p00 & M) | (mid << 64);
    let hi = p11 + (p01 >> 64) + (p10 >> 64) + (mid >> 64);
    (hi, lo)
}

impl Score {
    fn sum_sq(counts: &[u64]) -> u128 {
        counts.iter().map(|&c| c as u128 * c as u128).sum()
    }

    pub fn node(counts: &[u64]) -> Score {
        Score {
            num: Score::sum_sq(counts),
            den: counts.iter().sum::<u64>().max(1) as u128,
        }
    }

    /// Score of a split; `None` when either side is empty.
    pub fn split(left: &[u64], right: &[u64]) -> Option<Score> {
        let nl = left.iter().sum::<u64>() as u128;
        let nr = right.iter().sum::<u64>() as u128;
        if nl == 0 || nr == 0 {
            return None;
        }
        Some(Score {
            num: Score::sum_sq(left) * nr + Score::sum_sq(right) * nl,
            den: nl * nr,
        })
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl PartialEq for Score {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Score {}

impl PartialOrd for Score {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Score {
    fn cmp(&self, other: &Self) -> Ordering {
        mul_wide(self.num, other.den).cmp(&mul_wide(other.num, self.den))
    }
}

/// Gini impurity `1 - sum_c p_c^2`.
pub fn gini(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    1.0 - Score::node(counts).to_f64() / n as f64
}

/// Most frequent class, lowest id on ties.
pub fn majority(counts: &[u64]) -> u32 {
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best as u32
}

/// Whether a node with these counts at this depth becomes a leaf without
/// looking for a split.
pub fn is_terminal(counts: &[u64], depth: usize, hp: &Hyperparams) -> bool {
    let n: u64 = counts.iter().sum();
    depth >= hp.max_depth || n < hp.min_samples.max(2) as u64 || counts.iter().filter(|&&c| c > 0).count() <= 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    /// Rows with bin `< bin` go left.
    pub bin: usize,
    pub left: Vec<u64>,
    pub right: Vec<u64>,
}

/// Best boundary over a node's histogram laid out `[feature][bin][class]`.
/// Ties keep the lowest feature, then the lowest bin. Returns `None` unless
/// the split strictly lowers the impurity.
pub fn choose_split(hist: &[u64], d: usize, n_bins: usize, n_classes: usize, parent: &[u64]) -> Option<SplitChoice> {
    let parent_score = Score::node(parent);
    let mut best: Option<(Score, SplitChoice)> = None;
    for f in 0..d {
        let h = &hist[f * n_bins * n_classes..(f + 1) * n_bins * n_classes];
        let mut left = vec![0u64; n_classes];
        for b in 1..n_bins {
            for (l, &v) in left.iter_mut().zip(&h[(b - 1) * n_classes..b * n_classes]) {
                *l += v;
            }
            let right: Vec<u64> = parent.iter().zip(&left).map(|(p, l)| p - l).collect();
            let Some(s) = Score::split(&left, &right) else {
                continue;
            };
            if best.as_ref().is_none_or(|(bs, _)| s > *bs) {
                best = Some((
                    s,
                    SplitChoice {
                        feature: f,
                        bin: b,
                        left: left.clone(),
                        right,
                    },
                ));
            }
        }
    }
    best.filter(|(s, _)| *s > parent_score).map(|(_, c)| c)
}

/// Equal-width interior edges `e_1 .. e_{n_bins-1}` from a feature range.
pub fn real_edges(min: f64, max: f64, n_bins: usize) -> Vec<f64> {
    (1..n_bins)
        .map(|b| min + (max - min) * (b as f64) / (n_bins as f64))
        .collect()
}

/// Integer edges `min + floor((max - min) * b / n_bins)` over raw values.
pub fn raw_edges(min: i64, max: i64, n_bins: usize) -> Vec<i64> {
    (1..n_bins)
        .map(|b| min + ((max - min) as i128 * b as i128).div_euclid(n_bins as i128) as i64)
        .collect()
}

/// Bin of `x`: the number of edges at or below it.
pub fn bin_of<T: PartialOrd>(edges: &[T], x: &T) -> usize {
    edges.partition_point(|e| e <= x)
}

const NODE_BYTES: usize = 24;
const NO_SLOT: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Build {
    Frontier { depth: usize },
    Split { feature: usize, bin: usize, left: usize, right: usize },
    Leaf { class: u32 },
}

#[derive(Debug, Clone, Copy)]
struct Route {
    tag: u32,
    feature: usize,
    bin: usize,
    left: usize,
    right: usize,
    slot: u32,
}

fn encode_tree(nodes: &[Build], slots: &[u32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(nodes.len() * NODE_BYTES);
    for (n, &slot) in nodes.iter().zip(slots) {
        let words: [u32; 6] = match *n {
            Build::Frontier { .. } => [0, 0, 0, 0, 0, slot],
            Build::Split {
                feature,
                bin,
                left,
                right,
            } => [1, feature as u32, bin as u32, left as u32, right as u32, NO_SLOT],
            Build::Leaf { class } => [2, class, 0, 0, 0, NO_SLOT],
        };
        for w in words {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    out
}

fn decode_tree(bytes: &[u8]) -> Vec<Route> {
    bytes
        .chunks_exact(NODE_BYTES)
        .map(|c| {
            let w = |i: usize| u32::from_le_bytes(c[i * 4..i * 4 + 4].try_into().unwrap());
            Route {
                tag: w(0),
                feature: w(1) as usize,
                bin: w(2) as usize,
                left: w(3) as usize,
                right: w(4) as usize,
                slot: w(5),
            }
        })
        .collect()
}

struct Job {
    slices: Vec<Slice>,
    regions: Regions,
    d: usize,
    n_bins: usize,
    n_classes: usize,
    enc: Encoding,
    chunk: usize,
}

impl Job {
    fn edges_bytes(&self) -> usize {
        self.d * (self.n_bins - 1) * self.enc.elem_bytes()
    }

    fn node_hist_bytes(&self) -> usize {
        self.d * self.n_bins * self.n_classes * 4
    }

    fn class_of(&self, y: f64) -> usize {
        y as usize
    }

    fn range_core<T: Elem + PartialOrd>(
        &self,
        ctx: &mut CoreContext<'_>,
        slice: Slice,
        init: (T, T),
        encode: impl Fn(&[T]) -> Vec<u8>,
    ) -> Result<()> {
        let d = self.d;
        ctx.reserve(d * 16)?;
        let mut lo = vec![init.0; d];
        let mut hi = vec![init.1; d];
        let mut rows = RowChunks::new(ctx, slice, self.enc, self.chunk);
        let mut xs = Vec::<T>::new();
        while let Some((_, count)) = rows.next(ctx, &mut xs, None)? {
            for x in xs.chunks_exact(d).take(count) {
                for j in 0..d {
                    if x[j] < lo[j] {
                        lo[j] = x[j];
                    }
                    if x[j] > hi[j] {
                        hi[j] = x[j];
                    }
                }
            }
            ctx.charge(OpClass::Cmp, (2 * d * count) as u64);
        }
        let mut out = encode(&lo);
        out.extend(encode(&hi));
        ctx.mram_write_chunked(&out, self.regions.results, self.chunk)?;
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn hist_core<T: Elem + PartialOrd>(
        &self,
        ctx: &mut CoreContext<'_>,
        slice: Slice,
        tree_len: usize,
        batch: (u32, u32),
        decode_edges: impl Fn(&[u8]) -> Vec<T>,
        class_of: impl Fn(T) -> usize,
    ) -> Result<()> {
        let (d, nb, nc) = (self.d, self.n_bins, self.n_classes);
        let eb = self.edges_bytes();
        let bytes = read_resident(ctx, self.regions.params, eb, self.chunk)?;
        ctx.reserve(eb)?;
        let edges = decode_edges(&bytes);
        let tb = tree_len * NODE_BYTES;
        let bytes = read_resident(ctx, self.regions.params + eb, tb, self.chunk)?;
        ctx.reserve(tb)?;
        let tree = decode_tree(&bytes);

        let node_len = d * nb * nc;
        ctx.reserve(batch.1 as usize * node_len * 4 + d * 4)?;
        let mut hist = vec![0u32; batch.1 as usize * node_len];
        let mut bins = vec![0usize; d];
        let cmp_per_bin = (usize::BITS - (nb - 1).leading_zeros()) as u64;

        let mut rows = RowChunks::new(ctx, slice, self.enc, self.chunk / 2);
        let (mut xs, mut ys) = (Vec::<T>::new(), Vec::<T>::new());
        while let Some((_, count)) = rows.next(ctx, &mut xs, Some(&mut ys))? {
            for r in 0..count {
                let x = &xs[r * d..(r + 1) * d];
                for j in 0..d {
                    bins[j] = bin_of(&edges[j * (nb - 1)..(j + 1) * (nb - 1)], &x[j]);
                }
                ctx.charge(OpClass::Cmp, cmp_per_bin * d as u64);
                let mut node = 0;
                let mut steps = 0u64;
                while tree[node].tag == 1 {
                    let n = tree[node];
                    node = if bins[n.feature] < n.bin { n.left } else { n.right };
                    steps += 1;
                }
                ctx.charge(OpClass::Cmp, steps + 1);
                let n = tree[node];
                if n.tag != 0 || n.slot < batch.0 || n.slot >= batch.0 + batch.1 {
                    continue;
                }
                let class = class_of(ys[r]);
                let base = (n.slot - batch.0) as usize * node_len;
                for (j, &b) in bins.iter().enumerate() {
                    hist[base + (j * nb + b) * nc + class] += 1;
                }
                ctx.charge(OpClass::Add32, d as u64);
            }
        }
        let bytes: Vec<u8> = hist.iter().flat_map(|v| v.to_le_bytes()).collect();
        ctx.mram_write_chunked(&bytes, self.regions.results, self.chunk)?;
        Ok(())
    }
}

fn launch_cost(mark: usize, dev: &PimDevice, core_cycles: u64, host_ops: u64) -> IterationCost {
    let t = dev.transfers_since(mark);
    IterationCost {
        core_cycles,
        transfer_cycles: t.cycles,
        to_device_bytes: t.to_device_bytes,
        from_device_bytes: t.from_device_bytes,
        host_ops,
    }
}

pub fn dtree_train(dev: &mut PimDevice, images: &[BankImage], hp: &Hyperparams) -> Result<TrainOutput> {
    let (d, enc) = check_images(images, dev)?;
    if enc != hp.arithmetic.encoding() {
        return Err(Error::Param(format!(
            "images are encoded for {:?}, run asks for {}",
            enc, hp.arithmetic
        )));
    }
    if !images[0].has_labels {
        return Err(Error::Data("decision trees need a label column".into()));
    }
    if hp.n_bins < 2 || d == 0 {
        return Err(Error::Param("decision trees need n_bins >= 2 and at least one feature".into()));
    }
    let (_, _, labels) = host_rows(images);
    let mut n_classes = 0;
    for (i, &y) in labels.iter().enumerate() {
        if y < 0.0 || y.fract() != 0.0 || y >= u32::MAX as f64 {
            return Err(Error::Data(format!("label {y} on row {i} is not a class id")));
        }
        n_classes = n_classes.max(y as usize + 1);
    }
    let n_rows = labels.len();
    let cfg = dev.config().clone();

    let max_nodes = if hp.max_depth >= 40 {
        2 * n_rows + 1
    } else {
        ((1usize << (hp.max_depth + 1)) - 1).min(2 * n_rows + 1)
    };
    let mut job = Job {
        slices: images.iter().map(Slice::of).collect(),
        regions: Regions {
            params: 0,
            results: 0,
            state: 0,
        },
        d,
        n_bins: hp.n_bins,
        n_classes: n_classes.max(1),
        enc,
        chunk: hp.chunk_bytes,
    };
    job.regions = Regions::plan(
        dev,
        images,
        job.edges_bytes() + max_nodes * NODE_BYTES,
        cfg.scratchpad_bytes.max(d * 16),
        0,
    )?;
    dev.reset_counters();
    let mut schedule = Vec::new();

    // range pre-pass and edges
    let mark = dev.transfer_mark();
    let edge_bytes: Vec<u8>;
    let thresholds: Vec<f64>;
    match enc {
        Encoding::Fixed(fmt) => {
            let launch = dev.launch(&job.slices, |ctx, s| {
                job.range_core(ctx, *s, (i64::MAX, i64::MIN), |v| encode_raw(v.iter().copied(), 8))
            })?;
            let mut lo = vec![i64::MAX; d];
            let mut hi = vec![i64::MIN; d];
            for core in 0..dev.n_cores() {
                let b = dev.host_read_bank(core, job.regions.results, d * 16)?;
                for j in 0..d {
                    lo[j] = lo[j].min(read_raw(&b, 8, j));
                    hi[j] = hi[j].max(read_raw(&b, 8, d + j));
                }
            }
            let edges: Vec<i64> = (0..d)
                .flat_map(|j| {
                    if lo[j] > hi[j] {
                        vec![0; hp.n_bins - 1]
                    } else {
                        raw_edges(lo[j], hi[j], hp.n_bins)
                    }
                })
                .collect();
            thresholds = edges.iter().map(|&e| e as f64 * fmt.resolution()).collect();
            edge_bytes = encode_raw(edges, fmt.elem_bytes());
            dev.host_broadcast(job.regions.params, &edge_bytes)?;
            schedule.push(launch_cost(mark, dev, launch.max_core_cycles(), (dev.n_cores() * 2 * d) as u64));
        }
        Encoding::Real => {
            let launch = dev.launch(&job.slices, |ctx, s| {
                job.range_core(ctx, *s, (f64::INFINITY, f64::NEG_INFINITY), |v| {
                    encode_f64(v.iter().copied())
                })
            })?;
            let mut lo = vec![f64::INFINITY; d];
            let mut hi = vec![f64::NEG_INFINITY; d];
            for core in 0..dev.n_cores() {
                let b = dev.host_read_bank(core, job.regions.results, d * 16)?;
                for j in 0..d {
                    lo[j] = lo[j].min(read_f64(&b, j));
                    hi[j] = hi[j].max(read_f64(&b, d + j));
                }
            }
            let edges: Vec<f64> = (0..d)
                .flat_map(|j| {
                    if lo[j] > hi[j] {
                        vec![0.0; hp.n_bins - 1]
                    } else {
                        real_edges(lo[j], hi[j], hp.n_bins)
                    }
                })
                .collect();
            edge_bytes = encode_f64(edges.iter().copied());
            thresholds = edges;
            dev.host_broadcast(job.regions.params, &edge_bytes)?;
            schedule.push(launch_cost(mark, dev, launch.max_core_cycles(), (dev.n_cores() * 2 * d) as u64));
        }
    }

    let mut nodes = vec![Build::Frontier { depth: 0 }];
    if n_rows == 0 {
        nodes[0] = Build::Leaf { class: 0 };
    }
    let nb = hp.n_bins;
    let nc = job.n_classes;
    let node_len = d * nb * nc;

    loop {
        let frontier: Vec<usize> = (0..nodes.len())
            .filter(|&i| matches!(nodes[i], Build::Frontier { .. }))
            .collect();
        if frontier.is_empty() {
            break;
        }
        let mut slots = vec![NO_SLOT; nodes.len()];
        for (s, &i) in frontier.iter().enumerate() {
            slots[i] = s as u32;
        }
        let tree_bytes = encode_tree(&nodes, &slots);

        let resident = job.edges_bytes() + tree_bytes.len() + d * 4 + hp.chunk_bytes.max(1);
        let avail = cfg.scratchpad_bytes.saturating_sub(resident);
        let per_batch = avail / job.node_hist_bytes();
        if per_batch == 0 {
            return Err(Error::Capacity {
                core: 0,
                needed: resident + job.node_hist_bytes(),
                available: cfg.scratchpad_bytes,
            });
        }

        let mark = dev.transfer_mark();
        dev.host_broadcast(job.regions.params + job.edges_bytes(), &tree_bytes)?;
        let mut hist = vec![0u64; frontier.len() * node_len];
        let mut core_cycles = 0;
        let mut host_ops = 0u64;
        let mut start = 0;
        while start < frontier.len() {
            let len = per_batch.min(frontier.len() - start);
            let batch = (start as u32, len as u32);
            let tree_len = nodes.len();
            let launch = match enc {
                Encoding::Fixed(fmt) => {
                    let f = fmt.frac_bits();
                    let elem = fmt.elem_bytes();
                    dev.launch(&job.slices, |ctx, s| {
                        job.hist_core(
                            ctx,
                            *s,
                            tree_len,
                            batch,
                            |b| (0..b.len() / elem).map(|i| read_raw(b, elem, i)).collect(),
                            |y: i64| (y >> f) as usize,
                        )
                    })?
                }
                Encoding::Real => dev.launch(&job.slices, |ctx, s| {
                    job.hist_core(
                        ctx,
                        *s,
                        tree_len,
                        batch,
                        |b| (0..b.len() / 8).map(|i| read_f64(b, i)).collect(),
                        |y: f64| job.class_of(y),
                    )
                })?,
            };
            core_cycles += launch.max_core_cycles();
            let bytes = len * node_len * 4;
            for core in 0..dev.n_cores() {
                let b = dev.host_read_bank(core, job.regions.results, bytes)?;
                let dst = &mut hist[start * node_len..(start + len) * node_len];
                for (i, h) in dst.iter_mut().enumerate() {
                    *h += read_raw(&b, 4, i) as u32 as u64;
                }
            }
            host_ops += (dev.n_cores() * len * node_len) as u64;
            start += len;
        }

        for (s, &id) in frontier.iter().enumerate() {
            let Build::Frontier { depth } = nodes[id] else { unreachable!() };
            let h = &hist[s * node_len..(s + 1) * node_len];
            let mut counts = vec![0u64; nc];
            for b in 0..nb {
                for (c, n) in counts.iter_mut().enumerate() {
                    *n += h[b * nc + c];
                }
            }
            let choice = if is_terminal(&counts, depth, hp) {
                None
            } else {
                choose_split(h, d, nb, nc, &counts)
            };
            host_ops += (d * nb * nc) as u64;
            match choice {
                None => nodes[id] = Build::Leaf { class: majority(&counts) },
                Some(c) => {
                    let left = nodes.len();
                    let right = left + 1;
                    nodes[id] = Build::Split {
                        feature: c.feature,
                        bin: c.bin,
                        left,
                        right,
                    };
                    for side in [&c.left, &c.right] {
                        nodes.push(if is_terminal(side, depth + 1, hp) {
                            Build::Leaf { class: majority(side) }
                        } else {
                            Build::Frontier { depth: depth + 1 }
                        });
                    }
                }
            }
        }
        schedule.push(launch_cost(mark, dev, core_cycles, host_ops));
    }

    let tree = nodes
        .iter()
        .map(|n| match *n {
            Build::Split {
                feature,
                bin,
                left,
                right,
            } => TreeNode::Split {
                feature,
                threshold: thresholds[feature * (nb - 1) + bin - 1],
                left,
                right,
            },
            Build::Leaf { class } => TreeNode::Leaf { class },
            Build::Frontier { .. } => unreachable!("frontier left after training"),
        })
        .collect();
    Ok(TrainOutput {
        model: ModelState::Tree(DecisionTree {
            nodes: tree,
            n_classes: nc,
            arithmetic: hp.arithmetic,
        }),
        report: finalize_report(dev, &schedule),
        snapshots: Vec::new(),
        trace: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{accuracy, predict, prepare, Algorithm, Arithmetic};
    use crate::layout::{synth_labels_tree, Dataset};
    use crate::pimsim::PimConfig;
    use proptest::prelude::*;

    fn run(ds: &Dataset, cores: usize, hp: &Hyperparams) -> TrainOutput {
        let mut dev = PimDevice::new(PimConfig::with_cores(cores)).unwrap();
        let images = prepare(&mut dev, ds, Algorithm::Dtree, hp).unwrap();
        dtree_train(&mut dev, &images, hp).unwrap()
    }

    #[test]
    fn wide_multiply() {
        assert_eq!(mul_wide(u128::MAX, u128::MAX), (u128::MAX - 1, 1));
        assert_eq!(mul_wide(1 << 64, 1 << 64), (1, 0));
        assert_eq!(mul_wide(12345, 678), (0, 12345 * 678));
    }

    #[test]
    fn score_order_matches_gini() {
        let a = Score::split(&[4, 0], &[1, 5]).unwrap();
        let b = Score::split(&[3, 1], &[2, 4]).unwrap();
        assert!(a > b);
        let w = |l: &[u64], r: &[u64]| {
            let (nl, nr) = (l.iter().sum::<u64>() as f64, r.iter().sum::<u64>() as f64);
            (nl * gini(l) + nr * gini(r)) / (nl + nr)
        };
        assert!(w(&[4, 0], &[1, 5]) < w(&[3, 1], &[2, 4]));
        assert_eq!(Score::split(&[1, 1], &[1, 1]).unwrap(), Score::node(&[2, 2]));
        assert!(Score::split(&[0, 0], &[1, 1]).is_none());
    }

    #[test]
    fn edges_and_bins() {
        assert_eq!(real_edges(0.0, 4.0, 4), vec![1.0, 2.0, 3.0]);
        assert_eq!(raw_edges(0, 10, 4), vec![2, 5, 7]);
        assert_eq!(raw_edges(-10, 0, 4), vec![-8, -5, -3]);
        let e = [1.0, 2.0, 3.0];
        assert_eq!(bin_of(&e, &0.5), 0);
        assert_eq!(bin_of(&e, &1.0), 1);
        assert_eq!(bin_of(&e, &3.5), 3);
    }

    #[test]
    fn majority_ties_go_low() {
        assert_eq!(majority(&[2, 3, 3]), 1);
        assert_eq!(majority(&[0, 0]), 0);
    }

    #[test]
    fn learns_an_axis_aligned_rule() {
        let ds = synth_labels_tree(4000, 3, 2, 4);
        for arithmetic in [Arithmetic::Real, Arithmetic::default()] {
            let hp = Hyperparams {
                max_depth: 4,
                arithmetic,
                ..Default::default()
            };
            let out = run(&ds, 5, &hp);
            let acc = accuracy(&predict(&out.model, &ds).unwrap(), ds.labels().unwrap());
            assert!(acc > 0.95, "{arithmetic}: {acc}");
            let ModelState::Tree(t) = &out.model else { panic!() };
            assert!(t.depth() <= 4);
        }
    }

    #[test]
    fn real_tree_is_core_count_invariant() {
        let ds = synth_labels_tree(2000, 4, 3, 8);
        let hp = Hyperparams {
            arithmetic: Arithmetic::Real,
            ..Default::default()
        };
        assert_eq!(run(&ds, 1, &hp).model, run(&ds, 9, &hp).model);
    }

    #[test]
    fn tiny_scratchpad_batches_the_frontier() {
        let ds = synth_labels_tree(1500, 4, 3, 2);
        let hp = Hyperparams {
            arithmetic: Arithmetic::Real,
            n_bins: 16,
            chunk_bytes: 256,
            ..Default::default()
        };
        let wide = run(&ds, 2, &hp);
        let mut cfg = PimConfig::with_cores(2);
        // room for about two node histograms per launch
        cfg.scratchpad_bytes = 4096;
        let mut dev = PimDevice::new(cfg).unwrap();
        let images = prepare(&mut dev, &ds, Algorithm::Dtree, &hp).unwrap();
        let narrow = dtree_train(&mut dev, &images, &hp).unwrap();
        assert_eq!(wide.model, narrow.model);
    }

    #[test]
    fn pure_and_empty_inputs() {
        let ds = Dataset::new(1, vec![0.0, 1.0, 2.0], Some(vec![1.0; 3])).unwrap();
        let out = run(&ds, 2, &Hyperparams::default());
        let ModelState::Tree(t) = &out.model else { panic!() };
        assert_eq!(t.nodes, vec![TreeNode::Leaf { class: 1 }]);
        let empty = Dataset::new(2, vec![], Some(vec![])).unwrap();
        let out = run(&empty, 2, &Hyperparams::default());
        let ModelState::Tree(t) = &out.model else { panic!() };
        assert_eq!(t.nodes, vec![TreeNode::Leaf { class: 0 }]);
    }

    #[test]
    fn tree_round_trips_online_nodes() {
        let nodes = vec![
            Build::Split {
                feature: 2,
                bin: 5,
                left: 1,
                right: 2,
            },
            Build::Frontier { depth: 1 },
            Build::Leaf { class: 3 },
        ];
        let r = decode_tree(&encode_tree(&nodes, &[NO_SLOT, 0, NO_SLOT]));
        assert_eq!((r[0].tag, r[0].feature, r[0].bin, r[0].left, r[0].right), (1, 2, 5, 1, 2));
        assert_eq!((r[1].tag, r[1].slot), (0, 0));
        assert_eq!((r[2].tag, r[2].feature), (2, 3));
    }

    proptest! {
        #[test]
        fn chosen_split_lowers_weighted_gini(
            hist in proptest::collection::vec(0u64..20, 2 * 6 * 3)
        ) {
            let (d, nb, nc) = (2, 6, 3);
            let mut parent = vec![0u64; nc];
            for b in 0..nb {
                for c in 0..nc {
                    parent[c] += hist[b * nc + c];
                }
            }
            // both features must see the same rows
            let mut h = hist.clone();
            let second: Vec<u64> = (0..nb * nc).map(|i| {
                let (b, c) = (i / nc, i % nc);
                if b == 0 { parent[c] } else { 0 }
            }).collect();
            h[nb * nc..].copy_from_slice(&second);
            if let Some(s) = choose_split(&h, d, nb, nc, &parent) {
                let n = parent.iter().sum::<u64>() as f64;
                let (nl, nr) = (s.left.iter().sum::<u64>() as f64, s.right.iter().sum::<u64>() as f64);
                let child = (nl * gini(&s.left) + nr * gini(&s.right)) / n;
                prop_assert!(child < gini(&parent) + 1e-12);
                prop_assert_eq!(s.feature, 0);
                // no other boundary is strictly better
                for b in 1..nb {
                    let mut l = vec![0u64; nc];
                    for bb in 0..b { for c in 0..nc { l[c] += h[bb * nc + c]; } }
                    let r: Vec<u64> = parent.iter().zip(&l).map(|(p, x)| p - x).collect();
                    if let Some(sc) = Score::split(&l, &r) {
                        prop_assert!(sc <= Score::split(&s.left, &s.right).unwrap());
                    }
                }
            }
        }
    }
}
