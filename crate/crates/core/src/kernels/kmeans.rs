//! Lloyd's K-means. Cores assign their rows to the nearest centroid, keep
//! the assignment in their bank, and return per-cluster sums and counts.

use super::{
    check_images, host_rows, read_resident, Centroids, Hyperparams, ModelState, Regions, RowChunks, Slice,
    TrainOutput,
};
use crate::fixedpoint::{div_round_even, FixedError, QFormat, WideAccumulator};
use crate::layout::{
    decode_f64_into, decode_raw_into, encode_f64, encode_raw, read_f64, read_raw, BankImage, Encoding, BLOCK_ROWS,
};
use crate::pimsim::{finalize_report, CoreContext, IterationCost, OpClass, PimDevice};
use crate::{Error, Result};

const UNASSIGNED: u32 = u32::MAX;

/// The first `k` distinct rows, in row order.
pub(crate) fn initial_centroids(d: usize, features: &[f64], k: usize) -> Result<Vec<f64>> {
    let mut out: Vec<&[f64]> = Vec::with_capacity(k);
    if d > 0 {
        for row in features.chunks_exact(d) {
            if out.len() == k {
                break;
            }
            if !out.contains(&row) {
                out.push(row);
            }
        }
    }
    if out.len() < k {
        return Err(Error::Param(format!(
            "k = {k} but the data has only {} distinct rows",
            out.len()
        )));
    }
    Ok(out.concat())
}

struct Job {
    slices: Vec<Slice>,
    regions: Regions,
    k: usize,
    d: usize,
    enc: Encoding,
    chunk: usize,
}

impl Job {
    /// Real-mode partial width per block: sums, counts, inertia, changed.
    fn real_payload(&self) -> usize {
        self.k * self.d + self.k + 2
    }

    /// Fixed-mode partial bytes: i64 sums, u32 counts, i64 inertia, u32 changed.
    fn fixed_payload_bytes(&self) -> usize {
        self.k * self.d * 8 + self.k * 4 + 8 + 4
    }

    fn charge_row(&self, ctx: &mut CoreContext<'_>) {
        let (k, d) = (self.k as u64, self.d as u64);
        ctx.charge(OpClass::Add32, 2 * k * d + d + 2);
        ctx.charge(OpClass::Mul32, k * d);
        ctx.charge(OpClass::Cmp, k + 1);
    }

    fn fixed_core(&self, ctx: &mut CoreContext<'_>, slice: Slice, fmt: QFormat) -> Result<()> {
        let (k, d) = (self.k, self.d);
        let elem = fmt.elem_bytes();
        let bytes = read_resident(ctx, self.regions.params, k * d * elem, self.chunk)?;
        ctx.reserve(bytes.len())?;
        let mut c = Vec::new();
        decode_raw_into(&bytes, elem, &mut c);

        ctx.reserve(self.fixed_payload_bytes())?;
        let mut sums = vec![0i64; k * d];
        let mut counts = vec![0u32; k];
        let mut inertia = WideAccumulator::for_products(fmt);
        let mut changed = 0u32;

        let mut rows = RowChunks::new(ctx, slice, self.enc, self.chunk / 2);
        let mut xs = Vec::<i64>::new();
        while let Some((first, count)) = rows.next(ctx, &mut xs, None)? {
            let assign_off = self.regions.state + first * 4;
            let mut assign: Vec<u32> = ctx
                .mram_read(assign_off, count * 4)?
                .chunks_exact(4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            for (r, a) in assign.iter_mut().enumerate() {
                let x = &xs[r * d..(r + 1) * d];
                let mut best = (0usize, i64::MAX);
                for ci in 0..k {
                    let mut acc = WideAccumulator::for_products(fmt);
                    for (&xj, &cj) in x.iter().zip(&c[ci * d..(ci + 1) * d]) {
                        let diff = xj - cj;
                        acc.add_raw_product(diff, diff)?;
                    }
                    if acc.raw() < best.1 {
                        best = (ci, acc.raw());
                    }
                }
                let (ci, d2) = best;
                for (s, &xj) in sums[ci * d..(ci + 1) * d].iter_mut().zip(x) {
                    *s = s.checked_add(xj).ok_or(FixedError::AccumulatorOverflow)?;
                }
                counts[ci] += 1;
                inertia.add_raw(d2)?;
                if *a != ci as u32 {
                    changed += 1;
                    *a = ci as u32;
                }
                self.charge_row(ctx);
            }
            let bytes: Vec<u8> = assign.iter().flat_map(|a| a.to_le_bytes()).collect();
            ctx.mram_write(&bytes, assign_off)?;
        }

        let mut out = encode_raw(sums, 8);
        out.extend(counts.iter().flat_map(|c| c.to_le_bytes()));
        out.extend(inertia.raw().to_le_bytes());
        out.extend(changed.to_le_bytes());
        ctx.mram_write_chunked(&out, self.regions.results, self.chunk)?;
        Ok(())
    }

    fn real_core(&self, ctx: &mut CoreContext<'_>, slice: Slice) -> Result<()> {
        let (k, d) = (self.k, self.d);
        let bytes = read_resident(ctx, self.regions.params, k * d * 8, self.chunk)?;
        ctx.reserve(bytes.len())?;
        let mut c = Vec::new();
        decode_f64_into(&bytes, &mut c);

        let width = self.real_payload();
        ctx.reserve(width * 8)?;
        let mut part = vec![0.0f64; width];
        let mut frag = 0;

        let mut rows = RowChunks::new(ctx, slice, self.enc, self.chunk / 2);
        let mut xs = Vec::<f64>::new();
        while let Some((first, count)) = rows.next(ctx, &mut xs, None)? {
            let assign_off = self.regions.state + first * 4;
            let mut assign: Vec<u32> = ctx
                .mram_read(assign_off, count * 4)?
                .chunks_exact(4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            for (r, a) in assign.iter_mut().enumerate() {
                if (slice.row_start + first + r).is_multiple_of(BLOCK_ROWS) && first + r > 0 {
                    ctx.mram_write(&encode_f64(part.iter().copied()), self.regions.results + frag * width * 8)?;
                    part.fill(0.0);
                    frag += 1;
                }
                let x = &xs[r * d..(r + 1) * d];
                let mut best = (0usize, f64::INFINITY);
                for ci in 0..k {
                    let mut d2 = 0.0;
                    for (xj, cj) in x.iter().zip(&c[ci * d..(ci + 1) * d]) {
                        d2 += (xj - cj) * (xj - cj);
                    }
                    if d2 < best.1 {
                        best = (ci, d2);
                    }
                }
                let (ci, d2) = best;
                for (s, xj) in part[ci * d..(ci + 1) * d].iter_mut().zip(x) {
                    *s += xj;
                }
                part[k * d + ci] += 1.0;
                part[k * d + k] += d2;
                if *a != ci as u32 {
                    part[k * d + k + 1] += 1.0;
                    *a = ci as u32;
                }
                self.charge_row(ctx);
            }
            let bytes: Vec<u8> = assign.iter().flat_map(|a| a.to_le_bytes()).collect();
            ctx.mram_write(&bytes, assign_off)?;
        }
        if slice.rows > 0 {
            ctx.mram_write(&encode_f64(part.iter().copied()), self.regions.results + frag * width * 8)?;
        }
        Ok(())
    }
}

pub fn kmeans_train(dev: &mut PimDevice, images: &[BankImage], hp: &Hyperparams) -> Result<TrainOutput> {
    let (d, enc) = check_images(images, dev)?;
    if enc != hp.arithmetic.encoding() {
        return Err(Error::Param(format!(
            "images are encoded for {:?}, run asks for {}",
            enc, hp.arithmetic
        )));
    }
    let k = hp.k;
    if k == 0 || d == 0 {
        return Err(Error::Param("k-means needs k >= 1 and at least one feature".into()));
    }
    let (_, feats, _) = host_rows(images);
    let init = initial_centroids(d, &feats, k)?;

    let slices: Vec<Slice> = images.iter().map(Slice::of).collect();
    let max_rows = slices.iter().map(|s| s.rows).max().unwrap_or(0);
    let max_frags = slices.iter().map(Slice::fragments).max().unwrap_or(0);
    let mut job = Job {
        slices,
        regions: Regions {
            params: 0,
            results: 0,
            state: 0,
        },
        k,
        d,
        enc,
        chunk: hp.chunk_bytes,
    };
    let result_bytes = match enc {
        Encoding::Fixed(_) => job.fixed_payload_bytes(),
        Encoding::Real => max_frags * job.real_payload() * 8,
    };
    job.regions = Regions::plan(dev, images, k * d * enc.elem_bytes(), result_bytes, max_rows * 4)?;
    for (core, s) in job.slices.iter().enumerate() {
        dev.host_write_bank(core, job.regions.state, &vec![0xFF; s.rows * 4])?;
    }
    debug_assert_eq!(UNASSIGNED.to_le_bytes(), [0xFF; 4]);
    dev.reset_counters();

    let mut schedule = Vec::new();
    let mut snapshots = Vec::new();
    let mut trace = Vec::new();

    let centroids: Vec<f64> = match enc {
        Encoding::Fixed(fmt) => {
            let res = fmt.resolution();
            let mut c: Vec<i64> = init.iter().map(|&v| (v / res).round() as i64).collect();
            for _ in 0..hp.iterations {
                let mark = dev.transfer_mark();
                dev.host_broadcast(job.regions.params, &encode_raw(c.iter().copied(), fmt.elem_bytes()))?;
                let launch = dev.launch(&job.slices, |ctx, s| job.fixed_core(ctx, *s, fmt))?;
                let mut sums = vec![0i128; k * d];
                let mut counts = vec![0u64; k];
                let mut inertia = 0i128;
                let mut changed = 0u64;
                for core in 0..dev.n_cores() {
                    let b = dev.host_read_bank(core, job.regions.results, job.fixed_payload_bytes())?;
                    for (i, s) in sums.iter_mut().enumerate() {
                        *s += read_raw(&b, 8, i) as i128;
                    }
                    let tail = &b[k * d * 8..];
                    for (i, n) in counts.iter_mut().enumerate() {
                        *n += read_raw(tail, 4, i) as u32 as u64;
                    }
                    inertia += read_raw(&tail[k * 4..], 8, 0) as i128;
                    changed += read_raw(&tail[k * 4 + 8..], 4, 0) as u32 as u64;
                }
                for ci in 0..k {
                    if counts[ci] > 0 {
                        for j in 0..d {
                            c[ci * d + j] = div_round_even(sums[ci * d + j], counts[ci] as i128) as i64;
                        }
                    }
                }
                let t = dev.transfers_since(mark);
                schedule.push(IterationCost {
                    core_cycles: launch.max_core_cycles(),
                    transfer_cycles: t.cycles,
                    to_device_bytes: t.to_device_bytes,
                    from_device_bytes: t.from_device_bytes,
                    host_ops: (dev.n_cores() * (k * d + k + 2) + k * d) as u64,
                });
                trace.push(inertia as f64 * res * res);
                snapshots.push(c.iter().map(|&r| r as f64 * res).collect());
                if changed == 0 {
                    break;
                }
            }
            c.iter().map(|&r| r as f64 * res).collect()
        }
        Encoding::Real => {
            let mut c = init;
            let width = job.real_payload();
            for _ in 0..hp.iterations {
                let mark = dev.transfer_mark();
                dev.host_broadcast(job.regions.params, &encode_f64(c.iter().copied()))?;
                let launch = dev.launch(&job.slices, |ctx, s| job.real_core(ctx, *s))?;
                let mut total = vec![0.0f64; width];
                let mut frags_total = 0;
                for (core, s) in job.slices.iter().enumerate() {
                    let frags = s.fragments();
                    frags_total += frags;
                    let b = dev.host_read_bank(core, job.regions.results, frags * width * 8)?;
                    for f in 0..frags {
                        for (i, t) in total.iter_mut().enumerate() {
                            *t += read_f64(&b, f * width + i);
                        }
                    }
                }
                for ci in 0..k {
                    let n = total[k * d + ci];
                    if n > 0.0 {
                        for j in 0..d {
                            c[ci * d + j] = total[ci * d + j] / n;
                        }
                    }
                }
                let t = dev.transfers_since(mark);
                schedule.push(IterationCost {
                    core_cycles: launch.max_core_cycles(),
                    transfer_cycles: t.cycles,
                    to_device_bytes: t.to_device_bytes,
                    from_device_bytes: t.from_device_bytes,
                    host_ops: (frags_total * width + k * d) as u64,
                });
                trace.push(total[k * d + k]);
                snapshots.push(c.clone());
                if total[k * d + k + 1] == 0.0 {
                    break;
                }
            }
            c
        }
    };

    Ok(TrainOutput {
        model: ModelState::KMeans(Centroids {
            k,
            d,
            values: centroids,
            arithmetic: hp.arithmetic,
        }),
        report: finalize_report(dev, &schedule),
        snapshots,
        trace,
    })
}
