//! Batch gradient descent for linear and logistic regression.
//!
//! Each core computes the gradient of its rows and writes it back: one
//! 32-bit partial per parameter in fixed point, one `f64` partial per
//! parameter per row block in real mode. The host sums the partials and
//! applies the step.

use super::{
    check_images, host_rows, read_resident, Arithmetic, Hyperparams, LinearModel, ModelState, Regions, RowChunks,
    Slice, TrainOutput,
};
use crate::fixedpoint::{div_round_even, FixedScalar, QFormat, Rescale, WideAccumulator};
use crate::layout::{decode_raw_into, encode_f64, encode_raw, read_f64, read_raw, BankImage, Encoding, BLOCK_ROWS};
use crate::lut::{sigmoid, LookupMode, LutIndexer, LutTable};
use crate::pimsim::{finalize_report, CoreContext, IterationCost, OpClass, PimDevice};
use crate::{Error, Result};

pub fn linreg_train(dev: &mut PimDevice, images: &[BankImage], hp: &Hyperparams) -> Result<TrainOutput> {
    train(dev, images, hp, None, false)
}

/// Logistic regression. Fixed-point runs evaluate the sigmoid through `lut`,
/// which must produce values in the run's format; real runs evaluate it
/// exactly.
pub fn logreg_train(
    dev: &mut PimDevice,
    images: &[BankImage],
    hp: &Hyperparams,
    lut: &LutTable,
) -> Result<TrainOutput> {
    train(dev, images, hp, Some(lut), true)
}

/// Mean squared-error gradient `(1/n) X^T (X w - y)` at `params` (weights,
/// then the bias if `hp.fit_bias`), computed by one device pass.
pub fn linear_gradient(
    dev: &mut PimDevice,
    images: &[BankImage],
    hp: &Hyperparams,
    params: &[f64],
) -> Result<Vec<f64>> {
    let job = Job::new(dev, images, hp, None, false)?;
    if params.len() != job.n_params {
        return Err(Error::Param(format!(
            "{} parameters given, model has {}",
            params.len(),
            job.n_params
        )));
    }
    let n = job.n_rows as f64;
    let scale = |g: f64| if job.n_rows == 0 { 0.0 } else { g / n };
    match job.enc {
        Encoding::Real => {
            let (g, _) = job.real_pass(dev, params)?;
            Ok(g.into_iter().map(scale).collect())
        }
        Encoding::Fixed(fmt) => {
            let raw: Vec<i64> = params
                .iter()
                .map(|&p| crate::fixedpoint::quantize(p, fmt).map(|q| q.raw()))
                .collect::<Result<_, _>>()?;
            let (g, _) = job.fixed_pass(dev, &raw)?;
            let res = job.grad_fmt.resolution();
            Ok(g.into_iter().map(|v| scale(v as f64 * res)).collect())
        }
    }
}

struct LutJob {
    indexer: LutIndexer,
    mode: LookupMode,
    bytes: Vec<u8>,
}

struct Job {
    slices: Vec<Slice>,
    regions: Regions,
    d: usize,
    n_params: usize,
    fit_bias: bool,
    logistic: bool,
    enc: Encoding,
    grad_fmt: QFormat,
    chunk: usize,
    n_rows: usize,
    lut: Option<LutJob>,
}

impl Job {
    fn new(
        dev: &mut PimDevice,
        images: &[BankImage],
        hp: &Hyperparams,
        lut: Option<&LutTable>,
        logistic: bool,
    ) -> Result<Job> {
        let (d, enc) = check_images(images, dev)?;
        if enc != hp.arithmetic.encoding() {
            return Err(Error::Param(format!(
                "images are encoded for {:?}, run asks for {}",
                enc, hp.arithmetic
            )));
        }
        if !images[0].has_labels {
            return Err(Error::Data("regression needs a label column".into()));
        }
        let n_params = d + usize::from(hp.fit_bias);
        let grad_fmt = match enc {
            Encoding::Fixed(fmt) => hp.grad_format(fmt)?,
            Encoding::Real => QFormat::Q16_16,
        };
        let slices: Vec<Slice> = images.iter().map(Slice::of).collect();
        let n_rows = slices.iter().map(|s| s.rows).sum();

        let lut = match (enc, lut) {
            (Encoding::Fixed(fmt), Some(t)) if logistic => {
                if t.out_fmt() != fmt {
                    return Err(Error::Param(format!(
                        "lookup table produces {}, run uses {fmt}",
                        t.out_fmt()
                    )));
                }
                Some(LutJob {
                    indexer: t.indexer(fmt),
                    mode: t.mode(),
                    bytes: t.to_bytes(),
                })
            }
            _ => None,
        };
        let param_bytes = n_params * enc.elem_bytes();
        let max_frags = slices.iter().map(Slice::fragments).max().unwrap_or(0);
        let result_bytes = match enc {
            Encoding::Fixed(_) => n_params * grad_fmt.elem_bytes(),
            Encoding::Real => max_frags * n_params * 8,
        };
        let lut_bytes = lut.as_ref().map_or(0, |l| l.bytes.len());
        let regions = Regions::plan(dev, images, param_bytes, result_bytes, lut_bytes)?;
        if let Some(l) = &lut {
            dev.host_broadcast(regions.state, &l.bytes)?;
        }
        Ok(Job {
            slices,
            regions,
            d,
            n_params,
            fit_bias: hp.fit_bias,
            logistic,
            enc,
            grad_fmt,
            chunk: hp.chunk_bytes,
            n_rows,
            lut,
        })
    }

    /// One fixed-point gradient pass. Returns the summed gradient in
    /// `grad_fmt` raw units and the iteration's cost.
    fn fixed_pass(&self, dev: &mut PimDevice, params: &[i64]) -> Result<(Vec<i128>, IterationCost)> {
        let Encoding::Fixed(fmt) = self.enc else {
            unreachable!("fixed pass on a real image")
        };
        let elem = fmt.elem_bytes();
        let mark = dev.transfer_mark();
        dev.host_broadcast(self.regions.params, &encode_raw(params.iter().copied(), elem))?;
        let launch = dev.launch(&self.slices, |ctx, slice| self.fixed_core(ctx, *slice, fmt))?;

        let out_bytes = self.n_params * self.grad_fmt.elem_bytes();
        let mut g = vec![0i128; self.n_params];
        for core in 0..dev.n_cores() {
            let bytes = dev.host_read_bank(core, self.regions.results, out_bytes)?;
            for (j, gj) in g.iter_mut().enumerate() {
                *gj += read_raw(&bytes, self.grad_fmt.elem_bytes(), j) as i128;
            }
        }
        let t = dev.transfers_since(mark);
        let cost = IterationCost {
            core_cycles: launch.max_core_cycles(),
            transfer_cycles: t.cycles,
            to_device_bytes: t.to_device_bytes,
            from_device_bytes: t.from_device_bytes,
            host_ops: (dev.n_cores() * self.n_params + self.n_params) as u64,
        };
        Ok((g, cost))
    }

    fn fixed_core(&self, ctx: &mut CoreContext<'_>, slice: Slice, fmt: QFormat) -> Result<()> {
        let elem = fmt.elem_bytes();
        let f = fmt.frac_bits();
        let one = 1i64 << f;
        let d = self.d;

        let mut w = Vec::new();
        let bytes = read_resident(ctx, self.regions.params, self.n_params * elem, self.chunk)?;
        ctx.reserve(bytes.len())?;
        decode_raw_into(&bytes, elem, &mut w);

        let mut table = Vec::new();
        if let Some(l) = &self.lut {
            let bytes = read_resident(ctx, self.regions.state, l.bytes.len(), self.chunk)?;
            ctx.reserve(bytes.len())?;
            decode_raw_into(&bytes, elem, &mut table);
        }

        ctx.reserve(self.n_params * 8)?;
        let mut g = vec![WideAccumulator::for_products(fmt); self.n_params];

        let mut rows = RowChunks::new(ctx, slice, self.enc, self.chunk);
        let (mut xs, mut ys) = (Vec::<i64>::new(), Vec::<i64>::new());
        while let Some((_, count)) = rows.next(ctx, &mut xs, Some(&mut ys))? {
            for r in 0..count {
                let x = &xs[r * d..(r + 1) * d];
                let mut acc = WideAccumulator::for_products(fmt);
                for (&xj, &wj) in x.iter().zip(&w) {
                    acc.add_raw_product(xj, wj)?;
                }
                if self.fit_bias {
                    acc.add_raw_product(one, w[d])?;
                }
                let mut pred = acc.rescale(fmt).raw();
                if let Some(l) = &self.lut {
                    let (p, muls) = l.indexer.lookup_raw(&table, l.mode, fmt, pred);
                    pred = p;
                    ctx.charge(OpClass::LutLookup, 1);
                    ctx.charge(OpClass::Mul32, muls);
                    ctx.charge(OpClass::Add32, 1);
                }
                let err = FixedScalar::saturating_from_raw(pred as i128 - ys[r] as i128, fmt).raw();
                for (gj, &xj) in g.iter_mut().zip(x) {
                    gj.add_raw_product(xj, err)?;
                }
                if self.fit_bias {
                    g[d].add_raw_product(one, err)?;
                }
                ctx.charge(OpClass::Mul32, (d + self.n_params) as u64);
                ctx.charge(OpClass::Add32, (d + self.n_params + 2) as u64 + u64::from(self.fit_bias));
            }
        }

        let mut out = Vec::with_capacity(self.n_params);
        for acc in &g {
            out.push(acc.rescale_exact_range(self.grad_fmt)?.raw());
        }
        ctx.charge(OpClass::Add32, self.n_params as u64);
        let bytes = encode_raw(out, self.grad_fmt.elem_bytes());
        ctx.mram_write_chunked(&bytes, self.regions.results, self.chunk)?;
        Ok(())
    }

    /// One real-arithmetic gradient pass; partials are combined block by
    /// block in row order.
    fn real_pass(&self, dev: &mut PimDevice, params: &[f64]) -> Result<(Vec<f64>, IterationCost)> {
        let mark = dev.transfer_mark();
        dev.host_broadcast(self.regions.params, &encode_f64(params.iter().copied()))?;
        let launch = dev.launch(&self.slices, |ctx, slice| self.real_core(ctx, *slice))?;

        let mut g = vec![0.0f64; self.n_params];
        let mut frags_total = 0;
        for (core, slice) in self.slices.iter().enumerate() {
            let frags = slice.fragments();
            frags_total += frags;
            let bytes = dev.host_read_bank(core, self.regions.results, frags * self.n_params * 8)?;
            for b in 0..frags {
                for (j, gj) in g.iter_mut().enumerate() {
                    *gj += read_f64(&bytes, b * self.n_params + j);
                }
            }
        }
        let t = dev.transfers_since(mark);
        let cost = IterationCost {
            core_cycles: launch.max_core_cycles(),
            transfer_cycles: t.cycles,
            to_device_bytes: t.to_device_bytes,
            from_device_bytes: t.from_device_bytes,
            host_ops: (frags_total * self.n_params + self.n_params) as u64,
        };
        Ok((g, cost))
    }

    fn real_core(&self, ctx: &mut CoreContext<'_>, slice: Slice) -> Result<()> {
        let d = self.d;
        let bytes = read_resident(ctx, self.regions.params, self.n_params * 8, self.chunk)?;
        ctx.reserve(bytes.len())?;
        let mut w = Vec::new();
        crate::layout::decode_f64_into(&bytes, &mut w);

        ctx.reserve(self.n_params * 8)?;
        let mut g = vec![0.0f64; self.n_params];
        let mut frag = 0;
        let frag_bytes = self.n_params * 8;

        let mut rows = RowChunks::new(ctx, slice, Encoding::Real, self.chunk);
        let (mut xs, mut ys) = (Vec::<f64>::new(), Vec::<f64>::new());
        while let Some((first, count)) = rows.next(ctx, &mut xs, Some(&mut ys))? {
            for r in 0..count {
                let global = slice.row_start + first + r;
                if global.is_multiple_of(BLOCK_ROWS) && first + r > 0 {
                    let bytes = encode_f64(g.iter().copied());
                    ctx.mram_write(&bytes, self.regions.results + frag * frag_bytes)?;
                    g.fill(0.0);
                    frag += 1;
                }
                let x = &xs[r * d..(r + 1) * d];
                let mut z = 0.0;
                for (xj, wj) in x.iter().zip(&w) {
                    z += xj * wj;
                }
                if self.fit_bias {
                    z += w[d];
                }
                let p = if self.logistic {
                    ctx.charge(OpClass::LutLookup, 1);
                    sigmoid(z)
                } else {
                    z
                };
                let err = p - ys[r];
                for (gj, xj) in g.iter_mut().zip(x) {
                    *gj += xj * err;
                }
                if self.fit_bias {
                    g[d] += err;
                }
                ctx.charge(OpClass::Mul32, (d + self.n_params) as u64);
                ctx.charge(OpClass::Add32, (d + self.n_params + 1) as u64 + u64::from(self.fit_bias));
            }
        }
        if slice.rows > 0 {
            let bytes = encode_f64(g.iter().copied());
            ctx.mram_write(&bytes, self.regions.results + frag * frag_bytes)?;
            frag += 1;
        }
        debug_assert_eq!(frag, slice.fragments());
        Ok(())
    }
}

fn check_binary(images: &[BankImage]) -> Result<()> {
    let (_, _, labels) = host_rows(images);
    if let Some(y) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::Data(format!("logistic labels must be 0 or 1, found {y}")));
    }
    Ok(())
}

fn train(
    dev: &mut PimDevice,
    images: &[BankImage],
    hp: &Hyperparams,
    lut: Option<&LutTable>,
    logistic: bool,
) -> Result<TrainOutput> {
    if logistic {
        check_binary(images)?;
    }
    if logistic && matches!(hp.arithmetic, Arithmetic::Fixed(_)) && lut.is_none() {
        return Err(Error::Param("fixed-point logistic regression needs a lookup table".into()));
    }
    let job = Job::new(dev, images, hp, lut, logistic)?;
    dev.reset_counters();
    let mut schedule = Vec::with_capacity(hp.iterations);
    let mut snapshots = Vec::with_capacity(hp.iterations);
    let n = job.n_rows;

    let params: Vec<f64> = match job.enc {
        Encoding::Fixed(fmt) => {
            let s = hp.lr_shift()?;
            let f = fmt.frac_bits() as i32;
            let g = job.grad_fmt.frac_bits() as i32;
            let e = f - g - s as i32;
            let mut w = vec![0i64; job.n_params];
            for _ in 0..hp.iterations {
                let (grad, cost) = job.fixed_pass(dev, &w)?;
                if n > 0 {
                    for (wj, &gj) in w.iter_mut().zip(&grad) {
                        let delta = if e >= 0 {
                            div_round_even(gj << e, n as i128)
                        } else {
                            div_round_even(gj, (n as i128) << (-e))
                        };
                        *wj = FixedScalar::saturating_from_raw(*wj as i128 - delta, fmt).raw();
                    }
                }
                schedule.push(cost);
                snapshots.push(w.iter().map(|&r| r as f64 * fmt.resolution()).collect());
            }
            w.iter().map(|&r| r as f64 * fmt.resolution()).collect()
        }
        Encoding::Real => {
            let lr = hp.effective_learning_rate()?;
            let mut w = vec![0.0f64; job.n_params];
            for _ in 0..hp.iterations {
                let (grad, cost) = job.real_pass(dev, &w)?;
                if n > 0 {
                    for (wj, gj) in w.iter_mut().zip(&grad) {
                        *wj -= lr * (gj / n as f64);
                    }
                }
                schedule.push(cost);
                snapshots.push(w.clone());
            }
            w
        }
    };

    let model = LinearModel {
        weights: params[..job.d].to_vec(),
        bias: hp.fit_bias.then(|| params[job.d]),
        arithmetic: hp.arithmetic,
    };
    Ok(TrainOutput {
        model: if logistic {
            ModelState::Logistic(model)
        } else {
            ModelState::Linear(model)
        },
        report: finalize_report(dev, &schedule),
        snapshots,
        trace: Vec::new(),
    })
}
