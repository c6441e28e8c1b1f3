//! Single-machine double-precision references for every workload.
//!
//! The regression, K-means and binned-tree references use the same row-block
//! reduction order as real-mode device runs, so the two agree bit for bit.

use crate::kernels::{
    Centroids, DecisionTree, Hyperparams, LinearModel, ModelState, TreeNode,
};
use crate::kernels::{choose_split, is_terminal, majority, real_edges, bin_of, Score};
use crate::layout::{Dataset, BLOCK_ROWS};
use crate::lut::sigmoid;
use crate::{Arithmetic, Error, Result};

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub model: ModelState,
    /// Loss before each step (regression) or inertia of each assignment
    /// (K-means). Empty for trees.
    pub trace: Vec<f64>,
    /// Parameters after each iteration.
    pub snapshots: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossSpec {
    /// `(1 / 2n) sum (x.w - y)^2`
    Quadratic,
    /// Mean logistic cross-entropy.
    Logistic,
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn score(x: &[f64], params: &[f64], fit_bias: bool) -> f64 {
    let d = x.len();
    let mut z = 0.0;
    for (xj, wj) in x.iter().zip(&params[..d]) {
        z += xj * wj;
    }
    if fit_bias {
        z += params[d];
    }
    z
}

fn check_params(ds: &Dataset, params: &[f64]) -> Result<bool> {
    let d = ds.n_features();
    match params.len() {
        n if n == d => Ok(false),
        n if n == d + 1 => Ok(true),
        n => Err(Error::Param(format!("{n} parameters for {d} features"))),
    }
}

/// Mean loss at `params` (weights, optionally followed by a bias).
pub fn loss_value(loss: LossSpec, ds: &Dataset, params: &[f64]) -> Result<f64> {
    let fit_bias = check_params(ds, params)?;
    let y = ds.require_labels()?;
    let n = ds.n_rows();
    if n == 0 {
        return Ok(0.0);
    }
    // Neumaier summation keeps the total accurate enough for differencing.
    let (mut total, mut comp) = (0.0f64, 0.0f64);
    for (x, &yi) in ds.rows().zip(y) {
        let z = score(x, params, fit_bias);
        let term = match loss {
            LossSpec::Quadratic => 0.5 * (z - yi) * (z - yi),
            LossSpec::Logistic => softplus(z) - yi * z,
        };
        let t = total + term;
        comp += if total.abs() >= term.abs() {
            (total - t) + term
        } else {
            (term - t) + total
        };
        total = t;
    }
    Ok((total + comp) / n as f64)
}

/// Closed-form mean gradient at `params`.
pub fn analytic_gradient(loss: LossSpec, ds: &Dataset, params: &[f64]) -> Result<Vec<f64>> {
    let fit_bias = check_params(ds, params)?;
    let y = ds.require_labels()?;
    let d = ds.n_features();
    let mut g = vec![0.0; params.len()];
    for (x, &yi) in ds.rows().zip(y) {
        let z = score(x, params, fit_bias);
        let p = match loss {
            LossSpec::Quadratic => z,
            LossSpec::Logistic => sigmoid(z),
        };
        let err = p - yi;
        for (gj, xj) in g.iter_mut().zip(x) {
            *gj += xj * err;
        }
        if fit_bias {
            g[d] += err;
        }
    }
    let n = ds.n_rows().max(1) as f64;
    Ok(g.into_iter().map(|v| v / n).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub numeric: Vec<f64>,
    /// Largest `|a - n| / max(|a|, |n|)`; components where both are below
    /// `1e-10` count as zero error.
    pub max_rel_err: f64,
}

/// Compares `analytic` against central differences of the loss.
pub fn grad_check(loss: LossSpec, ds: &Dataset, params: &[f64], analytic: &[f64], eps: f64) -> Result<GradCheck> {
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::Param(format!("difference step {eps} is outside [1e-7, 1e-4]")));
    }
    if analytic.len() != params.len() {
        return Err(Error::Param(format!(
            "{} gradient components for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut numeric = Vec::with_capacity(params.len());
    let mut max_rel_err = 0.0f64;
    let mut p = params.to_vec();
    for j in 0..params.len() {
        let (hi, lo) = (params[j] + eps, params[j] - eps);
        p[j] = hi;
        let up = loss_value(loss, ds, &p)?;
        p[j] = lo;
        let down = loss_value(loss, ds, &p)?;
        p[j] = params[j];
        let n = (up - down) / (hi - lo);
        let a = analytic[j];
        let scale = a.abs().max(n.abs());
        if scale > 1e-10 {
            max_rel_err = max_rel_err.max((a - n).abs() / scale);
        }
        numeric.push(n);
    }
    Ok(GradCheck { numeric, max_rel_err })
}

fn linear_oracle(ds: &Dataset, hp: &Hyperparams, logistic: bool) -> Result<OracleResult> {
    let y = ds.require_labels()?;
    if logistic {
        if let Some(v) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data(format!("logistic labels must be 0 or 1, found {v}")));
        }
    }
    let lr = Hyperparams {
        arithmetic: Arithmetic::Real,
        ..hp.clone()
    }
    .effective_learning_rate()?;
    let d = ds.n_features();
    let np = d + usize::from(hp.fit_bias);
    let n = ds.n_rows();
    let loss = if logistic { LossSpec::Logistic } else { LossSpec::Quadratic };
    let mut w = vec![0.0f64; np];
    let mut trace = Vec::with_capacity(hp.iterations);
    let mut snapshots = Vec::with_capacity(hp.iterations);
    for _ in 0..hp.iterations {
        trace.push(loss_value(loss, ds, &w)?);
        let mut g = vec![0.0f64; np];
        for start in (0..n).step_by(BLOCK_ROWS) {
            let mut part = vec![0.0f64; np];
            for i in start..(start + BLOCK_ROWS).min(n) {
                let x = ds.row(i);
                let z = score(x, &w, hp.fit_bias);
                let p = if logistic { sigmoid(z) } else { z };
                let err = p - y[i];
                for (pj, xj) in part.iter_mut().zip(x) {
                    *pj += xj * err;
                }
                if hp.fit_bias {
                    part[d] += err;
                }
            }
            for (gj, pj) in g.iter_mut().zip(&part) {
                *gj += pj;
            }
        }
        if n > 0 {
            for (wj, gj) in w.iter_mut().zip(&g) {
                *wj -= lr * (gj / n as f64);
            }
        }
        snapshots.push(w.clone());
    }
    let model = LinearModel {
        weights: w[..d].to_vec(),
        bias: hp.fit_bias.then(|| w[d]),
        arithmetic: Arithmetic::Real,
    };
    Ok(OracleResult {
        model: if logistic {
            ModelState::Logistic(model)
        } else {
            ModelState::Linear(model)
        },
        trace,
        snapshots,
    })
}

/// Batch gradient descent on the mean squared error.
pub fn oracle_linreg(ds: &Dataset, hp: &Hyperparams) -> Result<OracleResult> {
    linear_oracle(ds, hp, false)
}

/// Batch gradient descent on the logistic loss with the exact sigmoid.
pub fn oracle_logreg(ds: &Dataset, hp: &Hyperparams) -> Result<OracleResult> {
    linear_oracle(ds, hp, true)
}

/// Lloyd's algorithm from the first `k` distinct rows.
pub fn oracle_kmeans(ds: &Dataset, hp: &Hyperparams) -> Result<OracleResult> {
    let (k, d, n) = (hp.k, ds.n_features(), ds.n_rows());
    if k == 0 || d == 0 {
        return Err(Error::Param("k-means needs k >= 1 and at least one feature".into()));
    }
    let mut c = crate::kernels::initial_centroids(d, ds.features(), k)?;
    let mut assign = vec![usize::MAX; n];
    let width = k * d + k + 2;
    let mut trace = Vec::new();
    let mut snapshots = Vec::new();
    for _ in 0..hp.iterations {
        let mut total = vec![0.0f64; width];
        for start in (0..n).step_by(BLOCK_ROWS) {
            let mut part = vec![0.0f64; width];
            for (i, a) in assign.iter_mut().enumerate().take((start + BLOCK_ROWS).min(n)).skip(start) {
                let x = ds.row(i);
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
                if *a != ci {
                    part[k * d + k + 1] += 1.0;
                    *a = ci;
                }
            }
            for (t, p) in total.iter_mut().zip(&part) {
                *t += p;
            }
        }
        for ci in 0..k {
            let cnt = total[k * d + ci];
            if cnt > 0.0 {
                for j in 0..d {
                    c[ci * d + j] = total[ci * d + j] / cnt;
                }
            }
        }
        trace.push(total[k * d + k]);
        snapshots.push(c.clone());
        if total[k * d + k + 1] == 0.0 {
            break;
        }
    }
    Ok(OracleResult {
        model: ModelState::KMeans(Centroids {
            k,
            d,
            values: c,
            arithmetic: Arithmetic::Real,
        }),
        trace,
        snapshots,
    })
}

fn class_labels(ds: &Dataset) -> Result<(Vec<usize>, usize)> {
    let c = ds.class_count()?;
    let y = ds.require_labels()?.iter().map(|&v| v as usize).collect();
    Ok((y, c.max(1)))
}

enum Pending {
    Rows(Vec<usize>, usize),
    Done(TreeNode),
}

/// Breadth-first growth shared by both tree references. `split` returns
/// `(feature, threshold, left rows, right rows)` or `None` for a leaf.
fn grow(
    ds: &Dataset,
    y: &[usize],
    nc: usize,
    hp: &Hyperparams,
    split: impl Fn(&[usize], &[u64]) -> Option<(usize, f64)>,
) -> DecisionTree {
    let counts_of = |rows: &[usize]| {
        let mut c = vec![0u64; nc];
        for &r in rows {
            c[y[r]] += 1;
        }
        c
    };
    let mut nodes = vec![Pending::Rows((0..ds.n_rows()).collect(), 0)];
    if ds.n_rows() == 0 {
        nodes[0] = Pending::Done(TreeNode::Leaf { class: 0 });
    }
    loop {
        let frontier: Vec<usize> = (0..nodes.len()).filter(|&i| matches!(nodes[i], Pending::Rows(..))).collect();
        if frontier.is_empty() {
            break;
        }
        for id in frontier {
            let Pending::Rows(rows, depth) = std::mem::replace(&mut nodes[id], Pending::Done(TreeNode::Leaf { class: 0 }))
            else {
                unreachable!()
            };
            let counts = counts_of(&rows);
            let choice = if is_terminal(&counts, depth, hp) {
                None
            } else {
                split(&rows, &counts)
            };
            match choice {
                None => nodes[id] = Pending::Done(TreeNode::Leaf { class: majority(&counts) }),
                Some((feature, threshold)) => {
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        rows.iter().partition(|&&i| ds.row(i)[feature] < threshold);
                    let left = nodes.len();
                    nodes[id] = Pending::Done(TreeNode::Split {
                        feature,
                        threshold,
                        left,
                        right: left + 1,
                    });
                    for side in [l, r] {
                        let c = counts_of(&side);
                        nodes.push(if is_terminal(&c, depth + 1, hp) {
                            Pending::Done(TreeNode::Leaf { class: majority(&c) })
                        } else {
                            Pending::Rows(side, depth + 1)
                        });
                    }
                }
            }
        }
    }
    DecisionTree {
        nodes: nodes
            .into_iter()
            .map(|n| match n {
                Pending::Done(t) => t,
                Pending::Rows(..) => unreachable!(),
            })
            .collect(),
        n_classes: nc,
        arithmetic: Arithmetic::Real,
    }
}

/// Gini tree over equal-width bins of the full data range.
pub fn oracle_dtree(ds: &Dataset, hp: &Hyperparams) -> Result<OracleResult> {
    let (y, nc) = class_labels(ds)?;
    let (d, nb) = (ds.n_features(), hp.n_bins);
    if nb < 2 || d == 0 {
        return Err(Error::Param("decision trees need n_bins >= 2 and at least one feature".into()));
    }
    let mut edges = Vec::with_capacity(d * (nb - 1));
    for j in 0..d {
        let (lo, hi) = ds
            .rows()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x[j]), hi.max(x[j])));
        edges.extend(real_edges(lo, hi, nb));
    }
    let tree = grow(ds, &y, nc, hp, |rows, counts| {
        let mut hist = vec![0u64; d * nb * nc];
        for &r in rows {
            let x = ds.row(r);
            for j in 0..d {
                let b = bin_of(&edges[j * (nb - 1)..(j + 1) * (nb - 1)], &x[j]);
                hist[(j * nb + b) * nc + y[r]] += 1;
            }
        }
        choose_split(&hist, d, nb, nc, counts).map(|s| (s.feature, edges[s.feature * (nb - 1) + s.bin - 1]))
    });
    Ok(OracleResult {
        model: ModelState::Tree(tree),
        trace: Vec::new(),
        snapshots: Vec::new(),
    })
}

/// Gini tree that tries every midpoint between consecutive distinct values.
pub fn oracle_dtree_exhaustive(ds: &Dataset, hp: &Hyperparams) -> Result<OracleResult> {
    let (y, nc) = class_labels(ds)?;
    let d = ds.n_features();
    if d == 0 {
        return Err(Error::Param("decision trees need at least one feature".into()));
    }
    let tree = grow(ds, &y, nc, hp, |rows, counts| {
        let parent = Score::node(counts);
        let mut best: Option<(Score, usize, f64)> = None;
        for j in 0..d {
            let mut order: Vec<usize> = rows.to_vec();
            order.sort_by(|&a, &b| ds.row(a)[j].total_cmp(&ds.row(b)[j]));
            let mut left = vec![0u64; nc];
            for w in 0..order.len().saturating_sub(1) {
                left[y[order[w]]] += 1;
                let (a, b) = (ds.row(order[w])[j], ds.row(order[w + 1])[j]);
                if a == b {
                    continue;
                }
                let right: Vec<u64> = counts.iter().zip(&left).map(|(p, l)| p - l).collect();
                let Some(s) = Score::split(&left, &right) else {
                    continue;
                };
                let mut t = a + (b - a) / 2.0;
                if t <= a {
                    t = b;
                }
                if best.as_ref().is_none_or(|(bs, _, _)| s > *bs) {
                    best = Some((s, j, t));
                }
            }
        }
        best.filter(|(s, _, _)| *s > parent).map(|(_, j, t)| (j, t))
    });
    Ok(OracleResult {
        model: ModelState::Tree(tree),
        trace: Vec::new(),
        snapshots: Vec::new(),
    })
}
