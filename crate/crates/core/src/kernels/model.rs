use std::fmt::Write as _;

use super::{Algorithm, Arithmetic};
use crate::fixedpoint::quantize;
use crate::layout::Dataset;
use crate::lut::sigmoid;
use crate::{Error, Result};

const MAGIC: &str = "pimml-model v1";

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: Option<f64>,
    pub arithmetic: Arithmetic,
}

impl LinearModel {
    pub fn score(&self, x: &[f64]) -> f64 {
        let mut z = 0.0;
        for (xj, wj) in x.iter().zip(&self.weights) {
            z += xj * wj;
        }
        z + self.bias.unwrap_or(0.0)
    }

    /// Weights followed by the bias, if any.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.extend(self.bias);
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Centroids {
    pub k: usize,
    pub d: usize,
    /// Row-major `k x d`.
    pub values: Vec<f64>,
    pub arithmetic: Arithmetic,
}

impl Centroids {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.values[c * self.d..(c + 1) * self.d]
    }

    /// Nearest centroid and its squared distance. Ties go to the lower id.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for c in 0..self.k {
            let mut d2 = 0.0;
            for (a, b) in x.iter().zip(self.centroid(c)) {
                d2 += (a - b) * (a - b);
            }
            if d2 < best.1 {
                best = (c, d2);
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        class: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    /// Node 0 is the root.
    pub nodes: Vec<TreeNode>,
    pub n_classes: usize,
    pub arithmetic: Arithmetic,
}

impl DecisionTree {
    pub fn classify(&self, x: &[f64]) -> u32 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { class } => return *class,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let v = match self.arithmetic {
                        Arithmetic::Fixed(fmt) => quantize(x[*feature], fmt).map_or(x[*feature], |q| q.to_f64()),
                        Arithmetic::Real => x[*feature],
                    };
                    i = if v < *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            walk(&self.nodes, 0)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelState {
    Linear(LinearModel),
    Logistic(LinearModel),
    KMeans(Centroids),
    Tree(DecisionTree),
}

impl ModelState {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            ModelState::Linear(_) => Algorithm::Linreg,
            ModelState::Logistic(_) => Algorithm::Logreg,
            ModelState::KMeans(_) => Algorithm::Kmeans,
            ModelState::Tree(_) => Algorithm::Dtree,
        }
    }

    pub fn arithmetic(&self) -> Arithmetic {
        match self {
            ModelState::Linear(m) | ModelState::Logistic(m) => m.arithmetic,
            ModelState::KMeans(c) => c.arithmetic,
            ModelState::Tree(t) => t.arithmetic,
        }
    }

    /// Flat parameter vector: weights (and bias) or centroids. Trees have none.
    pub fn params(&self) -> Vec<f64> {
        match self {
            ModelState::Linear(m) | ModelState::Logistic(m) => m.params(),
            ModelState::KMeans(c) => c.values.clone(),
            ModelState::Tree(_) => Vec::new(),
        }
    }

    /// Probability of class 1 for logistic models.
    pub fn predict_proba(&self, ds: &Dataset) -> Result<Vec<f64>> {
        match self {
            ModelState::Logistic(m) => Ok(ds.rows().map(|x| sigmoid(m.score(x))).collect()),
            _ => Err(Error::Param(format!("{} has no probabilities", self.algorithm()))),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "algo {}", self.algorithm());
        let _ = writeln!(s, "arith {}", self.arithmetic());
        match self {
            ModelState::Linear(m) | ModelState::Logistic(m) => {
                let _ = writeln!(s, "d {}", m.weights.len());
                for (i, w) in m.weights.iter().enumerate() {
                    let _ = writeln!(s, "w {i} {w}");
                }
                if let Some(b) = m.bias {
                    let _ = writeln!(s, "b {b}");
                }
            }
            ModelState::KMeans(c) => {
                let _ = writeln!(s, "k {} d {}", c.k, c.d);
                for i in 0..c.k {
                    let row: Vec<String> = c.centroid(i).iter().map(f64::to_string).collect();
                    let _ = writeln!(s, "c {i} {}", row.join(" "));
                }
            }
            ModelState::Tree(t) => {
                let _ = writeln!(s, "classes {} nodes {}", t.n_classes, t.nodes.len());
                for (i, n) in t.nodes.iter().enumerate() {
                    match n {
                        TreeNode::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        } => {
                            let _ = writeln!(s, "node {i} split {feature} {threshold} {left} {right}");
                        }
                        TreeNode::Leaf { class } => {
                            let _ = writeln!(s, "node {i} leaf {class}");
                        }
                    }
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<ModelState> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty()).enumerate();
        let bad = |line: usize, msg: &str| Error::Data(format!("model line {}: {msg}", line + 1));
        let mut next = |want: &str| -> Result<(usize, Vec<String>)> {
            let (i, l) = lines.next().ok_or_else(|| Error::Data(format!("model ends before {want:?}")))?;
            Ok((i, l.split_whitespace().map(String::from).collect()))
        };
        fn num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T> {
            s.parse()
                .map_err(|_| Error::Data(format!("model line {}: bad number {s:?}", line + 1)))
        }

        let (i, magic) = next("header")?;
        if magic.join(" ") != MAGIC {
            return Err(bad(i, "not a pimml-model v1 file"));
        }
        let (i, algo) = next("algo")?;
        if algo.len() != 2 || algo[0] != "algo" {
            return Err(bad(i, "expected `algo <name>`"));
        }
        let algo: Algorithm = algo[1].parse()?;
        let (i, arith) = next("arith")?;
        if arith.len() != 2 || arith[0] != "arith" {
            return Err(bad(i, "expected `arith <mode>`"));
        }
        let arithmetic: Arithmetic = arith[1].parse()?;

        match algo {
            Algorithm::Linreg | Algorithm::Logreg => {
                let (i, d) = next("d")?;
                if d.len() != 2 || d[0] != "d" {
                    return Err(bad(i, "expected `d <n>`"));
                }
                let d: usize = num(i, &d[1])?;
                let mut weights = Vec::with_capacity(d);
                for j in 0..d {
                    let (i, w) = next("w")?;
                    if w.len() != 3 || w[0] != "w" || num::<usize>(i, &w[1])? != j {
                        return Err(bad(i, &format!("expected `w {j} <value>`")));
                    }
                    weights.push(num(i, &w[2])?);
                }
                let bias = match next("b") {
                    Ok((i, b)) if b.len() == 2 && b[0] == "b" => Some(num(i, &b[1])?),
                    Ok((i, _)) => return Err(bad(i, "expected `b <value>`")),
                    Err(_) => None,
                };
                let m = LinearModel {
                    weights,
                    bias,
                    arithmetic,
                };
                Ok(if algo == Algorithm::Linreg {
                    ModelState::Linear(m)
                } else {
                    ModelState::Logistic(m)
                })
            }
            Algorithm::Kmeans => {
                let (i, kd) = next("k")?;
                if kd.len() != 4 || kd[0] != "k" || kd[2] != "d" {
                    return Err(bad(i, "expected `k <k> d <d>`"));
                }
                let (k, d): (usize, usize) = (num(i, &kd[1])?, num(i, &kd[3])?);
                let mut values = Vec::with_capacity(k * d);
                for c in 0..k {
                    let (i, row) = next("c")?;
                    if row.len() != d + 2 || row[0] != "c" || num::<usize>(i, &row[1])? != c {
                        return Err(bad(i, &format!("expected `c {c}` and {d} values")));
                    }
                    for v in &row[2..] {
                        values.push(num(i, v)?);
                    }
                }
                Ok(ModelState::KMeans(Centroids {
                    k,
                    d,
                    values,
                    arithmetic,
                }))
            }
            Algorithm::Dtree => {
                let (i, h) = next("classes")?;
                if h.len() != 4 || h[0] != "classes" || h[2] != "nodes" {
                    return Err(bad(i, "expected `classes <c> nodes <n>`"));
                }
                let (n_classes, n_nodes): (usize, usize) = (num(i, &h[1])?, num(i, &h[3])?);
                let mut nodes = Vec::with_capacity(n_nodes);
                for id in 0..n_nodes {
                    let (i, n) = next("node")?;
                    if n.len() < 3 || n[0] != "node" || num::<usize>(i, &n[1])? != id {
                        return Err(bad(i, &format!("expected `node {id} ...`")));
                    }
                    let node = match (n[2].as_str(), n.len()) {
                        ("leaf", 4) => TreeNode::Leaf { class: num(i, &n[3])? },
                        ("split", 7) => TreeNode::Split {
                            feature: num(i, &n[3])?,
                            threshold: num(i, &n[4])?,
                            left: num(i, &n[5])?,
                            right: num(i, &n[6])?,
                        },
                        _ => return Err(bad(i, "malformed node")),
                    };
                    if let TreeNode::Split { left, right, .. } = node {
                        if left <= id || right <= id || left >= n_nodes || right >= n_nodes {
                            return Err(bad(i, "child index out of order"));
                        }
                    }
                    nodes.push(node);
                }
                Ok(ModelState::Tree(DecisionTree {
                    nodes,
                    n_classes,
                    arithmetic,
                }))
            }
        }
    }
}

/// Predicted value per row: the regression output, the class id, or the
/// cluster id.
pub fn predict(model: &ModelState, ds: &Dataset) -> Result<Vec<f64>> {
    let d = ds.n_features();
    let want = match model {
        ModelState::Linear(m) | ModelState::Logistic(m) => m.weights.len(),
        ModelState::KMeans(c) => c.d,
        ModelState::Tree(_) => d,
    };
    if want != d {
        return Err(Error::Data(format!("model expects {want} features, dataset has {d}")));
    }
    Ok(match model {
        ModelState::Linear(m) => ds.rows().map(|x| m.score(x)).collect(),
        ModelState::Logistic(m) => ds
            .rows()
            .map(|x| if sigmoid(m.score(x)) >= 0.5 { 1.0 } else { 0.0 })
            .collect(),
        ModelState::KMeans(c) => ds.rows().map(|x| c.nearest(x).0 as f64).collect(),
        ModelState::Tree(t) => {
            if let Some(max) = t.nodes.iter().filter_map(|n| match n {
                TreeNode::Split { feature, .. } => Some(*feature),
                _ => None,
            }).max() {
                if max >= d {
                    return Err(Error::Data(format!("tree splits on feature {max}, dataset has {d}")));
                }
            }
            ds.rows().map(|x| t.classify(x) as f64).collect()
        }
    })
}

pub fn mse(pred: &[f64], labels: &[f64]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let mut s = 0.0;
    for (p, y) in pred.iter().zip(labels) {
        s += (p - y) * (p - y);
    }
    s / pred.len() as f64
}

pub fn accuracy(pred: &[f64], labels: &[f64]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / pred.len() as f64
}

/// Sum of squared distances from each row to its nearest centroid.
pub fn inertia(c: &Centroids, ds: &Dataset) -> f64 {
    let mut s = 0.0;
    for x in ds.rows() {
        s += c.nearest(x).1;
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metric {
    pub name: &'static str,
    pub value: f64,
}

/// The natural quality figure for the model: MSE, accuracy or inertia.
pub fn metrics(model: &ModelState, ds: &Dataset) -> Result<Metric> {
    match model {
        ModelState::KMeans(c) => {
            predict(model, ds)?;
            Ok(Metric {
                name: "inertia",
                value: inertia(c, ds),
            })
        }
        ModelState::Linear(_) => Ok(Metric {
            name: "mse",
            value: mse(&predict(model, ds)?, ds.require_labels()?),
        }),
        ModelState::Logistic(_) | ModelState::Tree(_) => Ok(Metric {
            name: "accuracy",
            value: accuracy(&predict(model, ds)?, ds.require_labels()?),
        }),
    }
}
