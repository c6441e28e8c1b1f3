//! Seeded synthetic datasets. Features stay inside `[-4, 4]` so q16.16
//! products remain far from the accumulator limit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;

const FEATURE_BOUND: f64 = 4.0;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `y = X w + noise` with `w` uniform in `[-1, 1]` and features uniform in
/// `[-4, 4]`.
pub fn synth_linear(n: usize, d: usize, noise_sigma: f64, seed: u64) -> (Dataset, Vec<f64>) {
    let mut rng = rng(seed);
    let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let start = features.len();
        features.extend((0..d).map(|_| rng.random_range(-FEATURE_BOUND..=FEATURE_BOUND)));
        let mut y = 0.0;
        for (x, wj) in features[start..].iter().zip(&w) {
            y += x * wj;
        }
        if noise_sigma > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            y += noise_sigma * z;
        }
        labels.push(y);
    }
    let ds = Dataset::new(d, features, Some(labels)).expect("generated data is well formed");
    (ds, w)
}

/// `k` Gaussian clusters. Row `i` belongs to cluster `i % k` and carries that
/// id as its label. Centers are drawn from `[-3, 3]^d`, kept at least 2 apart
/// when the draw allows it.
pub fn synth_blobs(n: usize, d: usize, k: usize, spread: f64, seed: u64) -> (Dataset, Vec<Vec<f64>>) {
    assert!(k >= 1 && d >= 1, "blobs need k >= 1 and d >= 1");
    let mut rng = rng(seed);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    while centers.len() < k {
        let mut candidate = Vec::new();
        for attempt in 0..1000 {
            candidate = (0..d).map(|_| rng.random_range(-3.0..=3.0)).collect();
            let far = centers.iter().all(|c| {
                c.iter().zip(&candidate).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() >= 4.0
            });
            if far || attempt == 999 {
                break;
            }
        }
        centers.push(candidate);
    }
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        for &m in &centers[c] {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push((m + spread * z).clamp(-FEATURE_BOUND, FEATURE_BOUND));
        }
        labels.push(c as f64);
    }
    let ds = Dataset::new(d, features, Some(labels)).expect("generated data is well formed");
    (ds, centers)
}

enum Rule {
    Leaf(u32),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Rule>,
        right: Box<Rule>,
    },
}

impl Rule {
    fn grow(rng: &mut ChaCha8Rng, depth: usize, lo: &mut [f64], hi: &mut [f64], class: u32) -> Rule {
        if depth == 0 {
            return Rule::Leaf(class);
        }
        let feature = rng.random_range(0..lo.len());
        let (a, b) = (lo[feature], hi[feature]);
        let w = b - a;
        let threshold = rng.random_range(a + 0.3 * w..=b - 0.3 * w);
        hi[feature] = threshold;
        let left = Rule::grow(rng, depth - 1, lo, hi, class);
        hi[feature] = b;
        lo[feature] = threshold;
        let right = Rule::grow(rng, depth - 1, lo, hi, 1 - class);
        lo[feature] = a;
        Rule::Split {
            feature,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    fn eval(&self, x: &[f64]) -> u32 {
        match self {
            Rule::Leaf(c) => *c,
            Rule::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] < *threshold {
                    left.eval(x)
                } else {
                    right.eval(x)
                }
            }
        }
    }
}

/// Binary labels from a random axis-aligned tree of the given depth.
/// Sibling leaves always disagree, so every split of the rule matters.
pub fn synth_labels_tree(n: usize, d: usize, depth: usize, seed: u64) -> Dataset {
    assert!(d >= 1, "tree data needs at least one feature");
    let mut rng = rng(seed);
    let mut lo = vec![-FEATURE_BOUND; d];
    let mut hi = vec![FEATURE_BOUND; d];
    let rule = Rule::grow(&mut rng, depth, &mut lo, &mut hi, 0);
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let start = features.len();
        features.extend((0..d).map(|_| rng.random_range(-FEATURE_BOUND..=FEATURE_BOUND)));
        labels.push(rule.eval(&features[start..]) as f64);
    }
    Dataset::new(d, features, Some(labels)).expect("generated data is well formed")
}
