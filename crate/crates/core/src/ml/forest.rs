//! Random forest regression: bootstrap-resampled CART trees grown greedily
//! on squared-error reduction over a random feature subset at every split.
//! The forest predicts the mean of its trees.
//!
//! Every node draws its feature subset from an RNG seeded by
//! `(tree seed, node path)`, so a tree grown with a larger depth cap extends
//! the shallower one instead of diverging from it, and trees are identical
//! no matter how they are scheduled across threads.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{derive_seed, FeatureSource, MlError, WindowedColumns};
use crate::dataset::Dataset;

#[derive(Debug, Clone, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Features tried per split; `None` means `ceil(p / 3)`.
    pub mtry: Option<usize>,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { n_trees: 20, max_depth: 20, mtry: None, min_samples_leaf: 2, bootstrap: true, seed: 0 }
    }
}

impl ForestConfig {
    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.mtry.unwrap_or(p.div_ceil(3))
    }

    fn validate(&self, p: usize) -> Result<(), MlError> {
        if self.n_trees == 0 {
            return Err(MlError::InvalidConfig("n_trees"));
        }
        if self.max_depth == 0 {
            return Err(MlError::InvalidConfig("max_depth"));
        }
        if self.min_samples_leaf == 0 {
            return Err(MlError::InvalidConfig("min_samples_leaf"));
        }
        let m = self.resolved_mtry(p);
        if m == 0 || m > p {
            return Err(MlError::InvalidConfig("mtry"));
        }
        Ok(())
    }
}

/// Tree node in preorder; a split's left child is the next node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Leaf { value: f64 },
    Split { feature: u32, threshold: f32, right: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Rows with `x[feature] <= threshold` go left.
    pub fn predict(&self, x: &[f32]) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, right } => {
                    i = if x[feature as usize] <= threshold { i + 1 } else { right as usize };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> (usize, usize) {
            // returns (depth below i, index after subtree)
            match nodes[i] {
                Node::Leaf { .. } => (0, i + 1),
                Node::Split { right, .. } => {
                    let (dl, _) = walk(nodes, i + 1);
                    let (dr, end) = walk(nodes, right as usize);
                    (1 + dl.max(dr), end)
                }
            }
        }
        walk(&self.nodes, 0).0
    }

    pub fn leaves(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { value } => Some(*value),
            Node::Split { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    /// Range of the training labels.
    pub y_min: f64,
    pub y_max: f64,
}

impl ForestModel {
    pub fn n_features(&self) -> usize {
        self.n_features
    }
}

pub fn predict_forest(model: &ForestModel, x: &[f32]) -> Result<f64, MlError> {
    if x.len() != model.n_features {
        return Err(MlError::DimensionMismatch { expected: model.n_features, got: x.len() });
    }
    let sum: f64 = model.trees.iter().map(|t| t.predict(x)).sum();
    Ok(sum / model.trees.len() as f64)
}

/// Trains on a dataset's flattened stacks and labels.
pub fn train_forest(train: &Dataset, cfg: &ForestConfig) -> Result<ForestModel, MlError> {
    if train.is_empty() {
        return Err(MlError::EmptyTrainingSet);
    }
    let cols = WindowedColumns::from_dataset(train);
    let labels: Vec<f64> = train.labels().iter().map(|&v| v as f64).collect();
    train_forest_on(&cols, &labels, cfg)
}

pub fn train_forest_on<S: FeatureSource + ?Sized>(
    source: &S,
    labels: &[f64],
    cfg: &ForestConfig,
) -> Result<ForestModel, MlError> {
    let n = source.n_samples();
    let p = source.n_features();
    if n == 0 {
        return Err(MlError::EmptyTrainingSet);
    }
    if labels.len() != n {
        return Err(MlError::LabelCount { rows: n, labels: labels.len() });
    }
    if p == 0 {
        return Err(MlError::InvalidConfig("n_features"));
    }
    cfg.validate(p)?;
    let y_min = labels.iter().copied().fold(f64::INFINITY, f64::min);
    let y_max = labels.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let tree_seed = derive_seed(cfg.seed, t as u64);
            let (rows, weights) = if cfg.bootstrap {
                bootstrap(n, tree_seed)
            } else {
                ((0..n as u32).collect(), vec![1u32; n])
            };
            grow_tree(source, labels, rows, weights, cfg, tree_seed)
        })
        .collect();
    Ok(ForestModel { trees, n_features: p, y_min, y_max })
}

/// `n` draws with replacement, as ascending unique rows plus multiplicities.
fn bootstrap(n: usize, seed: u64) -> (Vec<u32>, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u32; n];
    for _ in 0..n {
        counts[rng.random_range(0..n)] += 1;
    }
    let rows = (0..n as u32).filter(|&i| counts[i as usize] > 0).collect::<Vec<_>>();
    let weights = rows.iter().map(|&i| counts[i as usize]).collect();
    (rows, weights)
}

/// Maps an `f32` to a `u32` with the same ordering.
fn order_key(v: f32) -> u32 {
    // -0.0 and 0.0 compare equal and must share a key
    let b = if v == 0.0 { 0 } else { v.to_bits() };
    if b >> 31 == 1 {
        !b
    } else {
        b | 0x8000_0000
    }
}

struct Grower<'a, S: ?Sized> {
    source: &'a S,
    labels: &'a [f64],
    cfg: &'a ForestConfig,
    mtry: usize,
    seed: u64,
    rows: Vec<u32>,
    weights: Vec<u32>,
    nodes: Vec<Node>,
    values: Vec<f32>,
    keys: Vec<u64>,
    scratch_rows: Vec<u32>,
    scratch_weights: Vec<u32>,
}

struct BestSplit {
    feature: usize,
    threshold: f32,
    gain: f64,
}

fn grow_tree<S: FeatureSource + ?Sized>(
    source: &S,
    labels: &[f64],
    rows: Vec<u32>,
    weights: Vec<u32>,
    cfg: &ForestConfig,
    seed: u64,
) -> Tree {
    let n = rows.len();
    let mut g = Grower {
        source,
        labels,
        cfg,
        mtry: cfg.resolved_mtry(source.n_features()),
        seed,
        rows,
        weights,
        nodes: Vec::new(),
        values: vec![0.0; n],
        keys: Vec::with_capacity(n),
        scratch_rows: Vec::with_capacity(n),
        scratch_weights: Vec::with_capacity(n),
    };
    g.grow(0, n, 0, 1);
    Tree { nodes: g.nodes }
}

impl<S: FeatureSource + ?Sized> Grower<'_, S> {
    fn grow(&mut self, lo: usize, hi: usize, depth: usize, path: u64) {
        let (mut w, mut sum, mut sq) = (0f64, 0f64, 0f64);
        for i in lo..hi {
            let wi = self.weights[i] as f64;
            let y = self.labels[self.rows[i] as usize];
            w += wi;
            sum += wi * y;
            sq += wi * y * y;
        }
        let mean = sum / w;
        let sse = sq - sum * mean;
        let min_leaf = self.cfg.min_samples_leaf as f64;
        let constant = (lo..hi).all(|i| self.labels[self.rows[i] as usize] == self.labels[self.rows[lo] as usize]);
        if depth >= self.cfg.max_depth || w < 2.0 * min_leaf || constant || sse <= 0.0 {
            self.nodes.push(Node::Leaf { value: mean });
            return;
        }
        let Some(best) = self.find_split(lo, hi, w, sum, path) else {
            self.nodes.push(Node::Leaf { value: mean });
            return;
        };
        let mid = self.partition(lo, hi, best.feature, best.threshold);
        let at = self.nodes.len();
        self.nodes.push(Node::Split { feature: best.feature as u32, threshold: best.threshold, right: 0 });
        self.grow(lo, mid, depth + 1, path * 2);
        let right = self.nodes.len() as u32;
        if let Node::Split { right: r, .. } = &mut self.nodes[at] {
            *r = right;
        }
        self.grow(mid, hi, depth + 1, path * 2 + 1);
    }

    fn find_split(&mut self, lo: usize, hi: usize, w: f64, sum: f64, path: u64) -> Option<BestSplit> {
        let p = self.source.n_features();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, path));
        let mut features = sample_indices(&mut rng, p, self.mtry).into_vec();
        features.sort_unstable();

        let min_leaf = self.cfg.min_samples_leaf as f64;
        let parent = sum * sum / w;
        let mut best: Option<BestSplit> = None;
        let m = hi - lo;
        for &f in &features {
            let vals = &mut self.values[..m];
            self.source.gather(f, &self.rows[lo..hi], vals);
            let first = vals[0];
            if vals.iter().all(|&v| v == first) {
                continue;
            }
            self.keys.clear();
            self.keys.extend(vals.iter().enumerate().map(|(i, &v)| ((order_key(v) as u64) << 32) | i as u64));
            self.keys.sort_unstable();

            let (mut wl, mut sl) = (0f64, 0f64);
            for pair in self.keys.windows(2) {
                let i = (pair[0] & 0xFFFF_FFFF) as usize;
                let wi = self.weights[lo + i] as f64;
                wl += wi;
                sl += wi * self.labels[self.rows[lo + i] as usize];
                if pair[0] >> 32 == pair[1] >> 32 {
                    continue;
                }
                let wr = w - wl;
                if wl < min_leaf || wr < min_leaf {
                    continue;
                }
                let sr = sum - sl;
                let gain = sl * sl / wl + sr * sr / wr - parent;
                if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let a = vals[i];
                    let b = vals[(pair[1] & 0xFFFF_FFFF) as usize];
                    let mut threshold = a + (b - a) / 2.0;
                    if !(threshold >= a && threshold < b) {
                        threshold = a;
                    }
                    best = Some(BestSplit { feature: f, threshold, gain });
                }
            }
        }
        best
    }

    /// Stable partition of `[lo, hi)` into rows going left, then right.
    /// Returns the boundary.
    fn partition(&mut self, lo: usize, hi: usize, feature: usize, threshold: f32) -> usize {
        let m = hi - lo;
        let vals = &mut self.values[..m];
        self.source.gather(feature, &self.rows[lo..hi], vals);
        self.scratch_rows.clear();
        self.scratch_weights.clear();
        let mut k = lo;
        for (i, &v) in vals.iter().enumerate() {
            if v <= threshold {
                self.rows[k] = self.rows[lo + i];
                self.weights[k] = self.weights[lo + i];
                k += 1;
            } else {
                self.scratch_rows.push(self.rows[lo + i]);
                self.scratch_weights.push(self.weights[lo + i]);
            }
        }
        self.rows[k..hi].copy_from_slice(&self.scratch_rows);
        self.weights[k..hi].copy_from_slice(&self.scratch_weights);
        k
    }
}
