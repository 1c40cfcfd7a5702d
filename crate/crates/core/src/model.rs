//! From-scratch binary classifiers: a weighted-Gini random forest and a
//! class-weighted linear hinge-loss model, plus balanced class weights and
//! stratified k-fold grid tuning.
//!
//! Labels are `bool`, `true` being the positive class. Every random draw comes
//! from a ChaCha stream seeded by [`derive_seed`], so training is a pure
//! function of data, parameters and seed regardless of thread count.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::roc::auc;
use crate::features::{Encoders, GroupSet, NUM_FEATURES};

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for sub-stream `stream` of `master` (e.g. one per tree).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    mix64(master ^ mix64(stream.wrapping_add(1)))
}

pub fn rng_for(master: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream))
}

/// `n_total / (n_classes * n_c)` for each class present.
pub fn balanced_weights<L: Ord + Clone>(labels: &[L]) -> Result<BTreeMap<L, f64>> {
    if labels.is_empty() {
        return Err(Error::InsufficientData("no labels".into()));
    }
    let mut counts: BTreeMap<L, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l.clone()).or_insert(0) += 1;
    }
    if counts.len() < 2 {
        return Err(Error::InsufficientData(
            "balanced weights need at least two classes".into(),
        ));
    }
    let k = counts.len() as f64;
    let n = labels.len() as f64;
    Ok(counts
        .into_iter()
        .map(|(l, c)| (l, n / (k * c as f64)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub negative: f64,
    pub positive: f64,
}

impl ClassWeights {
    pub fn uniform() -> Self {
        ClassWeights {
            negative: 1.0,
            positive: 1.0,
        }
    }

    pub fn balanced(labels: &[bool]) -> Result<Self> {
        let w = balanced_weights(labels)?;
        Ok(ClassWeights {
            negative: w[&false],
            positive: w[&true],
        })
    }

    pub fn of(&self, label: bool) -> f64 {
        if label {
            self.positive
        } else {
            self.negative
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    /// floor(sqrt(active features)), at least 1.
    Sqrt,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until `min_leaf` or purity stops it.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: None,
            min_leaf: 1,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestParams {
    fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.min_leaf == 0 || self.max_depth == Some(0) {
            return Err(Error::InvalidArgument(
                "forest needs n_trees >= 1, min_leaf >= 1 and max_depth >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub learning_rate: f64,
    pub l2: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for LinearParams {
    fn default() -> Self {
        LinearParams {
            learning_rate: 0.1,
            l2: 1e-3,
            epochs: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "lowercase")]
pub enum ModelParams {
    Forest(ForestParams),
    Linear(LinearParams),
}

impl ModelParams {
    pub fn with_seed(&self, seed: u64) -> ModelParams {
        let mut p = self.clone();
        match &mut p {
            ModelParams::Forest(f) => f.seed = seed,
            ModelParams::Linear(l) => l.seed = seed,
        }
        p
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("params serialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Forest,
    Linear,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forest" | "rf" => Ok(Algorithm::Forest),
            "linear" | "svm" => Ok(Algorithm::Linear),
            other => Err(Error::InvalidArgument(format!(
                "unknown algorithm {other:?} (expected forest|linear)"
            ))),
        }
    }
}

/// n_trees in {100, 200} x max_depth in {8, 16, unlimited} x min_leaf in {1, 5}.
pub fn default_forest_grid() -> Vec<ModelParams> {
    let mut grid = Vec::new();
    for n_trees in [100, 200] {
        for max_depth in [Some(8), Some(16), None] {
            for min_leaf in [1, 5] {
                grid.push(ModelParams::Forest(ForestParams {
                    n_trees,
                    max_depth,
                    min_leaf,
                    ..ForestParams::default()
                }));
            }
        }
    }
    grid
}

pub fn default_linear_grid() -> Vec<ModelParams> {
    [1e-4, 1e-3, 1e-2]
        .into_iter()
        .map(|l2| {
            ModelParams::Linear(LinearParams {
                l2,
                ..LinearParams::default()
            })
        })
        .collect()
}

pub fn default_grid(algorithm: Algorithm) -> Vec<ModelParams> {
    match algorithm {
        Algorithm::Forest => default_forest_grid(),
        Algorithm::Linear => default_linear_grid(),
    }
}

/// One small configuration, for quick runs and tests.
pub fn quick_grid(algorithm: Algorithm) -> Vec<ModelParams> {
    match algorithm {
        Algorithm::Forest => vec![ModelParams::Forest(ForestParams {
            n_trees: 50,
            ..ForestParams::default()
        })],
        Algorithm::Linear => vec![ModelParams::Linear(LinearParams::default())],
    }
}

fn check_training_data(x: &[Vec<f64>], y: &[bool]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "{} rows but {} labels",
            x.len(),
            y.len()
        )));
    }
    if let Some(row) = x.iter().find(|r| r.len() != NUM_FEATURES) {
        return Err(Error::InvalidArgument(format!(
            "feature rows must have {NUM_FEATURES} values, got {}",
            row.len()
        )));
    }
    if !(y.iter().any(|&l| l) && y.iter().any(|&l| !l)) {
        return Err(Error::InsufficientData(
            "training needs both classes present".into(),
        ));
    }
    Ok(())
}

fn check_row(x: &[f64]) -> Result<()> {
    if x.len() != NUM_FEATURES {
        return Err(Error::InvalidArgument(format!(
            "expected {NUM_FEATURES} features, got {}",
            x.len()
        )));
    }
    Ok(())
}

/// Preorder node list; the left child of a split is always the next node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        right: usize,
    },
    Leaf {
        /// Class-weighted (negative, positive) distribution.
        dist: [f64; 2],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_distribution(&self, x: &[f64]) -> [f64; 2] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { dist } => return *dist,
                Node::Split {
                    feature,
                    threshold,
                    right,
                } => {
                    i = if x[*feature] <= *threshold { i + 1 } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> (usize, usize) {
            // returns (depth, index after subtree)
            match &nodes[i] {
                Node::Leaf { .. } => (0, i + 1),
                Node::Split { right, .. } => {
                    let (l, _) = walk(nodes, i + 1);
                    let (r, end) = walk(nodes, *right);
                    (1 + l.max(r), end)
                }
            }
        }
        walk(&self.nodes, 0).0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub params: ForestParams,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    /// Mean positive-class leaf probability across trees.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        check_row(x)?;
        let sum: f64 = self.trees.iter().map(|t| t.leaf_distribution(x)[1]).sum();
        Ok(sum / self.trees.len() as f64)
    }
}

/// Best split found at a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

fn gini(w0: f64, w1: f64) -> f64 {
    let w = w0 + w1;
    if w <= 0.0 {
        return 0.0;
    }
    let (p0, p1) = (w0 / w, w1 / w);
    1.0 - p0 * p0 - p1 * p1
}

struct Sample {
    row: usize,
    count: usize,
    weight: f64,
    label: bool,
}

/// Best weighted-Gini split of `samples` on `feature`, if any threshold leaves
/// at least `min_leaf` draws on both sides. `None` also when the feature is
/// constant over the node.
fn best_split_on(
    x: &[Vec<f64>],
    samples: &[Sample],
    feature: usize,
    min_leaf: usize,
    scratch: &mut Vec<(f64, f64, f64, usize)>,
) -> (bool, Option<Split>) {
    scratch.clear();
    scratch.extend(samples.iter().map(|s| {
        let (w0, w1) = if s.label { (0.0, s.weight) } else { (s.weight, 0.0) };
        (x[s.row][feature], w0, w1, s.count)
    }));
    scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
    let first = scratch[0].0;
    let last = scratch[scratch.len() - 1].0;
    if first == last {
        return (false, None);
    }
    let (t0, t1, tn) = scratch
        .iter()
        .fold((0.0, 0.0, 0), |acc, s| (acc.0 + s.1, acc.1 + s.2, acc.2 + s.3));
    let parent = (t0 + t1) * gini(t0, t1);
    let (mut l0, mut l1, mut ln) = (0.0, 0.0, 0usize);
    let mut best: Option<Split> = None;
    for i in 0..scratch.len() - 1 {
        let s = scratch[i];
        l0 += s.1;
        l1 += s.2;
        ln += s.3;
        let next = scratch[i + 1].0;
        if next == s.0 || ln < min_leaf || tn - ln < min_leaf {
            continue;
        }
        let (r0, r1) = (t0 - l0, t1 - l1);
        let gain = parent - (l0 + l1) * gini(l0, l1) - (r0 + r1) * gini(r0, r1);
        if best.map_or(true, |b| gain > b.gain) {
            let mid = s.0 + (next - s.0) / 2.0;
            let threshold = if mid < next { mid } else { s.0 };
            best = Some(Split {
                feature,
                threshold,
                gain,
            });
        }
    }
    (true, best)
}

fn better(candidate: &Split, current: &Option<Split>) -> bool {
    match current {
        None => true,
        Some(b) => {
            candidate.gain > b.gain
                || (candidate.gain == b.gain
                    && (candidate.feature, candidate.threshold) < (b.feature, b.threshold))
        }
    }
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    active: &'a [usize],
    max_features: usize,
    max_depth: Option<usize>,
    min_leaf: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    scratch: Vec<(f64, f64, f64, usize)>,
}

impl TreeBuilder<'_> {
    fn leaf(samples: &[Sample]) -> Node {
        let (w0, w1) = samples.iter().fold((0.0, 0.0), |acc, s| {
            if s.label {
                (acc.0, acc.1 + s.weight)
            } else {
                (acc.0 + s.weight, acc.1)
            }
        });
        let w = w0 + w1;
        Node::Leaf {
            dist: [w0 / w, w1 / w],
        }
    }

    fn grow(&mut self, samples: Vec<Sample>, depth: usize) {
        let draws: usize = samples.iter().map(|s| s.count).sum();
        let pure = samples.iter().all(|s| s.label) || samples.iter().all(|s| !s.label);
        if pure || self.max_depth.is_some_and(|d| depth >= d) || draws < 2 * self.min_leaf {
            self.nodes.push(Self::leaf(&samples));
            return;
        }
        // Visit features in a random order until `max_features` non-constant
        // ones have been examined.
        let mut order = self.active.to_vec();
        order.shuffle(&mut self.rng);
        let mut best: Option<Split> = None;
        let mut examined = 0;
        for &f in &order {
            let (varies, split) = best_split_on(self.x, &samples, f, self.min_leaf, &mut self.scratch);
            if !varies {
                continue;
            }
            if let Some(s) = split {
                if better(&s, &best) {
                    best = Some(s);
                }
            }
            examined += 1;
            if examined >= self.max_features {
                break;
            }
        }
        let Some(split) = best.filter(|s| s.gain > 0.0) else {
            self.nodes.push(Self::leaf(&samples));
            return;
        };
        let (left, right): (Vec<Sample>, Vec<Sample>) = samples
            .into_iter()
            .partition(|s| self.x[s.row][split.feature] <= split.threshold);
        let at = self.nodes.len();
        self.nodes.push(Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            right: 0,
        });
        self.grow(left, depth + 1);
        let right_at = self.nodes.len();
        if let Node::Split { right, .. } = &mut self.nodes[at] {
            *right = right_at;
        }
        self.grow(right, depth + 1);
    }
}

fn max_features_for(mode: MaxFeatures, active: usize) -> usize {
    match mode {
        MaxFeatures::Sqrt => ((active as f64).sqrt().floor() as usize).max(1),
        MaxFeatures::All => active.max(1),
    }
}

/// Grows one tree with its own seeded stream.
pub fn train_tree(
    x: &[Vec<f64>],
    y: &[bool],
    weights: ClassWeights,
    params: &ForestParams,
    active: &[usize],
    tree_index: usize,
) -> Tree {
    let mut rng = rng_for(params.seed, tree_index as u64);
    let mut counts = vec![0usize; x.len()];
    if params.bootstrap {
        for _ in 0..x.len() {
            counts[rng.gen_range(0..x.len())] += 1;
        }
    } else {
        counts.fill(1);
    }
    let samples: Vec<Sample> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(row, &count)| Sample {
            row,
            count,
            weight: count as f64 * weights.of(y[row]),
            label: y[row],
        })
        .collect();
    let mut builder = TreeBuilder {
        x,
        active,
        max_features: max_features_for(params.max_features, active.len()),
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        rng,
        nodes: Vec::new(),
        scratch: Vec::new(),
    };
    builder.grow(samples, 0);
    Tree {
        nodes: builder.nodes,
    }
}

/// Trains a forest on the features in `mask`. Trees are grown in parallel on
/// the current rayon pool; the result does not depend on the pool size.
pub fn train_forest(
    x: &[Vec<f64>],
    y: &[bool],
    weights: ClassWeights,
    params: &ForestParams,
    mask: GroupSet,
) -> Result<ForestModel> {
    check_training_data(x, y)?;
    params.validate()?;
    let active = mask.indices();
    if active.is_empty() {
        return Err(Error::InvalidArgument("empty feature mask".into()));
    }
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|i| train_tree(x, y, weights, params, &active, i))
        .collect();
    Ok(ForestModel {
        params: params.clone(),
        trees,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub params: LinearParams,
    /// Weights on standardized features.
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl LinearModel {
    pub fn margin(&self, x: &[f64]) -> Result<f64> {
        check_row(x)?;
        Ok(self.intercept
            + x.iter()
                .zip(&self.mean)
                .zip(&self.scale)
                .zip(&self.weights)
                .map(|(((v, m), s), w)| w * (v - m) / s)
                .sum::<f64>())
    }

    /// Logistic squashing of the margin.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.margin(x)?))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Class-weighted hinge loss with L2, by stochastic subgradient descent on
/// internally standardized features.
pub fn train_linear(
    x: &[Vec<f64>],
    y: &[bool],
    weights: ClassWeights,
    params: &LinearParams,
    mask: GroupSet,
) -> Result<LinearModel> {
    check_training_data(x, y)?;
    if !(params.learning_rate > 0.0) || params.l2 < 0.0 || params.epochs == 0 {
        return Err(Error::InvalidArgument(
            "linear model needs learning_rate > 0, l2 >= 0, epochs >= 1".into(),
        ));
    }
    let n = x.len() as f64;
    let active = mask.indices();
    let mut mean = vec![0.0; NUM_FEATURES];
    let mut scale = vec![1.0; NUM_FEATURES];
    for &f in &active {
        let m = x.iter().map(|r| r[f]).sum::<f64>() / n;
        let var = x.iter().map(|r| (r[f] - m).powi(2)).sum::<f64>() / n;
        mean[f] = m;
        if var > 0.0 {
            scale[f] = var.sqrt();
        }
    }
    let z: Vec<Vec<f64>> = x
        .iter()
        .map(|r| {
            let mut row = vec![0.0; NUM_FEATURES];
            for &f in &active {
                row[f] = (r[f] - mean[f]) / scale[f];
            }
            row
        })
        .collect();

    let mut w = vec![0.0; NUM_FEATURES];
    let mut b = 0.0;
    let mut t = 0.0;
    let mut order: Vec<usize> = (0..x.len()).collect();
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng_for(params.seed, epoch as u64));
        for &i in &order {
            t += 1.0;
            let eta = params.learning_rate / (1.0 + params.learning_rate * params.l2 * t);
            let sign = if y[i] { 1.0 } else { -1.0 };
            let margin = sign * (b + active.iter().map(|&f| w[f] * z[i][f]).sum::<f64>());
            let shrink = 1.0 - eta * params.l2;
            for &f in &active {
                w[f] *= shrink;
            }
            if margin < 1.0 {
                let step = eta * weights.of(y[i]) * sign;
                for &f in &active {
                    w[f] += step * z[i][f];
                }
                b += step;
            }
        }
    }
    if w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
        return Err(Error::InvalidArgument(
            "linear training diverged; lower the learning rate".into(),
        ));
    }
    Ok(LinearModel {
        params: params.clone(),
        weights: w,
        intercept: b,
        mean,
        scale,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "lowercase")]
pub enum Classifier {
    Forest(ForestModel),
    Linear(LinearModel),
}

impl Classifier {
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        match self {
            Classifier::Forest(m) => m.predict_proba(x),
            Classifier::Linear(m) => m.predict_proba(x),
        }
    }

    pub fn params(&self) -> ModelParams {
        match self {
            Classifier::Forest(m) => ModelParams::Forest(m.params.clone()),
            Classifier::Linear(m) => ModelParams::Linear(m.params.clone()),
        }
    }
}

/// Trains whichever model `params` describes.
pub fn train(
    x: &[Vec<f64>],
    y: &[bool],
    weights: ClassWeights,
    params: &ModelParams,
    mask: GroupSet,
) -> Result<Classifier> {
    Ok(match params {
        ModelParams::Forest(p) => Classifier::Forest(train_forest(x, y, weights, p, mask)?),
        ModelParams::Linear(p) => Classifier::Linear(train_linear(x, y, weights, p, mask)?),
    })
}

/// Stratified fold assignment: each class is shuffled with a seeded stream
/// and dealt round-robin into `k` folds.
pub fn stratified_folds(y: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidArgument("k must be at least 2".into()));
    }
    let mut fold = vec![0; y.len()];
    for (stream, class) in [false, true].into_iter().enumerate() {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        if idx.len() < k {
            return Err(Error::InsufficientData(format!(
                "class has {} examples but k = {k}; use a smaller k",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng_for(seed, 1_000 + stream as u64));
        for (pos, i) in idx.into_iter().enumerate() {
            fold[i] = pos % k;
        }
    }
    Ok(fold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigScore {
    pub params: ModelParams,
    pub mean_auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub best: ModelParams,
    pub scores: Vec<ConfigScore>,
    /// Refit on all rows with `best`.
    pub model: Classifier,
}

/// k-fold grid search by mean validation AUC with balanced class weights in
/// every fit. Ties go to the earliest grid entry. Every config is trained with
/// `seed`.
pub fn tune(
    x: &[Vec<f64>],
    y: &[bool],
    grid: &[ModelParams],
    k: usize,
    seed: u64,
    mask: GroupSet,
) -> Result<TuneResult> {
    check_training_data(x, y)?;
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty hyperparameter grid".into()));
    }
    let folds = stratified_folds(y, k, seed)?;
    let grid: Vec<ModelParams> = grid.iter().map(|p| p.with_seed(seed)).collect();
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..k).map(move |f| (c, f)))
        .collect();
    let fold_aucs: Vec<f64> = jobs
        .par_iter()
        .map(|&(c, f)| -> Result<f64> {
            let (mut tx, mut ty, mut vx, mut vy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for i in 0..x.len() {
                if folds[i] == f {
                    vx.push(x[i].clone());
                    vy.push(y[i]);
                } else {
                    tx.push(x[i].clone());
                    ty.push(y[i]);
                }
            }
            let model = train(&tx, &ty, ClassWeights::balanced(&ty)?, &grid[c], mask)?;
            let scores = vx
                .iter()
                .map(|r| model.predict_proba(r))
                .collect::<Result<Vec<_>>>()?;
            auc(&scores, &vy)
        })
        .collect::<Result<_>>()?;
    let scores: Vec<ConfigScore> = grid
        .iter()
        .enumerate()
        .map(|(c, p)| ConfigScore {
            params: p.clone(),
            mean_auc: fold_aucs[c * k..(c + 1) * k].iter().sum::<f64>() / k as f64,
        })
        .collect();
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.mean_auc > scores[best].mean_auc {
            best = i;
        }
    }
    let best = grid[best].clone();
    let model = train(x, y, ClassWeights::balanced(y)?, &best, mask)?;
    Ok(TuneResult {
        best,
        scores,
        model,
    })
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A trained binary model with everything needed to score raw articles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub version: u32,
    /// (negative, positive) class labels.
    pub classes: [String; 2],
    pub groups: GroupSet,
    pub encoders: Option<Encoders>,
    pub classifier: Classifier,
}

impl TrainedModel {
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        self.classifier.predict_proba(x)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: TrainedModel = serde_json::from_str(&text)?;
        if model.version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported model version {}",
                model.version
            )));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureGroup;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    pub(crate) fn row(vals: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; NUM_FEATURES];
        r[..vals.len()].copy_from_slice(vals);
        r
    }

    fn style() -> GroupSet {
        GroupSet::single(FeatureGroup::Style)
    }

    fn blobs(n: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let label = i % 2 == 0;
            let c = if label { sep } else { -sep };
            x.push(row(&[c + noise.sample(&mut rng), c + noise.sample(&mut rng)]));
            y.push(label);
        }
        (x, y)
    }

    #[test]
    fn balanced_weight_formula() {
        let w = balanced_weights(&["A", "A", "A", "B"]).unwrap();
        assert!((w["A"] - 4.0 / 6.0).abs() < 1e-12);
        assert_eq!(w["B"], 2.0);
        let w = balanced_weights(&["A", "A", "B", "B"]).unwrap();
        assert_eq!((w["A"], w["B"]), (1.0, 1.0));
        assert!(balanced_weights(&["A", "A"]).is_err());
        assert!(balanced_weights::<&str>(&[]).is_err());
    }

    #[test]
    fn pure_subset_gives_single_leaf() {
        let x = vec![row(&[1.0]), row(&[2.0]), row(&[3.0])];
        let y = vec![true, true, true];
        let tree = train_tree(&x, &y, ClassWeights::uniform(), &ForestParams::default(), &[0], 0);
        assert_eq!(tree.nodes, [Node::Leaf { dist: [0.0, 1.0] }]);
        assert!(train_forest(&x, &y, ClassWeights::uniform(), &ForestParams::default(), style()).is_err());
    }

    #[test]
    fn forest_fits_separable_blobs() {
        let (x, y) = blobs(200, 3.0, 7);
        let p = ForestParams { n_trees: 25, seed: 3, ..ForestParams::default() };
        let m = train_forest(&x, &y, ClassWeights::uniform(), &p, style()).unwrap();
        let correct = x
            .iter()
            .zip(&y)
            .filter(|(r, &l)| (m.predict_proba(r).unwrap() >= 0.5) == l)
            .count();
        assert!(correct as f64 / 200.0 >= 0.99, "{correct}");
    }

    #[test]
    fn forest_is_deterministic_across_pools() {
        let (x, y) = blobs(120, 0.5, 11);
        let p = ForestParams { n_trees: 16, seed: 42, ..ForestParams::default() };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| train_forest(&x, &y, ClassWeights::uniform(), &p, style()).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn forest_mean_of_leaves_and_monotone() {
        let leaf = |p: f64| Tree { nodes: vec![Node::Leaf { dist: [1.0 - p, p] }] };
        let mut m = ForestModel { params: ForestParams::default(), trees: vec![leaf(0.2), leaf(0.6)] };
        let x = row(&[]);
        assert!((m.predict_proba(&x).unwrap() - 0.4).abs() < 1e-12);
        let before = m.predict_proba(&x).unwrap();
        m.trees.push(leaf(1.0));
        assert!(m.predict_proba(&x).unwrap() >= before);
        let all = ForestModel { params: ForestParams::default(), trees: vec![leaf(1.0); 3] };
        assert_eq!(all.predict_proba(&x).unwrap(), 1.0);
        assert!(m.predict_proba(&[0.0; 3]).is_err());
    }

    // Brute-force oracle: every feature, every midpoint, explicit Gini.
    fn brute_best(x: &[Vec<f64>], y: &[bool], features: &[usize]) -> Option<(usize, f64, f64)> {
        let g = |rows: &[usize]| {
            let n = rows.len() as f64;
            if n == 0.0 {
                return 0.0;
            }
            let p = rows.iter().filter(|&&i| y[i]).count() as f64 / n;
            n * (1.0 - p * p - (1.0 - p) * (1.0 - p))
        };
        let all: Vec<usize> = (0..x.len()).collect();
        let parent = g(&all);
        let mut best: Option<(usize, f64, f64)> = None;
        for &f in features {
            let mut vals: Vec<f64> = x.iter().map(|r| r[f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let (l, r): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| x[i][f] <= t);
                let gain = parent - g(&l) - g(&r);
                if best.map_or(true, |b| gain > b.2 + 1e-12) {
                    best = Some((f, t, gain));
                }
            }
        }
        best
    }

    proptest! {
        #[test]
        fn perfect_feature_is_chosen(
            good in 0usize..3,
            noise in proptest::collection::vec((0u8..4, 0u8..4, 0u8..4), 4..12),
        ) {
            // Feature `good` separates the classes exactly; the others are noise.
            let y: Vec<bool> = (0..noise.len()).map(|i| i % 2 == 0).collect();
            let x: Vec<Vec<f64>> = noise
                .iter()
                .zip(&y)
                .map(|(&(a, b, c), &l)| {
                    let mut v = [a as f64, b as f64, c as f64];
                    v[good] = if l { 10.0 + a as f64 } else { -10.0 - b as f64 };
                    row(&v)
                })
                .collect();
            let p = ForestParams {
                n_trees: 1,
                bootstrap: false,
                max_features: MaxFeatures::All,
                max_depth: Some(1),
                ..ForestParams::default()
            };
            let tree = train_tree(&x, &y, ClassWeights::uniform(), &p, &[0, 1, 2], 0);
            let Node::Split { feature, threshold, .. } = tree.nodes[0] else { panic!("expected split") };
            let oracle = brute_best(&x, &y, &[0, 1, 2]).unwrap();
            // A noise column may separate just as well; ties go to the lowest feature.
            prop_assert!(feature <= good);
            prop_assert_eq!((feature, threshold), (oracle.0, oracle.1));
            let side = |r: &Vec<f64>, l: bool| (r[feature] <= threshold) == l;
            let first = side(&x[0], y[0]);
            prop_assert!(x.iter().zip(&y).all(|(r, &l)| side(r, l) == first));
        }

        #[test]
        fn leaf_distributions_sum_to_one(seed in 0u64..50) {
            let (x, y) = blobs(60, 0.3, seed);
            let p = ForestParams { n_trees: 3, seed, ..ForestParams::default() };
            let m = train_forest(&x, &y, ClassWeights::balanced(&y).unwrap(), &p, style()).unwrap();
            for t in &m.trees {
                for n in &t.nodes {
                    if let Node::Leaf { dist } = n {
                        prop_assert!(dist[0] >= 0.0 && dist[1] >= 0.0);
                        prop_assert!((dist[0] + dist[1] - 1.0).abs() < 1e-12);
                    }
                }
            }
        }

        #[test]
        fn linear_affine_invariance(a in 0.1f64..20.0, c in -50.0f64..50.0, seed in 0u64..20) {
            let (x, y) = blobs(60, 0.8, seed);
            let p = LinearParams { seed, ..LinearParams::default() };
            let m = train_linear(&x, &y, ClassWeights::uniform(), &p, style()).unwrap();
            let tx: Vec<Vec<f64>> = x.iter().map(|r| { let mut r = r.clone(); r[1] = a * r[1] + c; r }).collect();
            let mt = train_linear(&tx, &y, ClassWeights::uniform(), &p, style()).unwrap();
            for (r, t) in x.iter().zip(&tx) {
                prop_assert!((m.predict_proba(r).unwrap() - mt.predict_proba(t).unwrap()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn brute_force_agrees_with_builder_on_split() {
        let x = vec![row(&[1.0, 5.0]), row(&[2.0, 3.0]), row(&[3.0, 4.0]), row(&[4.0, 1.0])];
        let y = vec![false, false, true, true];
        let (varies, split) = best_split_on(
            &x,
            &(0..4).map(|i| Sample { row: i, count: 1, weight: 1.0, label: y[i] }).collect::<Vec<_>>(),
            0,
            1,
            &mut Vec::new(),
        );
        assert!(varies);
        let split = split.unwrap();
        let oracle = brute_best(&x, &y, &[0]).unwrap();
        assert_eq!((split.feature, split.threshold), (oracle.0, oracle.1));
        assert!((split.gain - oracle.2).abs() < 1e-12);
    }

    #[test]
    fn linear_direction_and_determinism() {
        let x: Vec<Vec<f64>> = (-10..=10).filter(|&v| v != 0).map(|v| row(&[v as f64])).collect();
        let y: Vec<bool> = (-10..=10).filter(|&v| v != 0).map(|v| v > 0).collect();
        let p = LinearParams { seed: 5, ..LinearParams::default() };
        let m = train_linear(&x, &y, ClassWeights::uniform(), &p, style()).unwrap();
        assert!(m.weights[0] > 0.0);
        assert_eq!(m, train_linear(&x, &y, ClassWeights::uniform(), &p, style()).unwrap());
        let zero = LinearModel { params: p, weights: vec![0.0; NUM_FEATURES], intercept: 0.0, mean: vec![0.0; NUM_FEATURES], scale: vec![1.0; NUM_FEATURES] };
        assert_eq!(zero.predict_proba(&row(&[3.0])).unwrap(), 0.5);
    }

    fn imbalanced(seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        (0..600)
            .map(|i| {
                let minority = i % 10 == 0;
                let c = if minority { 1.0 } else { 0.0 };
                (row(&[c + noise.sample(&mut rng), c + noise.sample(&mut rng)]), minority)
            })
            .unzip()
    }

    fn recall(m: &Classifier, x: &[Vec<f64>], y: &[bool]) -> f64 {
        let pos = y.iter().filter(|&&l| l).count() as f64;
        let hit = x.iter().zip(y).filter(|(r, &l)| l && m.predict_proba(r).unwrap() >= 0.5).count() as f64;
        hit / pos
    }

    #[test]
    fn balanced_weights_raise_minority_recall() {
        let (x, y) = imbalanced(1);
        let (tx, ty) = imbalanced(2);
        let bal = ClassWeights::balanced(&y).unwrap();
        for params in [
            ModelParams::Linear(LinearParams { seed: 1, ..LinearParams::default() }),
            ModelParams::Forest(ForestParams { n_trees: 30, min_leaf: 5, seed: 1, ..ForestParams::default() }),
        ] {
            let weighted = train(&x, &y, bal, &params, style()).unwrap();
            let plain = train(&x, &y, ClassWeights::uniform(), &params, style()).unwrap();
            let (rw, rp) = (recall(&weighted, &tx, &ty), recall(&plain, &tx, &ty));
            assert!(rw > rp, "{params:?}: balanced {rw} vs plain {rp}");
        }
    }

    #[test]
    fn folds_are_stratified() {
        let y: Vec<bool> = (0..53).map(|i| i % 3 == 0).collect();
        let f = stratified_folds(&y, 5, 9).unwrap();
        for k in 0..5 {
            let pos = (0..y.len()).filter(|&i| f[i] == k && y[i]).count();
            assert!((3..=4).contains(&pos));
        }
        assert_eq!(f, stratified_folds(&y, 5, 9).unwrap());
        let err = stratified_folds(&y, 20, 9).unwrap_err().to_string();
        assert!(err.contains("smaller k"), "{err}");
    }

    #[test]
    fn tune_single_config_and_errors() {
        let (x, y) = blobs(60, 1.0, 3);
        let grid = quick_grid(Algorithm::Forest);
        let r = tune(&x, &y, &grid, 5, 1, style()).unwrap();
        assert_eq!(r.best, grid[0].with_seed(1));
        assert_eq!(r.scores.len(), 1);
        assert!(tune(&x, &y, &grid, 40, 1, style()).is_err());
        assert!(tune(&x, &y, &[], 5, 1, style()).is_err());
    }

    #[test]
    fn tune_prefers_deep_trees_on_nested_signal() {
        // XOR on two features: a depth-1 stump cannot do better than chance.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (x, y): (Vec<Vec<f64>>, Vec<bool>) = (0..240)
            .map(|_| {
                let a: f64 = rng.gen_range(-1.0..1.0);
                let b: f64 = rng.gen_range(-1.0..1.0);
                (row(&[a, b]), (a > 0.0) ^ (b > 0.0))
            })
            .unzip();
        let stump = ModelParams::Forest(ForestParams { n_trees: 30, max_depth: Some(1), ..ForestParams::default() });
        let deep = ModelParams::Forest(ForestParams { n_trees: 30, max_depth: None, ..ForestParams::default() });
        let r = tune(&x, &y, &[stump, deep.clone()], 10, 4, style()).unwrap();
        assert_eq!(r.best, deep.with_seed(4));
        assert!(r.scores[0].mean_auc < 0.65, "{:?}", r.scores);
        assert!(r.scores[1].mean_auc > 0.9, "{:?}", r.scores);
    }

    #[test]
    fn persisted_model_predicts_identically() {
        let (x, y) = blobs(80, 0.7, 5);
        let mut models = Vec::new();
        for p in [quick_grid(Algorithm::Forest), quick_grid(Algorithm::Linear)] {
            let c = train(&x, &y, ClassWeights::balanced(&y).unwrap(), &p[0], style()).unwrap();
            models.push(TrainedModel {
                version: MODEL_FORMAT_VERSION,
                classes: ["a".into(), "b".into()],
                groups: style(),
                encoders: None,
                classifier: c,
            });
        }
        let dir = tempfile::tempdir().unwrap();
        for (i, m) in models.iter().enumerate() {
            let path = dir.path().join(format!("m{i}.json"));
            m.save(&path).unwrap();
            let back = TrainedModel::load(&path).unwrap();
            for r in &x {
                assert_eq!(m.predict_proba(r).unwrap(), back.predict_proba(r).unwrap());
            }
        }
    }
}
