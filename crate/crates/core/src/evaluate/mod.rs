//! ROC/AUC, the pairwise community x feature-group experiment matrix, the
//! popularity-threshold sweep and the time-slice drift harness.

pub mod report;
pub mod roc;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{filter_top_fraction, Corpus, PopularityMetric};
use crate::error::{Error, Result};
use crate::features::{
    assemble, fit_encoders_from, ArticleAnalysis, Encoders, FeatureExtractor, FeatureGroup,
    GroupSet,
};
use crate::model::{default_forest_grid, rng_for, tune, Classifier, ModelParams};

pub use report::{emit_report, read_csv, CsvRecord, ReportFiles};
pub use roc::{auc, auc_band, roc_curve, RocCurve};

/// Slice label used for experiments that are not time-sliced.
pub const ALL_SLICES: &str = "all";

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Fraction of each community used for training; the rest is test.
    pub train_fraction: f64,
    pub seed: u64,
    pub grid: Vec<ModelParams>,
    /// Cross-validation folds used for tuning.
    pub folds: usize,
    /// Minimum articles per community.
    pub min_articles: usize,
}

impl EvalConfig {
    pub fn new(seed: u64) -> Self {
        EvalConfig {
            train_fraction: 0.7,
            seed,
            grid: default_forest_grid(),
            folds: 10,
            min_articles: 20,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.grid.is_empty() {
            return Err(Error::InvalidArgument("empty hyperparameter grid".into()));
        }
        Ok(())
    }
}

/// One trained-and-tested binary model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentCell {
    /// Negative community (lexicographically smaller).
    pub pair_a: String,
    /// Positive community.
    pub pair_b: String,
    pub group: String,
    pub train_slice: String,
    pub test_slice: String,
    pub fraction: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub curve: RocCurve,
    pub params: ModelParams,
}

impl ExperimentCell {
    pub fn auc(&self) -> f64 {
        self.curve.auc
    }
}

/// A drift row is a cell whose slices are named.
pub type DriftRow = ExperimentCell;

/// Per-article analyses of a corpus, aligned with `corpus.articles()`.
pub struct AnalyzedCorpus<'a> {
    pub corpus: &'a Corpus,
    pub analyses: Vec<ArticleAnalysis>,
}

impl<'a> AnalyzedCorpus<'a> {
    pub fn new(corpus: &'a Corpus, extractor: &FeatureExtractor) -> Self {
        let analyses = corpus
            .articles()
            .par_iter()
            .map(|a| extractor.analyze(a))
            .collect();
        AnalyzedCorpus { corpus, analyses }
    }

    pub fn community(&self, i: usize) -> &str {
        &self.corpus.articles()[i].community
    }

    /// Row indices belonging to any of `communities`, in corpus order.
    pub fn indices_of(&self, communities: &[&str]) -> Vec<usize> {
        (0..self.analyses.len())
            .filter(|&i| communities.contains(&self.community(i)))
            .collect()
    }

    pub fn rows(&self, idx: &[usize], groups: GroupSet, enc: Option<&Encoders>) -> Result<Vec<Vec<f64>>> {
        idx.iter()
            .map(|&i| Ok(assemble(&self.analyses[i], groups, enc)?.values))
            .collect()
    }

    pub fn fit_encoders(&self, idx: &[usize]) -> Result<Encoders> {
        let refs: Vec<&ArticleAnalysis> = idx.iter().map(|&i| &self.analyses[i]).collect();
        fit_encoders_from(&refs)
    }
}

/// Stratified train/test split over `idx`, keyed by `label(i)`.
///
/// Each label class, in sorted order, is shuffled by its own seeded stream and
/// its first `round(train_fraction * n)` members go to training (at least one
/// on each side). Both halves are returned in ascending order.
pub fn stratified_split<L: Ord>(
    idx: &[usize],
    label: impl Fn(usize) -> L,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut classes: BTreeMap<L, Vec<usize>> = BTreeMap::new();
    for &i in idx {
        classes.entry(label(i)).or_default().push(i);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (rank, (_, mut members)) in classes.into_iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::InsufficientData(
                "each class needs at least two articles to split".into(),
            ));
        }
        members.shuffle(&mut rng_for(seed, 2_000 + rank as u64));
        let n = members.len();
        let k = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// A fitted binary model plus its evaluation inputs.
pub struct FittedBinary {
    pub classifier: Classifier,
    pub params: ModelParams,
    pub encoders: Option<Encoders>,
}

/// Fits encoders on `train`, tunes and refits with `config`, and returns the
/// model. `positive(i)` gives the label of row `i`.
pub fn fit_binary(
    data: &AnalyzedCorpus,
    train: &[usize],
    positive: &impl Fn(usize) -> bool,
    groups: GroupSet,
    config: &EvalConfig,
) -> Result<FittedBinary> {
    let encoders = if groups.needs_encoders() {
        Some(data.fit_encoders(train)?)
    } else {
        None
    };
    let x = data.rows(train, groups, encoders.as_ref())?;
    let y: Vec<bool> = train.iter().map(|&i| positive(i)).collect();
    let tuned = tune(&x, &y, &config.grid, config.folds, config.seed, groups)?;
    Ok(FittedBinary {
        classifier: tuned.model,
        params: tuned.best,
        encoders,
    })
}

impl FittedBinary {
    pub fn scores(&self, data: &AnalyzedCorpus, idx: &[usize], groups: GroupSet) -> Result<Vec<f64>> {
        data.rows(idx, groups, self.encoders.as_ref())?
            .iter()
            .map(|r| self.classifier.predict_proba(r))
            .collect()
    }

    pub fn curve(
        &self,
        data: &AnalyzedCorpus,
        idx: &[usize],
        positive: &impl Fn(usize) -> bool,
        groups: GroupSet,
    ) -> Result<RocCurve> {
        let scores = self.scores(data, idx, groups)?;
        let labels: Vec<bool> = idx.iter().map(|&i| positive(i)).collect();
        roc_curve(&scores, &labels)
    }
}

fn check_floor(corpus: &Corpus, communities: &[&str], floor: usize) -> Result<()> {
    let sizes = corpus.community_sizes();
    for c in communities {
        let n = sizes.get(*c).copied().unwrap_or(0);
        if n < floor {
            return Err(Error::InsufficientData(format!(
                "community {c:?} has {n} articles, below the floor of {floor}"
            )));
        }
    }
    Ok(())
}

/// Unordered community pairs in sorted order.
pub fn community_pairs(corpus: &Corpus) -> Vec<(String, String)> {
    let names: Vec<&String> = corpus.communities().iter().collect();
    let mut pairs = Vec::new();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            pairs.push(((*a).clone(), (*b).clone()));
        }
    }
    pairs
}

/// One pairwise cell on already-analyzed data.
pub fn pair_cell(
    data: &AnalyzedCorpus,
    pair: (&str, &str),
    group: FeatureGroup,
    config: &EvalConfig,
) -> Result<ExperimentCell> {
    let (a, b) = pair;
    let idx = data.indices_of(&[a, b]);
    let positive = |i: usize| data.community(i) == b;
    let (train, test) = stratified_split(&idx, |i| data.community(i).to_owned(), config.train_fraction, config.seed)?;
    let groups = GroupSet::single(group);
    let fit = fit_binary(data, &train, &positive, groups, config)?;
    Ok(ExperimentCell {
        pair_a: a.to_owned(),
        pair_b: b.to_owned(),
        group: group.name().to_owned(),
        train_slice: ALL_SLICES.to_owned(),
        test_slice: ALL_SLICES.to_owned(),
        fraction: 1.0,
        n_train: train.len(),
        n_test: test.len(),
        curve: fit.curve(data, &test, &positive, groups)?,
        params: fit.params,
    })
}

fn ordered_pair<'s>(x: &'s str, y: &'s str) -> Result<(&'s str, &'s str)> {
    match x.cmp(y) {
        std::cmp::Ordering::Less => Ok((x, y)),
        std::cmp::Ordering::Greater => Ok((y, x)),
        std::cmp::Ordering::Equal => Err(Error::InvalidArgument(format!(
            "pair needs two different communities, got {x:?} twice"
        ))),
    }
}

/// Every unordered community pair crossed with every group in `groups`.
/// Cells come back sorted by pair, then schema order of groups.
pub fn pairwise_matrix(
    corpus: &Corpus,
    extractor: &FeatureExtractor,
    groups: GroupSet,
    config: &EvalConfig,
) -> Result<Vec<ExperimentCell>> {
    config.validate()?;
    if corpus.communities().len() < 2 {
        return Err(Error::InsufficientData(
            "the pairwise matrix needs at least two communities".into(),
        ));
    }
    let names: Vec<&str> = corpus.communities().iter().map(String::as_str).collect();
    check_floor(corpus, &names, config.min_articles)?;
    let data = AnalyzedCorpus::new(corpus, extractor);
    run_pairs(&data, &community_pairs(corpus), groups, config)
}

fn run_pairs(
    data: &AnalyzedCorpus,
    pairs: &[(String, String)],
    groups: GroupSet,
    config: &EvalConfig,
) -> Result<Vec<ExperimentCell>> {
    let jobs: Vec<(&(String, String), FeatureGroup)> = pairs
        .iter()
        .flat_map(|p| groups.iter().map(move |g| (p, g)))
        .collect();
    jobs.par_iter()
        .map(|((a, b), g)| pair_cell(data, (a, b), *g, config))
        .collect()
}

/// Trains a single pair on the given groups together; used by `train`.
pub fn train_pair(
    corpus: &Corpus,
    extractor: &FeatureExtractor,
    pair: (&str, &str),
    groups: GroupSet,
    config: &EvalConfig,
) -> Result<(FittedBinary, ExperimentCell)> {
    config.validate()?;
    let (a, b) = ordered_pair(pair.0, pair.1)?;
    check_floor(corpus, &[a, b], config.min_articles)?;
    let sub = corpus.restrict(&[a, b]);
    let data = AnalyzedCorpus::new(&sub, extractor);
    let idx = data.indices_of(&[a, b]);
    let positive = |i: usize| data.community(i) == b;
    let (train, test) = stratified_split(&idx, |i| data.community(i).to_owned(), config.train_fraction, config.seed)?;
    let fit = fit_binary(&data, &train, &positive, groups, config)?;
    let cell = ExperimentCell {
        pair_a: a.to_owned(),
        pair_b: b.to_owned(),
        group: groups.to_string(),
        train_slice: ALL_SLICES.to_owned(),
        test_slice: ALL_SLICES.to_owned(),
        fraction: 1.0,
        n_train: train.len(),
        n_test: test.len(),
        curve: fit.curve(&data, &test, &positive, groups)?,
        params: fit.params.clone(),
    };
    Ok((fit, cell))
}

/// One row of a popularity-threshold sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub fraction: f64,
    pub pair_a: String,
    pub pair_b: String,
    pub group: String,
    /// `None` when the pair was skipped.
    pub cell: Option<ExperimentCell>,
    pub skipped: Option<String>,
}

/// Runs the pairwise matrix on the top `fraction` of each community for each
/// fraction. A 1.0 baseline is added if missing. Pairs whose filtered
/// communities fall below the floor are marked skipped.
pub fn threshold_sweep(
    corpus: &Corpus,
    extractor: &FeatureExtractor,
    fractions: &[f64],
    metric: PopularityMetric,
    groups: GroupSet,
    config: &EvalConfig,
) -> Result<Vec<SweepRow>> {
    config.validate()?;
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::InvalidArgument(format!(
            "fractions must lie in (0, 1], got {f}"
        )));
    }
    if corpus.communities().len() < 2 {
        return Err(Error::InsufficientData(
            "the sweep needs at least two communities".into(),
        ));
    }
    let mut fracs: Vec<f64> = fractions.to_vec();
    if !fracs.contains(&1.0) {
        fracs.insert(0, 1.0);
    }
    let full = AnalyzedCorpus::new(corpus, extractor);
    let pairs = community_pairs(corpus);
    let mut rows = Vec::new();
    for &fraction in &fracs {
        let filtered = filter_top_fraction(corpus, metric, fraction)?;
        // Reuse analyses of the unfiltered corpus; articles are id-sorted in both.
        let keep: Vec<usize> = corpus
            .articles()
            .iter()
            .enumerate()
            .filter(|(_, a)| filtered.get(&a.id).is_some())
            .map(|(i, _)| i)
            .collect();
        let data = AnalyzedCorpus {
            corpus: &filtered,
            analyses: keep.iter().map(|&i| full.analyses[i].clone()).collect(),
        };
        let sizes = filtered.community_sizes();
        let jobs: Vec<(&(String, String), FeatureGroup)> = pairs
            .iter()
            .flat_map(|p| groups.iter().map(move |g| (p, g)))
            .collect();
        let results: Vec<Result<SweepRow>> = jobs
            .par_iter()
            .map(|((a, b), g)| {
                let mut row = SweepRow {
                    fraction,
                    pair_a: a.clone(),
                    pair_b: b.clone(),
                    group: g.name().to_owned(),
                    cell: None,
                    skipped: None,
                };
                for c in [a, b] {
                    let n = sizes.get(c).copied().unwrap_or(0);
                    if n < config.min_articles {
                        row.skipped = Some(format!(
                            "community {c:?} has {n} articles after filtering, below the floor of {}",
                            config.min_articles
                        ));
                        return Ok(row);
                    }
                }
                let mut cell = pair_cell(&data, (a, b), *g, config)?;
                cell.fraction = fraction;
                row.cell = Some(cell);
                Ok(row)
            })
            .collect();
        for r in results {
            rows.push(r?);
        }
    }
    Ok(rows)
}

/// Within-slice and cross-slice rows for every community pair and group.
///
/// Within-slice rows train and test inside each slice. Cross-slice rows train
/// on the first slice's training split and test on each slice's test split.
pub fn drift_run(
    slices: &[(String, Corpus)],
    extractor: &FeatureExtractor,
    groups: GroupSet,
    config: &EvalConfig,
) -> Result<Vec<DriftRow>> {
    config.validate()?;
    if slices.len() < 2 {
        return Err(Error::InsufficientData("drift needs at least two slices".into()));
    }
    let communities = &slices[0].1.communities().clone();
    if communities.len() < 2 {
        return Err(Error::InsufficientData(
            "drift needs at least two communities".into(),
        ));
    }
    let names: Vec<&str> = communities.iter().map(String::as_str).collect();
    for (label, c) in slices {
        check_floor(c, &names, config.min_articles)
            .map_err(|e| Error::InsufficientData(format!("slice {label}: {e}")))?;
    }
    let data: Vec<AnalyzedCorpus> = slices
        .iter()
        .map(|(_, c)| AnalyzedCorpus::new(c, extractor))
        .collect();
    let pairs = community_pairs(&slices[0].1);
    let jobs: Vec<(&(String, String), FeatureGroup)> = pairs
        .iter()
        .flat_map(|p| groups.iter().map(move |g| (p, g)))
        .collect();
    let per_job: Vec<Result<Vec<DriftRow>>> = jobs
        .par_iter()
        .map(|((a, b), g)| {
            let groups = GroupSet::single(*g);
            let mut within = Vec::new();
            let mut cross = Vec::new();
            let mut first: Option<(FittedBinary, usize)> = None;
            for (k, d) in data.iter().enumerate() {
                let idx = d.indices_of(&[a, b]);
                let positive = |i: usize| d.community(i) == b.as_str();
                let (train, test) = stratified_split(&idx, |i| d.community(i).to_owned(), config.train_fraction, config.seed)?;
                let fit = fit_binary(d, &train, &positive, groups, config)?;
                let label = &slices[k].0;
                let row = |train_slice: &str, n_train: usize, fit: &FittedBinary| -> Result<DriftRow> {
                    Ok(ExperimentCell {
                        pair_a: a.clone(),
                        pair_b: b.clone(),
                        group: g.name().to_owned(),
                        train_slice: train_slice.to_owned(),
                        test_slice: label.clone(),
                        fraction: 1.0,
                        n_train,
                        n_test: test.len(),
                        curve: fit.curve(d, &test, &positive, groups)?,
                        params: fit.params.clone(),
                    })
                };
                within.push(row(label, train.len(), &fit)?);
                if first.is_none() {
                    first = Some((fit, train.len()));
                }
                let (f0, n0) = first.as_ref().expect("first slice fitted");
                cross.push(row(&slices[0].0, *n0, f0)?);
            }
            within.extend(cross);
            Ok(within)
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_job {
        rows.extend(r?);
    }
    Ok(rows)
}
