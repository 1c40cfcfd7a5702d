//! Hierarchical-binary cascade: a list of binary stages, each with its own
//! feature groups, routing an article down to a single community.
//!
//! A stage's branch holding more than one community is handled by the first
//! later stage whose positive and negative sets together equal that branch.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Article, Corpus};
use crate::error::{Error, Result};
use crate::evaluate::{fit_binary, roc_curve, stratified_split, AnalyzedCorpus, EvalConfig};
use crate::features::{assemble, ArticleAnalysis, Encoders, FeatureExtractor, GroupSet};
use crate::model::{Classifier, ModelParams, TrainedModel, MODEL_FORMAT_VERSION};

/// The shipped default: mainstream gate, then conspiracy vs the partisan
/// pair, then bias1 vs bias2.
pub const DEFAULT_CASCADE: &str = include_str!("../resources/configs/default_cascade.toml");

fn default_threshold() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub positive: BTreeSet<String>,
    pub negative: BTreeSet<String>,
    pub groups: GroupSet,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

impl Stage {
    pub fn members(&self) -> BTreeSet<String> {
        self.positive.union(&self.negative).cloned().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Leaf(usize),
    Stage(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeSpec {
    #[serde(rename = "stage")]
    pub stages: Vec<Stage>,
}

fn set_str(s: &BTreeSet<String>) -> String {
    format!("{{{}}}", s.iter().cloned().collect::<Vec<_>>().join(", "))
}

impl CascadeSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let spec: CascadeSpec = toml::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn default_spec() -> Self {
        Self::parse(DEFAULT_CASCADE).expect("shipped cascade is valid")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    /// One stage separating `negative` from `positive` on `groups`.
    pub fn single(negative: &str, positive: &str, groups: GroupSet) -> Self {
        CascadeSpec {
            stages: vec![Stage {
                name: format!("{negative}-vs-{positive}"),
                positive: [positive.to_owned()].into(),
                negative: [negative.to_owned()].into(),
                groups,
                threshold: 0.5,
            }],
        }
    }

    /// Communities handled by the cascade, i.e. the root stage's members.
    pub fn communities(&self) -> BTreeSet<String> {
        self.stages.first().map(Stage::members).unwrap_or_default()
    }

    fn route_for(&self, from: usize, set: &BTreeSet<String>) -> Option<usize> {
        (from + 1..self.stages.len()).find(|&j| &self.stages[j].members() == set)
    }

    /// Positive and negative routes of stage `i`. Leaves are indices into
    /// the sorted community list.
    pub fn routes(&self, i: usize) -> (Route, Route) {
        let all: Vec<String> = self.communities().into_iter().collect();
        let r = |set: &BTreeSet<String>| {
            if set.len() == 1 {
                let c = set.iter().next().expect("one member");
                Route::Leaf(all.iter().position(|x| x == c).expect("validated"))
            } else {
                Route::Stage(self.route_for(i, set).expect("validated"))
            }
        };
        (r(&self.stages[i].positive), r(&self.stages[i].negative))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.stages.is_empty() {
            return bad("at least one stage is required".into());
        }
        let mut names = BTreeSet::new();
        for s in &self.stages {
            if !names.insert(&s.name) {
                return bad(format!("duplicate stage name {:?}", s.name));
            }
            if s.positive.is_empty() || s.negative.is_empty() {
                return bad(format!("stage {:?} needs non-empty positive and negative sets", s.name));
            }
            let shared: BTreeSet<String> = s.positive.intersection(&s.negative).cloned().collect();
            if !shared.is_empty() {
                return bad(format!("stage {:?} lists {} on both sides", s.name, set_str(&shared)));
            }
            if s.groups.is_empty() {
                return bad(format!("stage {:?} has no feature groups", s.name));
            }
            if !(s.threshold > 0.0 && s.threshold < 1.0) {
                return bad(format!("stage {:?}: threshold must lie in (0, 1)", s.name));
            }
        }
        let mut reached = vec![false; self.stages.len()];
        reached[0] = true;
        for (i, s) in self.stages.iter().enumerate() {
            if !reached[i] {
                return bad(format!(
                    "stage {:?} is unreachable: no earlier branch equals {}",
                    s.name,
                    set_str(&s.members())
                ));
            }
            for set in [&s.positive, &s.negative] {
                if set.len() > 1 {
                    match self.route_for(i, set) {
                        Some(j) => reached[j] = true,
                        None => {
                            return bad(format!(
                                "no later stage separates {} after stage {:?}",
                                set_str(set),
                                s.name
                            ))
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedStage {
    pub classifier: Classifier,
    pub params: ModelParams,
    pub encoders: Option<Encoders>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    pub spec: CascadeSpec,
    pub stages: Vec<TrainedStage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub stage: String,
    pub probability: f64,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub community: String,
    pub path: Vec<PathStep>,
}

fn require_communities(corpus: &Corpus, spec: &CascadeSpec) -> Result<()> {
    let missing: Vec<String> = spec
        .communities()
        .into_iter()
        .filter(|c| !corpus.communities().contains(c))
        .collect();
    if !missing.is_empty() {
        return Err(Error::InsufficientData(format!(
            "corpus has no articles for cascade communities: {}",
            missing.join(", ")
        )));
    }
    Ok(())
}

/// Trains every stage on the rows of `train` whose community the stage
/// separates.
pub fn train_on(
    spec: &CascadeSpec,
    data: &AnalyzedCorpus,
    train: &[usize],
    config: &EvalConfig,
) -> Result<Cascade> {
    spec.validate()?;
    let mut stages = Vec::new();
    for stage in &spec.stages {
        let members = stage.members();
        let idx: Vec<usize> = train
            .iter()
            .copied()
            .filter(|&i| members.contains(data.community(i)))
            .collect();
        let positive = |i: usize| stage.positive.contains(data.community(i));
        let fit = fit_binary(data, &idx, &positive, stage.groups, config)
            .map_err(|e| Error::InsufficientData(format!("stage {:?}: {e}", stage.name)))?;
        stages.push(TrainedStage {
            classifier: fit.classifier,
            params: fit.params,
            encoders: fit.encoders,
        });
    }
    Ok(Cascade {
        spec: spec.clone(),
        stages,
    })
}

/// Trains on a whole corpus.
pub fn train_cascade(
    spec: &CascadeSpec,
    corpus: &Corpus,
    extractor: &FeatureExtractor,
    config: &EvalConfig,
) -> Result<Cascade> {
    spec.validate()?;
    require_communities(corpus, spec)?;
    let data = AnalyzedCorpus::new(corpus, extractor);
    let names: Vec<String> = spec.communities().into_iter().collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let idx = data.indices_of(&refs);
    train_on(spec, &data, &idx, config)
}

impl Cascade {
    pub fn predict_analysis(&self, analysis: &ArticleAnalysis) -> Result<Prediction> {
        let leaves: Vec<String> = self.spec.communities().into_iter().collect();
        let mut path = Vec::new();
        let mut at = 0;
        loop {
            let spec = &self.spec.stages[at];
            let trained = &self.stages[at];
            let x = assemble(analysis, spec.groups, trained.encoders.as_ref())?;
            let p = trained.classifier.predict_proba(&x.values)?;
            let positive = p >= spec.threshold;
            path.push(PathStep {
                stage: spec.name.clone(),
                probability: p,
                positive,
            });
            let (pos, neg) = self.spec.routes(at);
            match if positive { pos } else { neg } {
                Route::Leaf(c) => {
                    return Ok(Prediction {
                        community: leaves[c].clone(),
                        path,
                    })
                }
                Route::Stage(j) => at = j,
            }
        }
    }

    pub fn predict(&self, extractor: &FeatureExtractor, article: &Article) -> Result<Prediction> {
        self.predict_analysis(&extractor.analyze(article))
    }

    /// Writes `spec.toml` and one `stage_{i}.json` model per stage.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let spec_path = dir.join("spec.toml");
        std::fs::write(&spec_path, self.spec.to_toml()).map_err(|e| Error::io(&spec_path, e))?;
        for (i, (s, t)) in self.spec.stages.iter().zip(&self.stages).enumerate() {
            let model = TrainedModel {
                version: MODEL_FORMAT_VERSION,
                classes: [set_str(&s.negative), set_str(&s.positive)],
                groups: s.groups,
                encoders: t.encoders.clone(),
                classifier: t.classifier.clone(),
            };
            model.save(&dir.join(format!("stage_{i}.json")))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let spec = CascadeSpec::load(&dir.join("spec.toml"))?;
        let stages = (0..spec.stages.len())
            .map(|i| {
                let m = TrainedModel::load(&dir.join(format!("stage_{i}.json")))?;
                Ok(TrainedStage {
                    params: m.classifier.params(),
                    classifier: m.classifier,
                    encoders: m.encoders,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Cascade { spec, stages })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    /// Absent when nothing was predicted as this community.
    pub precision: Option<f64>,
    /// Absent when the test set has no articles of this community.
    pub recall: Option<f64>,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: String,
    /// Test articles that reached this stage and belong to its sets.
    pub n: usize,
    /// Absent when those articles do not cover both sides.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeReport {
    pub accuracy: f64,
    pub n: usize,
    pub per_class: BTreeMap<String, ClassMetrics>,
    pub stages: Vec<StageMetrics>,
}

fn class_metrics(truth: &[&str], predicted: &[String], classes: &BTreeSet<String>) -> BTreeMap<String, ClassMetrics> {
    classes
        .iter()
        .map(|c| {
            let support = truth.iter().filter(|t| *t == c).count();
            let predicted_c = predicted.iter().filter(|p| *p == c).count();
            let hits = truth.iter().zip(predicted).filter(|(t, p)| *t == c && *p == c).count();
            let ratio = |n: usize| (n > 0).then(|| hits as f64 / n as f64);
            (
                c.clone(),
                ClassMetrics {
                    precision: ratio(predicted_c),
                    recall: ratio(support),
                    support,
                },
            )
        })
        .collect()
}

/// Scores `idx` of `data`; articles outside the cascade's communities are an
/// error.
pub fn evaluate_on(cascade: &Cascade, data: &AnalyzedCorpus, idx: &[usize]) -> Result<CascadeReport> {
    if idx.is_empty() {
        return Err(Error::InsufficientData("empty test set".into()));
    }
    let classes = cascade.spec.communities();
    if let Some(&i) = idx.iter().find(|&&i| !classes.contains(data.community(i))) {
        return Err(Error::InvalidArgument(format!(
            "test article of community {:?} is not handled by the cascade",
            data.community(i)
        )));
    }
    let predictions = idx
        .iter()
        .map(|&i| cascade.predict_analysis(&data.analyses[i]))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<&str> = idx.iter().map(|&i| data.community(i)).collect();
    let predicted: Vec<String> = predictions.iter().map(|p| p.community.clone()).collect();
    let correct = truth.iter().zip(&predicted).filter(|(t, p)| *t == p).count();

    let mut stages = Vec::new();
    for spec in &cascade.spec.stages {
        let members = spec.members();
        let (mut scores, mut labels) = (Vec::new(), Vec::new());
        for (k, p) in predictions.iter().enumerate() {
            if !members.contains(truth[k]) {
                continue;
            }
            if let Some(step) = p.path.iter().find(|s| s.stage == spec.name) {
                scores.push(step.probability);
                labels.push(spec.positive.contains(truth[k]));
            }
        }
        stages.push(StageMetrics {
            stage: spec.name.clone(),
            n: scores.len(),
            auc: roc_curve(&scores, &labels).ok().map(|c| c.auc),
        });
    }
    Ok(CascadeReport {
        accuracy: correct as f64 / idx.len() as f64,
        n: idx.len(),
        per_class: class_metrics(&truth, &predicted, &classes),
        stages,
    })
}

pub fn evaluate_cascade(
    cascade: &Cascade,
    test: &Corpus,
    extractor: &FeatureExtractor,
) -> Result<CascadeReport> {
    let data = AnalyzedCorpus::new(test, extractor);
    let idx: Vec<usize> = (0..test.len()).collect();
    evaluate_on(cascade, &data, &idx)
}

/// One-vs-rest forests over every feature group; predicts the community with
/// the highest probability, ties going to the first in sorted order.
pub struct FlatBaseline {
    pub classes: Vec<String>,
    pub models: Vec<(Classifier, Option<Encoders>)>,
}

impl FlatBaseline {
    pub fn train(data: &AnalyzedCorpus, train: &[usize], classes: &BTreeSet<String>, config: &EvalConfig) -> Result<Self> {
        let classes: Vec<String> = classes.iter().cloned().collect();
        let models = classes
            .iter()
            .map(|c| {
                let positive = |i: usize| data.community(i) == c;
                let fit = fit_binary(data, train, &positive, GroupSet::all(), config)?;
                Ok((fit.classifier, fit.encoders))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FlatBaseline { classes, models })
    }

    pub fn predict_analysis(&self, analysis: &ArticleAnalysis) -> Result<String> {
        let mut best = (f64::NEG_INFINITY, 0);
        for (k, (m, enc)) in self.models.iter().enumerate() {
            let x = assemble(analysis, GroupSet::all(), enc.as_ref())?;
            let p = m.predict_proba(&x.values)?;
            if p > best.0 {
                best = (p, k);
            }
        }
        Ok(self.classes[best.1].clone())
    }

    pub fn accuracy(&self, data: &AnalyzedCorpus, idx: &[usize]) -> Result<f64> {
        if idx.is_empty() {
            return Err(Error::InsufficientData("empty test set".into()));
        }
        let mut correct = 0;
        for &i in idx {
            if self.predict_analysis(&data.analyses[i])? == data.community(i) {
                correct += 1;
            }
        }
        Ok(correct as f64 / idx.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeExperiment {
    pub n_train: usize,
    pub n_test: usize,
    pub cascade: CascadeReport,
    /// Accuracy of the one-vs-rest baseline on the same split, when requested.
    pub flat_accuracy: Option<f64>,
}

/// Splits `corpus` stratified by community with `config.seed`, trains the
/// cascade (and optionally the flat baseline) on the training part and
/// scores the test part. A one-stage cascade whose positive side is the
/// lexicographically larger community sees exactly the split, folds and model
/// of the corresponding pairwise matrix cell.
pub fn cascade_experiment(
    spec: &CascadeSpec,
    corpus: &Corpus,
    extractor: &FeatureExtractor,
    config: &EvalConfig,
    with_flat: bool,
) -> Result<(Cascade, CascadeExperiment)> {
    spec.validate()?;
    require_communities(corpus, spec)?;
    let data = AnalyzedCorpus::new(corpus, extractor);
    let names: Vec<String> = spec.communities().into_iter().collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let idx = data.indices_of(&refs);
    let (train, test) = stratified_split(&idx, |i| data.community(i).to_owned(), config.train_fraction, config.seed)?;
    let cascade = train_on(spec, &data, &train, config)?;
    let report = evaluate_on(&cascade, &data, &test)?;
    let flat_accuracy = if with_flat {
        Some(FlatBaseline::train(&data, &train, &spec.communities(), config)?.accuracy(&data, &test)?)
    } else {
        None
    };
    Ok((
        cascade,
        CascadeExperiment {
            n_train: train.len(),
            n_test: test.len(),
            cascade: report,
            flat_accuracy,
        },
    ))
}
