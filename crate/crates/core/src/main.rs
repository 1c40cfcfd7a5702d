use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use community_interest::corpus::{
    ingest, overlap_matrix, slice, validate_slices, Article, OverlapKind, PopularityMetric,
    TimeSlice,
};
use community_interest::evaluate::{
    drift_run, emit_report, pairwise_matrix, threshold_sweep, train_pair, CsvRecord, EvalConfig,
};
use community_interest::features::{FeatureExtractor, FeatureGroup, GroupSet, NUM_FEATURES};
use community_interest::hierarchy::{cascade_experiment, evaluate_cascade, train_cascade, Cascade, CascadeSpec};
use community_interest::model::{default_grid, quick_grid, Algorithm, TrainedModel, MODEL_FORMAT_VERSION};
use community_interest::synth::{generate, generate_drift, DriftSpec, ProfileSet};
use community_interest::{Error, Result};

/// Predict which news community an article will interest, from content alone.
#[derive(Parser)]
#[command(name = "community-interest", version)]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory of lexicon files overriding the built-in lists.
    #[arg(long, global = true, env = "COMMUNITY_INTEREST_LEXICONS")]
    lexicons: Option<PathBuf>,
    /// Gazetteer of known entity names, one per line.
    #[arg(long, global = true)]
    gazetteer: Option<PathBuf>,
    /// Directory for written artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct TrainArgs {
    /// Random seed for splits, folds and models.
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    tuning: TuningArgs,
}

#[derive(Args, Clone)]
struct TuningArgs {
    #[arg(long, default_value = "forest")]
    algorithm: Algorithm,
    /// Use a single small configuration instead of the full tuning grid.
    #[arg(long)]
    quick: bool,
    /// Cross-validation folds for tuning.
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Fraction of each community used for training.
    #[arg(long, default_value_t = 0.7)]
    train_fraction: f64,
    /// Minimum articles per community.
    #[arg(long, default_value_t = 20)]
    min_articles: usize,
}

impl TrainArgs {
    fn config(&self) -> EvalConfig {
        self.tuning.config(self.seed)
    }
}

impl TuningArgs {
    fn config(&self, seed: u64) -> EvalConfig {
        EvalConfig {
            train_fraction: self.train_fraction,
            seed,
            grid: if self.quick {
                quick_grid(self.algorithm)
            } else {
                default_grid(self.algorithm)
            },
            folds: self.folds,
            min_articles: self.min_articles,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a corpus and report its size per community.
    Validate { corpus: PathBuf },
    /// Pairwise overlap percentages between communities.
    Overlap {
        corpus: PathBuf,
        #[arg(long, default_value = "article")]
        kind: OverlapKind,
    },
    /// Dump feature vectors as CSV (encoders fitted on the whole corpus).
    Extract {
        corpus: PathBuf,
        #[arg(long, default_value = "all")]
        groups: GroupSet,
    },
    /// Train and test one community pair; saves the model.
    Train {
        corpus: PathBuf,
        #[arg(long, num_args = 2, value_names = ["A", "B"], required = true)]
        pair: Vec<String>,
        #[arg(long, default_value = "all")]
        groups: GroupSet,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Every community pair crossed with every feature group.
    Matrix {
        corpus: PathBuf,
        #[arg(long, default_value = "all")]
        groups: GroupSet,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Matrix over the most popular fraction of each community.
    Sweep {
        corpus: PathBuf,
        /// Comma-separated fractions in (0, 1].
        #[arg(long, value_delimiter = ',', required = true)]
        fractions: Vec<f64>,
        #[arg(long, default_value = "score")]
        metric: PopularityMetric,
        #[arg(long, default_value = "all")]
        groups: GroupSet,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train on the earliest slice, test on later ones.
    Drift {
        corpus: PathBuf,
        /// Slices as label:start:end, chronological.
        #[arg(long, num_args = 2.., required = true)]
        slices: Vec<TimeSlice>,
        #[arg(long, default_value = "all")]
        groups: GroupSet,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Hierarchical-binary cascade.
    #[command(subcommand)]
    Cascade(CascadeCommand),
    /// Generate a synthetic corpus from community profiles.
    Synth {
        #[arg(long)]
        profile: PathBuf,
        /// Optional drift spec; writes one corpus per slice.
        #[arg(long)]
        drift: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
    },
    /// Score articles with a saved pair model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// JSONL file of articles.
        #[arg(long)]
        article: PathBuf,
    },
}

#[derive(Subcommand)]
enum CascadeCommand {
    /// Train on a whole corpus and save under the output directory.
    Train {
        corpus: PathBuf,
        /// Cascade spec; the shipped default when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Route articles through a saved cascade.
    Predict {
        corpus: PathBuf,
        #[arg(long)]
        cascade: PathBuf,
    },
    /// Split, train, and report accuracy, per-class and per-stage metrics.
    Eval {
        corpus: PathBuf,
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Also score a saved cascade on the corpus instead of training.
        #[arg(long)]
        cascade: Option<PathBuf>,
        /// Compare against a one-vs-rest baseline on the same split.
        #[arg(long)]
        flat: bool,
        /// Random seed; trains a fresh cascade when no saved one is given.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        tuning: TuningArgs,
    },
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_owned(),
        source: e,
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })
}

fn load_spec(path: Option<&Path>) -> Result<CascadeSpec> {
    match path {
        Some(p) => CascadeSpec::load(p),
        None => Ok(CascadeSpec::default_spec()),
    }
}

fn read_articles(path: &Path) -> Result<Vec<Article>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| community_interest::corpus::parse_article_line(l, i + 1))
        .collect()
}

fn run(cli: Cli) -> Result<Value> {
    let extractor = || FeatureExtractor::load(cli.lexicons.as_deref(), cli.gazetteer.as_deref());
    let out = &cli.out;
    match cli.command {
        Command::Validate { corpus } => {
            let c = ingest(&corpus)?;
            Ok(json!({
                "command": "validate",
                "articles": c.len(),
                "communities": c.community_sizes(),
            }))
        }
        Command::Overlap { corpus, kind } => {
            let c = ingest(&corpus)?;
            let ex = extractor()?;
            let entity = |a: &Article| ex.article_entity(&a.title, &a.body);
            let m = overlap_matrix(&c, kind, Some(&entity))?;
            create_dir(out)?;
            let kind_name = serde_json::to_value(kind)?.as_str().unwrap_or("overlap").to_owned();
            let path = out.join(format!("overlap_{kind_name}.csv"));
            let mut w = csv::Writer::from_path(&path)?;
            let mut header = vec![String::new()];
            header.extend(m.labels.iter().cloned());
            w.write_record(&header)?;
            for (label, row) in m.labels.iter().zip(&m.cells) {
                let mut rec = vec![label.clone()];
                rec.extend(row.iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
            w.flush().map_err(|e| Error::Io { path: path.clone(), source: e })?;
            Ok(json!({
                "command": "overlap",
                "kind": kind_name,
                "labels": m.labels,
                "cells": m.cells,
                "csv": path,
            }))
        }
        Command::Extract { corpus, groups } => {
            let c = ingest(&corpus)?;
            let ex = extractor()?;
            let encoders = if groups.needs_encoders() {
                Some(ex.fit_encoders(&c)?)
            } else {
                None
            };
            create_dir(out)?;
            let path = out.join("features.csv");
            let mut w = csv::Writer::from_path(&path)?;
            let mut header = vec!["id".to_owned(), "community".to_owned()];
            for g in FeatureGroup::ALL {
                header.extend((0..g.width()).map(|k| format!("{}_{k}", g.name())));
            }
            debug_assert_eq!(header.len(), NUM_FEATURES + 2);
            w.write_record(&header)?;
            for a in c.articles() {
                let v = ex.extract(a, groups, encoders.as_ref())?;
                let mut rec = vec![a.id.clone(), a.community.clone()];
                rec.extend(v.values.iter().map(|x| x.to_string()));
                w.write_record(&rec)?;
            }
            w.flush().map_err(|e| Error::Io { path: path.clone(), source: e })?;
            Ok(json!({
                "command": "extract",
                "articles": c.len(),
                "groups": groups.names(),
                "csv": path,
            }))
        }
        Command::Train { corpus, pair, groups, train } => {
            let c = ingest(&corpus)?;
            let ex = extractor()?;
            let (fit, cell) = train_pair(&c, &ex, (&pair[0], &pair[1]), groups, &train.config())?;
            create_dir(out)?;
            let model = TrainedModel {
                version: MODEL_FORMAT_VERSION,
                classes: [cell.pair_a.clone(), cell.pair_b.clone()],
                groups,
                encoders: fit.encoders,
                classifier: fit.classifier,
            };
            let path = out.join("model.json");
            model.save(&path)?;
            Ok(json!({
                "command": "train",
                "pair": [cell.pair_a, cell.pair_b],
                "groups": groups.names(),
                "auc": cell.curve.auc,
                "n_train": cell.n_train,
                "n_test": cell.n_test,
                "params": cell.params,
                "model": path,
            }))
        }
        Command::Matrix { corpus, groups, train } => {
            let c = ingest(&corpus)?;
            let cells = pairwise_matrix(&c, &extractor()?, groups, &train.config())?;
            let files = emit_report(&cells, &[], out, "matrix")?;
            Ok(json!({
                "command": "matrix",
                "cells": cells.len(),
                "csv": files.csv,
                "svgs": files.svgs.len(),
                "metadata": files.metadata,
            }))
        }
        Command::Sweep { corpus, fractions, metric, groups, train } => {
            let c = ingest(&corpus)?;
            let rows = threshold_sweep(&c, &extractor()?, &fractions, metric, groups, &train.config())?;
            let cells: Vec<_> = rows.iter().filter_map(|r| r.cell.clone()).collect();
            let skipped: Vec<CsvRecord> = rows.iter().filter(|r| r.cell.is_none()).map(CsvRecord::from).collect();
            let files = emit_report(&cells, &skipped, out, "sweep")?;
            Ok(json!({
                "command": "sweep",
                "rows": rows.len(),
                "skipped": skipped.len(),
                "csv": files.csv,
            }))
        }
        Command::Drift { corpus, slices, groups, train } => {
            validate_slices(&slices)?;
            let c = ingest(&corpus)?;
            let parts = slice(&c, &slices)?;
            let labeled: Vec<_> = slices.iter().map(|s| s.label.clone()).zip(parts).collect();
            let rows = drift_run(&labeled, &extractor()?, groups, &train.config())?;
            let files = emit_report(&rows, &[], out, "drift")?;
            Ok(json!({
                "command": "drift",
                "rows": rows.len(),
                "csv": files.csv,
            }))
        }
        Command::Cascade(CascadeCommand::Train { corpus, spec, train }) => {
            let c = ingest(&corpus)?;
            let spec = load_spec(spec.as_deref())?;
            let cascade = train_cascade(&spec, &c, &extractor()?, &train.config())?;
            let dir = out.join("cascade");
            cascade.save(&dir)?;
            let params: Vec<_> = cascade.stages.iter().map(|s| s.params.clone()).collect();
            Ok(json!({
                "command": "cascade-train",
                "stages": spec.stages.len(),
                "params": params,
                "cascade": dir,
            }))
        }
        Command::Cascade(CascadeCommand::Predict { corpus, cascade }) => {
            let c = ingest(&corpus)?;
            let cascade = Cascade::load(&cascade)?;
            let ex = extractor()?;
            create_dir(out)?;
            let path = out.join("cascade_predictions.jsonl");
            let mut lines = String::new();
            for a in c.articles() {
                let p = cascade.predict(&ex, a)?;
                lines.push_str(&json!({ "id": a.id, "community": p.community, "path": p.path }).to_string());
                lines.push('\n');
            }
            write_file(&path, lines)?;
            Ok(json!({
                "command": "cascade-predict",
                "articles": c.len(),
                "predictions": path,
            }))
        }
        Command::Cascade(CascadeCommand::Eval { corpus, spec, cascade, flat, seed, tuning }) => {
            let c = ingest(&corpus)?;
            let ex = extractor()?;
            let report = match (cascade, seed) {
                (Some(dir), _) => serde_json::to_value(evaluate_cascade(&Cascade::load(&dir)?, &c, &ex)?)?,
                (None, Some(seed)) => {
                    let spec = load_spec(spec.as_deref())?;
                    let (_, exp) = cascade_experiment(&spec, &c, &ex, &tuning.config(seed), flat)?;
                    serde_json::to_value(exp)?
                }
                (None, None) => {
                    return Err(Error::InvalidArgument(
                        "cascade eval needs --cascade DIR or --seed to train".into(),
                    ))
                }
            };
            create_dir(out)?;
            let path = out.join("cascade_eval.json");
            write_file(&path, serde_json::to_string_pretty(&report)?)?;
            Ok(json!({ "command": "cascade-eval", "report": report, "path": path }))
        }
        Command::Synth { profile, drift, seed } => {
            let profiles = ProfileSet::load(&profile)?.communities;
            create_dir(out)?;
            match drift {
                None => {
                    let c = generate(&profiles, seed)?;
                    let path = out.join("corpus.jsonl");
                    c.write_jsonl(&path)?;
                    Ok(json!({ "command": "synth", "articles": c.len(), "corpus": path }))
                }
                Some(d) => {
                    let slices = generate_drift(&profiles, &DriftSpec::load(&d)?, seed)?;
                    let mut files = Vec::new();
                    for (label, c) in &slices {
                        let path = out.join(format!("corpus_{label}.jsonl"));
                        c.write_jsonl(&path)?;
                        files.push(json!({ "slice": label, "articles": c.len(), "corpus": path }));
                    }
                    Ok(json!({ "command": "synth", "slices": files }))
                }
            }
        }
        Command::Predict { model, article } => {
            let m = TrainedModel::load(&model)?;
            let ex = extractor()?;
            let mut preds = Vec::new();
            for a in read_articles(&article)? {
                let v = ex.extract(&a, m.groups, m.encoders.as_ref())?;
                let p = m.predict_proba(&v.values)?;
                let label = if p >= 0.5 { &m.classes[1] } else { &m.classes[0] };
                preds.push(json!({ "id": a.id, "probability": p, "community": label }));
            }
            Ok(json!({ "command": "predict", "positive": m.classes[1], "predictions": preds }))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(summary) => {
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
