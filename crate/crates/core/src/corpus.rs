//! Labeled article corpora: JSONL ingestion, popularity filters, time slicing
//! and cross-community overlap statistics.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Required JSONL fields, in schema order.
pub const ARTICLE_FIELDS: [&str; 9] = [
    "id",
    "title",
    "body",
    "source",
    "url",
    "community",
    "timestamp",
    "score",
    "num_comments",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    pub title: String,
    pub body: String,
    pub source: String,
    pub url: String,
    pub community: String,
    pub timestamp: i64,
    pub score: i64,
    pub num_comments: u64,
}

impl Article {
    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: &str| Error::InvalidArticle {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.is_empty() {
            return Err(invalid("empty id"));
        }
        if self.community.is_empty() {
            return Err(invalid("empty community"));
        }
        if self.timestamp <= 0 {
            return Err(invalid("timestamp must be positive"));
        }
        if !is_normalized_source(&self.source) {
            return Err(invalid(
                "source must be a lowercase domain without scheme or path",
            ));
        }
        Ok(())
    }
}

fn is_normalized_source(source: &str) -> bool {
    !source.is_empty()
        && !source.contains("://")
        && !source.contains('/')
        && !source.chars().any(|c| c.is_whitespace() || c.is_uppercase())
}

/// Articles sorted by id, plus the set of community labels present.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    articles: Vec<Article>,
    communities: BTreeSet<String>,
}

impl Corpus {
    /// Builds a corpus, validating every article and rejecting duplicate ids.
    pub fn new(mut articles: Vec<Article>) -> Result<Self> {
        for a in &articles {
            a.validate()?;
        }
        articles.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = articles.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::DuplicateId(w[0].id.clone()));
        }
        Ok(Self::from_sorted(articles))
    }

    // Caller guarantees sorted, unique, validated articles.
    fn from_sorted(articles: Vec<Article>) -> Self {
        let communities = articles.iter().map(|a| a.community.clone()).collect();
        Corpus {
            articles,
            communities,
        }
    }

    pub fn articles(&self) -> &[Article] {
        &self.articles
    }

    pub fn communities(&self) -> &BTreeSet<String> {
        &self.communities
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Article> {
        self.articles
            .binary_search_by(|a| a.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.articles[i])
    }

    /// Article counts per community.
    pub fn community_sizes(&self) -> BTreeMap<String, usize> {
        let mut sizes = BTreeMap::new();
        for a in &self.articles {
            *sizes.entry(a.community.clone()).or_insert(0) += 1;
        }
        sizes
    }

    /// Keeps the articles matching `keep`, preserving order.
    pub fn filter(&self, mut keep: impl FnMut(&Article) -> bool) -> Corpus {
        Corpus::from_sorted(self.articles.iter().filter(|a| keep(a)).cloned().collect())
    }

    /// Restricts the corpus to the given communities.
    pub fn restrict<S: AsRef<str>>(&self, communities: &[S]) -> Corpus {
        self.filter(|a| communities.iter().any(|c| c.as_ref() == a.community))
    }

    /// Merges several corpora; ids must stay unique.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Corpus>) -> Result<Corpus> {
        let all = parts
            .into_iter()
            .flat_map(|c| c.articles.iter().cloned())
            .collect();
        Corpus::new(all)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        for a in &self.articles {
            serde_json::to_writer(&mut out, a)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Loads a JSONL corpus, one article object per line. Blank lines are skipped.
pub fn ingest(path: &Path) -> Result<Corpus> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut articles = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        articles.push(parse_article_line(&line, idx + 1)?);
    }
    Corpus::new(articles)
}

/// Parses one JSONL row. `line` is 1-based and only used for error messages.
pub fn parse_article_line(text: &str, line: usize) -> Result<Article> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        message: format!("malformed JSON: {e}"),
    })?;
    let obj = value.as_object().ok_or_else(|| Error::Parse {
        line,
        message: "expected a JSON object".into(),
    })?;
    for field in ARTICLE_FIELDS {
        if !obj.contains_key(field) {
            return Err(Error::MissingField { line, field });
        }
    }
    let article: Article = serde_json::from_value(value).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })?;
    Ok(article)
}

/// Keeps articles whose score is at least `min`.
pub fn filter_min_score(corpus: &Corpus, min: i64) -> Corpus {
    corpus.filter(|a| a.score >= min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PopularityMetric {
    Score,
    Comments,
}

impl PopularityMetric {
    fn value(self, a: &Article) -> i128 {
        match self {
            PopularityMetric::Score => a.score as i128,
            PopularityMetric::Comments => a.num_comments as i128,
        }
    }
}

impl FromStr for PopularityMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "score" => Ok(PopularityMetric::Score),
            "comments" => Ok(PopularityMetric::Comments),
            other => Err(Error::InvalidArgument(format!(
                "unknown metric {other:?} (expected score|comments)"
            ))),
        }
    }
}

impl fmt::Display for PopularityMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PopularityMetric::Score => "score",
            PopularityMetric::Comments => "comments",
        })
    }
}

/// Number of items kept when taking `fraction` of `n`, rounding up.
///
/// The product is nudged down by a small epsilon so that e.g. 0.3 * 10 keeps
/// 3 items rather than 4.
pub fn top_count(fraction: f64, n: usize) -> usize {
    let k = (fraction * n as f64 - 1e-9).ceil();
    (k.max(0.0) as usize).min(n)
}

/// Per community, keeps the `ceil(fraction * n)` most popular articles by
/// `metric`, ties broken by ascending id.
pub fn filter_top_fraction(
    corpus: &Corpus,
    metric: PopularityMetric,
    fraction: f64,
) -> Result<Corpus> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let mut by_community: BTreeMap<&str, Vec<&Article>> = BTreeMap::new();
    for a in &corpus.articles {
        by_community.entry(&a.community).or_default().push(a);
    }
    let mut keep: HashSet<&str> = HashSet::new();
    for (_, mut members) in by_community {
        members.sort_by(|a, b| {
            metric
                .value(b)
                .cmp(&metric.value(a))
                .then_with(|| a.id.cmp(&b.id))
        });
        let k = top_count(fraction, members.len());
        keep.extend(members[..k].iter().map(|a| a.id.as_str()));
    }
    Ok(corpus.filter(|a| keep.contains(a.id.as_str())))
}

/// Half-open time range `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSlice {
    pub label: String,
    pub start: i64,
    pub end: i64,
}

impl TimeSlice {
    pub fn new(label: impl Into<String>, start: i64, end: i64) -> Self {
        TimeSlice {
            label: label.into(),
            start,
            end,
        }
    }

    pub fn contains(&self, t: i64) -> bool {
        self.start <= t && t < self.end
    }
}

impl FromStr for TimeSlice {
    type Err = Error;

    /// Parses `label:start:end`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidArgument(format!("slice {s:?} is not label:start:end"));
        if parts.len() != 3 || parts[0].is_empty() {
            return Err(bad());
        }
        let start = parts[1].parse().map_err(|_| bad())?;
        let end = parts[2].parse().map_err(|_| bad())?;
        Ok(TimeSlice::new(parts[0], start, end))
    }
}

/// Checks `start < end` for each slice and that no two slices overlap.
pub fn validate_slices(slices: &[TimeSlice]) -> Result<()> {
    for s in slices {
        if s.start >= s.end {
            return Err(Error::InvalidArgument(format!(
                "slice {} has start {} >= end {}",
                s.label, s.start, s.end
            )));
        }
    }
    for (i, a) in slices.iter().enumerate() {
        for b in &slices[i + 1..] {
            if a.start < b.end && b.start < a.end {
                return Err(Error::InvalidArgument(format!(
                    "slices {} and {} overlap",
                    a.label, b.label
                )));
            }
        }
    }
    Ok(())
}

/// Splits the corpus by time. Articles outside every slice are dropped.
pub fn slice(corpus: &Corpus, slices: &[TimeSlice]) -> Result<Vec<Corpus>> {
    validate_slices(slices)?;
    Ok(slices
        .iter()
        .map(|s| corpus.filter(|a| s.contains(a.timestamp)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapKind {
    Article,
    Source,
    Entity,
}

impl FromStr for OverlapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "article" => Ok(OverlapKind::Article),
            "source" => Ok(OverlapKind::Source),
            "entity" => Ok(OverlapKind::Entity),
            other => Err(Error::InvalidArgument(format!(
                "unknown overlap kind {other:?} (expected article|source|entity)"
            ))),
        }
    }
}

/// Lowercases the host and drops scheme, query, fragment and trailing slashes.
pub fn normalize_url(url: &str) -> String {
    let trimmed = url.trim();
    let rest = match trimmed.find("://") {
        Some(i) => &trimmed[i + 3..],
        None => trimmed,
    };
    let rest = rest.split(['?', '#']).next().unwrap_or("");
    let (host, path) = match rest.find('/') {
        Some(i) => (&rest[..i], &rest[i..]),
        None => (rest, ""),
    };
    let mut out = host.to_lowercase();
    out.push_str(path.trim_end_matches('/'));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapMatrix {
    pub labels: Vec<String>,
    /// Percentages in `[0, 100]`, indexed like `labels`.
    pub cells: Vec<Vec<f64>>,
}

/// Percentage of each community pair's articles whose key (normalized url,
/// source, or most frequent entity) occurs in both communities.
///
/// `entity_fn` is required for [`OverlapKind::Entity`]; articles for which it
/// returns `None` never count as shared.
pub fn overlap_matrix(
    corpus: &Corpus,
    kind: OverlapKind,
    entity_fn: Option<&(dyn Fn(&Article) -> Option<String> + Sync)>,
) -> Result<OverlapMatrix> {
    if kind == OverlapKind::Entity && entity_fn.is_none() {
        return Err(Error::InvalidArgument(
            "entity overlap requires an entity extractor".into(),
        ));
    }
    let key = |a: &Article| -> Option<String> {
        match kind {
            OverlapKind::Article => Some(normalize_url(&a.url)),
            OverlapKind::Source => Some(a.source.clone()),
            OverlapKind::Entity => entity_fn.and_then(|f| f(a)),
        }
    };
    let labels: Vec<String> = corpus.communities.iter().cloned().collect();
    let keys: Vec<Vec<Option<String>>> = labels
        .iter()
        .map(|l| {
            corpus
                .articles
                .iter()
                .filter(|a| &a.community == l)
                .map(key)
                .collect()
        })
        .collect();
    let key_sets: Vec<HashSet<&str>> = keys
        .iter()
        .map(|ks| ks.iter().flatten().map(String::as_str).collect())
        .collect();

    let n = labels.len();
    let mut cells = vec![vec![0.0; n]; n];
    for i in 0..n {
        cells[i][i] = 100.0;
        for j in i + 1..n {
            let shared = |k: &Option<String>| {
                k.as_deref()
                    .is_some_and(|k| key_sets[i].contains(k) && key_sets[j].contains(k))
            };
            let total = keys[i].len() + keys[j].len();
            let hits = keys[i].iter().chain(&keys[j]).filter(|k| shared(k)).count();
            let pct = if total == 0 {
                0.0
            } else {
                100.0 * hits as f64 / total as f64
            };
            cells[i][j] = pct;
            cells[j][i] = pct;
        }
    }
    Ok(OverlapMatrix { labels, cells })
}
