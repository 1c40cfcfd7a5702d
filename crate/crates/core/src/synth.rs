//! Seeded synthetic corpora with planted community signals and entity drift.
//!
//! Signals are planted at the word level (sources, entities, lexicon terms)
//! so generated articles go through the real text pipeline.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Article, Corpus};
use crate::error::{Error, Result};
use crate::features::{Lexicon, LexiconSet};
use crate::model::{derive_seed, rng_for};

/// Neutral filler words. Anything that also appears in a feature lexicon is
/// dropped at generation time.
const BASE_VOCAB: &[&str] = &[
    "market", "city", "council", "report", "plan", "budget", "road", "water", "school",
    "office", "meeting", "vote", "week", "month", "year", "morning", "evening", "team",
    "program", "project", "policy", "office", "street", "river", "bridge", "station",
    "price", "cost", "tax", "rate", "bank", "loan", "company", "worker", "union", "farm",
    "crop", "weather", "storm", "rain", "season", "game", "player", "coach", "fan",
    "court", "judge", "case", "law", "bill", "member", "group", "board", "panel",
    "study", "data", "figure", "number", "level", "area", "region", "county", "state",
    "district", "village", "town", "house", "building", "park", "center", "museum",
    "library", "hospital", "clinic", "doctor", "nurse", "patient", "student", "teacher",
    "class", "course", "test", "result", "change", "update", "notice", "statement",
    "release", "order", "service", "system", "network", "line", "route", "bus", "train",
    "flight", "airport", "port", "ship", "truck", "car", "driver", "fuel", "energy",
    "power", "grid", "plant", "site", "field", "land", "soil", "forest", "coast",
    "island", "border", "trade", "export", "import", "share", "stock", "fund", "asset",
    "said", "met", "held", "opened", "closed", "moved", "added", "reported", "planned",
    "voted", "built", "paid", "sold", "bought", "hired", "visited", "announced",
    "and", "to", "in", "a", "for", "on", "with", "at", "by", "from", "about", "after",
    "new", "local", "annual", "public", "regional", "federal", "daily", "weekly", "early",
    "late", "main", "second", "third", "north", "south", "east", "west", "central",
];

const SYLLABLES: &[&str] = &[
    "bar", "ven", "tor", "lis", "mak", "dor", "fen", "gal", "hur", "jas", "kel", "lum",
    "mor", "nix", "pol", "quin", "ras", "sol", "tam", "ulv", "vor", "wen", "yar", "zel",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weighted {
    pub name: String,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

impl Weighted {
    pub fn new(name: impl Into<String>, weight: f64) -> Self {
        Weighted {
            name: name.into(),
            weight,
        }
    }
}

fn default_body_words() -> (usize, usize) {
    (80, 140)
}
fn default_title_words() -> (usize, usize) {
    (6, 12)
}
fn default_mentions() -> usize {
    3
}
fn default_score() -> (i64, i64) {
    (1, 1000)
}
fn default_comments() -> (u64, u64) {
    (0, 300)
}
fn default_time() -> (i64, i64) {
    (1_420_070_400, 1_451_606_400)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityProfile {
    pub label: String,
    pub n_articles: usize,
    pub sources: Vec<Weighted>,
    pub entities: Vec<Weighted>,
    /// Lexicon name to per-token injection probability.
    #[serde(default)]
    pub lexicon_rates: BTreeMap<String, f64>,
    /// Per-token probability of a valence-lexicon word.
    #[serde(default)]
    pub emotion_rate: f64,
    /// In [-1, 1]; an injected valence word is positive with probability
    /// (1 + valence_bias) / 2.
    #[serde(default)]
    pub valence_bias: f64,
    #[serde(default = "default_body_words")]
    pub body_words: (usize, usize),
    #[serde(default = "default_title_words")]
    pub title_words: (usize, usize),
    /// Body mentions of the article's entity.
    #[serde(default = "default_mentions")]
    pub entity_mentions: usize,
    #[serde(default = "default_score")]
    pub score_range: (i64, i64),
    #[serde(default = "default_comments")]
    pub comments_range: (u64, u64),
    /// Half-open timestamp range.
    #[serde(default = "default_time")]
    pub time_range: (i64, i64),
}

impl CommunityProfile {
    /// A plain profile with uniform pools and no injections.
    pub fn new(label: &str, n_articles: usize, sources: &[&str], entities: &[&str]) -> Self {
        CommunityProfile {
            label: label.to_owned(),
            n_articles,
            sources: sources.iter().map(|s| Weighted::new(*s, 1.0)).collect(),
            entities: entities.iter().map(|s| Weighted::new(*s, 1.0)).collect(),
            lexicon_rates: BTreeMap::new(),
            emotion_rate: 0.0,
            valence_bias: 0.0,
            body_words: default_body_words(),
            title_words: default_title_words(),
            entity_mentions: default_mentions(),
            score_range: default_score(),
            comments_range: default_comments(),
            time_range: default_time(),
        }
    }

    pub fn with_rate(mut self, lexicon: &str, rate: f64) -> Self {
        self.lexicon_rates.insert(lexicon.to_owned(), rate);
        self
    }

    pub fn relabeled(&self, label: &str) -> Self {
        CommunityProfile {
            label: label.to_owned(),
            ..self.clone()
        }
    }

    fn validate(&self, lexicons: &LexiconSet) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("profile {:?}: {m}", self.label)));
        if self.label.is_empty() {
            return Err(Error::Config("profile label must not be empty".into()));
        }
        if self.sources.is_empty() || self.entities.is_empty() {
            return bad("source and entity pools must be non-empty".into());
        }
        for w in self.sources.iter().chain(&self.entities) {
            if !(w.weight >= 0.0 && w.weight.is_finite()) {
                return bad(format!("weight of {:?} must be non-negative", w.name));
            }
        }
        let mut total = self.emotion_rate;
        for (name, &rate) in &self.lexicon_rates {
            if lexicons.by_name(name).is_none() {
                return bad(format!("unknown lexicon {name:?}"));
            }
            if !(0.0..=1.0).contains(&rate) {
                return bad(format!("rate for {name} must lie in [0, 1]"));
            }
            total += rate;
        }
        if !(0.0..=1.0).contains(&self.emotion_rate) || total > 1.0 {
            return bad("injection rates must lie in [0, 1] and sum to at most 1".into());
        }
        if !(-1.0..=1.0).contains(&self.valence_bias) {
            return bad("valence_bias must lie in [-1, 1]".into());
        }
        if self.body_words.0 == 0 || self.body_words.0 > self.body_words.1 {
            return bad("body_words must be a non-empty range".into());
        }
        if self.title_words.0 < 3 || self.title_words.0 > self.title_words.1 {
            return bad("title_words must be a range starting at 3 or more".into());
        }
        if self.score_range.0 > self.score_range.1 || self.comments_range.0 > self.comments_range.1 {
            return bad("score and comment ranges must be ordered".into());
        }
        if self.time_range.0 >= self.time_range.1 {
            return bad("time_range must be non-empty".into());
        }
        Ok(())
    }
}

/// Profile file: a list of `[[community]]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSet {
    #[serde(rename = "community")]
    pub communities: Vec<CommunityProfile>,
}

impl ProfileSet {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Per-slice changes for one community.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SliceOverride {
    pub community: String,
    #[serde(default)]
    pub sources: Option<Vec<Weighted>>,
    #[serde(default)]
    pub lexicon_rates: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSlice {
    pub label: String,
    pub start: i64,
    pub end: i64,
    /// Fraction of every entity pool replaced by fresh entities relative to
    /// the previous slice. Ignored for the first slice.
    #[serde(default)]
    pub entity_rotation: f64,
    #[serde(default, rename = "override")]
    pub overrides: Vec<SliceOverride>,
}

/// Drift file: a list of `[[slice]]` tables in chronological order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    #[serde(rename = "slice")]
    pub slices: Vec<DriftSlice>,
}

impl DriftSpec {
    /// Equal-length consecutive slices with one rotation fraction.
    pub fn uniform(labels: &[&str], start: i64, length: i64, rotation: f64) -> Self {
        DriftSpec {
            slices: labels
                .iter()
                .enumerate()
                .map(|(k, l)| DriftSlice {
                    label: (*l).to_owned(),
                    start: start + k as i64 * length,
                    end: start + (k as i64 + 1) * length,
                    entity_rotation: if k == 0 { 0.0 } else { rotation },
                    overrides: Vec::new(),
                })
                .collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<()> {
        if self.slices.is_empty() {
            return Err(Error::Config("drift spec needs at least one slice".into()));
        }
        let mut labels = BTreeSet::new();
        for (k, s) in self.slices.iter().enumerate() {
            if !labels.insert(&s.label) {
                return Err(Error::Config(format!("duplicate slice label {:?}", s.label)));
            }
            if s.start >= s.end {
                return Err(Error::Config(format!("slice {:?} is empty", s.label)));
            }
            if k > 0 && s.start < self.slices[k - 1].end {
                return Err(Error::Config(format!(
                    "slice {:?} overlaps or precedes the previous slice",
                    s.label
                )));
            }
            if !(0.0..=1.0).contains(&s.entity_rotation) {
                return Err(Error::Config(format!(
                    "slice {:?}: entity_rotation must lie in [0, 1]",
                    s.label
                )));
            }
        }
        Ok(())
    }
}

/// Stable 64-bit FNV-1a.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Deterministic two-word proper name, the `k`-th fresh entity of `label`.
pub fn fresh_entity(label: &str, k: usize) -> String {
    let mut rng = rng_for(fnv1a(label), k as u64);
    let mut word = || {
        let a = SYLLABLES.choose(&mut rng).expect("syllables");
        let b = SYLLABLES.choose(&mut rng).expect("syllables");
        capitalize(&format!("{a}{b}"))
    };
    let first = word();
    let second = word();
    // The index keeps names unique even if syllables repeat.
    format!("{first} {second}{}", index_suffix(k + 1))
}

/// Lowercase letters only, so the name stays a run of alphabetic tokens.
fn index_suffix(mut n: usize) -> String {
    let mut s = String::new();
    while n > 0 {
        s.push((b'a' + (n % 26) as u8) as char);
        n /= 26;
    }
    s
}

/// Words the generator may use as filler.
pub fn base_vocabulary(lexicons: &LexiconSet) -> Vec<&'static str> {
    let reserved: Vec<&Lexicon> = lexicons
        .all()
        .into_iter()
        .filter(|l| !std::ptr::eq(*l, &lexicons.stopwords))
        .collect();
    let mut seen = BTreeSet::new();
    BASE_VOCAB
        .iter()
        .copied()
        .filter(|w| seen.insert(*w) && !reserved.iter().any(|l| l.contains(w)))
        .collect()
}

struct Sampler<'a> {
    profile: &'a CommunityProfile,
    vocab: &'a [&'static str],
    injections: Vec<(f64, Vec<String>)>,
    positive: Vec<String>,
    negative: Vec<String>,
    sources: WeightedIndex<f64>,
    entities: WeightedIndex<f64>,
}

impl<'a> Sampler<'a> {
    fn new(
        profile: &'a CommunityProfile,
        lexicons: &LexiconSet,
        vocab: &'a [&'static str],
    ) -> Result<Self> {
        profile.validate(lexicons)?;
        let weights = |pool: &[Weighted], what: &str| {
            WeightedIndex::new(pool.iter().map(|w| w.weight)).map_err(|_| {
                Error::Config(format!(
                    "profile {:?}: {what} weights must not all be zero",
                    profile.label
                ))
            })
        };
        let mut injections = Vec::new();
        for (name, &rate) in &profile.lexicon_rates {
            let lex = lexicons.by_name(name).expect("validated");
            let terms: Vec<String> = lex.terms().map(str::to_owned).collect();
            if terms.is_empty() && rate > 0.0 {
                return Err(Error::Config(format!("lexicon {name} is empty")));
            }
            injections.push((rate, terms));
        }
        let (mut positive, mut negative) = (Vec::new(), Vec::new());
        for t in lexicons.valence.terms() {
            match lexicons.valence.weight(t) {
                Some(w) if w > 0.0 => positive.push(t.to_owned()),
                Some(w) if w < 0.0 => negative.push(t.to_owned()),
                _ => {}
            }
        }
        Ok(Sampler {
            profile,
            vocab,
            injections,
            positive,
            negative,
            sources: weights(&profile.sources, "source")?,
            entities: weights(&profile.entities, "entity")?,
        })
    }

    fn word(&self, rng: &mut impl Rng) -> String {
        let u: f64 = rng.gen();
        let mut cum = 0.0;
        for (rate, terms) in &self.injections {
            cum += rate;
            if u < cum {
                return terms.choose(rng).expect("non-empty").clone();
            }
        }
        cum += self.profile.emotion_rate;
        if u < cum {
            let pos = rng.gen_bool((1.0 + self.profile.valence_bias) / 2.0);
            let pool = if pos { &self.positive } else { &self.negative };
            if let Some(w) = pool.choose(rng) {
                return w.clone();
            }
        }
        self.vocab.choose(rng).expect("vocabulary").to_string()
    }

    /// Sentences of 8-16 words (one sentence if `single`); `entity` is placed
    /// at a random position that is at least the third word of its sentence.
    fn text(
        &self,
        rng: &mut impl Rng,
        n_words: usize,
        entity: &str,
        mentions: usize,
        single: bool,
    ) -> String {
        let mut sentences: Vec<Vec<String>> = Vec::new();
        let mut left = n_words;
        while left > 0 {
            let len = if single { left } else { rng.gen_range(8..=16).min(left) };
            left -= len;
            sentences.push((0..len).map(|_| self.word(rng)).collect());
        }
        let eligible: Vec<usize> = (0..sentences.len())
            .filter(|&s| sentences[s].len() >= 3)
            .collect();
        for _ in 0..mentions {
            let s = *eligible.choose(rng).unwrap_or(&0);
            let len = sentences[s].len();
            let at = rng.gen_range(2..=len.max(2));
            sentences[s].insert(at.min(len), entity.to_owned());
        }
        sentences
            .into_iter()
            .map(|words| {
                let mut line = words.join(" ");
                if let Some(first) = words.first() {
                    line.replace_range(..first.len(), &capitalize(first));
                }
                line + "."
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn article(&self, rng: &mut impl Rng, id: String, index: usize) -> Article {
        let p = self.profile;
        let source = p.sources[self.sources.sample(rng)].name.clone();
        let entity = p.entities[self.entities.sample(rng)].name.clone();
        let body_len = rng.gen_range(p.body_words.0..=p.body_words.1);
        let body = self.text(rng, body_len, &entity, p.entity_mentions, false);
        let title_len = rng.gen_range(p.title_words.0..=p.title_words.1);
        let mut title = self.text(rng, title_len, &entity, 1, true);
        title.pop();
        Article {
            url: format!("https://{source}/{}/{index}", p.label),
            id,
            title,
            body,
            source,
            community: p.label.clone(),
            timestamp: rng.gen_range(p.time_range.0..p.time_range.1),
            score: rng.gen_range(p.score_range.0..=p.score_range.1),
            num_comments: rng.gen_range(p.comments_range.0..=p.comments_range.1),
        }
    }
}

fn generate_with(
    profiles: &[CommunityProfile],
    lexicons: &LexiconSet,
    seed: u64,
    id_prefix: &str,
) -> Result<Corpus> {
    if profiles.is_empty() {
        return Err(Error::Config("at least one community profile is required".into()));
    }
    let mut labels = BTreeSet::new();
    for p in profiles {
        if !labels.insert(&p.label) {
            return Err(Error::Config(format!("duplicate profile label {:?}", p.label)));
        }
    }
    let vocab = base_vocabulary(lexicons);
    let samplers = profiles
        .iter()
        .map(|p| Sampler::new(p, lexicons, &vocab))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = profiles
        .iter()
        .enumerate()
        .flat_map(|(c, p)| (0..p.n_articles).map(move |i| (c, i)))
        .collect();
    let articles = jobs
        .par_iter()
        .map(|&(c, i)| {
            let p = &profiles[c];
            let mut rng = rng_for(derive_seed(seed, fnv1a(&p.label)), i as u64);
            let id = format!("{id_prefix}{}-{i:05}", p.label);
            samplers[c].article(&mut rng, id, i)
        })
        .collect();
    Corpus::new(articles)
}

/// Samples every profile's articles independently; a pure function of
/// `(profiles, seed)`.
pub fn generate(profiles: &[CommunityProfile], seed: u64) -> Result<Corpus> {
    generate_with(profiles, &LexiconSet::builtin(), seed, "")
}

pub fn generate_with_lexicons(
    profiles: &[CommunityProfile],
    lexicons: &LexiconSet,
    seed: u64,
) -> Result<Corpus> {
    generate_with(profiles, lexicons, seed, "")
}

/// Entity pool of `profile` in a slice whose cumulative rotation is `cum`:
/// a window over the original pool followed by fresh entities, shifted by
/// `round(cum * m)` places.
pub fn rotated_entities(profile: &CommunityProfile, cum: f64) -> Vec<Weighted> {
    let m = profile.entities.len();
    let offset = (cum * m as f64).round() as usize;
    (offset..offset + m)
        .map(|j| {
            let weight = profile.entities[j % m].weight;
            if j < m {
                profile.entities[j].clone()
            } else {
                Weighted::new(fresh_entity(&profile.label, j - m), weight)
            }
        })
        .collect()
}

/// One corpus per drift slice. Article ids are prefixed with the slice label
/// and timestamps fall inside the slice.
pub fn generate_drift(
    profiles: &[CommunityProfile],
    drift: &DriftSpec,
    seed: u64,
) -> Result<Vec<(String, Corpus)>> {
    drift.validate()?;
    let lexicons = LexiconSet::builtin();
    let mut cum = 0.0;
    let mut out = Vec::new();
    for (k, slice) in drift.slices.iter().enumerate() {
        if k > 0 {
            cum += slice.entity_rotation;
        }
        for o in &slice.overrides {
            if !profiles.iter().any(|p| p.label == o.community) {
                return Err(Error::Config(format!(
                    "slice {:?} overrides unknown community {:?}",
                    slice.label, o.community
                )));
            }
        }
        let sliced: Vec<CommunityProfile> = profiles
            .iter()
            .map(|p| {
                let mut q = p.clone();
                q.entities = rotated_entities(p, cum);
                q.time_range = (slice.start, slice.end);
                for o in slice.overrides.iter().filter(|o| o.community == p.label) {
                    if let Some(s) = &o.sources {
                        q.sources = s.clone();
                    }
                    if let Some(r) = &o.lexicon_rates {
                        q.lexicon_rates = r.clone();
                    }
                }
                q
            })
            .collect();
        let corpus = generate_with(
            &sliced,
            &lexicons,
            derive_seed(seed, k as u64),
            &format!("{}-", slice.label),
        )?;
        out.push((slice.label.clone(), corpus));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_entities_are_distinct_proper_names() {
        let names: BTreeSet<String> = (0..200).map(|k| fresh_entity("x", k)).collect();
        assert_eq!(names.len(), 200);
        for n in &names {
            assert!(n.split(' ').all(|w| w.chars().next().unwrap().is_uppercase()));
        }
        assert_ne!(fresh_entity("x", 0), fresh_entity("y", 0));
    }

    #[test]
    fn rotation_window() {
        let p = CommunityProfile::new("c", 1, &["s"], &["A", "B", "C", "D"]);
        let names = |cum| -> Vec<String> { rotated_entities(&p, cum).into_iter().map(|w| w.name).collect() };
        assert_eq!(names(0.0), ["A", "B", "C", "D"]);
        assert_eq!(names(0.5)[..2], ["C", "D"]);
        assert!(names(1.0).iter().all(|n| !["A", "B", "C", "D"].contains(&n.as_str())));
    }

    #[test]
    fn base_vocabulary_avoids_lexicons() {
        let lex = LexiconSet::builtin();
        let vocab = base_vocabulary(&lex);
        assert!(vocab.len() > 100);
        assert!(vocab.iter().all(|w| !lex.hedges.contains(w) && !lex.valence.contains(w)));
    }
}
