//! The seven feature groups, laid out as one fixed 98-wide vector per article.
//!
//! | group        | span      | width |
//! |--------------|-----------|-------|
//! | style        | [0, 45)   | 45    |
//! | complexity   | [45, 52)  | 7     |
//! | bias         | [52, 63)  | 11    |
//! | entity       | [63, 64)  | 1     |
//! | sentiment    | [64, 80)  | 16    |
//! | entity_slant | [80, 97)  | 17    |
//! | source       | [97, 98)  | 1     |
//!
//! Style is 22 features for the title, 22 for the body, then the body-only
//! quoted-token proportion. Complexity is 5 body features then 2 title
//! features; bias is 7 body then 4 title. Sentiment is 8 per field, title
//! first. Entity slant repeats the sentiment block followed by the entity id.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Article, Corpus};
use crate::error::{Error, Result};
use crate::textproc::{
    self, count_syllables, pos_tag_aligned, tokenize, EntityResources, PosTag, TaggerLexicon, Token,
};

pub const NUM_FEATURES: usize = 98;
pub const SCHEMA_VERSION: u32 = 1;

pub const STYLE_FIELD_WIDTH: usize = 22;
pub const SENTIMENT_FIELD_WIDTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    Style,
    Complexity,
    Bias,
    Entity,
    Sentiment,
    EntitySlant,
    Source,
}

impl FeatureGroup {
    /// Schema order.
    pub const ALL: [FeatureGroup; 7] = [
        FeatureGroup::Style,
        FeatureGroup::Complexity,
        FeatureGroup::Bias,
        FeatureGroup::Entity,
        FeatureGroup::Sentiment,
        FeatureGroup::EntitySlant,
        FeatureGroup::Source,
    ];

    pub const fn width(self) -> usize {
        match self {
            FeatureGroup::Style => 45,
            FeatureGroup::Complexity => 7,
            FeatureGroup::Bias => 11,
            FeatureGroup::Entity => 1,
            FeatureGroup::Sentiment => 16,
            FeatureGroup::EntitySlant => 17,
            FeatureGroup::Source => 1,
        }
    }

    pub const fn offset(self) -> usize {
        let mut off = 0;
        let mut i = 0;
        while i < self as usize {
            off += FeatureGroup::ALL[i].width();
            i += 1;
        }
        off
    }

    pub fn span(self) -> Range<usize> {
        self.offset()..self.offset() + self.width()
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureGroup::Style => "style",
            FeatureGroup::Complexity => "complexity",
            FeatureGroup::Bias => "bias",
            FeatureGroup::Entity => "entity",
            FeatureGroup::Sentiment => "sentiment",
            FeatureGroup::EntitySlant => "entity_slant",
            FeatureGroup::Source => "source",
        }
    }

    /// Groups whose values depend on fitted encoders.
    pub fn needs_encoders(self) -> bool {
        matches!(
            self,
            FeatureGroup::Entity | FeatureGroup::EntitySlant | FeatureGroup::Source
        )
    }
}

const _: () = {
    let mut total = 0;
    let mut i = 0;
    while i < FeatureGroup::ALL.len() {
        total += FeatureGroup::ALL[i].width();
        i += 1;
    }
    assert!(total == NUM_FEATURES);
    assert!(FeatureGroup::Source.offset() == 97);
};

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().replace('-', "_");
        FeatureGroup::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown feature group {s:?}; valid groups: {}",
                    valid_group_names()
                ))
            })
    }
}

pub fn valid_group_names() -> String {
    FeatureGroup::ALL.map(FeatureGroup::name).join(", ")
}

/// A set of feature groups, iterated in schema order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct GroupSet(u8);

impl GroupSet {
    pub fn all() -> Self {
        GroupSet((1 << FeatureGroup::ALL.len()) - 1)
    }

    pub fn single(g: FeatureGroup) -> Self {
        GroupSet(1 << g as u8)
    }

    pub fn insert(&mut self, g: FeatureGroup) {
        self.0 |= 1 << g as u8;
    }

    pub fn contains(self, g: FeatureGroup) -> bool {
        self.0 & (1 << g as u8) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = FeatureGroup> {
        FeatureGroup::ALL.into_iter().filter(move |&g| self.contains(g))
    }

    pub fn needs_encoders(self) -> bool {
        self.iter().any(FeatureGroup::needs_encoders)
    }

    /// Feature indices covered by the selected groups, ascending.
    pub fn indices(self) -> Vec<usize> {
        self.iter().flat_map(FeatureGroup::span).collect()
    }

    pub fn names(self) -> Vec<&'static str> {
        self.iter().map(FeatureGroup::name).collect()
    }
}

impl FromIterator<FeatureGroup> for GroupSet {
    fn from_iter<I: IntoIterator<Item = FeatureGroup>>(iter: I) -> Self {
        let mut set = GroupSet::default();
        for g in iter {
            set.insert(g);
        }
        set
    }
}

impl fmt::Display for GroupSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.names().join("+"))
    }
}

impl FromStr for GroupSet {
    type Err = Error;

    /// Comma- or plus-separated group names, or `all`.
    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "all" {
            return Ok(GroupSet::all());
        }
        let set = s
            .split([',', '+'])
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<GroupSet>>()?;
        if set.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no feature groups given; valid groups: {}",
                valid_group_names()
            )));
        }
        Ok(set)
    }
}

impl Serialize for GroupSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for GroupSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(Vec::<FeatureGroup>::deserialize(d)?.into_iter().collect())
    }
}

/// A named word list. Unweighted entries carry weight 1.0; entries may be
/// multi-word phrases.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    pub name: String,
    entries: HashMap<String, f64>,
    max_words: usize,
}

impl Lexicon {
    pub fn from_entries<I, S>(name: &str, entries: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: AsRef<str>,
    {
        let entries: HashMap<String, f64> = entries
            .into_iter()
            .map(|(t, w)| (normalize_term(t.as_ref()), w))
            .collect();
        let max_words = entries
            .keys()
            .map(|k| k.split(' ').count())
            .max()
            .unwrap_or(1);
        Lexicon {
            name: name.to_string(),
            entries,
            max_words,
        }
    }

    /// Parses `term` or `term<TAB>weight` lines. Later duplicates win.
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let mut entries: Vec<(String, f64)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let (term, weight) = match line.split_once('\t') {
                Some((t, w)) => {
                    let w: f64 = w.trim().parse().map_err(|_| Error::Parse {
                        line: i + 1,
                        message: format!("lexicon {name}: unparseable weight {w:?}"),
                    })?;
                    if !w.is_finite() {
                        return Err(Error::Parse {
                            line: i + 1,
                            message: format!("lexicon {name}: weight must be finite"),
                        });
                    }
                    (t, w)
                }
                None => (line, 1.0),
            };
            entries.push((term.to_string(), weight));
        }
        if entries.is_empty() {
            return Err(Error::InvalidArgument(format!("lexicon {name} is empty")));
        }
        Ok(Lexicon::from_entries(name, entries))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn weight(&self, term: &str) -> Option<f64> {
        self.entries.get(term).copied()
    }

    pub fn contains(&self, term: &str) -> bool {
        self.entries.contains_key(term)
    }

    /// Entries in sorted order.
    pub fn terms(&self) -> impl Iterator<Item = &str> {
        let mut terms: Vec<&str> = self.entries.keys().map(String::as_str).collect();
        terms.sort_unstable();
        terms.into_iter()
    }

    /// Number of positions in `words` (lowercased) where an entry starts.
    pub fn count_hits(&self, words: &[&str]) -> usize {
        if self.max_words == 1 {
            return words.iter().filter(|w| self.entries.contains_key(**w)).count();
        }
        let mut hits = 0;
        let mut phrase = String::new();
        for i in 0..words.len() {
            let longest = self.max_words.min(words.len() - i);
            let matched = (1..=longest).any(|n| {
                phrase.clear();
                for (k, w) in words[i..i + n].iter().enumerate() {
                    if k > 0 {
                        phrase.push(' ');
                    }
                    phrase.push_str(w);
                }
                self.entries.contains_key(phrase.as_str())
            });
            if matched {
                hits += 1;
            }
        }
        hits
    }
}

fn normalize_term(t: &str) -> String {
    t.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Loads one lexicon file.
pub fn load_lexicon(path: &Path, name: &str) -> Result<Lexicon> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Lexicon::parse(name, &text)
}

macro_rules! lexicon_set {
    ($($field:ident => $file:literal),* $(,)?) => {
        /// Every word list the extractor uses, one file each.
        #[derive(Debug, Clone)]
        pub struct LexiconSet {
            $(pub $field: Lexicon,)*
        }

        impl LexiconSet {
            pub const FILES: &'static [&'static str] = &[$($file),*];

            pub fn builtin() -> Self {
                LexiconSet {
                    $($field: Lexicon::parse(
                        stringify!($field),
                        include_str!(concat!("../resources/lexicons/", $file)),
                    )
                    .expect("builtin lexicon is well formed"),)*
                }
            }

            /// Loads every list from `dir` (see [`LexiconSet::FILES`]).
            pub fn load_dir(dir: &Path) -> Result<Self> {
                Ok(LexiconSet {
                    $($field: load_lexicon(&dir.join($file), stringify!($field))?,)*
                })
            }
        }
    };
}

lexicon_set! {
    bias => "bias.txt",
    hedges => "hedges.txt",
    factives => "factives.txt",
    implicatives => "implicatives.txt",
    certainty => "certainty.txt",
    tentative => "tentative.txt",
    quantifiers => "quantifiers.txt",
    swear => "swear.txt",
    assent => "assent.txt",
    anger => "anger.txt",
    valence => "valence.tsv",
    strong_subj => "strong_subj.txt",
    weak_subj => "weak_subj.txt",
    stopwords => "stopwords.txt",
}

impl LexiconSet {
    /// Lexicons addressable by name, e.g. from synthetic profiles.
    pub fn by_name(&self, name: &str) -> Option<&Lexicon> {
        Some(match name {
            "bias" => &self.bias,
            "hedges" => &self.hedges,
            "factives" => &self.factives,
            "implicatives" => &self.implicatives,
            "certainty" => &self.certainty,
            "tentative" => &self.tentative,
            "quantifiers" => &self.quantifiers,
            "swear" => &self.swear,
            "assent" => &self.assent,
            "anger" => &self.anger,
            "valence" => &self.valence,
            "strong_subj" => &self.strong_subj,
            "weak_subj" => &self.weak_subj,
            "stopwords" => &self.stopwords,
            _ => return None,
        })
    }

    pub fn all(&self) -> [&Lexicon; 14] {
        [
            &self.bias,
            &self.hedges,
            &self.factives,
            &self.implicatives,
            &self.certainty,
            &self.tentative,
            &self.quantifiers,
            &self.swear,
            &self.assent,
            &self.anger,
            &self.valence,
            &self.strong_subj,
            &self.weak_subj,
            &self.stopwords,
        ]
    }
}

/// String-to-id table. Ids start at 1 in sorted key order; 0 means unknown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEncoder {
    pub name: String,
    pub table: BTreeMap<String, u32>,
    pub next_id: u32,
}

impl LabelEncoder {
    pub fn fit<I, S>(name: &str, keys: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let sorted: std::collections::BTreeSet<String> = keys.into_iter().map(Into::into).collect();
        let table: BTreeMap<String, u32> = sorted
            .into_iter()
            .enumerate()
            .map(|(i, k)| (k, i as u32 + 1))
            .collect();
        let next_id = table.len() as u32 + 1;
        LabelEncoder {
            name: name.to_string(),
            table,
            next_id,
        }
    }

    pub fn encode(&self, key: &str) -> u32 {
        self.table.get(key).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

/// Source and entity encoders, fitted together on training data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encoders {
    pub source: LabelEncoder,
    pub entity: LabelEncoder,
}

impl Encoders {
    pub fn fit<'a>(
        sources: impl IntoIterator<Item = &'a str>,
        entities: impl IntoIterator<Item = &'a str>,
    ) -> Self {
        Encoders {
            source: LabelEncoder::fit("source", sources),
            entity: LabelEncoder::fit("entity", entities),
        }
    }
}

/// One article's feature values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub schema_version: u32,
    pub groups: GroupSet,
}

impl FeatureVector {
    pub fn group(&self, g: FeatureGroup) -> &[f64] {
        &self.values[g.span()]
    }
}

/// Encoder-independent feature values of one article plus its most frequent
/// entity. Encoded slots are left at zero until [`FeatureExtractor::assemble`].
#[derive(Debug, Clone, PartialEq)]
pub struct ArticleAnalysis {
    pub values: [f64; NUM_FEATURES],
    pub entity: Option<String>,
    pub source: String,
}

struct Field<'a> {
    tokens: Vec<Token>,
    text: &'a str,
}

impl<'a> Field<'a> {
    fn new(text: &'a str) -> Self {
        Field {
            tokens: tokenize(text),
            text,
        }
    }

    fn words(&self) -> Vec<&Token> {
        self.tokens.iter().filter(|t| !t.is_punct()).collect()
    }

    fn word_lowers(&self) -> Vec<&str> {
        self.words().into_iter().map(|t| t.lower.as_str()).collect()
    }

    fn alpha_words(&self) -> Vec<&Token> {
        self.tokens.iter().filter(|t| t.is_alpha).collect()
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn mean_word_length(words: &[&Token]) -> f64 {
    let chars: usize = words.iter().map(|t| t.text.chars().count()).sum();
    ratio(chars as f64, words.len() as f64)
}

const FUTURE_MODALS: [&str; 2] = ["will", "shall"];
const OPEN_QUOTES: [&str; 1] = ["“"];
const CLOSE_QUOTES: [&str; 1] = ["”"];

/// Lexicons, tagger tables and gazetteer needed to featurize articles.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    pub lexicons: LexiconSet,
    pub tagger: TaggerLexicon,
    pub entities: EntityResources,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::builtin()
    }
}

impl FeatureExtractor {
    pub fn new(lexicons: LexiconSet, tagger: TaggerLexicon, entities: EntityResources) -> Self {
        FeatureExtractor {
            lexicons,
            tagger,
            entities,
        }
    }

    /// Shipped lexicons, tagger tables and gazetteer.
    pub fn builtin() -> Self {
        let lexicons = LexiconSet::builtin();
        let stop: Vec<String> = lexicons.stopwords.terms().map(str::to_string).collect();
        FeatureExtractor {
            entities: EntityResources::builtin(stop),
            tagger: TaggerLexicon::builtin(),
            lexicons,
        }
    }

    /// Lexicons from `lexicon_dir`, optional gazetteer file, builtin tagger.
    pub fn load(lexicon_dir: Option<&Path>, gazetteer: Option<&Path>) -> Result<Self> {
        let lexicons = match lexicon_dir {
            Some(d) => LexiconSet::load_dir(d)?,
            None => LexiconSet::builtin(),
        };
        let stop: Vec<String> = lexicons.stopwords.terms().map(str::to_string).collect();
        let entities = match gazetteer {
            Some(p) => EntityResources::load_gazetteer(p, stop)?,
            None => EntityResources::builtin(stop),
        };
        Ok(FeatureExtractor {
            lexicons,
            tagger: TaggerLexicon::builtin(),
            entities,
        })
    }

    fn style_field(&self, f: &Field) -> [f64; STYLE_FIELD_WIDTH] {
        let mut out = [0.0; STYLE_FIELD_WIDTH];
        let tags = pos_tag_aligned(&f.tokens, &self.tagger);
        let words: Vec<(&Token, PosTag)> = f
            .tokens
            .iter()
            .zip(&tags)
            .filter_map(|(t, tag)| tag.map(|tag| (t, tag)))
            .collect();
        let n = words.len() as f64;
        for (_, tag) in &words {
            out[tag.index()] += 1.0;
        }
        for v in &mut out[..12] {
            *v = ratio(*v, n);
        }
        let count_chars = |set: &[char]| f.text.chars().filter(|c| set.contains(c)).count() as f64;
        out[12] = count_chars(&['!']);
        out[13] = count_chars(&['?']);
        out[14] = count_chars(&['"', '“', '”']);
        out[15] = count_chars(&[',']);
        out[16] = f.tokens.iter().filter(|t| t.is_all_caps).count() as f64;

        let (mut past, mut present, mut future) = (0.0, 0.0, 0.0);
        for (i, (tok, tag)) in words.iter().enumerate() {
            if *tag != PosTag::Verb {
                continue;
            }
            let is_modal = FUTURE_MODALS.contains(&tok.lower.as_str());
            if is_modal && words.get(i + 1).is_some_and(|(_, t)| *t == PosTag::Verb) {
                continue;
            }
            let after_modal = i > 0 && FUTURE_MODALS.contains(&words[i - 1].0.lower.as_str());
            if after_modal {
                future += 1.0;
            } else if self.tagger.is_irregular_past(&tok.lower) || tok.lower.ends_with("ed") {
                past += 1.0;
            } else {
                present += 1.0;
            }
        }
        let verbs = past + present + future;
        out[17] = ratio(past, verbs);
        out[18] = ratio(present, verbs);
        out[19] = ratio(future, verbs);

        let lowers: Vec<&str> = words.iter().map(|(t, _)| t.lower.as_str()).collect();
        out[20] = self.lexicons.quantifiers.count_hits(&lowers) as f64;
        out[21] = self.lexicons.swear.count_hits(&lowers) as f64;
        out
    }

    fn quoted_proportion(f: &Field) -> f64 {
        let mut inside = false;
        let (mut quoted, mut words) = (0usize, 0usize);
        for t in &f.tokens {
            match t.text.as_str() {
                "\"" => inside = !inside,
                s if OPEN_QUOTES.contains(&s) => inside = true,
                s if CLOSE_QUOTES.contains(&s) => inside = false,
                _ if t.is_punct() => {}
                _ => {
                    words += 1;
                    if inside {
                        quoted += 1;
                    }
                }
            }
        }
        ratio(quoted as f64, words as f64)
    }

    /// 45 style features: title block, body block, body quoted proportion.
    pub fn style_features(&self, title: &str, body: &str) -> [f64; 45] {
        let (t, b) = (Field::new(title), Field::new(body));
        self.style_from(&t, &b)
    }

    fn style_from(&self, t: &Field, b: &Field) -> [f64; 45] {
        let mut out = [0.0; 45];
        out[..22].copy_from_slice(&self.style_field(t));
        out[22..44].copy_from_slice(&self.style_field(b));
        out[44] = Self::quoted_proportion(b);
        out
    }

    /// 7 complexity features: body TTR, reading grade, stopword proportion,
    /// mean word length, word count; title mean word length, word count.
    pub fn complexity_features(&self, title: &str, body: &str) -> [f64; 7] {
        self.complexity_from(&Field::new(title), &Field::new(body))
    }

    fn complexity_from(&self, t: &Field, b: &Field) -> [f64; 7] {
        let words = b.alpha_words();
        let n = words.len() as f64;
        let distinct: HashSet<&str> = words.iter().map(|t| t.lower.as_str()).collect();
        let sentences = textproc::split_sentences(b.text).len() as f64;
        let syllables: usize = words.iter().map(|t| count_syllables(&t.text)).sum();
        let grade = if n == 0.0 || sentences == 0.0 {
            0.0
        } else {
            0.39 * (n / sentences) + 11.8 * (syllables as f64 / n) - 15.59
        };
        let stops = words
            .iter()
            .filter(|t| self.lexicons.stopwords.contains(&t.lower))
            .count() as f64;
        let title_words = t.alpha_words();
        [
            ratio(distinct.len() as f64, n),
            grade,
            ratio(stops, n),
            mean_word_length(&words),
            n,
            mean_word_length(&title_words),
            title_words.len() as f64,
        ]
    }

    fn proportion(lex: &Lexicon, words: &[&str]) -> f64 {
        ratio(lex.count_hits(words) as f64, words.len() as f64)
    }

    fn subjectivity(&self, words: &[&str]) -> f64 {
        let hits = self.lexicons.strong_subj.count_hits(words) + self.lexicons.weak_subj.count_hits(words);
        ratio(hits as f64, words.len() as f64).min(1.0)
    }

    /// 11 bias features: 7 for the body, 4 for the title.
    pub fn bias_features(&self, title: &str, body: &str) -> [f64; 11] {
        self.bias_from(&Field::new(title), &Field::new(body))
    }

    fn bias_from(&self, t: &Field, b: &Field) -> [f64; 11] {
        let lx = &self.lexicons;
        let bw = b.word_lowers();
        let tw = t.word_lowers();
        [
            Self::proportion(&lx.bias, &bw),
            Self::proportion(&lx.hedges, &bw),
            Self::proportion(&lx.factives, &bw),
            Self::proportion(&lx.implicatives, &bw),
            Self::proportion(&lx.certainty, &bw),
            Self::proportion(&lx.tentative, &bw),
            self.subjectivity(&bw),
            Self::proportion(&lx.bias, &tw),
            Self::proportion(&lx.hedges, &tw),
            Self::proportion(&lx.certainty, &tw),
            self.subjectivity(&tw),
        ]
    }

    fn sentiment_field(&self, f: &Field) -> [f64; SENTIMENT_FIELD_WIDTH] {
        let lx = &self.lexicons;
        let words = f.word_lowers();
        let n = words.len() as f64;
        let (mut pos, mut neg, mut neutral, mut sum) = (0.0, 0.0, 0.0, 0.0);
        for w in &words {
            match lx.valence.weight(w) {
                Some(v) => {
                    if v > 0.0 {
                        pos += 1.0;
                    } else if v < 0.0 {
                        neg += 1.0;
                    }
                    sum += v;
                }
                None => neutral += 1.0,
            }
        }
        let hits = n - neutral;
        [
            ratio(pos, n),
            ratio(neg, n),
            ratio(neutral, n),
            Self::proportion(&lx.anger, &words),
            Self::proportion(&lx.assent, &words),
            Self::proportion(&lx.strong_subj, &words),
            Self::proportion(&lx.weak_subj, &words),
            ratio(sum, hits),
        ]
    }

    /// 16 sentiment features: 8 for the title, then 8 for the body.
    pub fn sentiment_features(&self, title: &str, body: &str) -> [f64; 16] {
        self.sentiment_from(&Field::new(title), &Field::new(body))
    }

    fn sentiment_from(&self, t: &Field, b: &Field) -> [f64; 16] {
        let mut out = [0.0; 16];
        out[..8].copy_from_slice(&self.sentiment_field(t));
        out[8..].copy_from_slice(&self.sentiment_field(b));
        out
    }

    /// Most frequent entity over title and body together.
    pub fn article_entity(&self, title: &str, body: &str) -> Option<String> {
        textproc::extract_entities_multi(&[title, body], &self.entities)
            .into_iter()
            .next()
            .map(|m| m.surface)
    }

    pub fn entity_feature(&self, article: &Article, enc: &LabelEncoder) -> f64 {
        self.article_entity(&article.title, &article.body)
            .map_or(0.0, |e| enc.encode(&e) as f64)
    }

    /// Sentiment block followed by the entity id.
    pub fn entity_slant_features(&self, title: &str, body: &str, enc: &LabelEncoder) -> [f64; 17] {
        let mut out = [0.0; 17];
        out[..16].copy_from_slice(&self.sentiment_features(title, body));
        out[16] = self
            .article_entity(title, body)
            .map_or(0.0, |e| enc.encode(&e) as f64);
        out
    }

    pub fn source_feature(&self, article: &Article, enc: &LabelEncoder) -> f64 {
        enc.encode(&article.source) as f64
    }

    /// Everything that does not depend on fitted encoders.
    pub fn analyze(&self, article: &Article) -> ArticleAnalysis {
        let t = Field::new(&article.title);
        let b = Field::new(&article.body);
        let mut values = [0.0; NUM_FEATURES];
        values[FeatureGroup::Style.span()].copy_from_slice(&self.style_from(&t, &b));
        values[FeatureGroup::Complexity.span()].copy_from_slice(&self.complexity_from(&t, &b));
        values[FeatureGroup::Bias.span()].copy_from_slice(&self.bias_from(&t, &b));
        let sentiment = self.sentiment_from(&t, &b);
        values[FeatureGroup::Sentiment.span()].copy_from_slice(&sentiment);
        let slant = FeatureGroup::EntitySlant.offset();
        values[slant..slant + 16].copy_from_slice(&sentiment);
        ArticleAnalysis {
            values,
            entity: self.article_entity(&article.title, &article.body),
            source: article.source.clone(),
        }
    }

    /// Fills encoder-dependent slots and zeroes unselected groups.
    pub fn assemble(
        &self,
        analysis: &ArticleAnalysis,
        groups: GroupSet,
        encoders: Option<&Encoders>,
    ) -> Result<FeatureVector> {
        assemble(analysis, groups, encoders)
    }

    pub fn extract(
        &self,
        article: &Article,
        groups: GroupSet,
        encoders: Option<&Encoders>,
    ) -> Result<FeatureVector> {
        assemble(&self.analyze(article), groups, encoders)
    }

    /// Fits source and entity encoders on a training corpus.
    pub fn fit_encoders(&self, train: &Corpus) -> Result<Encoders> {
        if train.is_empty() {
            return Err(Error::InsufficientData(
                "cannot fit encoders on an empty corpus".into(),
            ));
        }
        let entities: Vec<String> = train
            .articles()
            .iter()
            .filter_map(|a| self.article_entity(&a.title, &a.body))
            .collect();
        Ok(Encoders::fit(
            train.articles().iter().map(|a| a.source.as_str()),
            entities.iter().map(String::as_str),
        ))
    }
}

/// Encoders from precomputed analyses (see [`FeatureExtractor::analyze`]).
pub fn fit_encoders_from(analyses: &[&ArticleAnalysis]) -> Result<Encoders> {
    if analyses.is_empty() {
        return Err(Error::InsufficientData(
            "cannot fit encoders on an empty corpus".into(),
        ));
    }
    Ok(Encoders::fit(
        analyses.iter().map(|a| a.source.as_str()),
        analyses.iter().filter_map(|a| a.entity.as_deref()),
    ))
}

pub fn assemble(
    analysis: &ArticleAnalysis,
    groups: GroupSet,
    encoders: Option<&Encoders>,
) -> Result<FeatureVector> {
    let mut values = analysis.values;
    if groups.needs_encoders() {
        let enc = encoders.ok_or_else(|| {
            Error::InvalidArgument(format!(
                "feature groups {groups} need fitted source/entity encoders"
            ))
        })?;
        let entity_id = analysis
            .entity
            .as_deref()
            .map_or(0.0, |e| enc.entity.encode(e) as f64);
        values[FeatureGroup::Entity.offset()] = entity_id;
        values[FeatureGroup::EntitySlant.offset() + 16] = entity_id;
        values[FeatureGroup::Source.offset()] = enc.source.encode(&analysis.source) as f64;
    }
    for g in FeatureGroup::ALL {
        if !groups.contains(g) {
            values[g.span()].fill(0.0);
        }
    }
    Ok(FeatureVector {
        values: values.to_vec(),
        schema_version: SCHEMA_VERSION,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ex() -> FeatureExtractor {
        FeatureExtractor::builtin()
    }

    fn article(title: &str, body: &str, source: &str) -> Article {
        Article {
            id: "a".into(),
            title: title.into(),
            body: body.into(),
            source: source.into(),
            url: "https://x.com/a".into(),
            community: "c".into(),
            timestamp: 1,
            score: 1,
            num_comments: 0,
        }
    }

    #[test]
    fn schema_widths() {
        let widths: Vec<usize> = FeatureGroup::ALL.iter().map(|g| g.width()).collect();
        assert_eq!(widths, [45, 7, 11, 1, 16, 17, 1]);
        assert_eq!(FeatureGroup::EntitySlant.span(), 80..97);
        assert_eq!(GroupSet::all().indices(), (0..98).collect::<Vec<_>>());
    }

    #[test]
    fn group_parsing() {
        let g: GroupSet = "style,entity-slant".parse().unwrap();
        assert_eq!(g.names(), ["style", "entity_slant"]);
        let err = "style,vibes".parse::<GroupSet>().unwrap_err().to_string();
        assert!(err.contains("valid groups: style, complexity"), "{err}");
        assert_eq!("all".parse::<GroupSet>().unwrap(), GroupSet::all());
        let json = serde_json::to_string(&g).unwrap();
        assert_eq!(json, r#"["style","entity_slant"]"#);
        assert_eq!(serde_json::from_str::<GroupSet>(&json).unwrap(), g);
    }

    #[test]
    fn lexicon_parsing() {
        let l = Lexicon::parse("v", "good\t1.9\nbad\t-2.5").unwrap();
        assert_eq!(l.len(), 2);
        assert_eq!(l.weight("bad"), Some(-2.5));
        let l = Lexicon::parse("h", "maybe\nPossibly").unwrap();
        assert_eq!(l.weight("possibly"), Some(1.0));
        let l = Lexicon::parse("d", "good\t1.0\ngood\t2.0").unwrap();
        assert_eq!(l.weight("good"), Some(2.0));
        let err = Lexicon::parse("x", "ok\t1\nbad\tnope").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(Lexicon::parse("x", "\n\n").is_err());
    }

    #[test]
    fn load_lexicon_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.tsv");
        std::fs::write(&p, "good\t1.9\nbad\t-2.5\n").unwrap();
        assert_eq!(load_lexicon(&p, "valence").unwrap().len(), 2);
        assert!(load_lexicon(&dir.path().join("missing"), "x").is_err());
    }

    #[test]
    fn phrase_hits() {
        let l = Lexicon::parse("imp", "failed to\nmanage to").unwrap();
        let words = ["they", "failed", "to", "manage", "to", "comply"];
        assert_eq!(l.count_hits(&words), 2);
    }

    #[test]
    fn style_empty_and_examples() {
        let e = ex();
        assert!(e.style_features("", "").iter().all(|&v| v == 0.0));
        let s = e.style_features("", "Run!");
        assert_eq!(s[22 + 12], 1.0);
        assert_eq!(s[22 + PosTag::Verb.index()], 1.0);
        let s = e.style_features("", "\"He lied,\" she said.");
        assert_eq!(s[44], 0.5);
        assert_eq!(s[22 + 14], 2.0);
        assert_eq!(s[22 + 15], 1.0);
    }

    #[test]
    fn style_tense_and_counts() {
        let e = ex();
        let s = e.style_features("NASA WILL fly", "They will go. She walked. He runs.");
        // body verbs: go (future), walked (past), runs (present)
        assert_eq!(&s[22 + 17..22 + 20], &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(s[16], 2.0);
        let s = e.style_features("", "many damn people");
        assert_eq!((s[22 + 20], s[22 + 21]), (1.0, 1.0));
    }

    #[test]
    fn complexity_examples() {
        let e = ex();
        assert!(e.complexity_features("", "").iter().all(|&v| v == 0.0));
        let c = e.complexity_features("", "alpha beta gamma delta");
        assert_eq!(c[0], 1.0);
        let c = e.complexity_features("Two words", "The cat sat.");
        assert!((c[1] - (-2.62)).abs() < 1e-12, "{}", c[1]);
        assert!((c[2] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(c[3], 3.0);
        assert_eq!(c[4], 3.0);
        assert_eq!(c[5], 4.0);
        assert_eq!(c[6], 2.0);
    }

    #[test]
    fn bias_examples() {
        let e = ex();
        assert!(e.bias_features("", "").iter().all(|&v| v == 0.0));
        let b = e.bias_features("", "maybe possibly perhaps");
        assert_eq!(b[1], 1.0);
        let b = e.bias_features("", "they failed to manage to comply");
        assert!((b[3] - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn sentiment_examples() {
        let mut e = ex();
        e.lexicons.valence = Lexicon::parse("valence", "good\t2\nbad\t-1").unwrap();
        let s = e.sentiment_features("", "good good bad");
        assert!((s[8] - 2.0 / 3.0).abs() < 1e-12);
        assert!((s[9] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(s[10], 0.0);
        assert_eq!(s[15], 1.0);
        let s = e.sentiment_features("zzz qqq", "");
        assert_eq!(&s[..8], &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(s[8..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoders_and_lookup_features() {
        let e = ex();
        let enc = LabelEncoder::fit("source", ["b.com", "a.com"]);
        assert_eq!(enc.encode("a.com"), 1);
        assert_eq!(enc.encode("b.com"), 2);
        assert_eq!(enc.next_id, 3);
        let src = LabelEncoder {
            name: "source".into(),
            table: [("x.com".to_string(), 3)].into(),
            next_id: 4,
        };
        assert_eq!(e.source_feature(&article("", "", "x.com"), &src), 3.0);
        assert_eq!(e.source_feature(&article("", "", "y.com"), &src), 0.0);

        let ent = LabelEncoder {
            name: "entity".into(),
            table: [("Isis".to_string(), 7)].into(),
            next_id: 8,
        };
        let a = article("", "They said ISIS attacked. ISIS retreated.", "x.com");
        assert_eq!(e.entity_feature(&a, &ent), 7.0);
        assert_eq!(e.entity_feature(&article("", "the cat", "x.com"), &ent), 0.0);
        let b = article("", "we met Novel Corp today", "x.com");
        assert_eq!(e.entity_feature(&b, &ent), 0.0);
    }

    #[test]
    fn fit_encoders_sorted_and_deterministic() {
        let e = ex();
        let mut a1 = article("", "talks with Alpha Group", "b.com");
        a1.id = "1".into();
        let mut a2 = article("", "talks with Beta Group", "a.com");
        a2.id = "2".into();
        let mut a3 = article("", "talks with Gamma Group", "a.com");
        a3.id = "3".into();
        let c = Corpus::new(vec![a1, a2, a3]).unwrap();
        let enc = e.fit_encoders(&c).unwrap();
        assert_eq!(enc.source.encode("a.com"), 1);
        assert_eq!(enc.source.encode("b.com"), 2);
        let ids: Vec<u32> = enc.entity.table.values().copied().collect();
        assert_eq!(ids, [1, 2, 3]);
        assert_eq!(e.fit_encoders(&c).unwrap(), enc);
        assert!(e.fit_encoders(&Corpus::default()).is_err());
        let json = serde_json::to_string(&enc.source).unwrap();
        assert!(json.contains("\"next_id\":3"));
    }

    #[test]
    fn slant_is_sentiment_plus_entity() {
        let e = ex();
        let a = article("Good news", "We love Acme Corp and Acme Corp loves us. It was bad.", "x.com");
        let enc = Encoders::fit(["x.com"], ["Acme Corp"]);
        let slant = e.entity_slant_features(&a.title, &a.body, &enc.entity);
        assert_eq!(&slant[..16], &e.sentiment_features(&a.title, &a.body));
        assert_eq!(slant[16], e.entity_feature(&a, &enc.entity));
        assert_eq!(slant[16], 1.0);
        assert!(e.entity_slant_features("", "", &enc.entity).iter().all(|&v| v == 0.0));

        let v = e.extract(&a, GroupSet::all(), Some(&enc)).unwrap();
        assert_eq!(v.group(FeatureGroup::EntitySlant)[..16], *v.group(FeatureGroup::Sentiment));
        assert_eq!(v.group(FeatureGroup::EntitySlant)[16], v.group(FeatureGroup::Entity)[0]);
    }

    #[test]
    fn extract_masks_groups() {
        let e = ex();
        let a = article("A title!", "Some body text, with WORDS. Maybe good.", "x.com");
        let v = e.extract(&a, GroupSet::single(FeatureGroup::Style), None).unwrap();
        assert_eq!(v.values.len(), NUM_FEATURES);
        assert!(v.values[45..].iter().all(|&x| x == 0.0));
        assert!(v.values[..45].iter().any(|&x| x != 0.0));
        assert!(e.extract(&a, GroupSet::all(), None).is_err());
        let enc = Encoders::fit(["x.com"], std::iter::empty());
        let full = e.extract(&a, GroupSet::all(), Some(&enc)).unwrap();
        assert!(full.values.iter().all(|x| x.is_finite()));
        assert_eq!(full, e.extract(&a, GroupSet::all(), Some(&enc)).unwrap());
        assert_eq!(full.values[97], 1.0);
    }

    const PROPORTION_INDICES: &[usize] = &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 17, 18, 19, 44];

    proptest! {
        #[test]
        fn features_finite_and_bounded(title in "[ a-zA-Z!?,.\"']{0,40}", body in "[ a-zA-Z0-9!?,.\"']{0,200}") {
            let e = ex();
            let a = article(&title, &body, "x.com");
            let enc = Encoders::fit(["x.com"], std::iter::empty());
            let v = e.extract(&a, GroupSet::all(), Some(&enc)).unwrap();
            prop_assert!(v.values.iter().all(|x| x.is_finite()));
            for &i in PROPORTION_INDICES {
                prop_assert!((0.0..=1.0).contains(&v.values[i]));
                if i < 22 {
                    prop_assert!((0.0..=1.0).contains(&v.values[i + 22]));
                }
            }
            for i in (52..63).chain(64..71).chain(72..79) {
                prop_assert!((0.0..=1.0).contains(&v.values[i]), "index {}", i);
            }
            prop_assert!(v.values.iter().enumerate().all(|(i, &x)| x >= 0.0 || i == 46 || i == 71 || i == 79 || i == 87 || i == 95));
        }

        #[test]
        fn bag_of_words_groups_ignore_order(words in proptest::collection::vec("(good|bad|maybe|fake|angry|yes|cat|dog|many|damn)", 1..30), seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let e = ex();
            let mut shuffled = words.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = words.join(" ");
            let b = shuffled.join(" ");
            prop_assert_eq!(e.bias_features("", &a), e.bias_features("", &b));
            let (xa, xb) = (e.sentiment_features("", &a), e.sentiment_features("", &b));
            prop_assert!(xa.iter().zip(&xb).all(|(p, q)| (p - q).abs() < 1e-12));
            let (sa, sb) = (e.style_features("", &a), e.style_features("", &b));
            prop_assert_eq!(&sa[22 + 12..22 + 17], &sb[22 + 12..22 + 17]);
            prop_assert_eq!(&sa[22 + 20..44], &sb[22 + 20..44]);
        }
    }
}
