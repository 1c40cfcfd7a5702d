//! Deterministic text primitives: tokenizer, sentence splitter, syllable
//! counter, rule-cascade POS tagger and capitalization-based entity extractor.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub lower: String,
    pub is_alpha: bool,
    pub is_all_caps: bool,
    /// Byte offsets into the tokenized text.
    pub char_span: (usize, usize),
}

impl Token {
    fn new(text: &str, start: usize) -> Token {
        let is_alpha = text.chars().any(char::is_alphabetic)
            && text
                .chars()
                .all(|c| c.is_alphabetic() || matches!(c, '\'' | '’' | '-'));
        let is_all_caps =
            text.chars().count() >= 2 && text.chars().all(|c| c.is_alphabetic() && c.is_uppercase());
        Token {
            text: text.to_string(),
            lower: text.to_lowercase(),
            is_alpha,
            is_all_caps,
            char_span: (start, start + text.len()),
        }
    }

    /// True when the token has no letters or digits.
    pub fn is_punct(&self) -> bool {
        !self.text.chars().any(char::is_alphanumeric)
    }
}

fn is_punct_char(c: char) -> bool {
    !c.is_alphanumeric()
}

// Dotted acronyms such as "U.S." keep their final period.
fn is_dotted_acronym(s: &str) -> bool {
    let chars: Vec<char> = s.chars().collect();
    chars.len() >= 4
        && chars.len() % 2 == 0
        && chars
            .chunks(2)
            .all(|p| p[0].is_alphabetic() && p[1] == '.')
}

/// Splits on whitespace, then peels leading and trailing punctuation into
/// single-character tokens. Internal punctuation stays inside the token.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut offset = 0;
    for chunk in text.split_whitespace() {
        let start = offset + text[offset..].find(chunk).unwrap_or(0);
        offset = start + chunk.len();
        push_chunk(chunk, start, &mut tokens);
    }
    tokens
}

fn push_chunk(chunk: &str, start: usize, out: &mut Vec<Token>) {
    let mut core_start = 0;
    for (i, c) in chunk.char_indices() {
        if !is_punct_char(c) {
            break;
        }
        out.push(Token::new(&chunk[i..i + c.len_utf8()], start + i));
        core_start = i + c.len_utf8();
    }
    if core_start == chunk.len() {
        return;
    }
    let mut core_end = chunk.len();
    let mut trailing = Vec::new();
    while let Some(c) = chunk[core_start..core_end].chars().next_back() {
        if !is_punct_char(c) || is_dotted_acronym(&chunk[core_start..core_end]) {
            break;
        }
        core_end -= c.len_utf8();
        trailing.push(core_end);
    }
    out.push(Token::new(&chunk[core_start..core_end], start + core_start));
    for &i in trailing.iter().rev() {
        let c = chunk[i..].chars().next().unwrap();
        out.push(Token::new(&chunk[i..i + c.len_utf8()], start + i));
    }
}

/// Joins token texts with single spaces.
pub fn detokenize(tokens: &[Token]) -> String {
    tokens
        .iter()
        .map(|t| t.text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

const ABBREVIATIONS: [&str; 10] = ["mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr", "gen", "sen"];

/// Sentence byte spans. A sentence ends at `.`, `!` or `?` followed by
/// whitespace and an uppercase letter, or by the end of the text. Periods
/// after a small set of title abbreviations ("Mr.") do not end a sentence.
pub fn split_sentences(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (k, &(i, c)) in chars.iter().enumerate() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let end = i + c.len_utf8();
        let rest = &chars[k + 1..];
        let boundary = match rest.first() {
            None => true,
            Some(&(_, n)) if n.is_whitespace() => rest
                .iter()
                .find(|(_, ch)| !ch.is_whitespace())
                .map_or(true, |&(_, ch)| ch.is_uppercase()),
            _ => false,
        };
        if boundary && !(c == '.' && ends_with_abbreviation(&text[start..i])) {
            push_span(text, start, end, &mut spans);
            start = end;
        }
    }
    push_span(text, start, text.len(), &mut spans);
    spans
}

fn ends_with_abbreviation(prefix: &str) -> bool {
    let word: String = prefix
        .chars()
        .rev()
        .take_while(|c| c.is_alphabetic())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    let before = prefix[..prefix.len() - word.len()].chars().next_back();
    !word.is_empty()
        && before.map_or(true, char::is_whitespace)
        && ABBREVIATIONS.contains(&word.to_lowercase().as_str())
}

fn push_span(text: &str, start: usize, end: usize, out: &mut Vec<(usize, usize)>) {
    let piece = &text[start..end];
    let lead = piece.len() - piece.trim_start().len();
    let trimmed = piece.trim();
    if !trimmed.is_empty() {
        out.push((start + lead, start + lead + trimmed.len()));
    }
}

/// Sentence texts, see [`split_sentences`].
pub fn sentences(text: &str) -> Vec<&str> {
    split_sentences(text)
        .into_iter()
        .map(|(s, e)| &text[s..e])
        .collect()
}

/// Maximal vowel groups (aeiouy) minus a terminal silent `e`, at least 1.
pub fn count_syllables(word: &str) -> usize {
    let letters: Vec<char> = word
        .chars()
        .filter(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    let is_vowel = |c: char| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y');
    let mut groups = 0;
    let mut prev_vowel = false;
    for &c in &letters {
        let v = is_vowel(c);
        if v && !prev_vowel {
            groups += 1;
        }
        prev_vowel = v;
    }
    let n = letters.len();
    if groups > 1 && n >= 2 && letters[n - 1] == 'e' && !is_vowel(letters[n - 2]) {
        groups -= 1;
    }
    groups.max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PosTag {
    Noun,
    Verb,
    Adj,
    Adv,
    Pron,
    Det,
    Adp,
    Conj,
    Num,
    Prt,
    Intj,
    X,
}

impl PosTag {
    pub const ALL: [PosTag; 12] = [
        PosTag::Noun,
        PosTag::Verb,
        PosTag::Adj,
        PosTag::Adv,
        PosTag::Pron,
        PosTag::Det,
        PosTag::Adp,
        PosTag::Conj,
        PosTag::Num,
        PosTag::Prt,
        PosTag::Intj,
        PosTag::X,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::Noun => "NOUN",
            PosTag::Verb => "VERB",
            PosTag::Adj => "ADJ",
            PosTag::Adv => "ADV",
            PosTag::Pron => "PRON",
            PosTag::Det => "DET",
            PosTag::Adp => "ADP",
            PosTag::Conj => "CONJ",
            PosTag::Num => "NUM",
            PosTag::Prt => "PRT",
            PosTag::Intj => "INTJ",
            PosTag::X => "X",
        }
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PosTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PosTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown POS tag {s:?}")))
    }
}

const BUILTIN_TAGGER_LEXICON: &str = include_str!("../resources/textproc/tagger_lexicon.tsv");
const BUILTIN_IRREGULAR_PAST: &str = include_str!("../resources/textproc/irregular_past.tsv");
const BUILTIN_GAZETTEER: &str = include_str!("../resources/textproc/gazetteer.txt");

fn parse_tag_table(text: &str, origin: &str) -> Result<HashMap<String, PosTag>> {
    let mut table = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (term, tag) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("{origin}: expected term<TAB>tag"),
        })?;
        let tag = tag.trim().parse().map_err(|_| Error::Parse {
            line: i + 1,
            message: format!("{origin}: unknown tag {tag:?}"),
        })?;
        table.insert(term.trim().to_lowercase(), tag);
    }
    Ok(table)
}

/// Word lists behind the tagger: a closed-class table (plus common verbs)
/// and the irregular past-tense forms.
#[derive(Debug, Clone)]
pub struct TaggerLexicon {
    closed: HashMap<String, PosTag>,
    irregular_past: HashSet<String>,
}

impl TaggerLexicon {
    pub fn from_tsv(closed: &str, irregular_past: &str) -> Result<Self> {
        let closed = parse_tag_table(closed, "closed-class lexicon")?;
        let irregular_past = parse_tag_table(irregular_past, "irregular verb list")?
            .into_keys()
            .collect();
        Ok(TaggerLexicon {
            closed,
            irregular_past,
        })
    }

    pub fn builtin() -> Self {
        Self::from_tsv(BUILTIN_TAGGER_LEXICON, BUILTIN_IRREGULAR_PAST)
            .expect("builtin tagger lexicon is well formed")
    }

    /// Loads `tagger_lexicon.tsv` and `irregular_past.tsv` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| Error::io(p, e))
        };
        Self::from_tsv(&read("tagger_lexicon.tsv")?, &read("irregular_past.tsv")?)
    }

    pub fn is_irregular_past(&self, lower: &str) -> bool {
        self.irregular_past.contains(lower)
    }

    fn lookup(&self, lower: &str) -> Option<PosTag> {
        if self.irregular_past.contains(lower) {
            return Some(PosTag::Verb);
        }
        self.closed.get(lower).copied()
    }
}

impl Default for TaggerLexicon {
    fn default() -> Self {
        Self::builtin()
    }
}

const SUFFIX_RULES: [(&str, PosTag); 12] = [
    ("ly", PosTag::Adv),
    ("ing", PosTag::Verb),
    ("ed", PosTag::Verb),
    ("ize", PosTag::Verb),
    ("ous", PosTag::Adj),
    ("ful", PosTag::Adj),
    ("able", PosTag::Adj),
    ("ive", PosTag::Adj),
    ("tion", PosTag::Noun),
    ("ness", PosTag::Noun),
    ("ment", PosTag::Noun),
    ("ity", PosTag::Noun),
];

fn is_numeric(text: &str) -> bool {
    text.chars().any(|c| c.is_ascii_digit())
        && text
            .chars()
            .all(|c| c.is_ascii_digit() || matches!(c, ',' | '.' | '%' | '$' | '-' | '/' | ':'))
}

fn tag_word(tok: &Token, lex: &TaggerLexicon) -> PosTag {
    if let Some(tag) = lex.lookup(&tok.lower) {
        return tag;
    }
    if is_numeric(&tok.text) {
        return PosTag::Num;
    }
    if tok
        .text
        .chars()
        .any(|c| !c.is_alphanumeric() && !matches!(c, '\'' | '’' | '-' | '.'))
    {
        return PosTag::X;
    }
    for (suffix, tag) in SUFFIX_RULES {
        if tok.lower.len() >= suffix.len() + 2 && tok.lower.ends_with(suffix) {
            return tag;
        }
    }
    // Capitalized mid-sentence words (proper nouns) and everything else.
    PosTag::Noun
}

/// One tag per token, `None` for punctuation tokens.
pub fn pos_tag_aligned(tokens: &[Token], lex: &TaggerLexicon) -> Vec<Option<PosTag>> {
    tokens
        .iter()
        .map(|t| (!t.is_punct()).then(|| tag_word(t, lex)))
        .collect()
}

/// Tags for the non-punctuation tokens, in order.
pub fn pos_tag(tokens: &[Token], lex: &TaggerLexicon) -> Vec<PosTag> {
    pos_tag_aligned(tokens, lex).into_iter().flatten().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub surface: String,
    pub count: usize,
}

/// Title-cases each word (first letter and letters after a period) and joins
/// with single spaces.
pub fn canonical_entity(words: &[&str]) -> String {
    words
        .iter()
        .map(|w| {
            let mut out = String::with_capacity(w.len());
            let mut upper_next = true;
            for c in w.chars() {
                if upper_next {
                    out.extend(c.to_uppercase());
                } else {
                    out.extend(c.to_lowercase());
                }
                upper_next = c == '.';
            }
            out
        })
        .collect::<Vec<_>>()
        .join(" ")
}

const MAX_ENTITY_WORDS: usize = 5;
const CONNECTORS: [&str; 2] = ["of", "the"];

/// Gazetteer plus the stopword list used to drop function-word runs.
#[derive(Debug, Clone)]
pub struct EntityResources {
    gazetteer: HashSet<String>,
    stopwords: HashSet<String>,
}

impl EntityResources {
    pub fn new(
        gazetteer: impl IntoIterator<Item = String>,
        stopwords: impl IntoIterator<Item = String>,
    ) -> Self {
        EntityResources {
            gazetteer: gazetteer
                .into_iter()
                .map(|g| g.trim().to_lowercase())
                .filter(|g| !g.is_empty())
                .collect(),
            stopwords: stopwords.into_iter().map(|s| s.to_lowercase()).collect(),
        }
    }

    /// Builtin gazetteer with the given stopwords.
    pub fn builtin(stopwords: impl IntoIterator<Item = String>) -> Self {
        Self::new(parse_gazetteer(BUILTIN_GAZETTEER), stopwords)
    }

    pub fn load_gazetteer(path: &Path, stopwords: impl IntoIterator<Item = String>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(parse_gazetteer(&text), stopwords))
    }

    pub fn in_gazetteer(&self, surface: &str) -> bool {
        self.gazetteer.contains(&surface.to_lowercase())
    }
}

fn parse_gazetteer(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect()
}

fn is_capitalized_word(t: &Token) -> bool {
    t.text.chars().next().is_some_and(char::is_uppercase)
        && t
            .text
            .chars()
            .all(|c| c.is_alphabetic() || matches!(c, '.' | '-' | '\'' | '’'))
}

struct Candidate {
    surface: String,
    initial: bool,
}

fn sentence_candidates(sentence: &str, res: &EntityResources, out: &mut Vec<Candidate>) {
    let tokens = tokenize(sentence);
    let first_word = tokens.iter().position(|t| !t.is_punct());
    let mut i = 0;
    while i < tokens.len() {
        if !is_capitalized_word(&tokens[i]) {
            i += 1;
            continue;
        }
        let start = i;
        let mut words = vec![i];
        let mut j = i + 1;
        while j < tokens.len() && words.len() < MAX_ENTITY_WORDS {
            if is_capitalized_word(&tokens[j]) {
                words.push(j);
                j += 1;
            } else if CONNECTORS.contains(&tokens[j].lower.as_str())
                && tokens.get(j + 1).is_some_and(is_capitalized_word)
            {
                j += 1;
            } else {
                break;
            }
        }
        i = j;

        let mut initial = Some(start) == first_word;
        let mut span_start = start;
        // A capitalized function word opening the sentence ("The", "He") is
        // not part of the entity.
        if initial && words.len() > 1 && res.stopwords.contains(&tokens[start].lower) {
            span_start = words[1];
            initial = false;
        }
        let span: Vec<&Token> = tokens[span_start..j].iter().collect();
        let caps = span.iter().filter(|t| is_capitalized_word(t)).count();
        let all_stop = span.iter().all(|t| res.stopwords.contains(&t.lower));
        if caps == 0 || all_stop {
            continue;
        }
        let words: Vec<&str> = span.iter().map(|t| t.text.as_str()).collect();
        out.push(Candidate {
            surface: canonical_entity(&words),
            initial,
        });
    }
}

/// Entity counts over several texts (e.g. title and body) treated as one
/// document, sorted by count descending then surface ascending.
pub fn extract_entities_multi(texts: &[&str], res: &EntityResources) -> Vec<EntityMention> {
    let mut candidates = Vec::new();
    for text in texts {
        for s in sentences(text) {
            sentence_candidates(s, res, &mut candidates);
        }
    }
    let seen_inside: HashSet<&str> = candidates
        .iter()
        .filter(|c| !c.initial)
        .map(|c| c.surface.as_str())
        .collect();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &candidates {
        if !c.initial || seen_inside.contains(c.surface.as_str()) || res.in_gazetteer(&c.surface) {
            *counts.entry(c.surface.as_str()).or_insert(0) += 1;
        }
    }
    let mut mentions: Vec<EntityMention> = counts
        .into_iter()
        .map(|(s, count)| EntityMention {
            surface: s.to_string(),
            count,
        })
        .collect();
    mentions.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.surface.cmp(&b.surface)));
    mentions
}

pub fn extract_entities(text: &str, res: &EntityResources) -> Vec<EntityMention> {
    extract_entities_multi(&[text], res)
}

pub fn most_frequent_entity(text: &str, res: &EntityResources) -> Option<EntityMention> {
    extract_entities(text, res).into_iter().next()
}
