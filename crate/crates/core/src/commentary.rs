//! Affect-aware fill-in-the-blank word prediction.
//!
//! A corpus is counted into bigram and trigram tables twice: once reading
//! left to right and once over every sentence reversed. A blank in a
//! sentence stem is then filled with the candidate maximizing
//!
//! ```text
//! z5·V(w)·A + z1·P←(w | w+2, w+1) + z2·P←(w | w+1)
//!           + z3·P→(w | w-2, w-1) + z4·P→(w | w-1)
//! ```
//!
//! where `P→`/`P←` are additively smoothed forward/reverse n-gram
//! probabilities, `V` is a word's valence and `A = ±1` picks encouraging or
//! discouraging completions.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::game::Condition;

/// Placeholder for a word to be filled in.
pub const BLANK: &str = "___";

/// Additive smoothing constant.
pub const ALPHA: f64 = 1.0;

pub const MODEL_VERSION: u32 = 1;

pub const BUNDLED_CORPUS: &str = include_str!("../assets/corpus.txt");
pub const BUNDLED_AFINN: &str = include_str!("../assets/afinn_sample.txt");
pub const BUNDLED_STEMS: &str = include_str!("../assets/stems.json");

#[derive(Debug, Error, PartialEq)]
pub enum CommentaryError {
    #[error("corpus contains no tokens")]
    EmptyCorpus,
    #[error("context length {0} not supported (expected 1 or 2)")]
    ContextLength(usize),
    #[error("no candidate words for this blank")]
    NoCandidates,
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("stem {id:?}: {message}")]
    InvalidStem { id: String, message: String },
    #[error("lexicon line {line}: {message}")]
    BadLexiconLine { line: usize, message: String },
    #[error("unsupported model version {0}")]
    ModelVersion(u32),
    #[error("malformed {what}: {message}")]
    Malformed { what: &'static str, message: String },
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

fn io_error(path: &Path, e: std::io::Error) -> CommentaryError {
    CommentaryError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// A token with no letters or digits.
pub fn is_punctuation(token: &str) -> bool {
    !token.chars().any(is_word_char)
}

fn ends_sentence(token: &str) -> bool {
    matches!(token, "." | "!" | "?")
}

/// Lowercases and splits one line into tokens. Punctuation characters
/// become standalone tokens; apostrophes and hyphens joining two word
/// characters stay inside the word ("don't", "well-played").
pub fn tokenize_line(line: &str) -> Vec<String> {
    let lower = line.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut tokens = Vec::new();
    let mut word = String::new();
    for (i, &c) in chars.iter().enumerate() {
        let joiner = (c == '\'' || c == '-')
            && i > 0
            && is_word_char(chars[i - 1])
            && chars.get(i + 1).is_some_and(|&n| is_word_char(n));
        if is_word_char(c) || joiner {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            tokens.push(c.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Splits text into sentences of tokens. A sentence ends after `.`, `!` or
/// `?`, and at every line break.
pub fn tokenize(text: &str) -> Vec<Vec<String>> {
    let mut sentences = Vec::new();
    for line in text.lines() {
        let mut current = Vec::new();
        for token in tokenize_line(line) {
            let end = ends_sentence(&token);
            current.push(token);
            if end {
                sentences.push(std::mem::take(&mut current));
            }
        }
        if !current.is_empty() {
            sentences.push(current);
        }
    }
    sentences.retain(|s| s.iter().any(|t| !is_punctuation(t)));
    sentences
}

/// Word valences on the integer scale −5..=5.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AffectLexicon {
    valence: BTreeMap<String, i32>,
}

impl AffectLexicon {
    /// Parses `word<TAB>integer` lines. Multi-word entries cannot match a
    /// single token and are skipped with a warning.
    pub fn parse(text: &str) -> Result<Self, CommentaryError> {
        let mut valence = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| CommentaryError::BadLexiconLine {
                line: i + 1,
                message,
            };
            let (word, score) = line
                .rsplit_once('\t')
                .ok_or_else(|| bad("expected word<TAB>integer".into()))?;
            let score: i32 = score
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad valence {score:?}")))?;
            if !(-5..=5).contains(&score) {
                return Err(bad(format!("valence {score} outside [-5, 5]")));
            }
            let word = word.trim().to_lowercase();
            if word.split_whitespace().count() != 1 {
                log::warn!("lexicon line {}: skipping multi-word entry {word:?}", i + 1);
                continue;
            }
            valence.insert(word, score);
        }
        Ok(AffectLexicon { valence })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CommentaryError> {
        let path = path.as_ref();
        AffectLexicon::parse(&fs::read_to_string(path).map_err(|e| io_error(path, e))?)
    }

    pub fn bundled() -> Self {
        AffectLexicon::parse(BUNDLED_AFINN).expect("bundled lexicon parses")
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, i32)>) -> Self {
        AffectLexicon {
            valence: pairs
                .into_iter()
                .map(|(w, v)| (w.to_lowercase(), v.clamp(-5, 5)))
                .collect(),
        }
    }

    /// Valence of a token, 0 when absent.
    pub fn valence(&self, word: &str) -> i32 {
        self.valence.get(word).copied().unwrap_or(0)
    }

    pub fn words(&self) -> impl Iterator<Item = (&str, i32)> {
        self.valence.iter().map(|(w, v)| (w.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.valence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valence.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reverse,
}

/// Continuation counts for one context.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContextCounts {
    total: u64,
    next: BTreeMap<String, u64>,
}

impl ContextCounts {
    fn add(&mut self, word: &str) {
        self.total += 1;
        *self.next.entry(word.to_string()).or_insert(0) += 1;
    }

    /// `C(ctx, *w)`.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, word: &str) -> u64 {
        self.next.get(word).copied().unwrap_or(0)
    }

    /// Number of distinct observed continuations (`D`).
    pub fn distinct(&self) -> usize {
        self.next.len()
    }

    pub fn continuations(&self) -> impl Iterator<Item = (&str, u64)> {
        self.next.iter().map(|(w, c)| (w.as_str(), *c))
    }
}

type Table = BTreeMap<String, ContextCounts>;

fn context_key(context: &[&str]) -> String {
    context.join(" ")
}

/// Forward and reverse bigram/trigram counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NGramCounts {
    forward: Table,
    reverse: Table,
    vocabulary: BTreeSet<String>,
    corpus_hash: String,
}

fn count_sentence(table: &mut Table, tokens: &[&str]) {
    for i in 1..tokens.len() {
        table
            .entry(tokens[i - 1].to_string())
            .or_default()
            .add(tokens[i]);
        if i >= 2 {
            table
                .entry(context_key(&tokens[i - 2..i]))
                .or_default()
                .add(tokens[i]);
        }
    }
}

impl NGramCounts {
    /// Counts a set of corpus texts.
    pub fn train_texts<S: AsRef<str>>(texts: &[S]) -> Result<Self, CommentaryError> {
        let mut counts = NGramCounts::default();
        let mut hasher = Sha256::new();
        for text in texts {
            let text = text.as_ref();
            hasher.update(text.as_bytes());
            for sentence in tokenize(text) {
                let forward: Vec<&str> = sentence.iter().map(String::as_str).collect();
                let reversed: Vec<&str> = forward.iter().rev().copied().collect();
                count_sentence(&mut counts.forward, &forward);
                count_sentence(&mut counts.reverse, &reversed);
                counts.vocabulary.extend(sentence);
            }
        }
        if counts.vocabulary.is_empty() {
            return Err(CommentaryError::EmptyCorpus);
        }
        counts.corpus_hash = hex::encode(hasher.finalize());
        Ok(counts)
    }

    /// Reads and counts plain-text corpus files.
    pub fn train<P: AsRef<Path>>(corpus_paths: &[P]) -> Result<Self, CommentaryError> {
        let texts = corpus_paths
            .iter()
            .map(|p| fs::read_to_string(p.as_ref()).map_err(|e| io_error(p.as_ref(), e)))
            .collect::<Result<Vec<_>, _>>()?;
        NGramCounts::train_texts(&texts)
    }

    pub fn bundled() -> Self {
        NGramCounts::train_texts(&[BUNDLED_CORPUS]).expect("bundled corpus is non-empty")
    }

    fn table(&self, direction: Direction) -> &Table {
        match direction {
            Direction::Forward => &self.forward,
            Direction::Reverse => &self.reverse,
        }
    }

    /// Counts for a context, given in the reading order of `direction`.
    pub fn context(&self, direction: Direction, context: &[&str]) -> Option<&ContextCounts> {
        self.table(direction).get(&context_key(context))
    }

    pub fn contexts(&self, direction: Direction) -> impl Iterator<Item = (&str, &ContextCounts)> {
        self.table(direction).iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn vocabulary(&self) -> &BTreeSet<String> {
        &self.vocabulary
    }

    pub fn corpus_hash(&self) -> &str {
        &self.corpus_hash
    }

    /// Smoothed probability that `word` follows `context`:
    /// `(C(ctx, w) + α) / (C(ctx, *) + D·α)`. A context never observed has
    /// no continuations to smooth over and yields 0.
    pub fn ngram_prob(
        &self,
        direction: Direction,
        context: &[&str],
        word: &str,
    ) -> Result<f64, CommentaryError> {
        if !(1..=2).contains(&context.len()) {
            return Err(CommentaryError::ContextLength(context.len()));
        }
        Ok(match self.context(direction, context) {
            None => 0.0,
            Some(c) => {
                (c.count(word) as f64 + ALPHA) / (c.total as f64 + c.distinct() as f64 * ALPHA)
            }
        })
    }

    pub fn to_json(&self) -> String {
        fn table(t: &Table) -> BTreeMap<&str, &BTreeMap<String, u64>> {
            t.iter().map(|(k, v)| (k.as_str(), &v.next)).collect()
        }
        let doc = ModelDocument {
            version: MODEL_VERSION,
            counts_forward: table(&self.forward),
            counts_reverse: table(&self.reverse),
            vocab: self.vocabulary.iter().map(String::as_str).collect(),
            meta: ModelMeta {
                alpha: ALPHA,
                corpus_hash: self.corpus_hash.clone(),
            },
        };
        serde_json::to_string(&doc).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CommentaryError> {
        let doc: OwnedModelDocument =
            serde_json::from_str(text).map_err(|e| CommentaryError::Malformed {
                what: "model",
                message: e.to_string(),
            })?;
        if doc.version != MODEL_VERSION {
            return Err(CommentaryError::ModelVersion(doc.version));
        }
        let table = |raw: BTreeMap<String, BTreeMap<String, u64>>| -> Table {
            raw.into_iter()
                .map(|(k, next)| {
                    let total = next.values().sum();
                    (k, ContextCounts { total, next })
                })
                .collect()
        };
        Ok(NGramCounts {
            forward: table(doc.counts_forward),
            reverse: table(doc.counts_reverse),
            vocabulary: doc.vocab.into_iter().collect(),
            corpus_hash: doc.meta.corpus_hash,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CommentaryError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| io_error(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CommentaryError> {
        let path = path.as_ref();
        NGramCounts::from_json(&fs::read_to_string(path).map_err(|e| io_error(path, e))?)
    }
}

#[derive(Serialize)]
struct ModelDocument<'a> {
    version: u32,
    counts_forward: BTreeMap<&'a str, &'a BTreeMap<String, u64>>,
    counts_reverse: BTreeMap<&'a str, &'a BTreeMap<String, u64>>,
    vocab: Vec<&'a str>,
    meta: ModelMeta,
}

#[derive(Deserialize)]
struct OwnedModelDocument {
    version: u32,
    counts_forward: BTreeMap<String, BTreeMap<String, u64>>,
    counts_reverse: BTreeMap<String, BTreeMap<String, u64>>,
    vocab: Vec<String>,
    meta: ModelMeta,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    alpha: f64,
    corpus_hash: String,
}

/// Weights `z1..z5` of the word score and the affect sign `A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorerWeights {
    z: [f64; 5],
    affect_sign: i8,
}

/// Affect first, then trigram over bigram context.
pub const DEFAULT_Z: [f64; 5] = [0.125, 0.0625, 0.125, 0.0625, 0.5];

impl ScorerWeights {
    pub fn new(z: [f64; 5], affect_sign: i8) -> Result<Self, CommentaryError> {
        if affect_sign != 1 && affect_sign != -1 {
            return Err(CommentaryError::InvalidWeights(format!(
                "affect sign must be +1 or -1, got {affect_sign}"
            )));
        }
        if z.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(CommentaryError::InvalidWeights(format!(
                "weights must be non-negative: {z:?}"
            )));
        }
        let sum: f64 = z.iter().sum();
        if sum > 1.0 + 1e-12 {
            return Err(CommentaryError::InvalidWeights(format!(
                "weights sum to {sum} > 1"
            )));
        }
        Ok(ScorerWeights { z, affect_sign })
    }

    pub fn for_condition(z: [f64; 5], condition: Condition) -> Result<Self, CommentaryError> {
        ScorerWeights::new(z, condition.affect_sign())
    }

    pub fn z(&self) -> [f64; 5] {
        self.z
    }

    pub fn affect_sign(&self) -> i8 {
        self.affect_sign
    }

    pub fn with_affect(self, affect_sign: i8) -> Result<Self, CommentaryError> {
        ScorerWeights::new(self.z, affect_sign)
    }
}

impl Default for ScorerWeights {
    fn default() -> Self {
        ScorerWeights {
            z: DEFAULT_Z,
            affect_sign: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum StemToken {
    Word(String),
    Blank,
}

/// A sentence with one or more `___` blanks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceStem {
    id: String,
    text: String,
    tokens: Vec<StemToken>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StemRecord {
    id: String,
    text: String,
}

impl SentenceStem {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, CommentaryError> {
        let id = id.into();
        let text = text.into();
        let mut tokens = Vec::new();
        for (i, piece) in text.split(BLANK).enumerate() {
            if i > 0 {
                tokens.push(StemToken::Blank);
            }
            tokens.extend(tokenize_line(piece).into_iter().map(StemToken::Word));
        }
        let invalid = |message: &str| CommentaryError::InvalidStem {
            id: id.clone(),
            message: message.to_string(),
        };
        let blanks: Vec<usize> = tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == StemToken::Blank)
            .map(|(i, _)| i)
            .collect();
        if blanks.is_empty() {
            return Err(invalid("no blanks"));
        }
        for &b in &blanks {
            let left = b > 0 && matches!(tokens[b - 1], StemToken::Word(_));
            let right = matches!(tokens.get(b + 1), Some(StemToken::Word(_)));
            if !left && !right {
                return Err(invalid("blank has no neighboring word"));
            }
        }
        Ok(SentenceStem { id, text, tokens })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn blank_count(&self) -> usize {
        self.tokens.iter().filter(|t| **t == StemToken::Blank).count()
    }

    /// Parses a stems file: a JSON array of `{"id", "text"}`.
    pub fn parse_list(json: &str) -> Result<Vec<Self>, CommentaryError> {
        let records: Vec<StemRecord> =
            serde_json::from_str(json).map_err(|e| CommentaryError::Malformed {
                what: "stems file",
                message: e.to_string(),
            })?;
        records
            .into_iter()
            .map(|r| SentenceStem::new(r.id, r.text))
            .collect()
    }

    pub fn load_list(path: impl AsRef<Path>) -> Result<Vec<Self>, CommentaryError> {
        let path = path.as_ref();
        SentenceStem::parse_list(&fs::read_to_string(path).map_err(|e| io_error(path, e))?)
    }

    pub fn bundled() -> Vec<Self> {
        SentenceStem::parse_list(BUNDLED_STEMS).expect("bundled stems parse")
    }
}

/// A completed stem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub text: String,
    pub stem_id: String,
    pub chosen_words: Vec<String>,
    pub affect_sign: i8,
    /// Sum of the chosen words' scores.
    pub score: f64,
}

/// Observed continuations of the blank's left and right contexts, minus
/// punctuation.
///
/// `left` is the text preceding the blank and `right` the text following
/// it, both in reading order; only the nearest two tokens of each are used.
pub fn candidate_set(
    counts: &NGramCounts,
    left: &[&str],
    right: &[&str],
) -> Result<BTreeSet<String>, CommentaryError> {
    let mut out = BTreeSet::new();
    let mut collect = |direction, context: &[&str]| {
        if let Some(c) = counts.context(direction, context) {
            out.extend(
                c.continuations()
                    .filter(|(w, _)| !is_punctuation(w))
                    .map(|(w, _)| w.to_string()),
            );
        }
    };
    for context in forward_contexts(left) {
        collect(Direction::Forward, &context);
    }
    for context in reverse_contexts(right) {
        collect(Direction::Reverse, &context);
    }
    if out.is_empty() {
        return Err(CommentaryError::NoCandidates);
    }
    Ok(out)
}

/// `[w-2, w-1]` (when available) and `[w-1]`.
fn forward_contexts<'a>(left: &[&'a str]) -> Vec<Vec<&'a str>> {
    let mut out = Vec::new();
    if left.len() >= 2 {
        out.push(left[left.len() - 2..].to_vec());
    }
    if let Some(last) = left.last() {
        out.push(vec![*last]);
    }
    out
}

/// `[w+2, w+1]` (when available) and `[w+1]`, in reversed reading order.
fn reverse_contexts<'a>(right: &[&'a str]) -> Vec<Vec<&'a str>> {
    let mut out = Vec::new();
    if right.len() >= 2 {
        out.push(vec![right[1], right[0]]);
    }
    if let Some(first) = right.first() {
        out.push(vec![*first]);
    }
    out
}

/// Scores `word` for a blank. Terms whose context is missing contribute 0.
pub fn score_word(
    counts: &NGramCounts,
    lexicon: &AffectLexicon,
    weights: &ScorerWeights,
    word: &str,
    left: &[&str],
    right: &[&str],
) -> f64 {
    let [z1, z2, z3, z4, z5] = weights.z;
    let prob = |direction, context: Option<Vec<&str>>| {
        context.map_or(0.0, |ctx| {
            counts
                .ngram_prob(direction, &ctx, word)
                .expect("contexts built with 1 or 2 tokens")
        })
    };
    let n = left.len();
    let fwd_tri = (n >= 2).then(|| left[n - 2..].to_vec());
    let fwd_bi = left.last().map(|w| vec![*w]);
    let rev_tri = (right.len() >= 2).then(|| vec![right[1], right[0]]);
    let rev_bi = right.first().map(|w| vec![*w]);

    z5 * f64::from(lexicon.valence(word)) * f64::from(weights.affect_sign)
        + z1 * prob(Direction::Reverse, rev_tri)
        + z2 * prob(Direction::Reverse, rev_bi)
        + z3 * prob(Direction::Forward, fwd_tri)
        + z4 * prob(Direction::Forward, fwd_bi)
}

/// How a blank's word is picked from the scored candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Selection {
    /// Highest score; ties go to the lexicographically smallest word.
    #[default]
    Argmax,
    /// Random draw proportional to the positive part of each score.
    Sample { seed: u64 },
}

fn pick<R: Rng>(scored: &[(String, f64)], selection: Selection, rng: &mut Option<R>) -> usize {
    let argmax = || {
        let mut best = 0;
        for (i, (w, s)) in scored.iter().enumerate() {
            let (bw, bs) = &scored[best];
            if *s > *bs || (*s == *bs && w < bw) {
                best = i;
            }
        }
        best
    };
    match (selection, rng.as_mut()) {
        (Selection::Sample { .. }, Some(rng)) => {
            let total: f64 = scored.iter().map(|(_, s)| s.max(0.0)).sum();
            if total <= 0.0 {
                return argmax();
            }
            let mut u = rng.random::<f64>() * total;
            for (i, (_, s)) in scored.iter().enumerate() {
                u -= s.max(0.0);
                if u < 0.0 {
                    return i;
                }
            }
            argmax()
        }
        _ => argmax(),
    }
}

/// Fills every blank of `stem`, left to right. Earlier fills serve as
/// context for later blanks. A blank with no observed candidates falls back
/// to the lexicon word with the best affect term.
pub fn complete_stem(
    counts: &NGramCounts,
    lexicon: &AffectLexicon,
    weights: &ScorerWeights,
    stem: &SentenceStem,
) -> Result<Utterance, CommentaryError> {
    complete_stem_with(counts, lexicon, weights, stem, Selection::Argmax)
}

pub fn complete_stem_with(
    counts: &NGramCounts,
    lexicon: &AffectLexicon,
    weights: &ScorerWeights,
    stem: &SentenceStem,
    selection: Selection,
) -> Result<Utterance, CommentaryError> {
    let mut rng = match selection {
        Selection::Sample { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Selection::Argmax => None,
    };
    let mut filled: Vec<Option<String>> = stem
        .tokens
        .iter()
        .map(|t| match t {
            StemToken::Word(w) => Some(w.clone()),
            StemToken::Blank => None,
        })
        .collect();
    let mut chosen_words = Vec::new();
    let mut total_score = 0.0;

    for i in 0..filled.len() {
        if filled[i].is_some() {
            continue;
        }
        // context stops at the nearest unfilled blank on either side
        let left: Vec<&str> = filled[..i]
            .iter()
            .rev()
            .map_while(|t| t.as_deref())
            .take(2)
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        let right: Vec<&str> = filled[i + 1..]
            .iter()
            .map_while(|t| t.as_deref())
            .take(2)
            .collect();

        let scored: Vec<(String, f64)> = match candidate_set(counts, &left, &right) {
            Ok(candidates) => candidates
                .into_iter()
                .map(|w| {
                    let s = score_word(counts, lexicon, weights, &w, &left, &right);
                    (w, s)
                })
                .collect(),
            Err(CommentaryError::NoCandidates) => {
                let [.., z5] = weights.z;
                let affect = f64::from(weights.affect_sign);
                let fallback: Vec<(String, f64)> = lexicon
                    .words()
                    .map(|(w, v)| (w.to_string(), z5 * f64::from(v) * affect))
                    .collect();
                if fallback.is_empty() {
                    return Err(CommentaryError::NoCandidates);
                }
                fallback
            }
            Err(e) => return Err(e),
        };
        let index = pick(&scored, selection, &mut rng);
        let (word, score) = scored[index].clone();
        total_score += score;
        chosen_words.push(word.clone());
        filled[i] = Some(word);
    }

    let mut text = String::with_capacity(stem.text.len());
    let mut words = chosen_words.iter();
    for (i, piece) in stem.text.split(BLANK).enumerate() {
        if i > 0 {
            text.push_str(words.next().expect("one word per blank"));
        }
        text.push_str(piece);
    }
    Ok(Utterance {
        text,
        stem_id: stem.id.clone(),
        chosen_words,
        affect_sign: weights.affect_sign,
        score: total_score,
    })
}

/// When commentary fires during a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommentarySchedule {
    /// Comment after every `every`-th completed game round.
    pub every: usize,
}

impl Default for CommentarySchedule {
    fn default() -> Self {
        CommentarySchedule { every: 5 }
    }
}

impl CommentarySchedule {
    /// `completed` counts game rounds from 1.
    pub fn fires_after(&self, completed: usize) -> bool {
        self.every > 0 && completed > 0 && completed % self.every == 0
    }
}

/// Stem to use for the `emission`-th comment of a session: stems are dealt
/// from a seeded shuffle, reshuffled once every stem has been used.
pub fn stem_for_emission(seed: u64, stem_count: usize, emission: usize) -> usize {
    let cycle = emission / stem_count;
    let mut order: Vec<usize> = (0..stem_count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cycle as u64);
    order.shuffle(&mut rng);
    order[emission % stem_count]
}

/// A trained model with its lexicon, stems and weights, ready to comment on
/// sessions. Immutable once built, so it can be shared across sessions.
#[derive(Debug, Clone)]
pub struct Commentator {
    pub counts: NGramCounts,
    pub lexicon: AffectLexicon,
    pub stems: Vec<SentenceStem>,
    pub z: [f64; 5],
    pub schedule: CommentarySchedule,
}

impl Commentator {
    pub fn new(
        counts: NGramCounts,
        lexicon: AffectLexicon,
        stems: Vec<SentenceStem>,
        z: [f64; 5],
        schedule: CommentarySchedule,
    ) -> Result<Self, CommentaryError> {
        ScorerWeights::new(z, 1)?;
        if stems.is_empty() {
            return Err(CommentaryError::InvalidStem {
                id: String::new(),
                message: "no stems supplied".into(),
            });
        }
        Ok(Commentator {
            counts,
            lexicon,
            stems,
            z,
            schedule,
        })
    }

    /// Bundled corpus, lexicon and stems with default weights.
    pub fn bundled() -> Self {
        Commentator::new(
            NGramCounts::bundled(),
            AffectLexicon::bundled(),
            SentenceStem::bundled(),
            DEFAULT_Z,
            CommentarySchedule::default(),
        )
        .expect("bundled assets are valid")
    }

    /// The comment due after `completed` game rounds, if any.
    ///
    /// Depends only on the condition, seed and round count: what the
    /// player actually chose never enters.
    pub fn schedule_commentary(
        &self,
        condition: Condition,
        seed: u64,
        completed: usize,
    ) -> Result<Option<Utterance>, CommentaryError> {
        if !self.schedule.fires_after(completed) {
            return Ok(None);
        }
        let emission = completed / self.schedule.every - 1;
        let stem = &self.stems[stem_for_emission(seed, self.stems.len(), emission)];
        let weights = ScorerWeights::for_condition(self.z, condition)?;
        complete_stem(&self.counts, &self.lexicon, &weights, stem).map(Some)
    }
}
