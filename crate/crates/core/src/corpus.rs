//! Recipe records, ingredient phrase parsing, quality filters and splits.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lexicon;
use crate::textnorm::{root_noun_of_phrase, Lemmatizer};

pub const MIN_INGREDIENTS: usize = 2;
pub const MIN_SENTENCES: usize = 2;
pub const MIN_INSTRUCTION_WORDS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CorpusError {
    #[error("ingredient line has no name after removing quantities and comments: {0:?}")]
    EmptyAfterStripping(String),
    #[error("cannot reserve {requested} validation+test records from a corpus of {available}")]
    InsufficientCorpus { requested: usize, available: usize },
}

/// A recipe as read from the corpus file, before any cleaning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecipe {
    pub source_id: String,
    pub title: String,
    pub ingredient_lines: Vec<String>,
    pub instruction_text: String,
}

/// A non-negative rational quantity, kept reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quantity {
    pub numer: u32,
    pub denom: u32,
}

impl Quantity {
    pub fn new(numer: u32, denom: u32) -> Option<Self> {
        if denom == 0 {
            return None;
        }
        let g = gcd(numer, denom);
        Some(Quantity { numer: numer / g, denom: denom / g })
    }

    pub fn whole(n: u32) -> Self {
        Quantity { numer: n, denom: 1 }
    }

    fn add(self, other: Quantity) -> Option<Quantity> {
        let n = self.numer.checked_mul(other.denom)?.checked_add(other.numer.checked_mul(self.denom)?)?;
        Quantity::new(n, self.denom.checked_mul(other.denom)?)
    }

    pub fn to_f64(self) -> f64 {
        f64::from(self.numer) / f64::from(self.denom)
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.denom == 1 {
            write!(f, "{}", self.numer)
        } else {
            write!(f, "{}/{}", self.numer, self.denom)
        }
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a.max(1)
    } else {
        gcd(b, a % b)
    }
}

/// A parsed ingredient line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngredientLine {
    pub original: String,
    /// The ingredient name with quantity, unit and comments removed.
    pub name_phrase: String,
    pub quantity: Option<Quantity>,
    pub unit: Option<String>,
    pub root_noun: String,
}

/// A recipe that passed the quality filters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecipeRecord {
    pub id: String,
    pub title: String,
    pub ingredients: Vec<IngredientLine>,
    pub steps: Vec<String>,
}

impl RecipeRecord {
    pub fn instruction_text(&self) -> String {
        self.steps.join(" ")
    }

    pub fn word_count(&self) -> usize {
        self.steps.iter().map(|s| s.split_whitespace().count()).sum()
    }

    /// Converts back into the raw corpus shape.
    pub fn to_raw(&self) -> RawRecipe {
        RawRecipe {
            source_id: self.id.clone(),
            title: self.title.clone(),
            ingredient_lines: self.ingredients.iter().map(|i| i.original.clone()).collect(),
            instruction_text: self.instruction_text(),
        }
    }
}

fn unicode_fraction(c: char) -> Option<Quantity> {
    let (n, d) = match c {
        '½' => (1, 2),
        '⅓' => (1, 3),
        '⅔' => (2, 3),
        '¼' => (1, 4),
        '¾' => (3, 4),
        '⅕' => (1, 5),
        '⅖' => (2, 5),
        '⅗' => (3, 5),
        '⅘' => (4, 5),
        '⅙' => (1, 6),
        '⅚' => (5, 6),
        '⅛' => (1, 8),
        '⅜' => (3, 8),
        '⅝' => (5, 8),
        '⅞' => (7, 8),
        _ => return None,
    };
    Quantity::new(n, d)
}

/// Parses "2", "1.5", "1/2", "½", "1½" or a range "1-2" (lower bound kept).
fn parse_quantity_token(tok: &str) -> Option<Quantity> {
    if tok.is_empty() {
        return None;
    }
    for sep in ['-', '–'] {
        if let Some((lo, hi)) = tok.split_once(sep) {
            parse_quantity_token(hi)?;
            return parse_quantity_token(lo);
        }
    }
    if let Some((n, d)) = tok.split_once('/') {
        return Quantity::new(n.parse().ok()?, d.parse().ok()?);
    }
    if let Some((int, frac)) = tok.split_once('.') {
        if int.is_empty() || frac.is_empty() || frac.len() > 4 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let scale = 10u32.pow(frac.len() as u32);
        let n: u32 = int.parse().ok()?;
        let f: u32 = frac.parse().ok()?;
        return Quantity::new(n.checked_mul(scale)?.checked_add(f)?, scale);
    }
    let last = tok.chars().last()?;
    if let Some(frac) = unicode_fraction(last) {
        let int = &tok[..tok.len() - last.len_utf8()];
        if int.is_empty() {
            return Some(frac);
        }
        return Quantity::whole(int.parse().ok()?).add(frac);
    }
    tok.parse().ok().map(Quantity::whole)
}

fn remove_parenthesized(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut depth = 0usize;
    for c in s.chars() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth = depth.saturating_sub(1),
            _ if depth == 0 => out.push(c),
            _ => {}
        }
    }
    out
}

fn unit_key(tok: &str) -> String {
    tok.trim_end_matches('.').to_lowercase()
}

/// Parses an ingredient line into its name phrase, quantity, unit and root
/// noun. Parenthesized text and everything after the first comma are
/// treated as comments.
pub fn parse_ingredient_line(line: &str, lemmatizer: &Lemmatizer) -> Result<IngredientLine, CorpusError> {
    let mut quantity = None;
    let mut unit = None;
    let mut current = line.to_string();
    loop {
        let mut s = remove_parenthesized(&current);
        if let Some(i) = s.find(',') {
            s.truncate(i);
        }
        let mut words: Vec<&str> = s.split_whitespace().collect();
        // leading quantities, units and "of"
        let mut i = 0;
        while i < words.len() {
            let w = words[i];
            if let Some(q) = parse_quantity_token(w) {
                let q = match words.get(i + 1).and_then(|n| n.contains('/').then(|| parse_quantity_token(n)).flatten()) {
                    Some(frac) if q.denom == 1 => {
                        i += 1;
                        q.add(frac).unwrap_or(q)
                    }
                    _ => q,
                };
                quantity.get_or_insert(q);
                i += 1;
            } else if lexicon::is_unit(&unit_key(w)) {
                unit.get_or_insert_with(|| unit_key(w));
                i += 1;
            } else if w.eq_ignore_ascii_case("of") || w == "x" {
                i += 1;
            } else {
                break;
            }
        }
        words.drain(..i);
        // trailing comments
        loop {
            let ends_with = |c: &str| {
                let n = c.split_whitespace().count();
                words.len() > n
                    && words[words.len() - n..].iter().zip(c.split_whitespace()).all(|(w, t)| w.eq_ignore_ascii_case(t))
            };
            let Some(c) = lexicon::TRAILING_COMMENTS.iter().find(|c| ends_with(c)) else {
                break;
            };
            let n = c.split_whitespace().count();
            words.truncate(words.len() - n);
            if words.last().is_some_and(|w| w.eq_ignore_ascii_case("or")) {
                words.pop();
            }
        }
        let next = words.join(" ");
        if next == current {
            break;
        }
        current = next;
    }
    if current.is_empty() {
        return Err(CorpusError::EmptyAfterStripping(line.to_string()));
    }
    let root_noun = root_noun_of_phrase(&current, lemmatizer)
        .map_err(|_| CorpusError::EmptyAfterStripping(line.to_string()))?;
    Ok(IngredientLine { original: line.trim().to_string(), name_phrase: current, quantity, unit, root_noun })
}

fn is_abbreviation(word: &str) -> bool {
    let w = word.trim_start_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
    lexicon::ABBREVIATIONS.contains(&w.as_str())
}

/// Splits instruction text into sentences at `.`, `!` or `?` followed by
/// whitespace. Known abbreviations ("tsp.", "approx.") do not end a sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if matches!(b, b'.' | b'!' | b'?') {
            let mut j = i + 1;
            while j < bytes.len() && matches!(bytes[j], b'.' | b'!' | b'?' | b'"' | b'\'' | b')') {
                j += 1;
            }
            let at_boundary = j == bytes.len() || text[j..].starts_with(char::is_whitespace);
            if at_boundary {
                let word_start = text[start..i].rfind(char::is_whitespace).map_or(start, |p| start + p + 1);
                if !(b == b'.' && is_abbreviation(&text[word_start..i])) {
                    let s = text[start..j].trim();
                    if !s.is_empty() {
                        out.push(s.to_string());
                    }
                    start = j;
                }
            }
            i = j;
        } else {
            i += 1;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

/// Why a raw recipe was dropped. Checks run in declaration order and the
/// first failure is reported.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Rejection {
    #[error("empty title")]
    EmptyTitle,
    #[error("non-recipe content ({keyword:?})")]
    DenylistedContent { keyword: String },
    #[error("too few ingredients ({found} < {MIN_INGREDIENTS})")]
    TooFewIngredients { found: usize },
    #[error("too few instruction sentences ({found} < {MIN_SENTENCES})")]
    TooFewSentences { found: usize },
    #[error("too few instruction words ({found} < {MIN_INSTRUCTION_WORDS})")]
    TooFewWords { found: usize },
}

impl Rejection {
    /// Stable short name, used for rejection counts.
    pub fn rule(&self) -> &'static str {
        match self {
            Rejection::EmptyTitle => "empty_title",
            Rejection::DenylistedContent { .. } => "denylisted_content",
            Rejection::TooFewIngredients { .. } => "too_few_ingredients",
            Rejection::TooFewSentences { .. } => "too_few_sentences",
            Rejection::TooFewWords { .. } => "too_few_words",
        }
    }
}

/// Applies the corpus quality rules: at least 2 parsed ingredients, 2
/// instruction sentences and 20 instruction words (all inclusive), and no
/// nutrition or author boilerplate.
pub fn filter_recipe(raw: &RawRecipe, lemmatizer: &Lemmatizer) -> Result<RecipeRecord, Rejection> {
    let title = raw.title.trim();
    if title.is_empty() {
        return Err(Rejection::EmptyTitle);
    }
    let lowered_instr = raw.instruction_text.to_lowercase();
    for kw in lexicon::DENYLIST {
        if lowered_instr.contains(kw) || raw.ingredient_lines.iter().any(|l| l.to_lowercase().contains(kw)) {
            return Err(Rejection::DenylistedContent { keyword: kw.to_string() });
        }
    }
    let ingredients: Vec<IngredientLine> = raw
        .ingredient_lines
        .iter()
        .filter(|l| !l.trim().is_empty())
        .filter_map(|l| parse_ingredient_line(l, lemmatizer).ok())
        .collect();
    if ingredients.len() < MIN_INGREDIENTS {
        return Err(Rejection::TooFewIngredients { found: ingredients.len() });
    }
    let steps = split_sentences(&raw.instruction_text);
    if steps.len() < MIN_SENTENCES {
        return Err(Rejection::TooFewSentences { found: steps.len() });
    }
    let words = raw.instruction_text.split_whitespace().count();
    if words < MIN_INSTRUCTION_WORDS {
        return Err(Rejection::TooFewWords { found: words });
    }
    Ok(RecipeRecord { id: raw.source_id.clone(), title: title.to_string(), ingredients, steps })
}

/// Disjoint train/validation/test id lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub seed: u64,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffles record ids with a seeded generator; the first `n_val` go to
/// validation, the next `n_test` to test and the rest to train. Ids are
/// sorted before shuffling so the result does not depend on input order.
pub fn split_corpus(records: &[RecipeRecord], seed: u64, n_val: usize, n_test: usize) -> Result<CorpusSplit, CorpusError> {
    let requested = n_val + n_test;
    if requested >= records.len() {
        return Err(CorpusError::InsufficientCorpus { requested, available: records.len() });
    }
    let mut ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut rest = ids.split_off(n_val);
    let validation = ids;
    let train = rest.split_off(n_test);
    Ok(CorpusSplit { seed, train, validation, test: rest })
}

impl CorpusSplit {
    /// Records of each part (train, validation, test), in split order.
    /// Ids without a matching record are skipped.
    pub fn partition(&self, records: &[RecipeRecord]) -> [Vec<RecipeRecord>; 3] {
        let by_id: BTreeMap<&str, &RecipeRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
        let pick = |ids: &[String]| ids.iter().filter_map(|i| by_id.get(i.as_str()).map(|r| (*r).clone())).collect();
        [pick(&self.train), pick(&self.validation), pick(&self.test)]
    }
}
