//! Tokenization, lemmatization and ingredient root-noun extraction.
//!
//! Two extraction methods are provided. [`root_noun_of_phrase`] picks the head
//! word of a single ingredient phrase ("shredded provolone cheese" gives
//! "cheese"). [`extract_ingredient_nouns`] scans free text and keeps every
//! token whose lemma is in an [`IngredientDictionary`].

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::IngredientLine;
use crate::lexicon;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TextError {
    #[error("phrase contains no words")]
    EmptyPhrase,
    #[error("ingredient dictionary is empty")]
    EmptyDictionary,
}

/// Lowercased tokens with byte offsets into the source text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenStream {
    pub tokens: Vec<String>,
    pub spans: Vec<(usize, usize)>,
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens that start with a letter or digit.
    pub fn words(&self) -> impl Iterator<Item = (&str, (usize, usize))> {
        self.tokens
            .iter()
            .zip(self.spans.iter().copied())
            .filter(|(t, _)| is_word(t))
            .map(|(t, s)| (t.as_str(), s))
    }
}

pub(crate) fn is_word(token: &str) -> bool {
    token.chars().next().is_some_and(char::is_alphanumeric)
}

/// Splits text on whitespace and punctuation. Punctuation characters become
/// tokens of their own; decimals such as `1.5` and in-word apostrophes stay
/// inside one token.
pub fn word_tokenize(text: &str) -> TokenStream {
    let mut out = TokenStream::default();
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let end_of = |i: usize| chars.get(i).map_or(text.len(), |&(b, _)| b);
    let mut i = 0;
    while i < chars.len() {
        let (start, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_alphanumeric() {
            let mut j = i + 1;
            while j < chars.len() {
                let c = chars[j].1;
                if c.is_alphanumeric() {
                    j += 1;
                    continue;
                }
                let next_alnum = chars.get(j + 1).is_some_and(|&(_, n)| n.is_alphanumeric());
                let prev = chars[j - 1].1;
                let decimal = c == '.' && prev.is_ascii_digit() && chars.get(j + 1).is_some_and(|&(_, n)| n.is_ascii_digit());
                let apostrophe = (c == '\'' || c == '\u{2019}') && prev.is_alphabetic() && next_alnum;
                if decimal || apostrophe {
                    j += 2;
                } else {
                    break;
                }
            }
            let end = end_of(j);
            out.tokens.push(text[start..end].to_lowercase());
            out.spans.push((start, end));
            i = j;
        } else {
            let end = end_of(i + 1);
            out.tokens.push(text[start..end].to_lowercase());
            out.spans.push((start, end));
            i += 1;
        }
    }
    out
}

/// A suffix rewrite applied by the [`Lemmatizer`].
#[derive(Debug, Clone, Copy)]
pub struct SuffixRule {
    pub suffix: &'static str,
    pub replacement: &'static str,
    /// The rule fires only when the stem left after removing `suffix` ends
    /// with one of these (empty means any stem).
    pub stem_endings: &'static [&'static str],
    /// The rule is skipped for words ending in one of these.
    pub blocked_endings: &'static [&'static str],
    pub min_len: usize,
}

pub const STANDARD_RULES: &[SuffixRule] = &[
    SuffixRule { suffix: "ies", replacement: "y", stem_endings: &[], blocked_endings: &[], min_len: 5 },
    SuffixRule { suffix: "ves", replacement: "f", stem_endings: &[], blocked_endings: &[], min_len: 5 },
    SuffixRule {
        suffix: "es",
        replacement: "",
        stem_endings: &["ss", "x", "z", "ch", "sh"],
        blocked_endings: &[],
        min_len: 4,
    },
    SuffixRule {
        suffix: "es",
        replacement: "",
        stem_endings: &["to", "go"],
        blocked_endings: &[],
        min_len: 5,
    },
    SuffixRule { suffix: "s", replacement: "", stem_endings: &[], blocked_endings: &["ss", "us", "is"], min_len: 4 },
];

/// Irregular forms and words that look plural but are not.
const STANDARD_EXCEPTIONS: &[(&str, &str)] = &[
    ("asparagus", "asparagus"),
    ("bass", "bass"),
    ("brownies", "brownie"),
    ("calves", "calf"),
    ("chives", "chive"),
    ("citrus", "citrus"),
    ("cloves", "clove"),
    ("cookies", "cookie"),
    ("couscous", "couscous"),
    ("endives", "endive"),
    ("geese", "goose"),
    ("grits", "grits"),
    ("halves", "half"),
    ("hummus", "hummus"),
    ("knives", "knife"),
    ("leaves", "leaf"),
    ("loaves", "loaf"),
    ("molasses", "molasses"),
    ("octopus", "octopus"),
    ("olives", "olive"),
    ("series", "series"),
    ("shelves", "shelf"),
    ("smoothies", "smoothie"),
    ("species", "species"),
    ("swiss", "swiss"),
    ("veggies", "veggie"),
    ("wolves", "wolf"),
];

/// Rule-based English lemmatizer for nouns: exceptions first, then the
/// ordered suffix rules, otherwise identity.
#[derive(Debug, Clone)]
pub struct Lemmatizer {
    exceptions: BTreeMap<String, String>,
    suffix_rules: &'static [SuffixRule],
}

impl Default for Lemmatizer {
    fn default() -> Self {
        Self::standard()
    }
}

impl Lemmatizer {
    pub const fn standard() -> Self {
        Lemmatizer { exceptions: BTreeMap::new(), suffix_rules: STANDARD_RULES }
    }

    /// Adds an exception entry on top of the standard table.
    pub fn with_exception(mut self, word: &str, lemma: &str) -> Self {
        self.exceptions.insert(word.into(), lemma.into());
        self
    }

    fn exception(&self, word: &str) -> Option<&str> {
        if let Some(l) = self.exceptions.get(word) {
            return Some(l);
        }
        STANDARD_EXCEPTIONS
            .binary_search_by(|(w, _)| w.cmp(&word))
            .ok()
            .map(|i| STANDARD_EXCEPTIONS[i].1)
    }

    fn is_exception_lemma(&self, word: &str) -> bool {
        self.exceptions.values().any(|l| l == word) || STANDARD_EXCEPTIONS.iter().any(|(_, l)| *l == word)
    }

    fn strip(&self, word: &str) -> Option<String> {
        if !word.chars().all(char::is_alphabetic) {
            return None;
        }
        for rule in self.suffix_rules {
            if word.len() < rule.min_len || !word.ends_with(rule.suffix) {
                continue;
            }
            if rule.blocked_endings.iter().any(|b| word.ends_with(b)) {
                continue;
            }
            let stem = &word[..word.len() - rule.suffix.len()];
            if !rule.stem_endings.is_empty() && !rule.stem_endings.iter().any(|e| stem.ends_with(e)) {
                continue;
            }
            let mut out = String::with_capacity(stem.len() + rule.replacement.len());
            out.push_str(stem);
            out.push_str(rule.replacement);
            return Some(out);
        }
        None
    }

    /// Lemma of a lowercase word. Idempotent: the result is always a fixed
    /// point, so a rewrite whose output would be rewritten again is refused.
    pub fn lemmatize(&self, word: &str) -> String {
        if let Some(l) = self.exception(word) {
            return l.to_string();
        }
        if self.is_exception_lemma(word) {
            return word.to_string();
        }
        match self.strip(word) {
            Some(r) if self.strip(&r).is_none() && self.exception(&r).is_none_or(|e| e == r) => r,
            _ => word.to_string(),
        }
    }
}

/// Set of lemmatized ingredient words.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RootNounSet {
    pub nouns: BTreeSet<String>,
}

impl RootNounSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, noun: impl Into<String>) {
        self.nouns.insert(noun.into());
    }

    pub fn contains(&self, noun: &str) -> bool {
        self.nouns.contains(noun)
    }

    pub fn len(&self) -> usize {
        self.nouns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nouns.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.nouns.iter().map(String::as_str)
    }

    pub fn intersection(&self, other: &RootNounSet) -> RootNounSet {
        RootNounSet { nouns: self.nouns.intersection(&other.nouns).cloned().collect() }
    }
}

impl<S: Into<String>> FromIterator<S> for RootNounSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        RootNounSet { nouns: iter.into_iter().map(Into::into).collect() }
    }
}

/// Root nouns of a list of parsed ingredient lines (the head-word method).
pub fn ingredient_root_nouns(lines: &[IngredientLine]) -> RootNounSet {
    lines.iter().map(|l| l.root_noun.clone()).collect()
}

/// Vocabulary of ingredient root nouns. Entries are stored in lemma form.
#[derive(Debug, Clone)]
pub struct IngredientDictionary {
    root_nouns: BTreeSet<String>,
    source: String,
    lemmatizer: Lemmatizer,
}

impl IngredientDictionary {
    /// The dictionary shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_text(lexicon::DICTIONARY_SRC, "bundled", Lemmatizer::standard())
            .expect("bundled dictionary is non-empty")
    }

    /// Parses a word list (one noun per line, `#` comments).
    pub fn from_text(src: &str, source: &str, lemmatizer: Lemmatizer) -> Result<Self, TextError> {
        let mut dict = IngredientDictionary { root_nouns: BTreeSet::new(), source: source.into(), lemmatizer };
        dict.extend_from_text(src);
        if dict.root_nouns.is_empty() {
            return Err(TextError::EmptyDictionary);
        }
        Ok(dict)
    }

    pub fn extend_from_text(&mut self, src: &str) {
        for e in lexicon::entries(src) {
            let lemma = self.lemmatizer.lemmatize(&e.to_lowercase());
            self.root_nouns.insert(lemma);
        }
    }

    pub fn contains(&self, lemma: &str) -> bool {
        self.root_nouns.contains(lemma)
    }

    pub fn len(&self) -> usize {
        self.root_nouns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.root_nouns.is_empty()
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn lemmatizer(&self) -> &Lemmatizer {
        &self.lemmatizer
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.root_nouns.iter().map(String::as_str)
    }
}

/// Head word of an ingredient phrase: the last word that is not a descriptor
/// or a number, lemmatized. Falls back to the last word.
pub fn root_noun_of_phrase(phrase: &str, lemmatizer: &Lemmatizer) -> Result<String, TextError> {
    let stream = word_tokenize(phrase);
    let words: Vec<&str> = stream.words().map(|(w, _)| w).collect();
    let last = *words.last().ok_or(TextError::EmptyPhrase)?;
    let head = words
        .iter()
        .rev()
        .copied()
        .find(|w| w.chars().any(char::is_alphabetic) && !lexicon::is_descriptor(w))
        .unwrap_or(last);
    Ok(lemmatizer.lemmatize(head))
}

/// Dictionary-filtered ingredient nouns mentioned anywhere in `text`.
pub fn extract_ingredient_nouns(text: &str, dict: &IngredientDictionary) -> RootNounSet {
    word_tokenize(text)
        .words()
        .map(|(w, _)| dict.lemmatizer.lemmatize(w))
        .filter(|l| dict.contains(l))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HighlightField {
    /// The ingredient list, lines joined with `\n`.
    Ingredients,
    /// The generated text.
    GeneratedText,
    /// A user-supplied instruction text (ingredient-generation mode).
    Instructions,
}

/// A highlighted occurrence of a shared root noun. Offsets count Unicode
/// scalar values, not bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HighlightSpan {
    pub field: HighlightField,
    pub start: usize,
    pub end: usize,
    pub root_noun: String,
}

/// The text that ingredient-field highlight offsets index into.
pub fn ingredient_field_text(ingredients: &[IngredientLine]) -> String {
    let mut s = String::new();
    for (i, l) in ingredients.iter().enumerate() {
        if i > 0 {
            s.push('\n');
        }
        s.push_str(&l.original);
    }
    s
}

fn char_offset(text: &str, byte: usize) -> usize {
    text[..byte].chars().count()
}

fn spans_in(text: &str, field: HighlightField, nouns: &RootNounSet, lem: &Lemmatizer, out: &mut Vec<HighlightSpan>) {
    for (w, (s, e)) in word_tokenize(text).words() {
        let lemma = lem.lemmatize(w);
        if nouns.contains(&lemma) {
            out.push(HighlightSpan { field, start: char_offset(text, s), end: char_offset(text, e), root_noun: lemma });
        }
    }
}

/// Highlights every occurrence, in both fields, of the root nouns shared by
/// the ingredient list and the generated text.
pub fn overlap_highlights(
    ingredients: &[IngredientLine],
    generated: &str,
    dict: &IngredientDictionary,
) -> Vec<HighlightSpan> {
    let shared = ingredient_root_nouns(ingredients).intersection(&extract_ingredient_nouns(generated, dict));
    let mut out = Vec::new();
    if shared.is_empty() {
        return out;
    }
    spans_in(&ingredient_field_text(ingredients), HighlightField::Ingredients, &shared, &dict.lemmatizer, &mut out);
    spans_in(generated, HighlightField::GeneratedText, &shared, &dict.lemmatizer, &mut out);
    out
}

/// Highlights for a generated ingredient list: root nouns of the parsed
/// generated lines that the given instructions also mention, located in the
/// generated text and in the instructions.
pub fn generated_ingredient_highlights(
    generated: &str,
    generated_lines: &[IngredientLine],
    instructions: &str,
    dict: &IngredientDictionary,
) -> Vec<HighlightSpan> {
    let shared = ingredient_root_nouns(generated_lines).intersection(&extract_ingredient_nouns(instructions, dict));
    let mut out = Vec::new();
    if shared.is_empty() {
        return out;
    }
    spans_in(generated, HighlightField::GeneratedText, &shared, &dict.lemmatizer, &mut out);
    spans_in(instructions, HighlightField::Instructions, &shared, &dict.lemmatizer, &mut out);
    out
}

/// Slice of `text` covered by a span with character offsets.
pub fn span_text(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end - start).collect()
}
