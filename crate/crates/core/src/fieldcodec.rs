//! Byte-pair encoding and the multi-field recipe serialization.
//!
//! A recipe is serialized as a sequence of fields, each wrapped in its own
//! start and end delimiter:
//!
//! ```text
//! <start-title> Lemon Cake <end-title> <start-ingr> 2 eggs\n1 cup flour <end-ingr> <start-instr> Mix. Bake. <end-instr>
//! ```
//!
//! Field content is escaped (`\\`, `\<`, `\$`) so user text can never
//! produce a delimiter. In token-id form the delimiters and the pad token `$`
//! are reserved ids at the top of the vocabulary; [`BpeVocab::encode`] never
//! emits them for any input text.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::RecipeRecord;

pub const DEFAULT_MAX_LEN: usize = 512;
pub const DEFAULT_MERGES: usize = 4096;
const VOCAB_HEADER: &str = "recipe-bpe 1";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("cannot train a vocabulary on an empty corpus")]
    EmptyCorpus,
    #[error("token id {0} is outside the vocabulary")]
    UnknownId(u32),
    #[error("target field {0:?} is also part of the context")]
    TargetInContext(FieldKind),
    #[error("prompt context is empty")]
    EmptyContext,
    #[error("malformed serialization: {0}")]
    Malformed(String),
    #[error("malformed vocabulary file at line {line}: {msg}")]
    BadVocabFile { line: usize, msg: String },
}

/// One of the three recipe fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Title,
    Ingredients,
    Instructions,
}

impl FieldKind {
    /// Canonical order.
    pub const ALL: [FieldKind; 3] = [FieldKind::Title, FieldKind::Ingredients, FieldKind::Instructions];

    pub fn tag(self) -> &'static str {
        match self {
            FieldKind::Title => "title",
            FieldKind::Ingredients => "ingr",
            FieldKind::Instructions => "instr",
        }
    }

    fn index(self) -> u32 {
        match self {
            FieldKind::Title => 0,
            FieldKind::Ingredients => 1,
            FieldKind::Instructions => 2,
        }
    }
}

/// What is generated: the ingredient list (from title and instructions) or
/// the instructions (from title and ingredients).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    Ingredients,
    Instructions,
}

impl GenerationMode {
    pub fn target(self) -> FieldKind {
        match self {
            GenerationMode::Ingredients => FieldKind::Ingredients,
            GenerationMode::Instructions => FieldKind::Instructions,
        }
    }

    /// Fields the caller supplies, in canonical order.
    pub fn context_fields(self) -> [FieldKind; 2] {
        match self {
            GenerationMode::Ingredients => [FieldKind::Title, FieldKind::Instructions],
            GenerationMode::Instructions => [FieldKind::Title, FieldKind::Ingredients],
        }
    }
}

/// Reserved tokens: a start and end delimiter per field, plus padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SpecialToken {
    Start(FieldKind),
    End(FieldKind),
    Pad,
}

impl SpecialToken {
    pub const ALL: [SpecialToken; 7] = [
        SpecialToken::Start(FieldKind::Title),
        SpecialToken::End(FieldKind::Title),
        SpecialToken::Start(FieldKind::Ingredients),
        SpecialToken::End(FieldKind::Ingredients),
        SpecialToken::Start(FieldKind::Instructions),
        SpecialToken::End(FieldKind::Instructions),
        SpecialToken::Pad,
    ];

    pub fn surface(self) -> &'static str {
        match self {
            SpecialToken::Start(FieldKind::Title) => "<start-title>",
            SpecialToken::End(FieldKind::Title) => "<end-title>",
            SpecialToken::Start(FieldKind::Ingredients) => "<start-ingr>",
            SpecialToken::End(FieldKind::Ingredients) => "<end-ingr>",
            SpecialToken::Start(FieldKind::Instructions) => "<start-instr>",
            SpecialToken::End(FieldKind::Instructions) => "<end-instr>",
            SpecialToken::Pad => "$",
        }
    }

    /// Position among the reserved ids.
    fn offset(self) -> u32 {
        match self {
            SpecialToken::Start(f) => 2 * f.index(),
            SpecialToken::End(f) => 2 * f.index() + 1,
            SpecialToken::Pad => 6,
        }
    }
}

// Pre-tokenization: split text into chunks at character-class changes, with a
// single leading space attached to the following word. Merges never cross a
// chunk boundary.
#[derive(PartialEq, Eq, Clone, Copy)]
enum CharClass {
    Letter,
    Digit,
    Space,
    Other,
}

fn class_of(c: char) -> CharClass {
    if c.is_alphabetic() {
        CharClass::Letter
    } else if c.is_numeric() {
        CharClass::Digit
    } else if c.is_whitespace() {
        CharClass::Space
    } else {
        CharClass::Other
    }
}

fn chunks(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let start = chars[i].0;
        let cls = class_of(chars[i].1);
        let mut j = i + 1;
        if cls == CharClass::Space {
            while j < chars.len() && class_of(chars[j].1) == CharClass::Space {
                j += 1;
            }
            // leave a trailing ' ' for the next word
            if j < chars.len() && j - i > 1 && chars[j - 1].1 == ' ' {
                j -= 1;
            } else if j < chars.len() && chars[i].1 == ' ' && j - i == 1 {
                let next = class_of(chars[j].1);
                let mut k = j + 1;
                while k < chars.len() && class_of(chars[k].1) == next {
                    k += 1;
                }
                j = k;
            }
        } else {
            while j < chars.len() && class_of(chars[j].1) == cls {
                j += 1;
            }
        }
        let end = chars.get(j).map_or(text.len(), |c| c.0);
        out.push(&text[start..end]);
        i = j;
    }
    out
}

/// A trained byte-level BPE vocabulary.
///
/// Ids `0..256` are raw bytes, `256..256+merges` the merged tokens in merge
/// order, and the seven [`SpecialToken`]s occupy the last ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeVocab {
    merges: Vec<(u32, u32)>,
    id_to_token: Vec<Vec<u8>>,
    token_to_id: BTreeMap<Vec<u8>, u32>,
    ranks: BTreeMap<(u32, u32), u32>,
}

impl BpeVocab {
    /// A vocabulary with no merges.
    pub fn byte_level() -> Self {
        Self::from_merges(Vec::new()).expect("empty merge list is valid")
    }

    fn from_merges(merges: Vec<(u32, u32)>) -> Result<Self, CodecError> {
        let mut id_to_token: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        let mut ranks = BTreeMap::new();
        for (rank, &(a, b)) in merges.iter().enumerate() {
            let n = id_to_token.len() as u32;
            if a >= n || b >= n {
                return Err(CodecError::BadVocabFile { line: 0, msg: format!("merge {rank} refers to unknown ids") });
            }
            let mut t = id_to_token[a as usize].clone();
            t.extend_from_slice(&id_to_token[b as usize]);
            id_to_token.push(t);
            ranks.insert((a, b), rank as u32);
        }
        let token_to_id = id_to_token.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Ok(BpeVocab { merges, id_to_token, token_to_id, ranks })
    }

    /// Number of ids including the reserved tokens.
    pub fn len(&self) -> usize {
        self.id_to_token.len() + SpecialToken::ALL.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn special_id(&self, tok: SpecialToken) -> u32 {
        self.id_to_token.len() as u32 + tok.offset()
    }

    pub fn pad_id(&self) -> u32 {
        self.special_id(SpecialToken::Pad)
    }

    pub fn start_id(&self, f: FieldKind) -> u32 {
        self.special_id(SpecialToken::Start(f))
    }

    pub fn end_id(&self, f: FieldKind) -> u32 {
        self.special_id(SpecialToken::End(f))
    }

    pub fn special(&self, id: u32) -> Option<SpecialToken> {
        let base = self.id_to_token.len() as u32;
        SpecialToken::ALL.get(id.checked_sub(base)? as usize).copied()
    }

    pub fn is_special(&self, id: u32) -> bool {
        self.special(id).is_some()
    }

    pub fn token_id(&self, bytes: &[u8]) -> Option<u32> {
        self.token_to_id.get(bytes).copied()
    }

    /// Bytes of a non-special token.
    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.id_to_token.get(id as usize).map(Vec::as_slice)
    }

    fn encode_chunk(&self, chunk: &[u8], out: &mut Vec<u32>) {
        let mut syms: Vec<u32> = chunk.iter().map(|&b| u32::from(b)).collect();
        while syms.len() > 1 {
            let best = syms
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&(w[0], w[1])).map(|&r| (r, i)))
                .min();
            let Some((rank, _)) = best else { break };
            let (a, b) = self.merges[rank as usize];
            let merged = 256 + rank;
            let mut next = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == a && syms[i + 1] == b {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(syms[i]);
                    i += 1;
                }
            }
            syms = next;
        }
        out.extend(syms);
    }

    /// Encodes literal text. Never produces reserved ids.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::with_capacity(text.len() / 3 + 1);
        for c in chunks(text) {
            self.encode_chunk(c.as_bytes(), &mut out);
        }
        out
    }

    fn push_bytes(&self, id: u32, bytes: &mut Vec<u8>) -> Result<(), CodecError> {
        if let Some(t) = self.id_to_token.get(id as usize) {
            bytes.extend_from_slice(t);
        } else if let Some(s) = self.special(id) {
            bytes.extend_from_slice(s.surface().as_bytes());
        } else {
            return Err(CodecError::UnknownId(id));
        }
        Ok(())
    }

    /// Concatenates token bytes; reserved ids render as their surface.
    /// Invalid UTF-8 (possible for arbitrary id sequences) is replaced.
    pub fn decode(&self, ids: &[u32]) -> Result<String, CodecError> {
        let mut bytes = Vec::new();
        for &id in ids {
            self.push_bytes(id, &mut bytes)?;
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    /// Like [`decode`](Self::decode) but escapes literal content, so the
    /// result can be read back with [`BpeVocab::encode_serialized`].
    pub fn render(&self, ids: &[u32]) -> Result<String, CodecError> {
        let mut out = String::new();
        let mut run = Vec::new();
        for &id in ids {
            if let Some(s) = self.special(id) {
                out.push_str(&escape(&String::from_utf8_lossy(&run)));
                run.clear();
                out.push_str(s.surface());
            } else {
                self.push_bytes(id, &mut run)?;
            }
        }
        out.push_str(&escape(&String::from_utf8_lossy(&run)));
        Ok(out)
    }

    /// Encodes serialized text: delimiter surfaces become reserved ids and
    /// escaped literal segments are unescaped then byte-pair encoded.
    pub fn encode_serialized(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for seg in segments(text) {
            match seg {
                Segment::Special(s) => out.push(self.special_id(s)),
                Segment::Literal(t) => out.extend(self.encode(&t)),
            }
        }
        out
    }

    /// Stable text form: header, byte alphabet, reserved ids and merges.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{VOCAB_HEADER}");
        let _ = writeln!(s, "alphabet bytes 256");
        let _ = writeln!(s, "specials {}", SpecialToken::ALL.len());
        for t in SpecialToken::ALL {
            let _ = writeln!(s, "{} {}", self.special_id(t), t.surface());
        }
        let _ = writeln!(s, "merges {}", self.merges.len());
        for (rank, &(a, b)) in self.merges.iter().enumerate() {
            let _ = writeln!(s, "{a} {b} {}", hex(&self.id_to_token[256 + rank]));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, CodecError> {
        let bad = |line: usize, msg: &str| CodecError::BadVocabFile { line, msg: msg.to_string() };
        let lines: Vec<&str> = text.lines().collect();
        let get = |i: usize| lines.get(i).copied().ok_or_else(|| bad(i + 1, "unexpected end of file"));
        if get(0)? != VOCAB_HEADER {
            return Err(bad(1, "unsupported header"));
        }
        if get(1)? != "alphabet bytes 256" {
            return Err(bad(2, "unsupported alphabet"));
        }
        if get(2)? != "specials 7" {
            return Err(bad(3, "expected 7 reserved tokens"));
        }
        let mut specials = Vec::new();
        for i in 3..10 {
            let (id, surface) = get(i)?.split_once(' ').ok_or_else(|| bad(i + 1, "expected `<id> <surface>`"))?;
            let id: u32 = id.parse().map_err(|_| bad(i + 1, "bad id"))?;
            specials.push((i + 1, id, surface.to_string()));
        }
        let n: usize = get(10)?
            .strip_prefix("merges ")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| bad(11, "expected `merges <count>`"))?;
        let mut merges = Vec::with_capacity(n);
        let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        for i in 11..11 + n {
            let parts: Vec<&str> = get(i)?.split(' ').collect();
            let [a, b, h] = parts[..] else {
                return Err(bad(i + 1, "expected `<left id> <right id> <hex>`"));
            };
            let a: u32 = a.parse().map_err(|_| bad(i + 1, "bad left id"))?;
            let b: u32 = b.parse().map_err(|_| bad(i + 1, "bad right id"))?;
            let (Some(ta), Some(tb)) = (tokens.get(a as usize), tokens.get(b as usize)) else {
                return Err(bad(i + 1, "merge refers to an unknown id"));
            };
            let mut t = ta.clone();
            t.extend_from_slice(tb);
            if unhex(h).as_deref() != Some(t.as_slice()) {
                return Err(bad(i + 1, "merged bytes do not match"));
            }
            tokens.push(t);
            merges.push((a, b));
        }
        let vocab = BpeVocab::from_merges(merges).map_err(|_| bad(0, "inconsistent merges"))?;
        for (line, id, surface) in specials {
            let ok = SpecialToken::ALL.iter().any(|&t| t.surface() == surface && vocab.special_id(t) == id);
            if !ok {
                return Err(bad(line, "reserved token id does not match the merge count"));
            }
        }
        Ok(vocab)
    }

    /// Hex SHA-256 of the text form; identifies the vocabulary in
    /// checkpoints and artifacts.
    pub fn fingerprint(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn unhex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) || s.is_empty() {
        return None;
    }
    (0..s.len()).step_by(2).map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok()).collect()
}

/// Learns `merge_count` merges by repeatedly merging the most frequent
/// adjacent pair (ties go to the lexicographically smallest byte pair).
/// Training stops early once no pair occurs at least twice.
pub fn train_bpe<S: AsRef<str>>(texts: &[S], merge_count: usize) -> Result<BpeVocab, CodecError> {
    if texts.iter().all(|t| t.as_ref().is_empty()) {
        return Err(CodecError::EmptyCorpus);
    }
    let mut counts: BTreeMap<&[u8], usize> = BTreeMap::new();
    for t in texts {
        for c in chunks(t.as_ref()) {
            *counts.entry(c.as_bytes()).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<u32>, usize)> =
        counts.into_iter().map(|(w, n)| (w.iter().map(|&b| u32::from(b)).collect(), n)).collect();
    let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    let mut merges = Vec::new();
    while merges.len() < merge_count {
        let mut pairs: BTreeMap<(u32, u32), usize> = BTreeMap::new();
        for (w, n) in &words {
            for p in w.windows(2) {
                *pairs.entry((p[0], p[1])).or_default() += n;
            }
        }
        let best = pairs.into_iter().filter(|&(_, n)| n >= 2).max_by(|(pa, na), (pb, nb)| {
            na.cmp(nb).then_with(|| {
                let ka = (&tokens[pa.0 as usize], &tokens[pa.1 as usize]);
                let kb = (&tokens[pb.0 as usize], &tokens[pb.1 as usize]);
                kb.cmp(&ka)
            })
        });
        let Some(((a, b), _)) = best else { break };
        let id = tokens.len() as u32;
        let mut t = tokens[a as usize].clone();
        t.extend_from_slice(&tokens[b as usize]);
        tokens.push(t);
        merges.push((a, b));
        for (w, _) in &mut words {
            let mut i = 0;
            let mut out = Vec::with_capacity(w.len());
            while i < w.len() {
                if i + 1 < w.len() && w[i] == a && w[i + 1] == b {
                    out.push(id);
                    i += 2;
                } else {
                    out.push(w[i]);
                    i += 1;
                }
            }
            *w = out;
        }
    }
    BpeVocab::from_merges(merges)
}

/// Escapes `\`, `<` and `$` so literal text cannot form a delimiter.
pub fn escape(text: &str) -> String {
    let mut s = String::with_capacity(text.len());
    for c in text.chars() {
        if matches!(c, '\\' | '<' | '$') {
            s.push('\\');
        }
        s.push(c);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Special(SpecialToken),
    Literal(String),
}

fn segments(text: &str) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut lit = String::new();
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        if c == '\\' {
            let mut it = rest[1..].chars();
            match it.next() {
                Some(n) => {
                    lit.push(n);
                    rest = &rest[1 + n.len_utf8()..];
                }
                None => {
                    lit.push('\\');
                    rest = "";
                }
            }
            continue;
        }
        if let Some(tok) = SpecialToken::ALL.iter().find(|t| rest.starts_with(t.surface())) {
            if !lit.is_empty() {
                out.push(Segment::Literal(core::mem::take(&mut lit)));
            }
            out.push(Segment::Special(*tok));
            rest = &rest[tok.surface().len()..];
            continue;
        }
        lit.push(c);
        rest = &rest[c.len_utf8()..];
    }
    if !lit.is_empty() {
        out.push(Segment::Literal(lit));
    }
    out
}

/// Literal content of a field as it appears in the serialization.
pub fn field_content(record: &RecipeRecord, field: FieldKind, ingredient_order: &[usize]) -> String {
    match field {
        FieldKind::Title => record.title.clone(),
        FieldKind::Ingredients => {
            ingredient_order.iter().map(|&i| record.ingredients[i].original.as_str()).collect::<Vec<_>>().join("\n")
        }
        FieldKind::Instructions => record.steps.join(" "),
    }
}

fn is_permutation(order: &[usize], n: usize) -> bool {
    order.len() == n && order.iter().copied().collect::<BTreeSet<_>>() == (0..n).collect()
}

/// Serializes `(field, content)` pairs in the given order.
pub fn serialize_fields<'a>(fields: impl IntoIterator<Item = (FieldKind, &'a str)>) -> String {
    let mut s = String::new();
    for (i, (f, content)) in fields.into_iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(SpecialToken::Start(f).surface());
        s.push(' ');
        s.push_str(&escape(content));
        s.push(' ');
        s.push_str(SpecialToken::End(f).surface());
    }
    s
}

/// Serializes a record with the given field order and ingredient order.
///
/// # Panics
///
/// If either order is not a permutation.
pub fn serialize_multifield(record: &RecipeRecord, field_order: &[FieldKind], ingredient_order: &[usize]) -> String {
    assert!(
        field_order.len() == 3 && field_order.iter().collect::<BTreeSet<_>>().len() == 3,
        "field order must be a permutation of the three fields"
    );
    assert!(is_permutation(ingredient_order, record.ingredients.len()), "ingredient order must be a permutation");
    let contents: Vec<(FieldKind, String)> =
        field_order.iter().map(|&f| (f, field_content(record, f, ingredient_order))).collect();
    serialize_fields(contents.iter().map(|(f, c)| (*f, c.as_str())))
}

/// Serialization in canonical field and ingredient order.
pub fn serialize_canonical(record: &RecipeRecord) -> String {
    let order: Vec<usize> = (0..record.ingredients.len()).collect();
    serialize_multifield(record, &FieldKind::ALL, &order)
}

/// Literal segments of a canonical serialization; the text a BPE vocabulary
/// is trained on.
pub fn training_texts(record: &RecipeRecord) -> Vec<String> {
    segments(&serialize_canonical(record))
        .into_iter()
        .filter_map(|s| match s {
            Segment::Literal(t) => Some(t),
            Segment::Special(_) => None,
        })
        .collect()
}

/// Parses a serialization back into `(field, content)` pairs in order.
pub fn parse_multifield(text: &str) -> Result<Vec<(FieldKind, String)>, CodecError> {
    let segs = segments(text);
    let mut out = Vec::new();
    let mut i = 0;
    let malformed = |m: &str| CodecError::Malformed(m.to_string());
    while i < segs.len() {
        if !out.is_empty() {
            match &segs[i] {
                Segment::Literal(s) if s == " " => i += 1,
                _ => return Err(malformed("fields must be separated by one space")),
            }
        }
        let Some(Segment::Special(SpecialToken::Start(f))) = segs.get(i) else {
            return Err(malformed("expected a start delimiter"));
        };
        let (content, next) = match segs.get(i + 1) {
            Some(Segment::Literal(s)) => (s.as_str(), i + 2),
            _ => return Err(malformed("missing field content")),
        };
        let content = content
            .strip_prefix(' ')
            .and_then(|c| c.strip_suffix(' '))
            .ok_or_else(|| malformed("field content must be space padded"))?;
        match segs.get(next) {
            Some(Segment::Special(SpecialToken::End(e))) if e == f => {}
            _ => return Err(malformed("missing matching end delimiter")),
        }
        out.push((*f, content.to_string()));
        i = next + 1;
    }
    Ok(out)
}

/// An encoded training example: at most `max_len` ids, right-padded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedRecipe {
    pub ids: Vec<u32>,
    pub pad_id: u32,
}

impl EncodedRecipe {
    /// Length of the prefix before the trailing padding.
    pub fn content_len(&self) -> usize {
        self.ids.iter().rposition(|&i| i != self.pad_id).map_or(0, |p| p + 1)
    }

    pub fn content(&self) -> &[u32] {
        &self.ids[..self.content_len()]
    }
}

/// Which next-token targets contribute to the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossMask {
    /// Exclude targets that are padding.
    pub pads: bool,
    /// Exclude targets before the last field's start delimiter, so only
    /// the final (generated) field is learned.
    pub context: bool,
}

impl Default for LossMask {
    fn default() -> Self {
        LossMask { pads: true, context: false }
    }
}

impl LossMask {
    /// `weights[t]` is true when predicting `ids[t + 1]` from `ids[..=t]`
    /// counts towards the loss.
    pub fn target_weights(&self, ids: &[u32], vocab: &BpeVocab) -> Vec<bool> {
        let pad = vocab.pad_id();
        let last_start = if self.context {
            ids.iter().rposition(|&i| matches!(vocab.special(i), Some(SpecialToken::Start(_))))
        } else {
            None
        };
        (0..ids.len().saturating_sub(1))
            .map(|t| {
                let target = ids[t + 1];
                !(self.pads && target == pad) && last_start.is_none_or(|s| t + 1 > s)
            })
            .collect()
    }
}

/// Draws a field order and an ingredient order uniformly at random.
pub fn shuffled_orders(record: &RecipeRecord, rng: &mut impl Rng) -> (Vec<FieldKind>, Vec<usize>) {
    let mut fields = FieldKind::ALL.to_vec();
    fields.shuffle(rng);
    let mut ingr: Vec<usize> = (0..record.ingredients.len()).collect();
    ingr.shuffle(rng);
    (fields, ingr)
}

/// Builds one training example: shuffled fields and ingredients, encoded,
/// then either cut to a random `max_len` window or right-padded to
/// `max_len`.
pub fn make_training_example(record: &RecipeRecord, seed: u64, vocab: &BpeVocab, max_len: usize) -> EncodedRecipe {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fields, ingr) = shuffled_orders(record, &mut rng);
    let mut ids = vocab.encode_serialized(&serialize_multifield(record, &fields, &ingr));
    if ids.len() > max_len {
        let start = rng.gen_range(0..=ids.len() - max_len);
        ids = ids[start..start + max_len].to_vec();
    } else {
        ids.resize(max_len, vocab.pad_id());
    }
    EncodedRecipe { ids, pad_id: vocab.pad_id() }
}

/// Encodes the context fields (canonical order) followed by the target's
/// start delimiter.
pub fn build_prompt(context: &BTreeMap<FieldKind, String>, target: FieldKind, vocab: &BpeVocab) -> Result<Vec<u32>, CodecError> {
    if context.contains_key(&target) {
        return Err(CodecError::TargetInContext(target));
    }
    if context.is_empty() {
        return Err(CodecError::EmptyContext);
    }
    let mut text = serialize_fields(context.iter().map(|(f, c)| (*f, c.as_str())));
    text.push(' ');
    text.push_str(SpecialToken::Start(target).surface());
    Ok(vocab.encode_serialized(&text))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_ingredient_line;
    use crate::textnorm::Lemmatizer;
    use proptest::prelude::*;

    fn record(ingr: &[&str], steps: &[&str]) -> RecipeRecord {
        let l = Lemmatizer::standard();
        RecipeRecord {
            id: "r1".into(),
            title: "T".into(),
            ingredients: ingr.iter().map(|i| parse_ingredient_line(i, &l).unwrap()).collect(),
            steps: steps.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn chunks_partition_text() {
        assert_eq!(chunks("Mix 2 eggs,  then"), ["Mix", " 2", " eggs", ",", " ", " then"]);
        assert_eq!(chunks("a\nb"), ["a", "\n", "b"]);
        assert_eq!(chunks(" x"), [" x"]);
        assert_eq!(chunks("x "), ["x", " "]);
    }

    #[test]
    fn zero_merges_is_byte_level() {
        let v = train_bpe(&["ab ab"], 0).unwrap();
        assert_eq!(v.len(), 256 + 7);
        assert_eq!(v.encode("ab").len(), 2);
    }

    #[test]
    fn single_merge_on_repeated_letter() {
        let v = train_bpe(&["aaaa"], 1).unwrap();
        assert_eq!(v.merges(), &[(u32::from(b'a'), u32::from(b'a'))]);
        assert_eq!(v.encode("aaaa").len(), 2);
    }

    #[test]
    fn training_is_deterministic_and_ties_break_lexicographically() {
        let texts = ["ab cd ab cd", "xy"];
        let a = train_bpe(&texts, 10).unwrap();
        assert_eq!(a, train_bpe(&texts, 10).unwrap());
        // (a,b), (' ',c) and (c,d) all occur twice; (' ',c) sorts first
        assert_eq!(a.token_bytes(256).unwrap(), b" c");
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert_eq!(train_bpe::<&str>(&[], 10), Err(CodecError::EmptyCorpus));
        assert_eq!(train_bpe(&[""], 10), Err(CodecError::EmptyCorpus));
    }

    #[test]
    fn round_trip_and_pad_surface() {
        let v = train_bpe(&["Sauté 2 cups of sauce, sauté again"], 20).unwrap();
        assert_eq!(v.decode(&v.encode("Sauté 2 cups")).unwrap(), "Sauté 2 cups");
        assert_eq!(v.decode(&[v.pad_id()]).unwrap(), "$");
        assert_eq!(v.decode(&[v.len() as u32]), Err(CodecError::UnknownId(v.len() as u32)));
    }

    #[test]
    fn user_text_cannot_inject_delimiters() {
        let v = train_bpe(&["<start-instr> hello"], 30).unwrap();
        let ids = v.encode("<start-instr>");
        assert!(ids.iter().all(|&i| !v.is_special(i)));
        assert_eq!(v.decode(&ids).unwrap(), "<start-instr>");
        // a field containing a delimiter surface stays one field
        let ser = serialize_fields([(FieldKind::Title, "a <end-title> $5")]);
        let ids = v.encode_serialized(&ser);
        assert_eq!(ids.iter().filter(|&&i| v.is_special(i)).count(), 2);
        assert_eq!(parse_multifield(&ser).unwrap(), vec![(FieldKind::Title, "a <end-title> $5".to_string())]);
        assert_eq!(v.render(&ids).unwrap(), ser);
    }

    #[test]
    fn serialize_example() {
        let r = record(&["1 egg", "2 cups flour"], &["S1.", "S2."]);
        let s = serialize_multifield(&r, &[FieldKind::Title, FieldKind::Instructions, FieldKind::Ingredients], &[1, 0]);
        assert_eq!(s, "<start-title> T <end-title> <start-instr> S1. S2. <end-instr> <start-ingr> 2 cups flour\n1 egg <end-ingr>");
        let c = serialize_canonical(&r);
        assert!(c.starts_with("<start-title>") && c.contains("<end-title> <start-ingr>") && c.ends_with("<end-instr>"));
    }

    #[test]
    fn vocab_text_round_trip() {
        let v = train_bpe(&["the theme then there", "these"], 40).unwrap();
        let text = v.to_text();
        let back = BpeVocab::from_text(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.fingerprint(), v.fingerprint());
        assert_eq!(v.fingerprint().len(), 64);
        let broken = text.replacen("recipe-bpe 1", "recipe-bpe 9", 1);
        assert!(matches!(BpeVocab::from_text(&broken), Err(CodecError::BadVocabFile { line: 1, .. })));
    }

    #[test]
    fn short_example_is_padded() {
        let r = record(&["1 egg", "2 cups flour", "salt"], &["Mix.", "Bake."]);
        let v = train_bpe(&training_texts(&r), 50).unwrap();
        let ex = make_training_example(&r, 3, &v, 128);
        assert_eq!(ex.ids.len(), 128);
        let n = ex.content_len();
        assert!(ex.ids[n..].iter().all(|&i| i == v.pad_id()));
        assert!(ex.ids[..n].iter().all(|&i| i != v.pad_id()));
        let fields = parse_multifield(&v.render(ex.content()).unwrap()).unwrap();
        assert_eq!(fields.len(), 3);
        assert_eq!(make_training_example(&r, 3, &v, 128), ex);
    }

    #[test]
    fn long_example_is_a_window() {
        let steps: Vec<String> = (0..60).map(|i| format!("Stir pot {i}.")).collect();
        let steps: Vec<&str> = steps.iter().map(String::as_str).collect();
        let r = record(&["1 egg", "2 cups flour"], &steps);
        let v = BpeVocab::byte_level();
        for seed in 0..5 {
            let ex = make_training_example(&r, seed, &v, 64);
            assert_eq!(ex.ids.len(), 64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (f, i) = shuffled_orders(&r, &mut rng);
            let full = v.encode_serialized(&serialize_multifield(&r, &f, &i));
            assert!(full.windows(64).any(|w| w == ex.ids.as_slice()));
        }
    }

    #[test]
    fn prompt_ends_with_target_start() {
        let v = BpeVocab::byte_level();
        let mut ctx = BTreeMap::new();
        ctx.insert(FieldKind::Title, "Cake".to_string());
        ctx.insert(FieldKind::Ingredients, "2 eggs\nflour".to_string());
        let p = build_prompt(&ctx, FieldKind::Instructions, &v).unwrap();
        assert_eq!(*p.last().unwrap(), v.start_id(FieldKind::Instructions));
        assert_eq!(p[0], v.start_id(FieldKind::Title));
        assert_eq!(build_prompt(&ctx, FieldKind::Title, &v), Err(CodecError::TargetInContext(FieldKind::Title)));
        assert_eq!(build_prompt(&BTreeMap::new(), FieldKind::Title, &v), Err(CodecError::EmptyContext));
        let mut ctx2 = BTreeMap::new();
        ctx2.insert(FieldKind::Instructions, "Mix. Bake.".to_string());
        ctx2.insert(FieldKind::Title, "Cake".to_string());
        let p = build_prompt(&ctx2, FieldKind::Ingredients, &v).unwrap();
        assert_eq!(*p.last().unwrap(), v.start_id(FieldKind::Ingredients));
        assert_eq!(p[0], v.start_id(FieldKind::Title));
    }

    #[test]
    fn loss_mask_weights() {
        let v = BpeVocab::byte_level();
        let pad = v.pad_id();
        let s = v.start_id(FieldKind::Title);
        let e = v.end_id(FieldKind::Title);
        let s2 = v.start_id(FieldKind::Instructions);
        let ids = [s, 65, e, s2, 66, pad, pad];
        assert_eq!(LossMask::default().target_weights(&ids, &v), [true, true, true, true, false, false]);
        let ctx = LossMask { pads: true, context: true };
        assert_eq!(ctx.target_weights(&ids, &v), [false, false, false, true, false, false]);
        let none = LossMask { pads: false, context: false };
        assert!(none.target_weights(&ids, &v).iter().all(|&w| w));
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(text in "\\PC{0,64}") {
            let v = train_bpe(&["the quick brown fox jumps over the lazy dog", "Sauté, ½ cup"], 60).unwrap();
            prop_assert_eq!(v.decode(&v.encode(&text)).unwrap(), text);
        }

        #[test]
        fn serialize_parse_round_trip(title in "[^\n]{1,20}", a in "[^\n]{1,15}", b in "[^\n]{1,15}", steps in "[a-z<>$\\\\ ]{1,30}") {
            let fields = [(FieldKind::Instructions, steps.as_str()), (FieldKind::Title, title.as_str()), (FieldKind::Ingredients, &*format!("{a}\n{b}"))];
            let ser = serialize_fields(fields);
            let parsed = parse_multifield(&ser).unwrap();
            let expected: Vec<(FieldKind, String)> = fields.iter().map(|(f, c)| (*f, c.to_string())).collect();
            prop_assert_eq!(parsed, expected);
        }
    }
}
