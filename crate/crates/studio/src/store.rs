//! Append-only annotation store.
//!
//! Log record layout (all integers little-endian):
//!
//! ```text
//! u32  payload length
//! u8   record type (1 generation, 2 rating, 3 comment)
//! u32  CRC-32 of the type byte followed by the payload
//! ...  payload: one JSON object
//! ```
//!
//! The log is replayed into memory on open. An incomplete record at the end
//! of the file (an interrupted write) is cut off.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use recipe_core::fieldcodec::{FieldKind, GenerationMode};
use recipe_core::langmodel::SamplingConfig;
use recipe_core::metrics::EvaluationReport;
use serde::{Deserialize, Serialize};

pub const MAX_COMMENT_CHARS: usize = 4000;
pub const RATING_RANGE: std::ops::RangeInclusive<u8> = 1..=5;

const HEADER_LEN: usize = 9;
const TYPE_GENERATION: u8 = 1;
const TYPE_RATING: u8 = 2;
const TYPE_COMMENT: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("generation {0} not found")]
    NotFound(u64),
    #[error("rating {0} is outside 1..=5")]
    OutOfRange(i64),
    #[error("comment is empty")]
    EmptyComment,
    #[error("comment exceeds {MAX_COMMENT_CHARS} characters")]
    CommentTooLong,
    #[error("context fields do not match mode {0:?}")]
    ModeMismatch(GenerationMode),
    #[error("{path}: corrupt record at byte {offset}")]
    Corrupt { path: PathBuf, offset: u64 },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// A generation as submitted for saving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewGeneration {
    pub mode: GenerationMode,
    pub context: BTreeMap<FieldKind, String>,
    pub output: String,
    pub sampling: SamplingConfig,
    pub report: Option<EvaluationReport>,
    pub reference_id: Option<String>,
}

impl NewGeneration {
    pub fn validate(&self) -> Result<(), StoreError> {
        let expected: Vec<FieldKind> = self.mode.context_fields().to_vec();
        let found: Vec<FieldKind> = self.context.keys().copied().collect();
        if found != expected {
            return Err(StoreError::ModeMismatch(self.mode));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub generation_id: u64,
    pub value: u8,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comment {
    pub generation_id: u64,
    pub text: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedGeneration {
    pub id: u64,
    pub created_at: DateTime<Utc>,
    #[serde(flatten)]
    pub generation: NewGeneration,
    pub ratings: Vec<Rating>,
    pub comments: Vec<Comment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GenerationRecord {
    id: u64,
    created_at: DateTime<Utc>,
    #[serde(flatten)]
    generation: NewGeneration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub items: Vec<SavedGeneration>,
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
}

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

struct Writer {
    file: File,
    next_id: u64,
}

pub struct Store {
    path: PathBuf,
    writer: Mutex<Writer>,
    items: RwLock<BTreeMap<u64, SavedGeneration>>,
    clock: Clock,
}

fn frame(kind: u8, payload: &[u8]) -> Vec<u8> {
    let mut h = crc32fast::Hasher::new();
    h.update(&[kind]);
    h.update(payload);
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.push(kind);
    out.extend_from_slice(&h.finalize().to_le_bytes());
    out.extend_from_slice(payload);
    out
}

/// A decoded log entry.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub offset: u64,
    pub kind: u8,
    pub payload: Vec<u8>,
}

/// Splits a log into records. Returns the records and the length of the
/// valid prefix; bytes past it belong to an incomplete final record.
pub fn parse_log(bytes: &[u8], path: &Path) -> Result<(Vec<LogRecord>, usize), StoreError> {
    let mut out = Vec::new();
    let mut at = 0;
    while at < bytes.len() {
        let Some(head) = bytes.get(at..at + HEADER_LEN) else { break };
        let len = u32::from_le_bytes(head[..4].try_into().expect("4 bytes")) as usize;
        let kind = head[4];
        let crc = u32::from_le_bytes(head[5..9].try_into().expect("4 bytes"));
        let Some(payload) = bytes.get(at + HEADER_LEN..at + HEADER_LEN + len) else { break };
        let end = at + HEADER_LEN + len;
        let mut h = crc32fast::Hasher::new();
        h.update(&[kind]);
        h.update(payload);
        if h.finalize() != crc {
            if end == bytes.len() {
                break;
            }
            return Err(StoreError::Corrupt { path: path.to_path_buf(), offset: at as u64 });
        }
        out.push(LogRecord { offset: at as u64, kind, payload: payload.to_vec() });
        at = end;
    }
    Ok((out, at))
}

impl Store {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        Self::open_with_clock(path, Arc::new(Utc::now))
    }

    pub fn open_with_clock(path: &Path, clock: Clock) -> Result<Self, StoreError> {
        let io = |source| StoreError::Io { path: path.to_path_buf(), source };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path).map_err(io)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io)?;
        let (records, valid) = parse_log(&bytes, path)?;
        if valid < bytes.len() {
            log::warn!("{}: dropping {} bytes of an incomplete final record", path.display(), bytes.len() - valid);
            file.set_len(valid as u64).map_err(io)?;
            file.seek(SeekFrom::End(0)).map_err(io)?;
        }
        let mut items = BTreeMap::new();
        let corrupt = |r: &LogRecord| StoreError::Corrupt { path: path.to_path_buf(), offset: r.offset };
        for r in &records {
            match r.kind {
                TYPE_GENERATION => {
                    let g: GenerationRecord = serde_json::from_slice(&r.payload).map_err(|_| corrupt(r))?;
                    items.insert(g.id, SavedGeneration { id: g.id, created_at: g.created_at, generation: g.generation, ratings: Vec::new(), comments: Vec::new() });
                }
                TYPE_RATING => {
                    let x: Rating = serde_json::from_slice(&r.payload).map_err(|_| corrupt(r))?;
                    items.get_mut(&x.generation_id).ok_or_else(|| corrupt(r))?.ratings.push(x);
                }
                TYPE_COMMENT => {
                    let x: Comment = serde_json::from_slice(&r.payload).map_err(|_| corrupt(r))?;
                    items.get_mut(&x.generation_id).ok_or_else(|| corrupt(r))?.comments.push(x);
                }
                _ => return Err(corrupt(r)),
            }
        }
        let next_id = items.keys().next_back().map_or(1, |id| id + 1);
        Ok(Store { path: path.to_path_buf(), writer: Mutex::new(Writer { file, next_id }), items: RwLock::new(items), clock })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn append(&self, w: &mut Writer, kind: u8, payload: &[u8]) -> Result<(), StoreError> {
        let io = |source| StoreError::Io { path: self.path.clone(), source };
        w.file.write_all(&frame(kind, payload)).map_err(io)?;
        w.file.sync_data().map_err(io)
    }

    pub fn save_generation(&self, generation: NewGeneration) -> Result<SavedGeneration, StoreError> {
        generation.validate()?;
        let mut w = self.writer.lock().expect("store writer poisoned");
        let rec = GenerationRecord { id: w.next_id, created_at: (self.clock)(), generation };
        self.append(&mut w, TYPE_GENERATION, &serde_json::to_vec(&rec).expect("record serializes"))?;
        w.next_id += 1;
        let saved = SavedGeneration { id: rec.id, created_at: rec.created_at, generation: rec.generation, ratings: Vec::new(), comments: Vec::new() };
        self.items.write().expect("store index poisoned").insert(saved.id, saved.clone());
        Ok(saved)
    }

    pub fn get(&self, id: u64) -> Result<SavedGeneration, StoreError> {
        self.items.read().expect("store index poisoned").get(&id).cloned().ok_or(StoreError::NotFound(id))
    }

    /// Newest first; `page` starts at 1.
    pub fn list(&self, page: usize, page_size: usize) -> Page {
        let items = self.items.read().expect("store index poisoned");
        let mut all: Vec<&SavedGeneration> = items.values().collect();
        all.sort_by(|a, b| b.created_at.cmp(&a.created_at).then(b.id.cmp(&a.id)));
        let page = page.max(1);
        let page_size = page_size.max(1);
        let slice = all.iter().skip((page - 1).saturating_mul(page_size)).take(page_size).map(|g| (*g).clone()).collect();
        Page { items: slice, page, page_size, total: all.len() }
    }

    pub fn len(&self) -> usize {
        self.items.read().expect("store index poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add_rating(&self, id: u64, value: i64) -> Result<Rating, StoreError> {
        let v = u8::try_from(value).ok().filter(|v| RATING_RANGE.contains(v)).ok_or(StoreError::OutOfRange(value))?;
        let mut w = self.writer.lock().expect("store writer poisoned");
        self.get(id)?;
        let r = Rating { generation_id: id, value: v, created_at: (self.clock)() };
        self.append(&mut w, TYPE_RATING, &serde_json::to_vec(&r).expect("rating serializes"))?;
        self.items.write().expect("store index poisoned").get_mut(&id).expect("checked above").ratings.push(r.clone());
        Ok(r)
    }

    pub fn add_comment(&self, id: u64, text: &str) -> Result<Comment, StoreError> {
        if text.trim().is_empty() {
            return Err(StoreError::EmptyComment);
        }
        if text.chars().count() > MAX_COMMENT_CHARS {
            return Err(StoreError::CommentTooLong);
        }
        let mut w = self.writer.lock().expect("store writer poisoned");
        self.get(id)?;
        let c = Comment { generation_id: id, text: text.to_string(), created_at: (self.clock)() };
        self.append(&mut w, TYPE_COMMENT, &serde_json::to_vec(&c).expect("comment serializes"))?;
        self.items.write().expect("store index poisoned").get_mut(&id).expect("checked above").comments.push(c.clone());
        Ok(c)
    }
}
