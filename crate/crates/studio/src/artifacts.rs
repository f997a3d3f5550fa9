//! On-disk formats: corpus files, split manifests, vocabularies,
//! checkpoints, training traces and the index cache.

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use recipe_core::corpus::{filter_recipe, CorpusSplit, RawRecipe, RecipeRecord, Rejection};
use recipe_core::fieldcodec::{sha256_hex, BpeVocab, CodecError};
use recipe_core::langmodel::{ModelConfig, ModelParams, Real, TraceRow, TrainConfig};
use recipe_core::retrieval::InvertedIndex;
use recipe_core::textnorm::Lemmatizer;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: malformed record: {msg}")]
    MalformedRecord { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: vocabulary: {source}")]
    Vocab { path: PathBuf, source: CodecError },
    #[error("checkpoint {checkpoint} was trained with vocabulary {expected}, but {vocab} has {found}")]
    VocabMismatch { checkpoint: PathBuf, vocab: PathBuf, expected: String, found: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, msg: impl Into<String>) -> ArtifactError {
    ArtifactError::Format { path: path.to_path_buf(), msg: msg.into() }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, ArtifactError> {
    fs::read(path).map_err(io_err(path))
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ArtifactError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// One line of the corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusLine {
    pub id: String,
    pub title: String,
    pub ingredients: Vec<String>,
    pub instructions: String,
}

impl From<CorpusLine> for RawRecipe {
    fn from(l: CorpusLine) -> Self {
        RawRecipe { source_id: l.id, title: l.title, ingredient_lines: l.ingredients, instruction_text: l.instructions }
    }
}

impl From<&RawRecipe> for CorpusLine {
    fn from(r: &RawRecipe) -> Self {
        CorpusLine {
            id: r.source_id.clone(),
            title: r.title.clone(),
            ingredients: r.ingredient_lines.clone(),
            instructions: r.instruction_text.clone(),
        }
    }
}

/// Reads a line-delimited JSON corpus. Blank lines are skipped; any other
/// line that does not match the schema fails with its 1-based number.
pub fn ingest_jsonl(path: &Path) -> Result<Vec<RawRecipe>, ArtifactError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    read_jsonl(BufReader::new(file), path)
}

pub fn read_jsonl(reader: impl BufRead, path: &Path) -> Result<Vec<RawRecipe>, ArtifactError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusLine = serde_json::from_str(&line).map_err(|e| ArtifactError::MalformedRecord {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec.into());
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, recipes: &[RawRecipe]) -> Result<(), ArtifactError> {
    let mut buf = Vec::new();
    for r in recipes {
        serde_json::to_writer(&mut buf, &CorpusLine::from(r)).expect("corpus line serializes");
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

/// Outcome of filtering a raw corpus.
#[derive(Debug, Clone, Default)]
pub struct FilteredCorpus {
    pub accepted: Vec<RecipeRecord>,
    pub rejected: Vec<(String, Rejection)>,
}

impl FilteredCorpus {
    pub fn from_raw(raw: &[RawRecipe], lemmatizer: &Lemmatizer) -> Self {
        let mut out = FilteredCorpus::default();
        for r in raw {
            match filter_recipe(r, lemmatizer) {
                Ok(rec) => out.accepted.push(rec),
                Err(why) => out.rejected.push((r.source_id.clone(), why)),
            }
        }
        out
    }

    /// Rejection counts by rule name, sorted by name.
    pub fn rejection_counts(&self) -> Vec<(&'static str, usize)> {
        let mut counts = std::collections::BTreeMap::new();
        for (_, r) in &self.rejected {
            *counts.entry(r.rule()).or_insert(0) += 1;
        }
        counts.into_iter().collect()
    }
}

/// Reads and filters a corpus file; rejected lines are dropped.
pub fn load_corpus(path: &Path) -> Result<Vec<RecipeRecord>, ArtifactError> {
    Ok(FilteredCorpus::from_raw(&ingest_jsonl(path)?, &Lemmatizer::standard()).accepted)
}

/// Content hash of a corpus file.
pub fn corpus_hash(path: &Path) -> Result<String, ArtifactError> {
    Ok(sha256_hex(&read_file(path)?))
}

pub fn write_split(path: &Path, split: &CorpusSplit) -> Result<(), ArtifactError> {
    let mut s = serde_json::to_string_pretty(split).expect("split serializes");
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_split(path: &Path) -> Result<CorpusSplit, ArtifactError> {
    serde_json::from_slice(&read_file(path)?).map_err(|e| format_err(path, e.to_string()))
}

pub fn write_vocab(path: &Path, vocab: &BpeVocab) -> Result<(), ArtifactError> {
    write_atomic(path, vocab.to_text().as_bytes())
}

pub fn read_vocab(path: &Path) -> Result<BpeVocab, ArtifactError> {
    let text = String::from_utf8(read_file(path)?).map_err(|_| format_err(path, "not UTF-8"))?;
    BpeVocab::from_text(&text).map_err(|source| ArtifactError::Vocab { path: path.to_path_buf(), source })
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"RCPMODEL";
const CHECKPOINT_VERSION: u32 = 1;

/// Metadata stored at the head of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub vocab_hash: String,
    pub step: u64,
    pub dtype: String,
    pub n_params: usize,
    pub train_config: Option<TrainConfig>,
}

/// Checkpoint layout: 8-byte magic `RCPMODEL`, u32 LE version, u32 LE
/// header length, the JSON header, then the parameters as little-endian
/// floats of `dtype`.
pub fn write_checkpoint<R: Real>(path: &Path, params: &ModelParams<R>, header: &CheckpointHeader) -> Result<(), ArtifactError> {
    let json = serde_json::to_vec(header).expect("header serializes");
    let mut buf = Vec::with_capacity(16 + json.len() + params.len() * std::mem::size_of::<R>());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for &x in params.data() {
        x.to_le_bytes_vec(&mut buf);
    }
    write_atomic(path, &buf)
}

pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader, ArtifactError> {
    let mut f = fs::File::open(path).map_err(io_err(path))?;
    let mut head = [0u8; 16];
    f.read_exact(&mut head).map_err(|_| format_err(path, "truncated checkpoint"))?;
    let len = parse_preamble(path, &head)?;
    let mut json = vec![0u8; len];
    f.read_exact(&mut json).map_err(|_| format_err(path, "truncated checkpoint header"))?;
    serde_json::from_slice(&json).map_err(|e| format_err(path, e.to_string()))
}

fn parse_preamble(path: &Path, head: &[u8]) -> Result<usize, ArtifactError> {
    if head.len() < 16 || &head[..8] != CHECKPOINT_MAGIC {
        return Err(format_err(path, "not a checkpoint file"));
    }
    let version = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(format_err(path, format!("unsupported checkpoint version {version}")));
    }
    Ok(u32::from_le_bytes(head[12..16].try_into().expect("4 bytes")) as usize)
}

fn decode_params<S: Real, R: Real>(bytes: &[u8]) -> Vec<R> {
    bytes.chunks_exact(std::mem::size_of::<S>()).map(|c| R::from_f64_lossy(S::from_le_slice(c).to_f64_lossy())).collect()
}

/// Loads a checkpoint, converting the stored precision to `R`.
pub fn read_checkpoint<R: Real>(path: &Path) -> Result<(CheckpointHeader, ModelParams<R>), ArtifactError> {
    let bytes = read_file(path)?;
    let len = parse_preamble(path, &bytes)?;
    let body_at = 16 + len;
    let json = bytes.get(16..body_at).ok_or_else(|| format_err(path, "truncated checkpoint header"))?;
    let header: CheckpointHeader = serde_json::from_slice(json).map_err(|e| format_err(path, e.to_string()))?;
    let body = &bytes[body_at..];
    let data: Vec<R> = match header.dtype.as_str() {
        "f32" if body.len() == header.n_params * 4 => decode_params::<f32, R>(body),
        "f64" if body.len() == header.n_params * 8 => decode_params::<f64, R>(body),
        "f32" | "f64" => return Err(format_err(path, "parameter block has the wrong size")),
        other => return Err(format_err(path, format!("unknown dtype {other:?}"))),
    };
    let params = ModelParams::from_data(header.config, data).map_err(|e| format_err(path, e.to_string()))?;
    Ok((header, params))
}

/// Fails unless the checkpoint was trained with `vocab`.
pub fn check_vocab_hash(header: &CheckpointHeader, checkpoint: &Path, vocab: &BpeVocab, vocab_path: &Path) -> Result<(), ArtifactError> {
    let found = vocab.fingerprint();
    if header.vocab_hash != found {
        return Err(ArtifactError::VocabMismatch {
            checkpoint: checkpoint.to_path_buf(),
            vocab: vocab_path.to_path_buf(),
            expected: header.vocab_hash.clone(),
            found,
        });
    }
    Ok(())
}

/// Tab-separated `step`, `train_loss`, `val_ppl` rows; missing values are
/// written as `-`.
pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<(), ArtifactError> {
    let mut buf = BufWriter::new(Vec::new());
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
    writeln!(buf, "step\ttrain_loss\tval_ppl").expect("in-memory write");
    for r in rows {
        writeln!(buf, "{}\t{}\t{}", r.step, opt(r.train_loss), opt(r.val_ppl)).expect("in-memory write");
    }
    write_atomic(path, &buf.into_inner().expect("in-memory flush"))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>, ArtifactError> {
    let text = String::from_utf8(read_file(path)?).map_err(|_| format_err(path, "not UTF-8"))?;
    let field = |s: &str| -> Result<Option<f64>, ArtifactError> {
        if s == "-" {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| format_err(path, format!("bad number {s:?}")))
        }
    };
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let cols: Vec<&str> = l.split('\t').collect();
            if cols.len() != 3 {
                return Err(format_err(path, format!("bad trace row {l:?}")));
            }
            let step = cols[0].parse().map_err(|_| format_err(path, format!("bad step {:?}", cols[0])))?;
            Ok(TraceRow { step, train_loss: field(cols[1])?, val_ppl: field(cols[2])? })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct IndexCache {
    corpus_hash: String,
    index: InvertedIndex,
}

/// Returns the cached index when it was built from a corpus with the same
/// content hash.
pub fn read_index_cache(path: &Path, corpus_hash: &str) -> Option<InvertedIndex> {
    let bytes = fs::read(path).ok()?;
    let cache: IndexCache = serde_json::from_slice(&bytes).ok()?;
    (cache.corpus_hash == corpus_hash).then_some(cache.index)
}

pub fn write_index_cache(path: &Path, corpus_hash: &str, index: &InvertedIndex) -> Result<(), ArtifactError> {
    let cache = IndexCache { corpus_hash: corpus_hash.to_string(), index: index.clone() };
    write_atomic(path, &serde_json::to_vec(&cache).expect("index serializes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn malformed_line_numbers() {
        let text = "{\"id\":\"a\",\"title\":\"T\",\"ingredients\":[],\"instructions\":\"x\"}\n\n{\"id\":\"b\",\"ingredients\":[],\"instructions\":\"x\"}\n";
        let err = read_jsonl(text.as_bytes(), Path::new("c.jsonl")).unwrap_err();
        assert!(matches!(err, ArtifactError::MalformedRecord { line: 3, .. }), "{err}");
        assert!(read_jsonl("".as_bytes(), Path::new("c.jsonl")).unwrap().is_empty());
    }

    #[test]
    fn checkpoint_round_trip_and_dtype_conversion() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig { n_layers: 1, n_heads: 1, embed_dim: 4, context_len: 8, vocab_size: 10 };
        let p = ModelParams::<f64>::init(cfg, 3).unwrap();
        let header = CheckpointHeader { config: cfg, vocab_hash: "h".into(), step: 5, dtype: "f64".into(), n_params: p.len(), train_config: None };
        let path = dir.path().join("m.ckpt");
        write_checkpoint(&path, &p, &header).unwrap();
        let (h, back) = read_checkpoint::<f64>(&path).unwrap();
        assert_eq!((h, &back), (header.clone(), &p));
        let (_, as32) = read_checkpoint::<f32>(&path).unwrap();
        assert_eq!(as32, p.cast::<f32>());
        assert_eq!(read_checkpoint_header(&path).unwrap().step, 5);
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 1);
        fs::write(&path, &bytes).unwrap();
        assert!(read_checkpoint::<f32>(&path).is_err());
    }

    #[test]
    fn trace_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            TraceRow { step: 0, train_loss: None, val_ppl: Some(100.5) },
            TraceRow { step: 1, train_loss: Some(3.25), val_ppl: None },
        ];
        let path = dir.path().join("t.tsv");
        write_trace(&path, &rows).unwrap();
        assert_eq!(read_trace(&path).unwrap(), rows);
    }
}
