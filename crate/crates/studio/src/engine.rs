//! Loaded artifacts and the request-level operations built on them.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use recipe_core::corpus::{parse_ingredient_line, IngredientLine, RecipeRecord};
use recipe_core::fieldcodec::{BpeVocab, FieldKind, GenerationMode};
use recipe_core::langmodel::{generate_field, ModelError, ModelParams, SamplingConfig, MAX_NEW_TOKENS};
use recipe_core::metrics::{EvaluationReport, Evaluator};
use recipe_core::retrieval::{build_index, Bm25Params, InvertedIndex, RetrievalError, SearchQuery};
use recipe_core::textnorm::{generated_ingredient_highlights, overlap_highlights, HighlightSpan, Lemmatizer};
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, ArtifactError, CheckpointHeader};

pub const K_RANGE: std::ops::RangeInclusive<usize> = 1..=30;
pub const DEFAULT_K: usize = 3;

/// A checkpoint together with the vocabulary it was trained with.
pub struct LoadedModel {
    pub params: ModelParams<f32>,
    pub vocab: BpeVocab,
    pub header: CheckpointHeader,
}

impl LoadedModel {
    /// Loads both files and checks that they belong together.
    pub fn load(checkpoint: &Path, vocab_path: &Path) -> Result<Self, ArtifactError> {
        let vocab = artifacts::read_vocab(vocab_path)?;
        let header = artifacts::read_checkpoint_header(checkpoint)?;
        artifacts::check_vocab_hash(&header, checkpoint, &vocab, vocab_path)?;
        let (header, params) = artifacts::read_checkpoint::<f32>(checkpoint)?;
        Ok(LoadedModel { params, vocab, header })
    }
}

#[derive(Debug, Clone, Default)]
pub struct EnginePaths {
    pub corpus: PathBuf,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub index_cache: Option<PathBuf>,
}

pub struct Engine {
    pub corpus: Vec<RecipeRecord>,
    by_id: HashMap<String, usize>,
    pub index: InvertedIndex,
    pub bm25: Bm25Params,
    pub evaluator: Evaluator,
    pub model: Option<LoadedModel>,
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("{0}")]
    Invalid(String),
    #[error("no model is loaded")]
    ModelNotLoaded,
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Request body of `POST /v1/generate`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub mode: GenerationMode,
    pub title: String,
    #[serde(default)]
    pub ingredients: Option<Vec<String>>,
    #[serde(default)]
    pub instructions: Option<String>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub max_new_tokens: Option<usize>,
}

/// A corpus recipe as shown to clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecipeView {
    pub id: String,
    pub title: String,
    pub ingredients: Vec<String>,
    pub instructions: String,
}

impl From<&RecipeRecord> for RecipeView {
    fn from(r: &RecipeRecord) -> Self {
        RecipeView {
            id: r.id.clone(),
            title: r.title.clone(),
            ingredients: r.ingredients.iter().map(|i| i.original.clone()).collect(),
            instructions: r.instruction_text(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceHit {
    pub recipe: RecipeView,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub mode: GenerationMode,
    pub output: String,
    pub truncated: bool,
    pub highlights: Vec<HighlightSpan>,
    pub reference: Option<ReferenceHit>,
    pub report: Option<EvaluationReport>,
    pub sampling: SamplingConfig,
    /// The context fields the model was conditioned on.
    pub context: BTreeMap<FieldKind, String>,
    pub elapsed_ms: u64,
}

/// A validated generation request.
struct Prepared {
    context: BTreeMap<FieldKind, String>,
    ingredients: Vec<IngredientLine>,
    sampling: SamplingConfig,
}

fn invalid(msg: impl Into<String>) -> EngineError {
    EngineError::Invalid(msg.into())
}

fn fresh_seed() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_nanos() as u64)
}

impl Engine {
    pub fn new(corpus: Vec<RecipeRecord>, index: InvertedIndex, model: Option<LoadedModel>) -> Self {
        let by_id = corpus.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
        Engine { corpus, by_id, index, bm25: Bm25Params::default(), evaluator: Evaluator::default(), model }
    }

    /// Loads the corpus, builds (or reads the cached) index, and loads the
    /// model when a checkpoint is given.
    pub fn load(paths: &EnginePaths) -> anyhow::Result<Self> {
        let corpus = artifacts::load_corpus(&paths.corpus)?;
        let index = load_index(&paths.corpus, &corpus, paths.index_cache.as_deref())?;
        let model = match (&paths.checkpoint, &paths.vocab) {
            (Some(ckpt), Some(vocab)) => Some(LoadedModel::load(ckpt, vocab)?),
            (Some(_), None) => anyhow::bail!("a checkpoint needs its vocabulary (--vocab)"),
            _ => None,
        };
        Ok(Engine::new(corpus, index, model))
    }

    pub fn recipe(&self, id: &str) -> Option<&RecipeRecord> {
        self.by_id.get(id).map(|&i| &self.corpus[i])
    }

    /// The best-matching corpus recipe, if any document matches.
    pub fn reference(&self, query: &SearchQuery) -> Result<Option<ReferenceHit>, RetrievalError> {
        let hits = self.index.search(query, 1, &self.bm25, self.evaluator.dict.lemmatizer())?;
        Ok(hits.into_iter().next().and_then(|h| {
            let rec = self.recipe(&h.id)?;
            Some(ReferenceHit { recipe: rec.into(), score: h.score })
        }))
    }

    fn prepare(&self, req: &GenerateRequest) -> Result<Prepared, EngineError> {
        let title = req.title.trim();
        if title.is_empty() {
            return Err(invalid("title must not be empty"));
        }
        let mut context = BTreeMap::new();
        context.insert(FieldKind::Title, title.to_string());
        let mut ingredients = Vec::new();
        match req.mode {
            GenerationMode::Instructions => {
                if req.instructions.is_some() {
                    return Err(invalid("instructions must be absent when generating instructions"));
                }
                let lines = req.ingredients.as_ref().ok_or_else(|| invalid("ingredients are required when generating instructions"))?;
                let lines: Vec<&str> = lines.iter().map(|l| l.trim()).filter(|l| !l.is_empty()).collect();
                if lines.is_empty() {
                    return Err(invalid("ingredients must not be empty"));
                }
                let lem = Lemmatizer::standard();
                for l in &lines {
                    ingredients.push(parse_ingredient_line(l, &lem).map_err(|e| invalid(e.to_string()))?);
                }
                context.insert(FieldKind::Ingredients, lines.join("\n"));
            }
            GenerationMode::Ingredients => {
                if req.ingredients.is_some() {
                    return Err(invalid("ingredients must be absent when generating ingredients"));
                }
                let text = req.instructions.as_deref().map(str::trim).unwrap_or_default();
                if text.is_empty() {
                    return Err(invalid("instructions are required when generating ingredients"));
                }
                context.insert(FieldKind::Instructions, text.to_string());
            }
        }
        let k = req.k.unwrap_or(DEFAULT_K);
        if !K_RANGE.contains(&k) {
            return Err(invalid(format!("k must be between {} and {}", K_RANGE.start(), K_RANGE.end())));
        }
        let max_new_tokens = req.max_new_tokens.unwrap_or(MAX_NEW_TOKENS).min(MAX_NEW_TOKENS);
        if max_new_tokens == 0 {
            return Err(invalid("max_new_tokens must be positive"));
        }
        let sampling = SamplingConfig { k, max_new_tokens, seed: req.seed.unwrap_or_else(fresh_seed) };
        Ok(Prepared { context, ingredients, sampling })
    }

    /// Validates the request without running the model.
    pub fn validate(&self, req: &GenerateRequest) -> Result<(), EngineError> {
        self.prepare(req).map(|_| ())
    }

    pub fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, EngineError> {
        let start = Instant::now();
        let p = self.prepare(req)?;
        let model = self.model.as_ref().ok_or(EngineError::ModelNotLoaded)?;
        let target = req.mode.target();
        let gen = generate_field(&model.params, &model.vocab, &p.context, target, &p.sampling, &mut ())?;
        let dict = &self.evaluator.dict;
        let generated_lines = match req.mode {
            GenerationMode::Ingredients => self.evaluator.parse_generated_ingredients(&gen.text),
            GenerationMode::Instructions => Vec::new(),
        };
        let highlights = match req.mode {
            GenerationMode::Instructions => overlap_highlights(&p.ingredients, &gen.text, dict),
            GenerationMode::Ingredients => {
                generated_ingredient_highlights(&gen.text, &generated_lines, &p.context[&FieldKind::Instructions], dict)
            }
        };
        let query = SearchQuery {
            title: p.context.get(&FieldKind::Title).cloned(),
            ingredients: (!p.ingredients.is_empty())
                .then(|| p.ingredients.iter().map(|i| i.name_phrase.as_str()).collect::<Vec<_>>().join("\n")),
            instructions: p.context.get(&FieldKind::Instructions).cloned(),
        };
        let reference = match self.reference(&query) {
            Err(RetrievalError::EmptyQuery) => None,
            other => other?,
        };
        let report = reference.as_ref().and_then(|h| self.recipe(&h.recipe.id)).map(|r| {
            self.evaluator.evaluate(&gen.text, req.mode, &p.ingredients, Some(r))
        });
        Ok(GenerateResponse {
            mode: req.mode,
            output: gen.text,
            truncated: gen.truncated,
            highlights,
            reference,
            report,
            sampling: p.sampling,
            context: p.context,
            elapsed_ms: start.elapsed().as_millis() as u64,
        })
    }
}

/// Builds the index, reusing a cache file when its corpus hash matches.
pub fn load_index(corpus_path: &Path, corpus: &[RecipeRecord], cache: Option<&Path>) -> anyhow::Result<InvertedIndex> {
    let lem = Lemmatizer::standard();
    let Some(cache) = cache else {
        return Ok(build_index(corpus, &lem)?);
    };
    let hash = artifacts::corpus_hash(corpus_path)?;
    if let Some(ix) = artifacts::read_index_cache(cache, &hash) {
        log::info!("using cached index {}", cache.display());
        return Ok(ix);
    }
    let ix = build_index(corpus, &lem)?;
    artifacts::write_index_cache(cache, &hash, &ix)?;
    Ok(ix)
}
