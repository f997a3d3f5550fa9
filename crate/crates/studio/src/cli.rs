//! Command line: one subcommand per pipeline stage plus `serve`.
//!
//! Every stage reads the previous stage's files by path. Paths are checked
//! before any work starts, and a checkpoint is always checked against its
//! vocabulary before parameters are loaded.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use recipe_core::corpus::{split_corpus, RecipeRecord};
use recipe_core::fieldcodec::{train_bpe, training_texts, GenerationMode};
use recipe_core::langmodel::{train, ModelConfig, ModelParams, TrainConfig, MAX_NEW_TOKENS};
use recipe_core::metrics::Evaluator;
use recipe_core::retrieval::build_index;
use recipe_core::textnorm::Lemmatizer;

use crate::artifacts::{self, CheckpointHeader, FilteredCorpus};
use crate::engine::{Engine, EnginePaths, GenerateRequest, LoadedModel};
use crate::harness::{self, SweepConfig};
use crate::service::{self, AppState, DEFAULT_API_KEY_ENV};
use crate::store::Store;

#[derive(Debug, Parser)]
#[command(name = "recipe-studio", version, about = "Recipe generation and evaluation studio")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter a raw corpus and write the filtered corpus plus a split manifest.
    Prepare(PrepareArgs),
    /// Learn a byte-pair vocabulary from the training split.
    TrainBpe(TrainBpeArgs),
    /// Train the language model.
    Train(TrainArgs),
    /// Generate one field from flags and print the result as JSON.
    Generate(GenerateArgs),
    /// Score generations on the test split for several k values.
    Evaluate(EvaluateArgs),
    /// Build the retrieval index cache.
    Index(IndexArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Raw corpus, one JSON recipe per line.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory; receives corpus.jsonl and split.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub n_val: usize,
    #[arg(long, default_value_t = 20)]
    pub n_test: usize,
}

#[derive(Debug, Args)]
pub struct TrainBpeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    /// Number of merges to learn (fewer if pairs run out).
    #[arg(long, default_value_t = 4096)]
    pub merges: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Training trace (TSV); defaults to the checkpoint path with `.trace.tsv`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1200)]
    pub steps: usize,
    #[arg(long, default_value_t = 3e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 100)]
    pub warmup: usize,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    #[arg(long, default_value_t = 512)]
    pub context: usize,
    /// Only learn the last field of each example.
    #[arg(long)]
    pub mask_context: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Instructions,
    Ingredients,
}

impl From<ModeArg> for GenerationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Instructions => GenerationMode::Instructions,
            ModeArg::Ingredients => GenerationMode::Ingredients,
        }
    }
}

#[derive(Debug, Args)]
pub struct ModelPaths {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub model: ModelPaths,
    /// Corpus used to retrieve and score against a reference recipe.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    #[arg(long)]
    pub title: String,
    /// One ingredient line; repeat for more.
    #[arg(long = "ingredient")]
    pub ingredients: Vec<String>,
    #[arg(long)]
    pub instructions: Option<String>,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = MAX_NEW_TOKENS)]
    pub max_new_tokens: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub model: ModelPaths,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    /// Comma-separated k values.
    #[arg(long, default_value = "1,3,5,10,30")]
    pub k: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; receives samples.jsonl, summary.json and summary.md.
    #[arg(long)]
    pub out: PathBuf,
    /// Evaluate only the first N test recipes.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Annotation log.
    #[arg(long, default_value = "studio-store.log")]
    pub store: PathBuf,
    #[arg(long)]
    pub index_cache: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Environment variable holding the API key.
    #[arg(long, default_value = DEFAULT_API_KEY_ENV)]
    pub api_key_env: String,
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} {} does not exist", path.display());
    }
    Ok(())
}

fn load_split_records(corpus: &Path, split: &Path) -> Result<[Vec<RecipeRecord>; 3]> {
    require_file(corpus, "corpus")?;
    require_file(split, "split manifest")?;
    let split = artifacts::read_split(split)?;
    let records = artifacts::load_corpus(corpus)?;
    let parts = split.partition(&records);
    let listed = split.train.len() + split.validation.len() + split.test.len();
    let found: usize = parts.iter().map(Vec::len).sum();
    if found != listed {
        bail!("split manifest lists {listed} recipes but only {found} are in {}", corpus.display());
    }
    Ok(parts)
}

fn load_model(paths: &ModelPaths) -> Result<LoadedModel> {
    require_file(&paths.vocab, "vocabulary")?;
    require_file(&paths.checkpoint, "checkpoint")?;
    Ok(LoadedModel::load(&paths.checkpoint, &paths.vocab)?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(artifacts::write_atomic(path, s.as_bytes())?)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(a) => prepare(a),
        Command::TrainBpe(a) => train_bpe_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Generate(a) => generate_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Index(a) => index_cmd(a),
        Command::Serve(a) => serve_cmd(a),
    }
}

fn prepare(a: PrepareArgs) -> Result<()> {
    require_file(&a.corpus, "corpus")?;
    let raw = artifacts::ingest_jsonl(&a.corpus)?;
    let filtered = FilteredCorpus::from_raw(&raw, &Lemmatizer::standard());
    log::info!("{} recipes read, {} accepted, {} rejected", raw.len(), filtered.accepted.len(), filtered.rejected.len());
    for (rule, n) in filtered.rejection_counts() {
        log::info!("rejected by {rule}: {n}");
    }
    let split = split_corpus(&filtered.accepted, a.seed, a.n_val, a.n_test)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let kept: Vec<_> = filtered.accepted.iter().map(RecipeRecord::to_raw).collect();
    artifacts::write_jsonl(&a.out.join("corpus.jsonl"), &kept)?;
    artifacts::write_split(&a.out.join("split.json"), &split)?;
    println!(
        "accepted {} of {} recipes; split {} train / {} validation / {} test",
        filtered.accepted.len(),
        raw.len(),
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    Ok(())
}

fn train_bpe_cmd(a: TrainBpeArgs) -> Result<()> {
    let [train_set, _, _] = load_split_records(&a.corpus, &a.split)?;
    let texts: Vec<String> = train_set.iter().flat_map(training_texts).collect();
    let vocab = train_bpe(&texts, a.merges)?;
    artifacts::write_vocab(&a.out, &vocab)?;
    println!("{} tokens ({} merges), fingerprint {}", vocab.len(), vocab.merges().len(), vocab.fingerprint());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    require_file(&a.vocab, "vocabulary")?;
    let vocab = artifacts::read_vocab(&a.vocab)?;
    let [train_set, val_set, _] = load_split_records(&a.corpus, &a.split)?;
    let config = ModelConfig { n_layers: a.layers, n_heads: a.heads, embed_dim: a.dim, context_len: a.context, vocab_size: vocab.len() };
    config.validate()?;
    let cfg = TrainConfig {
        lr: a.lr,
        batch_size: a.batch_size,
        steps: a.steps,
        warmup_steps: a.warmup,
        seed: a.seed,
        max_len: a.context,
        mask: recipe_core::fieldcodec::LossMask { pads: true, context: a.mask_context },
        ..TrainConfig::default()
    };
    let params = ModelParams::<f32>::init(config, a.seed)?;
    log::info!("training {} parameters on {} recipes", params.len(), train_set.len());
    let out = train(params, &vocab, &train_set, &val_set, &cfg, |row| {
        if let Some(ppl) = row.val_ppl {
            log::info!("step {} validation perplexity {ppl:.3}", row.step);
        } else if let Some(loss) = row.train_loss.filter(|_| row.step % 50 == 0) {
            log::info!("step {} loss {loss:.4}", row.step);
        }
    })?;
    let header = CheckpointHeader {
        config,
        vocab_hash: vocab.fingerprint(),
        step: out.optimizer.step,
        dtype: "f32".into(),
        n_params: out.params.len(),
        train_config: Some(cfg),
    };
    artifacts::write_checkpoint(&a.out, &out.params, &header)?;
    let trace = a.trace.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".trace.tsv");
        p.into()
    });
    artifacts::write_trace(&trace, &out.trace)?;
    println!(
        "validation perplexity {:.3} -> {:.3}; checkpoint {}",
        out.initial_val_ppl().unwrap_or(f64::NAN),
        out.final_val_ppl().unwrap_or(f64::NAN),
        a.out.display()
    );
    Ok(())
}

fn generate_cmd(a: GenerateArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let corpus = match &a.corpus {
        Some(p) => {
            require_file(p, "corpus")?;
            artifacts::load_corpus(p)?
        }
        None => Vec::new(),
    };
    let index = build_index(&corpus, &Lemmatizer::standard())?;
    let engine = Engine::new(corpus, index, Some(model));
    let req = GenerateRequest {
        mode: a.mode.into(),
        title: a.title,
        ingredients: (!a.ingredients.is_empty()).then_some(a.ingredients),
        instructions: a.instructions,
        k: Some(a.k),
        seed: Some(a.seed),
        max_new_tokens: Some(a.max_new_tokens),
    };
    let resp = engine.generate(&req)?;
    println!("{}", serde_json::to_string_pretty(&resp)?);
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let ks = harness::parse_k_list(&a.k).map_err(anyhow::Error::msg)?;
    let model = load_model(&a.model)?;
    let [_, _, mut test] = load_split_records(&a.corpus, &a.split)?;
    if let Some(n) = a.limit {
        test.truncate(n);
    }
    if test.is_empty() {
        bail!("the test split is empty");
    }
    let evaluator = Evaluator::default();
    let cfg = SweepConfig { ks, seed: a.seed, ..SweepConfig::default() };
    log::info!("evaluating {} test recipes at k = {:?}", test.len(), cfg.ks);
    let rows = harness::run_sweep(&model.params, &model.vocab, &evaluator, &test, &cfg)?;
    let summary = harness::summarize(&rows, &test, &evaluator);
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut lines = String::new();
    for r in &rows {
        lines.push_str(&serde_json::to_string(r)?);
        lines.push('\n');
    }
    artifacts::write_atomic(&a.out.join("samples.jsonl"), lines.as_bytes())?;
    write_json(&a.out.join("summary.json"), &summary)?;
    let table = harness::render_summary(&summary);
    artifacts::write_atomic(&a.out.join("summary.md"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

fn index_cmd(a: IndexArgs) -> Result<()> {
    require_file(&a.corpus, "corpus")?;
    let corpus = artifacts::load_corpus(&a.corpus)?;
    let index = build_index(&corpus, &Lemmatizer::standard())?;
    artifacts::write_index_cache(&a.out, &artifacts::corpus_hash(&a.corpus)?, &index)?;
    println!("indexed {} recipes into {}", index.len(), a.out.display());
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let Some(checkpoint) = a.checkpoint else {
        bail!("serve needs a model checkpoint (--checkpoint)");
    };
    let Some(vocab) = a.vocab else {
        bail!("serve needs the checkpoint's vocabulary (--vocab)");
    };
    require_file(&a.corpus, "corpus")?;
    require_file(&vocab, "vocabulary")?;
    require_file(&checkpoint, "checkpoint")?;
    let key = std::env::var(&a.api_key_env).with_context(|| format!("API key variable {} is not set", a.api_key_env))?;
    if key.is_empty() {
        bail!("API key variable {} is empty", a.api_key_env);
    }
    let engine = Engine::load(&EnginePaths { corpus: a.corpus, vocab: Some(vocab), checkpoint: Some(checkpoint), index_cache: a.index_cache })?;
    let store = Store::open(&a.store)?;
    let state = AppState::new(Arc::new(engine), Arc::new(store), &key);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(a.bind).await.with_context(|| format!("binding {}", a.bind))?;
        log::info!("listening on {}", listener.local_addr()?);
        service::serve(listener, state).await?;
        Ok(())
    })
}
