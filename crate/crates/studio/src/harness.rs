//! Batch evaluation: generate every held-out recipe's missing field for each
//! k and score it against the recipe itself.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use recipe_core::corpus::RecipeRecord;
use recipe_core::fieldcodec::{field_content, BpeVocab, FieldKind, GenerationMode};
use recipe_core::langmodel::{generate_field, ModelError, ModelParams, SamplingConfig, StopReason, MAX_NEW_TOKENS};
use recipe_core::metrics::{corpus_bleu, metric_tokens, EvaluationReport, Evaluator};
use serde::{Deserialize, Serialize};

/// The k values swept by default.
pub const DEFAULT_KS: [usize; 5] = [1, 3, 5, 10, 30];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepConfig {
    pub ks: Vec<usize>,
    pub seed: u64,
    pub max_new_tokens: usize,
    pub modes: Vec<GenerationMode>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            ks: DEFAULT_KS.to_vec(),
            seed: 0,
            max_new_tokens: MAX_NEW_TOKENS,
            modes: vec![GenerationMode::Instructions, GenerationMode::Ingredients],
        }
    }
}

/// One generated sample and its scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub recipe_id: String,
    pub k: usize,
    pub seed: u64,
    pub output: String,
    pub truncated: bool,
    pub stop: StopReason,
    #[serde(flatten)]
    pub report: EvaluationReport,
}

/// Means over the samples generated with one k. Ingredient columns come
/// from ingredient-mode samples, the rest from instruction-mode samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub k: usize,
    pub f1: Option<f64>,
    pub n_ingredients: Option<f64>,
    pub bleu: Option<f64>,
    pub brevity_penalty: Option<f64>,
    pub rouge_l: Option<f64>,
    pub nted: Option<f64>,
    /// BLEU with n-gram counts pooled over all instruction samples.
    pub corpus_bleu: Option<f64>,
    pub jaccard_coherence: Option<f64>,
    pub truncated: usize,
    pub samples: usize,
}

fn context_for(record: &RecipeRecord, mode: GenerationMode) -> BTreeMap<FieldKind, String> {
    let order: Vec<usize> = (0..record.ingredients.len()).collect();
    mode.context_fields().into_iter().map(|f| (f, field_content(record, f, &order))).collect()
}

fn sample_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

fn generate_one(
    params: &ModelParams<f32>,
    vocab: &BpeVocab,
    evaluator: &Evaluator,
    record: &RecipeRecord,
    mode: GenerationMode,
    sampling: SamplingConfig,
) -> Result<SampleRow, ModelError> {
    let g = generate_field(params, vocab, &context_for(record, mode), mode.target(), &sampling, &mut ())?;
    let report = evaluator.evaluate(&g.text, mode, &record.ingredients, Some(record));
    Ok(SampleRow {
        recipe_id: record.id.clone(),
        k: sampling.k,
        seed: sampling.seed,
        output: g.text,
        truncated: g.truncated,
        stop: g.stop,
        report,
    })
}

/// Generates and scores every (mode, k, recipe) combination. Rows come back
/// in a fixed order (mode, then k, then recipe) regardless of threading.
pub fn run_sweep(
    params: &ModelParams<f32>,
    vocab: &BpeVocab,
    evaluator: &Evaluator,
    test: &[RecipeRecord],
    cfg: &SweepConfig,
) -> Result<Vec<SampleRow>, ModelError> {
    let mut jobs = Vec::new();
    for &mode in &cfg.modes {
        for &k in &cfg.ks {
            for (i, r) in test.iter().enumerate() {
                jobs.push((mode, SamplingConfig { k, max_new_tokens: cfg.max_new_tokens, seed: sample_seed(cfg.seed, i) }, r));
            }
        }
    }
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len().max(1));
    let chunk = jobs.len().div_ceil(threads).max(1);
    let results: Vec<Result<Vec<SampleRow>, ModelError>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || part.iter().map(|&(mode, sc, r)| generate_one(params, vocab, evaluator, r, mode, sc)).collect())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut rows = Vec::with_capacity(jobs.len());
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Per-k means. `references` supplies the gold instructions for corpus BLEU.
pub fn summarize(rows: &[SampleRow], references: &[RecipeRecord], evaluator: &Evaluator) -> Vec<SummaryRow> {
    let gold: BTreeMap<&str, Vec<String>> =
        references.iter().map(|r| (r.id.as_str(), metric_tokens(&r.instruction_text()))).collect();
    let mut ks: Vec<usize> = rows.iter().map(|r| r.k).collect();
    ks.sort_unstable();
    ks.dedup();
    ks.into_iter()
        .map(|k| {
            let at_k: Vec<&SampleRow> = rows.iter().filter(|r| r.k == k).collect();
            let instr: Vec<&SampleRow> = at_k.iter().copied().filter(|r| r.report.mode == GenerationMode::Instructions).collect();
            let ingr: Vec<&SampleRow> = at_k.iter().copied().filter(|r| r.report.mode == GenerationMode::Ingredients).collect();
            let cand: Vec<(Vec<String>, &Vec<String>)> = instr
                .iter()
                .filter_map(|r| gold.get(r.recipe_id.as_str()).map(|g| (metric_tokens(&r.output), g)))
                .collect();
            let corpus = (!cand.is_empty())
                .then(|| corpus_bleu(cand.iter().map(|(c, g)| (&c[..], &g[..])), &evaluator.bleu).score);
            SummaryRow {
                k,
                f1: mean(ingr.iter().filter_map(|r| r.report.f1)),
                n_ingredients: mean(ingr.iter().filter_map(|r| r.report.n_generated_ingredients.map(|n| n as f64))),
                bleu: mean(instr.iter().filter_map(|r| r.report.bleu)),
                brevity_penalty: mean(instr.iter().filter_map(|r| r.report.brevity_penalty)),
                rouge_l: mean(instr.iter().filter_map(|r| r.report.rouge_l_f)),
                nted: mean(instr.iter().filter_map(|r| r.report.nted)),
                corpus_bleu: corpus,
                jaccard_coherence: mean(instr.iter().filter_map(|r| r.report.jaccard_coherence)),
                truncated: at_k.iter().filter(|r| r.truncated).count(),
                samples: at_k.len(),
            }
        })
        .collect()
}

/// Column headers of the summary table, in order.
pub const SUMMARY_COLUMNS: [&str; 11] =
    ["k", "F1", "#Ingr", "BLEU", "BP", "R-L", "NTED", "corpus BLEU", "Jaccard", "truncated", "samples"];

fn cell(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

/// Renders the summary as a Markdown table. BLEU columns are on a 0-100
/// scale; everything else is a fraction.
pub fn render_summary(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "| {} |", SUMMARY_COLUMNS.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(SUMMARY_COLUMNS.len()));
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            r.k,
            cell(r.f1),
            r.n_ingredients.map_or_else(|| "-".to_string(), |v| format!("{v:.2}")),
            cell(r.bleu.map(|b| b * 100.0)),
            cell(r.brevity_penalty),
            cell(r.rouge_l),
            cell(r.nted),
            cell(r.corpus_bleu.map(|b| b * 100.0)),
            cell(r.jaccard_coherence),
            r.truncated,
            r.samples,
        );
    }
    out
}

/// Parses a comma-separated k list such as `1,3,5,10,30`.
pub fn parse_k_list(s: &str) -> Result<Vec<usize>, String> {
    let ks: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("not a k value: {p:?}")))
        .collect::<Result<_, _>>()?;
    if ks.is_empty() || ks.contains(&0) {
        return Err("k values must be positive".into());
    }
    Ok(ks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_list() {
        assert_eq!(parse_k_list("1,3, 5").unwrap(), vec![1, 3, 5]);
        assert!(parse_k_list("1,0").is_err());
        assert!(parse_k_list("a").is_err());
    }

    #[test]
    fn table_has_every_column() {
        let row = SummaryRow {
            k: 3,
            f1: Some(0.5),
            n_ingredients: Some(4.0),
            bleu: Some(0.1),
            brevity_penalty: Some(1.0),
            rouge_l: Some(0.3),
            nted: Some(0.4),
            corpus_bleu: None,
            jaccard_coherence: None,
            truncated: 0,
            samples: 2,
        };
        let t = render_summary(&[row]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[2].matches('|').count(), SUMMARY_COLUMNS.len() + 1);
        assert!(lines[2].contains("| 10.0000 |"));
    }
}
