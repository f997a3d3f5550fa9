//! Evaluation metrics for generated recipe fields.
//!
//! Set conventions: F1 of two empty sets is (1, 1, 1) and the Jaccard
//! similarity of two empty sets is 1.

mod ngram;
mod tree;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{parse_ingredient_line, split_sentences, IngredientLine, RecipeRecord};
use crate::fieldcodec::GenerationMode;
use crate::textnorm::{extract_ingredient_nouns, ingredient_root_nouns, word_tokenize, IngredientDictionary, RootNounSet};

pub use ngram::{
    bleu, brevity_penalty, corpus_bleu, lcs_len, rouge_l, BleuConfig, BleuScore, BleuStats, NGramProfile, RougeScore,
    Smoothing,
};
pub use tree::{
    build_instruction_tree, nted, tree_edit_distance, zhang_shasha, EditCost, InstructionTree, OrderedTree,
    PreparedTree, TreeLexicon, ROOT_LABEL,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("both trees are empty")]
    BothTreesEmpty,
    #[error("malformed tree notation {0:?}")]
    MalformedTree(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Set precision, recall and F1 of `generated` against `gold`.
pub fn ingredient_f1(generated: &RootNounSet, gold: &RootNounSet) -> PrecisionRecall {
    match (generated.is_empty(), gold.is_empty()) {
        (true, true) => return PrecisionRecall { precision: 1.0, recall: 1.0, f1: 1.0 },
        (true, false) | (false, true) => return PrecisionRecall { precision: 0.0, recall: 0.0, f1: 0.0 },
        _ => {}
    }
    let hits = generated.intersection(gold).len() as f64;
    let precision = hits / generated.len() as f64;
    let recall = hits / gold.len() as f64;
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    PrecisionRecall { precision, recall, f1 }
}

/// `|a ∩ b| / |a ∪ b|`.
pub fn coherence_jaccard(a: &RootNounSet, b: &RootNounSet) -> f64 {
    let inter = a.intersection(b).len();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Metrics for one generated field. Fields that do not apply to the mode,
/// or that need a reference when none was given, are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub mode: GenerationMode,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub n_generated_ingredients: Option<usize>,
    pub bleu: Option<f64>,
    pub brevity_penalty: Option<f64>,
    pub rouge_l_precision: Option<f64>,
    pub rouge_l_recall: Option<f64>,
    pub rouge_l_f: Option<f64>,
    pub nted: Option<f64>,
    pub jaccard_coherence: Option<f64>,
}

impl EvaluationReport {
    fn empty(mode: GenerationMode) -> Self {
        EvaluationReport {
            mode,
            precision: None,
            recall: None,
            f1: None,
            n_generated_ingredients: None,
            bleu: None,
            brevity_penalty: None,
            rouge_l_precision: None,
            rouge_l_recall: None,
            rouge_l_f: None,
            nted: None,
            jaccard_coherence: None,
        }
    }
}

/// Lexicons and settings shared by all evaluations.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub dict: IngredientDictionary,
    pub lexicon: TreeLexicon,
    pub bleu: BleuConfig,
    pub costs: EditCost,
}

impl Default for Evaluator {
    fn default() -> Self {
        Evaluator {
            dict: IngredientDictionary::bundled(),
            lexicon: TreeLexicon::bundled(),
            bleu: BleuConfig::default(),
            costs: EditCost::default(),
        }
    }
}

/// Lowercased word and punctuation tokens, as scored by BLEU and ROUGE-L.
pub fn metric_tokens(text: &str) -> Vec<String> {
    word_tokenize(text).tokens
}

impl Evaluator {
    /// Parses a generated ingredient list, one ingredient per line. Lines
    /// with no name left after stripping are dropped.
    pub fn parse_generated_ingredients(&self, text: &str) -> Vec<IngredientLine> {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .filter_map(|l| parse_ingredient_line(l, self.dict.lemmatizer()).ok())
            .collect()
    }

    pub fn instruction_tree(&self, steps: &[String]) -> InstructionTree {
        build_instruction_tree(steps, &self.lexicon, &self.dict)
    }

    /// Scores `generated` for `mode`. `input_ingredients` is the ingredient
    /// list given as context (instruction mode); `reference` is the
    /// ground-truth recipe when one exists.
    pub fn evaluate(
        &self,
        generated: &str,
        mode: GenerationMode,
        input_ingredients: &[IngredientLine],
        reference: Option<&RecipeRecord>,
    ) -> EvaluationReport {
        let mut r = EvaluationReport::empty(mode);
        match mode {
            GenerationMode::Ingredients => {
                let lines = self.parse_generated_ingredients(generated);
                r.n_generated_ingredients = Some(lines.len());
                if let Some(reference) = reference {
                    let pr = ingredient_f1(&ingredient_root_nouns(&lines), &ingredient_root_nouns(&reference.ingredients));
                    r.precision = Some(pr.precision);
                    r.recall = Some(pr.recall);
                    r.f1 = Some(pr.f1);
                }
            }
            GenerationMode::Instructions => {
                let mentioned = extract_ingredient_nouns(generated, &self.dict);
                r.jaccard_coherence = Some(coherence_jaccard(&mentioned, &ingredient_root_nouns(input_ingredients)));
                if let Some(reference) = reference {
                    let cand = metric_tokens(generated);
                    let refr = metric_tokens(&reference.instruction_text());
                    let b = bleu(&cand, &refr, &self.bleu);
                    r.bleu = Some(b.score);
                    r.brevity_penalty = Some(b.brevity_penalty);
                    let rl = rouge_l(&cand, &refr);
                    r.rouge_l_precision = Some(rl.precision);
                    r.rouge_l_recall = Some(rl.recall);
                    r.rouge_l_f = Some(rl.f);
                    let gen_tree = self.instruction_tree(&split_sentences(generated));
                    let ref_tree = self.instruction_tree(&reference.steps);
                    r.nted = nted(gen_tree.tree(), ref_tree.tree(), &self.costs).ok();
                }
            }
        }
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textnorm::Lemmatizer;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn set(xs: &[&str]) -> RootNounSet {
        xs.iter().copied().collect()
    }

    #[test]
    fn f1_examples() {
        let pr = ingredient_f1(&set(&["cheese", "egg", "flour"]), &set(&["cheese", "flour", "butter"]));
        assert!((pr.precision - 2.0 / 3.0).abs() < 1e-12 && (pr.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((pr.f1 - 2.0 / 3.0).abs() < 1e-12);
        let same = ingredient_f1(&set(&["egg"]), &set(&["egg"]));
        assert_eq!((same.precision, same.recall, same.f1), (1.0, 1.0, 1.0));
        let none = ingredient_f1(&set(&[]), &set(&["egg"]));
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
        assert_eq!(ingredient_f1(&set(&[]), &set(&[])).f1, 1.0);
    }

    #[test]
    fn jaccard_examples() {
        assert!((coherence_jaccard(&set(&["salt", "pepper"]), &set(&["salt", "oil"])) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(coherence_jaccard(&set(&["salt"]), &set(&["salt"])), 1.0);
        assert_eq!(coherence_jaccard(&set(&[]), &set(&[])), 1.0);
    }

    fn record() -> RecipeRecord {
        let l = Lemmatizer::standard();
        RecipeRecord {
            id: "r1".into(),
            title: "Pancakes".into(),
            ingredients: ["2 eggs", "1 cup flour", "1 cup milk"].iter().map(|s| parse_ingredient_line(s, &l).unwrap()).collect(),
            steps: vec!["Whisk the eggs and milk in a bowl.".to_string(), "Stir in the flour and fry in a pan.".to_string()],
        }
    }

    #[test]
    fn identical_instructions_score_perfectly() {
        let e = Evaluator::default();
        let rec = record();
        let r = e.evaluate(&rec.instruction_text(), GenerationMode::Instructions, &rec.ingredients, Some(&rec));
        assert_eq!((r.bleu, r.rouge_l_f, r.nted), (Some(1.0), Some(1.0), Some(0.0)));
        assert_eq!(r.jaccard_coherence, Some(1.0));
        assert_eq!((r.f1, r.n_generated_ingredients), (None, None));
    }

    #[test]
    fn ingredient_mode_reports_f1_only() {
        let e = Evaluator::default();
        let rec = record();
        let r = e.evaluate("3 eggs\n2 cups flour\n1 tsp salt\n", GenerationMode::Ingredients, &[], Some(&rec));
        assert_eq!(r.n_generated_ingredients, Some(3));
        assert!((r.f1.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!((r.bleu, r.nted, r.jaccard_coherence), (None, None, None));
        let no_ref = e.evaluate("3 eggs", GenerationMode::Ingredients, &[], None);
        assert_eq!((no_ref.f1, no_ref.n_generated_ingredients), (None, Some(1)));
    }

    proptest! {
        #[test]
        fn set_metric_laws(a in proptest::collection::btree_set("[a-e]", 0..5), b in proptest::collection::btree_set("[a-e]", 0..5)) {
            let (a, b): (RootNounSet, RootNounSet) = (a.into_iter().collect(), b.into_iter().collect());
            let pr = ingredient_f1(&a, &b);
            for v in [pr.precision, pr.recall, pr.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if pr.precision + pr.recall > 0.0 {
                prop_assert!((pr.f1 - 2.0 * pr.precision * pr.recall / (pr.precision + pr.recall)).abs() < 1e-12);
            }
            let j = coherence_jaccard(&a, &b);
            prop_assert!((0.0..=1.0).contains(&j));
            prop_assert_eq!(j, coherence_jaccard(&b, &a));
        }
    }
}
