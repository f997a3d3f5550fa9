//! BM25 search over recipe fields.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::corpus::RecipeRecord;
use crate::fieldcodec::FieldKind;
use crate::textnorm::{word_tokenize, Lemmatizer};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RetrievalError {
    #[error("duplicate recipe id {0:?}")]
    DuplicateId(String),
    #[error("query has no terms")]
    EmptyQuery,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
    /// Weights for title, ingredients and instructions.
    pub weights: [f64; 3],
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75, weights: [2.0, 1.5, 1.0] }
    }
}

/// Index terms of a text: lemmatized word tokens, punctuation dropped.
pub fn index_terms(text: &str, lemmatizer: &Lemmatizer) -> Vec<String> {
    word_tokenize(text).words().map(|(w, _)| lemmatizer.lemmatize(w)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// Postings and length statistics of one field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldIndex {
    pub postings: BTreeMap<String, Vec<Posting>>,
    pub doc_len: Vec<u32>,
    pub avg_len: f64,
}

impl FieldIndex {
    fn build(docs: &[Vec<String>]) -> Self {
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        for (d, terms) in docs.iter().enumerate() {
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in terms {
                *tf.entry(t).or_insert(0) += 1;
            }
            for (t, n) in tf {
                postings.entry(t.to_string()).or_default().push(Posting { doc: d as u32, tf: n });
            }
        }
        let doc_len: Vec<u32> = docs.iter().map(|d| d.len() as u32).collect();
        let avg_len = if docs.is_empty() { 0.0 } else { doc_len.iter().map(|&l| l as f64).sum::<f64>() / docs.len() as f64 };
        FieldIndex { postings, doc_len, avg_len }
    }
}

/// Per-field inverted index over a fixed set of recipes. Document numbers
/// follow ascending recipe id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    pub ids: Vec<String>,
    pub fields: [FieldIndex; 3],
}

/// Text indexed for each field: the title, the ingredient name phrases and
/// the instruction steps.
pub fn field_text(record: &RecipeRecord, field: FieldKind) -> String {
    match field {
        FieldKind::Title => record.title.clone(),
        FieldKind::Ingredients => record.ingredients.iter().map(|i| i.name_phrase.as_str()).collect::<Vec<_>>().join("\n"),
        FieldKind::Instructions => record.instruction_text(),
    }
}

fn field_slot(f: FieldKind) -> usize {
    match f {
        FieldKind::Title => 0,
        FieldKind::Ingredients => 1,
        FieldKind::Instructions => 2,
    }
}

pub fn build_index(records: &[RecipeRecord], lemmatizer: &Lemmatizer) -> Result<InvertedIndex, RetrievalError> {
    let mut sorted: Vec<&RecipeRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(RetrievalError::DuplicateId(w[0].id.clone()));
    }
    let fields = FieldKind::ALL.map(|f| {
        let docs: Vec<Vec<String>> = sorted.iter().map(|r| index_terms(&field_text(r, f), lemmatizer)).collect();
        FieldIndex::build(&docs)
    });
    Ok(InvertedIndex { ids: sorted.iter().map(|r| r.id.clone()).collect(), fields })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchQuery {
    pub title: Option<String>,
    pub ingredients: Option<String>,
    pub instructions: Option<String>,
}

impl SearchQuery {
    pub fn get(&self, f: FieldKind) -> Option<&str> {
        match f {
            FieldKind::Title => self.title.as_deref(),
            FieldKind::Ingredients => self.ingredients.as_deref(),
            FieldKind::Instructions => self.instructions.as_deref(),
        }
    }

    /// Title and ingredient name phrases of a record.
    pub fn from_title_and_ingredients(record: &RecipeRecord) -> Self {
        SearchQuery {
            title: Some(record.title.clone()),
            ingredients: Some(field_text(record, FieldKind::Ingredients)),
            instructions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit {
    pub id: String,
    pub score: f64,
    /// Weighted contribution of title, ingredients and instructions.
    pub field_scores: [f64; 3],
}

impl InvertedIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn field(&self, f: FieldKind) -> &FieldIndex {
        &self.fields[field_slot(f)]
    }

    /// Inverse document frequency `ln(1 + (N - df + 0.5) / (df + 0.5))`.
    pub fn idf(&self, df: usize) -> f64 {
        let n = self.ids.len() as f64;
        let df = df as f64;
        Float::ln(1.0 + (n - df + 0.5) / (df + 0.5))
    }

    /// Every field searches its own text in the query; scores are weighted
    /// and summed. Documents with zero score are left out. Results are
    /// ordered by descending score, then ascending id.
    pub fn search(
        &self,
        query: &SearchQuery,
        top_n: usize,
        params: &Bm25Params,
        lemmatizer: &Lemmatizer,
    ) -> Result<Vec<ScoredHit>, RetrievalError> {
        let terms: [Vec<String>; 3] = FieldKind::ALL.map(|f| query.get(f).map(|t| index_terms(t, lemmatizer)).unwrap_or_default());
        if terms.iter().all(Vec::is_empty) {
            return Err(RetrievalError::EmptyQuery);
        }
        let mut scores = vec![[0.0f64; 3]; self.ids.len()];
        let mut touched = BTreeSet::new();
        for (slot, qterms) in terms.iter().enumerate() {
            let fi = &self.fields[slot];
            let w = params.weights[slot];
            for t in qterms {
                let Some(list) = fi.postings.get(t) else { continue };
                let idf = self.idf(list.len());
                for p in list {
                    let tf = p.tf as f64;
                    let dl = fi.doc_len[p.doc as usize] as f64;
                    let norm = if fi.avg_len > 0.0 { dl / fi.avg_len } else { 0.0 };
                    let s = idf * tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * norm));
                    scores[p.doc as usize][slot] += w * s;
                    touched.insert(p.doc);
                }
            }
        }
        let mut hits: Vec<ScoredHit> = touched
            .into_iter()
            .map(|d| {
                let fs = scores[d as usize];
                ScoredHit { id: self.ids[d as usize].clone(), score: fs.iter().sum(), field_scores: fs }
            })
            .filter(|h| h.score > 0.0)
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
        hits.truncate(top_n);
        Ok(hits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_ingredient_line;
    use proptest::prelude::*;

    fn rec(id: &str, title: &str, ingr: &[&str], instr: &str) -> RecipeRecord {
        let l = Lemmatizer::standard();
        RecipeRecord {
            id: id.into(),
            title: title.into(),
            ingredients: ingr.iter().map(|s| parse_ingredient_line(s, &l).unwrap()).collect(),
            steps: vec![instr.into()],
        }
    }

    fn corpus() -> Vec<RecipeRecord> {
        vec![
            rec("c", "Tomato Soup", &["4 tomatoes", "1 onion"], "Simmer the tomatoes with onion."),
            rec("a", "Apple Pie", &["3 apples", "2 cups flour"], "Bake the apples in a crust."),
            rec("b", "Tomato Salad", &["2 tomatoes", "1 cucumber"], "Toss everything in a bowl."),
        ]
    }

    fn search(ix: &InvertedIndex, q: &SearchQuery, n: usize) -> Vec<ScoredHit> {
        ix.search(q, n, &Bm25Params::default(), &Lemmatizer::standard()).unwrap()
    }

    #[test]
    fn counts_and_postings() {
        let ix = build_index(&corpus(), &Lemmatizer::standard()).unwrap();
        assert_eq!(ix.ids, ["a", "b", "c"]);
        let tomato = &ix.field(FieldKind::Title).postings["tomato"];
        assert_eq!(tomato, &[Posting { doc: 1, tf: 1 }, Posting { doc: 2, tf: 1 }]);
        assert_eq!(ix.field(FieldKind::Title).avg_len, 2.0);
        assert_eq!(ix, build_index(&corpus(), &Lemmatizer::standard()).unwrap());
    }

    #[test]
    fn errors_and_empty_cases() {
        let mut c = corpus();
        c.push(c[0].clone());
        assert_eq!(build_index(&c, &Lemmatizer::standard()), Err(RetrievalError::DuplicateId("c".into())));
        let empty = build_index(&[], &Lemmatizer::standard()).unwrap();
        let q = SearchQuery { title: Some("soup".into()), ..Default::default() };
        assert!(search(&empty, &q, 5).is_empty());
        let ix = build_index(&corpus(), &Lemmatizer::standard()).unwrap();
        let blank = SearchQuery { title: Some(" ,. ".into()), ..Default::default() };
        assert_eq!(ix.search(&blank, 5, &Bm25Params::default(), &Lemmatizer::standard()), Err(RetrievalError::EmptyQuery));
        let miss = SearchQuery { title: Some("zucchini".into()), ..Default::default() };
        assert!(search(&ix, &miss, 5).is_empty());
    }

    #[test]
    fn ranks_by_score_then_id() {
        let ix = build_index(&corpus(), &Lemmatizer::standard()).unwrap();
        let q = SearchQuery { title: Some("tomato".into()), ..Default::default() };
        let hits = search(&ix, &q, 5);
        assert_eq!(hits.iter().map(|h| h.id.as_str()).collect::<Vec<_>>(), ["b", "c"]);
        assert_eq!(hits[0].score, hits[1].score);
        let q = SearchQuery { title: Some("tomato soup".into()), ingredients: Some("onion".into()), ..Default::default() };
        let hits = search(&ix, &q, 1);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].id, "c");
        assert_eq!(hits[0].field_scores[2], 0.0);
    }

    #[test]
    fn hand_computed_score() {
        let ix = build_index(&corpus(), &Lemmatizer::standard()).unwrap();
        let q = SearchQuery { title: Some("pie".into()), ..Default::default() };
        let h = &search(&ix, &q, 1)[0];
        // df 1 of N 3, tf 1, doc length equals the average
        let idf = (1.0f64 + 2.5 / 1.5).ln();
        assert!((h.score - 2.0 * idf).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn adding_a_matching_term_never_lowers_score(extra in prop_oneof![Just("tomato"), Just("apple"), Just("onion"), Just("bowl")]) {
            let ix = build_index(&corpus(), &Lemmatizer::standard()).unwrap();
            let base = SearchQuery { title: Some("salad".into()), instructions: Some("bake".into()), ..Default::default() };
            let more = SearchQuery { instructions: Some(alloc::format!("bake {extra}")), ..base.clone() };
            let before = search(&ix, &base, 10);
            let after = search(&ix, &more, 10);
            for h in &before {
                let a = after.iter().find(|x| x.id == h.id).unwrap();
                prop_assert!(a.score >= h.score);
            }
        }
    }
}
