//! Fixtures and independent reference implementations shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use recipe_core::corpus::{split_corpus, RecipeRecord};
use recipe_core::fieldcodec::{train_bpe, training_texts, BpeVocab};
use recipe_core::langmodel::{ModelConfig, ModelParams};
use recipe_core::metrics::OrderedTree;
use recipe_core::retrieval::build_index;
use recipe_core::textnorm::Lemmatizer;
use recipe_studio::artifacts::{self, CheckpointHeader};
use recipe_studio::engine::{Engine, LoadedModel};

pub fn bundled_corpus_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/recipes.jsonl")
}

pub fn bundled_corpus() -> Vec<RecipeRecord> {
    artifacts::load_corpus(&bundled_corpus_path()).expect("bundled corpus loads")
}

// ---------------------------------------------------------------------------
// n-gram oracles

/// Occurrences of `gram` in `seq`, by scanning every offset.
fn occurrences(seq: &[u32], gram: &[u32]) -> usize {
    if gram.len() > seq.len() {
        return 0;
    }
    (0..=seq.len() - gram.len()).filter(|&i| &seq[i..i + gram.len()] == gram).count()
}

/// Sentence BLEU computed by direct counting. An order with no match uses
/// `1/(total+1)` when `add_one` is set. Returns (score, brevity penalty).
pub fn bleu_oracle(c: &[u32], r: &[u32], max_n: usize, add_one: bool) -> (f64, f64) {
    let bp = if c.len() >= r.len() { 1.0 } else { (1.0 - r.len() as f64 / c.len().max(1) as f64).exp() };
    if c.is_empty() || r.is_empty() {
        return (if c.len() == r.len() { 1.0 } else { 0.0 }, bp);
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let total = if c.len() >= n { c.len() - n + 1 } else { 0 };
        let mut matched = 0;
        for i in 0..total {
            let g = &c[i..i + n];
            if (0..i).any(|j| &c[j..j + n] == g) {
                continue;
            }
            matched += occurrences(c, g).min(occurrences(r, g));
        }
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else if add_one {
            1.0 / (total as f64 + 1.0)
        } else {
            return (0.0, bp);
        };
        log_sum += p.ln();
    }
    (bp * (log_sum / max_n as f64).exp(), bp)
}

/// LCS length from the full dynamic-programming table.
pub fn lcs_oracle(a: &[u32], b: &[u32]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] { t[i - 1][j - 1] + 1 } else { t[i - 1][j].max(t[i][j - 1]) };
        }
    }
    t[a.len()][b.len()]
}

/// ROUGE-L (precision, recall, F).
pub fn rouge_oracle(c: &[u32], r: &[u32]) -> (f64, f64, f64) {
    if c.is_empty() || r.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let l = lcs_oracle(c, r) as f64;
    let (p, rc) = (l / c.len() as f64, l / r.len() as f64);
    let f = if l == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) };
    (p, rc, f)
}

// ---------------------------------------------------------------------------
// exhaustive tree edit distance

/// An ordered forest as preorder (label, subtree size) pairs.
pub type Forest = Vec<(u8, u8)>;

/// Every ordered forest with at most `max_nodes` nodes over `labels`
/// labels, the empty forest included.
pub fn all_forests(max_nodes: usize, labels: u8) -> Vec<Forest> {
    let mut by_size: Vec<Vec<Forest>> = vec![vec![Vec::new()]];
    for n in 1..=max_nodes {
        let mut out = Vec::new();
        for first in 1..=n {
            for kids in &by_size[first - 1] {
                for rest in &by_size[n - first] {
                    for l in 0..labels {
                        let mut f = vec![(l, first as u8)];
                        f.extend_from_slice(kids);
                        f.extend_from_slice(rest);
                        out.push(f);
                    }
                }
            }
        }
        by_size.push(out);
    }
    by_size.concat()
}

pub fn is_tree(f: &Forest) -> bool {
    !f.is_empty() && f[0].1 as usize == f.len()
}

/// Removes node `i`; its children move up into its place.
pub fn delete_node(f: &Forest, i: usize) -> Forest {
    let mut g = f.clone();
    for j in 0..i {
        if j + f[j].1 as usize > i {
            g[j].1 -= 1;
        }
    }
    g.remove(i);
    g
}

pub fn to_ordered_tree(f: &Forest) -> OrderedTree<u8> {
    assert!(is_tree(f));
    let mut t = OrderedTree::leaf(f[0].0);
    let mut open = vec![(0usize, f[0].1 as usize)];
    for (i, &(label, size)) in f.iter().enumerate().skip(1) {
        while open.last().expect("root stays open").1 <= i {
            open.pop();
        }
        let parent = open.last().expect("root stays open").0;
        let id = t.add_child(parent, label);
        open.push((id, i + size as usize));
    }
    t
}

/// Forest graph whose edges are single unit-cost edits: deleting or
/// inserting one node, or relabeling one node.
pub struct EditGraph {
    pub forests: Vec<Forest>,
    pub adjacency: Vec<Vec<u32>>,
}

impl EditGraph {
    pub fn new(max_nodes: usize, labels: u8) -> Self {
        let forests = all_forests(max_nodes, labels);
        let index: HashMap<&Forest, u32> = forests.iter().enumerate().map(|(i, f)| (f, i as u32)).collect();
        let mut adjacency = vec![Vec::new(); forests.len()];
        for (a, f) in forests.iter().enumerate() {
            for i in 0..f.len() {
                let b = index[&delete_node(f, i)];
                adjacency[a].push(b);
                adjacency[b as usize].push(a as u32);
                for l in (0..labels).filter(|&l| l != f[i].0) {
                    let mut g = f.clone();
                    g[i].0 = l;
                    adjacency[a].push(index[&g]);
                }
            }
        }
        EditGraph { forests, adjacency }
    }

    /// Unit-cost edit distance from `source` to every forest.
    pub fn distances_from(&self, source: usize) -> Vec<u8> {
        let mut dist = vec![u8::MAX; self.forests.len()];
        let mut queue = std::collections::VecDeque::from([source as u32]);
        dist[source] = 0;
        while let Some(x) = queue.pop_front() {
            let d = dist[x as usize] + 1;
            for &y in &self.adjacency[x as usize] {
                if dist[y as usize] == u8::MAX {
                    dist[y as usize] = d;
                    queue.push_back(y);
                }
            }
        }
        dist
    }
}

// ---------------------------------------------------------------------------
// small engine fixture

/// An untrained one-layer model over a small vocabulary learned from the
/// bundled corpus. Cheap to build; used where only plumbing is under test.
pub struct TinyFixture {
    pub corpus: Vec<RecipeRecord>,
    pub vocab: BpeVocab,
    pub params: ModelParams<f32>,
}

impl TinyFixture {
    pub fn new() -> Self {
        let corpus = bundled_corpus();
        let split = split_corpus(&corpus, 0, 20, 20).expect("corpus is large enough");
        let [train, _, _] = split.partition(&corpus);
        let texts: Vec<String> = train.iter().flat_map(training_texts).collect();
        let vocab = train_bpe(&texts, 200).expect("vocabulary trains");
        let config = ModelConfig { n_layers: 1, n_heads: 2, embed_dim: 16, context_len: 512, vocab_size: vocab.len() };
        let params = ModelParams::init(config, 0).expect("valid config");
        TinyFixture { corpus, vocab, params }
    }

    pub fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            config: *self.params.config(),
            vocab_hash: self.vocab.fingerprint(),
            step: 0,
            dtype: "f32".into(),
            n_params: self.params.len(),
            train_config: None,
        }
    }

    pub fn engine(&self, with_model: bool) -> Arc<Engine> {
        let index = build_index(&self.corpus, &Lemmatizer::standard()).expect("unique ids");
        let model = with_model.then(|| LoadedModel { params: self.params.clone(), vocab: self.vocab.clone(), header: self.header() });
        Arc::new(Engine::new(self.corpus.clone(), index, model))
    }
}
