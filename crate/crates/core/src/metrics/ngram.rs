//! N-gram overlap scores: BLEU with brevity penalty and ROUGE-L.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

/// Counts of every n-gram of one order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramProfile<'a, T> {
    pub n: usize,
    pub counts: BTreeMap<&'a [T], usize>,
}

impl<'a, T: Ord> NGramProfile<'a, T> {
    pub fn new(tokens: &'a [T], n: usize) -> Self {
        let mut counts = BTreeMap::new();
        if n > 0 {
            for w in tokens.windows(n) {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
        NGramProfile { n, counts }
    }

    /// Number of n-gram occurrences.
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    /// Occurrences of `self` also found in `reference`, each n-gram capped
    /// at its reference count.
    pub fn clipped_matches(&self, reference: &NGramProfile<'_, T>) -> usize {
        self.counts.iter().map(|(g, &c)| c.min(reference.counts.get(g).copied().unwrap_or(0))).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// A zero precision makes the score zero.
    None,
    /// An order with no matches uses `1 / (total + 1)` instead of zero.
    AddOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_n: usize,
    pub smoothing: Smoothing,
}

impl Default for BleuConfig {
    fn default() -> Self {
        BleuConfig { max_n: 4, smoothing: Smoothing::AddOne }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    pub score: f64,
    pub brevity_penalty: f64,
    /// Modified precision per order, after smoothing.
    pub precisions: Vec<f64>,
    pub candidate_len: usize,
    pub reference_len: usize,
}

/// `min(1, exp(1 - r/c))`; an empty candidate counts as length one.
pub fn brevity_penalty(candidate_len: usize, reference_len: usize) -> f64 {
    let c = candidate_len.max(1) as f64;
    let r = reference_len as f64;
    if c >= r {
        1.0
    } else {
        Float::exp(1.0 - r / c)
    }
}

/// Sufficient statistics of one or more candidate/reference pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl BleuStats {
    pub fn new(max_n: usize) -> Self {
        BleuStats { matches: vec![0; max_n], totals: vec![0; max_n], candidate_len: 0, reference_len: 0 }
    }

    pub fn add<T: Ord>(&mut self, candidate: &[T], reference: &[T]) {
        for n in 1..=self.matches.len() {
            let c = NGramProfile::new(candidate, n);
            let r = NGramProfile::new(reference, n);
            self.matches[n - 1] += c.clipped_matches(&r);
            self.totals[n - 1] += c.total();
        }
        self.candidate_len += candidate.len();
        self.reference_len += reference.len();
    }

    pub fn score(&self, smoothing: Smoothing) -> BleuScore {
        let bp = brevity_penalty(self.candidate_len, self.reference_len);
        let precisions: Vec<f64> = self
            .matches
            .iter()
            .zip(&self.totals)
            .map(|(&m, &t)| match (m, smoothing) {
                (0, Smoothing::AddOne) => 1.0 / (t as f64 + 1.0),
                (0, Smoothing::None) => 0.0,
                _ => m as f64 / t as f64,
            })
            .collect();
        let score = if self.candidate_len == 0 || self.reference_len == 0 {
            if self.candidate_len == self.reference_len {
                1.0
            } else {
                0.0
            }
        } else if precisions.contains(&0.0) {
            0.0
        } else {
            let mean_log = precisions.iter().map(|&p| Float::ln(p)).sum::<f64>() / precisions.len() as f64;
            bp * Float::exp(mean_log)
        };
        BleuScore { score, brevity_penalty: bp, precisions, candidate_len: self.candidate_len, reference_len: self.reference_len }
    }
}

/// Sentence BLEU: geometric mean of clipped n-gram precisions (orders
/// `1..=max_n`) times the brevity penalty. Two empty sequences score 1.
pub fn bleu<T: Ord>(candidate: &[T], reference: &[T], cfg: &BleuConfig) -> BleuScore {
    let mut s = BleuStats::new(cfg.max_n);
    s.add(candidate, reference);
    s.score(cfg.smoothing)
}

/// Corpus BLEU: n-gram counts and lengths are summed over all pairs before
/// forming precisions.
pub fn corpus_bleu<'a, T: Ord + 'a>(pairs: impl IntoIterator<Item = (&'a [T], &'a [T])>, cfg: &BleuConfig) -> BleuScore {
    let mut s = BleuStats::new(cfg.max_n);
    for (c, r) in pairs {
        s.add(c, r);
    }
    s.score(cfg.smoothing)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based precision, recall and F-score; zero when either side is empty.
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> RougeScore {
    if candidate.is_empty() || reference.is_empty() {
        return RougeScore { precision: 0.0, recall: 0.0, f: 0.0 };
    }
    let l = lcs_len(candidate, reference) as f64;
    let precision = l / candidate.len() as f64;
    let recall = l / reference.len() as f64;
    let f = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    RougeScore { precision, recall, f }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identity_scores_one() {
        let x = toks("mix the flour and sugar in a bowl");
        let b = bleu(&x, &x, &BleuConfig::default());
        assert_eq!((b.score, b.brevity_penalty), (1.0, 1.0));
        let r = rouge_l(&x, &x);
        assert_eq!((r.precision, r.recall, r.f), (1.0, 1.0, 1.0));
    }

    #[test]
    fn unigram_clipping() {
        let b = bleu(&toks("the the the the"), &toks("the cat sat"), &BleuConfig::default());
        assert_eq!(b.precisions[0], 0.25);
    }

    #[test]
    fn brevity_penalty_formula() {
        assert!((brevity_penalty(3, 6) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(brevity_penalty(6, 3), 1.0);
        assert_eq!(brevity_penalty(0, 0), 1.0);
    }

    #[test]
    fn unsmoothed_zero_order_gives_zero() {
        let cfg = BleuConfig { smoothing: Smoothing::None, ..Default::default() };
        assert_eq!(bleu(&toks("a b c d"), &toks("a c b d"), &cfg).score, 0.0);
        assert!(bleu(&toks("a b c d"), &toks("a c b d"), &BleuConfig::default()).score > 0.0);
        assert_eq!(bleu(&toks("a b"), &toks("a b"), &cfg).score, 0.0);
    }

    #[test]
    fn rouge_example() {
        let r = rouge_l(&["a", "b", "c", "d"], &["a", "c", "d"]);
        assert_eq!((r.precision, r.recall), (0.75, 1.0));
        assert!((r.f - 6.0 / 7.0).abs() < 1e-12);
        assert_eq!(rouge_l(&["a"], &["b"]).f, 0.0);
        assert_eq!(rouge_l::<&str>(&[], &["b"]).f, 0.0);
    }

    #[test]
    fn corpus_bleu_pools_counts() {
        let a = toks("a b c d e");
        let b = toks("x y");
        let c = corpus_bleu([(&a[..], &a[..]), (&b[..], &b[..])], &BleuConfig::default());
        assert_eq!(c.score, 1.0);
        assert_eq!(c.candidate_len, 7);
    }

    #[test]
    fn profile_mass() {
        let t = [1, 2, 1, 2, 1];
        for n in 1..=6 {
            let p = NGramProfile::new(&t, n);
            assert_eq!(p.total(), (t.len() + 1).saturating_sub(n));
            assert!(p.counts.values().all(|&c| c >= 1));
        }
    }

    proptest! {
        #[test]
        fn scores_in_range(a in proptest::collection::vec(0u8..5, 0..30), b in proptest::collection::vec(0u8..5, 0..30)) {
            let s = bleu(&a, &b, &BleuConfig::default());
            prop_assert!((0.0..=1.0).contains(&s.score));
            prop_assert!(s.brevity_penalty > 0.0 && s.brevity_penalty <= 1.0);
            let r = rouge_l(&a, &b);
            prop_assert!((0.0..=1.0).contains(&r.f));
            let rr = rouge_l(&b, &a);
            prop_assert!((r.f - rr.f).abs() < 1e-12);
        }

        #[test]
        fn self_scores(a in proptest::collection::vec(0u8..5, 1..30)) {
            prop_assert_eq!(bleu(&a, &a, &BleuConfig::default()).score, 1.0);
            prop_assert_eq!(rouge_l(&a, &a).f, 1.0);
        }
    }
}
