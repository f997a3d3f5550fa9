//! Ordered labeled trees, instruction trees and Zhang-Shasha edit distance.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::lexicon;
use crate::textnorm::{word_tokenize, IngredientDictionary};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Node<L> {
    label: L,
    children: Vec<usize>,
}

/// A rooted tree whose children are ordered. Node 0 is the root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderedTree<L = String> {
    nodes: Vec<Node<L>>,
}

impl<L> OrderedTree<L> {
    /// The tree with no nodes.
    pub fn empty() -> Self {
        OrderedTree { nodes: Vec::new() }
    }

    pub fn leaf(label: L) -> Self {
        OrderedTree { nodes: vec![Node { label, children: Vec::new() }] }
    }

    /// A root labeled `label` over `children`, in order. Empty children are
    /// ignored.
    pub fn node(label: L, children: impl IntoIterator<Item = OrderedTree<L>>) -> Self {
        let mut t = Self::leaf(label);
        for c in children {
            t.graft(0, c);
        }
        t
    }

    /// Appends `label` as the last child of `parent` and returns its index.
    pub fn add_child(&mut self, parent: usize, label: L) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node { label, children: Vec::new() });
        self.nodes[parent].children.push(id);
        id
    }

    fn graft(&mut self, parent: usize, sub: OrderedTree<L>) {
        if sub.nodes.is_empty() {
            return;
        }
        let offset = self.nodes.len();
        self.nodes.extend(sub.nodes.into_iter().map(|n| Node {
            label: n.label,
            children: n.children.into_iter().map(|c| c + offset).collect(),
        }));
        self.nodes[parent].children.push(offset);
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn label(&self, node: usize) -> &L {
        &self.nodes[node].label
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.nodes[node].children
    }

    /// Labels of the root's children, in order.
    pub fn top_labels(&self) -> impl Iterator<Item = &L> {
        self.nodes.first().into_iter().flat_map(move |r| r.children.iter().map(move |&c| &self.nodes[c].label))
    }

    /// Node indices in postorder.
    pub fn postorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        if self.nodes.is_empty() {
            return out;
        }
        let mut stack = vec![(0usize, 0usize)];
        while let Some((n, next)) = stack.pop() {
            if let Some(&c) = self.nodes[n].children.get(next) {
                stack.push((n, next + 1));
                stack.push((c, 0));
            } else {
                out.push(n);
            }
        }
        out
    }
}

impl<L: fmt::Display> OrderedTree<L> {
    fn fmt_node(&self, n: usize, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.nodes[n].label)?;
        let ch = &self.nodes[n].children;
        if !ch.is_empty() {
            f.write_str("(")?;
            for (i, &c) in ch.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                self.fmt_node(c, f)?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

/// Bracket notation, e.g. `root(mix(egg,flour),bake)`.
impl<L: fmt::Display> fmt::Display for OrderedTree<L> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.nodes.is_empty() {
            return Ok(());
        }
        self.fmt_node(0, f)
    }
}

impl OrderedTree<String> {
    /// Parses bracket notation. Labels may not contain `(`, `)` or `,`.
    pub fn parse(s: &str) -> Result<Self, MetricError> {
        if s.trim().is_empty() {
            return Ok(Self::empty());
        }
        let mut tree = OrderedTree { nodes: Vec::new() };
        let mut p = Parser { src: s, pos: 0 };
        p.subtree(&mut tree, None)?;
        p.skip_ws();
        if p.pos != s.len() {
            return Err(MetricError::MalformedTree(s.to_string()));
        }
        Ok(tree)
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn subtree(&mut self, tree: &mut OrderedTree<String>, parent: Option<usize>) -> Result<(), MetricError> {
        let bad = || MetricError::MalformedTree(self.src.to_string());
        let rest = &self.src[self.pos..];
        let len = rest.find(['(', ')', ',']).unwrap_or(rest.len());
        let label = rest[..len].trim();
        if label.is_empty() {
            return Err(bad());
        }
        self.pos += len;
        let id = match parent {
            Some(p) => tree.add_child(p, label.to_string()),
            None => {
                tree.nodes.push(Node { label: label.to_string(), children: Vec::new() });
                0
            }
        };
        if self.peek() == Some('(') {
            self.pos += 1;
            loop {
                self.subtree(tree, Some(id))?;
                match self.peek() {
                    Some(',') => self.pos += 1,
                    Some(')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return Err(bad()),
                }
            }
        }
        self.skip_ws();
        Ok(())
    }
}

/// A tree in the form the edit-distance recursion works on: postorder
/// labels, leftmost-leaf descendants and keyroots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedTree<L> {
    labels: Vec<L>,
    lld: Vec<usize>,
    keyroots: Vec<usize>,
}

impl<L: Clone> PreparedTree<L> {
    pub fn new(tree: &OrderedTree<L>) -> Self {
        let order = tree.postorder();
        let mut post_index = vec![0; tree.node_count()];
        for (i, &n) in order.iter().enumerate() {
            post_index[n] = i;
        }
        let mut lld = vec![0; order.len()];
        for (i, &n) in order.iter().enumerate() {
            lld[i] = match tree.children(n).first() {
                Some(&c) => lld[post_index[c]],
                None => i,
            };
        }
        let mut highest = BTreeSet::new();
        let mut last_for_leaf = vec![None; order.len()];
        for (i, &l) in lld.iter().enumerate() {
            last_for_leaf[l] = Some(i);
        }
        highest.extend(last_for_leaf.into_iter().flatten());
        PreparedTree { labels: order.iter().map(|&n| tree.label(n).clone()).collect(), lld, keyroots: highest.into_iter().collect() }
    }
}

impl<L> PreparedTree<L> {
    pub fn node_count(&self) -> usize {
        self.labels.len()
    }
}

/// Operation costs for tree edits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditCost {
    pub insert: f64,
    pub remove: f64,
    pub replace: f64,
}

impl Default for EditCost {
    fn default() -> Self {
        EditCost { insert: 1.0, remove: 1.0, replace: 1.0 }
    }
}

impl EditCost {
    pub fn new(insert: f64, remove: f64, replace: f64) -> Self {
        let c = EditCost { insert, remove, replace };
        if replace > insert + remove {
            log::warn!("replace cost {replace} exceeds insert + remove; replacements will never be chosen");
        }
        c
    }
}

/// Minimum total cost of node insertions, removals and relabelings turning
/// `a` into `b` (Zhang-Shasha keyroot decomposition).
pub fn zhang_shasha<L: PartialEq>(a: &PreparedTree<L>, b: &PreparedTree<L>, costs: &EditCost) -> f64 {
    let (n, m) = (a.node_count(), b.node_count());
    if n == 0 || m == 0 {
        return n as f64 * costs.remove + m as f64 * costs.insert;
    }
    let mut td = vec![0.0f64; n * m];
    let mut fd = vec![0.0f64; (n + 1) * (m + 1)];
    for &i in &a.keyroots {
        for &j in &b.keyroots {
            let (li, lj) = (a.lld[i], b.lld[j]);
            let (rows, cols) = (i - li + 2, j - lj + 2);
            let at = |x: usize, y: usize| x * cols + y;
            fd[at(0, 0)] = 0.0;
            for x in 1..rows {
                fd[at(x, 0)] = fd[at(x - 1, 0)] + costs.remove;
            }
            for y in 1..cols {
                fd[at(0, y)] = fd[at(0, y - 1)] + costs.insert;
            }
            for x in 1..rows {
                let ni = li + x - 1;
                for y in 1..cols {
                    let nj = lj + y - 1;
                    let del = fd[at(x - 1, y)] + costs.remove;
                    let ins = fd[at(x, y - 1)] + costs.insert;
                    if a.lld[ni] == li && b.lld[nj] == lj {
                        let rel = if a.labels[ni] == b.labels[nj] { 0.0 } else { costs.replace };
                        let v = del.min(ins).min(fd[at(x - 1, y - 1)] + rel);
                        fd[at(x, y)] = v;
                        td[ni * m + nj] = v;
                    } else {
                        let (p, q) = (a.lld[ni] - li, b.lld[nj] - lj);
                        fd[at(x, y)] = del.min(ins).min(fd[at(p, q)] + td[ni * m + nj]);
                    }
                }
            }
        }
    }
    td[(n - 1) * m + (m - 1)]
}

/// Edit distance between two trees.
pub fn tree_edit_distance<L: PartialEq + Clone>(a: &OrderedTree<L>, b: &OrderedTree<L>, costs: &EditCost) -> f64 {
    zhang_shasha(&PreparedTree::new(a), &PreparedTree::new(b), costs)
}

/// Edit distance divided by the total node count of both trees.
pub fn nted<L: PartialEq + Clone>(a: &OrderedTree<L>, b: &OrderedTree<L>, costs: &EditCost) -> Result<f64, MetricError> {
    let total = a.node_count() + b.node_count();
    if total == 0 {
        return Err(MetricError::BothTreesEmpty);
    }
    Ok(tree_edit_distance(a, b, costs) / total as f64)
}

/// Label of the synthetic root of every instruction tree.
pub const ROOT_LABEL: &str = "root";

/// Words after which a verb-lexicon entry is read as a noun ("the grill").
const DETERMINERS: &[&str] = &["the", "a", "an", "some", "of", "each", "your", "this", "that"];

/// Cooking verbs (stems) and tool nouns used to build instruction trees.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeLexicon {
    verbs: BTreeSet<String>,
    tools: BTreeSet<String>,
}

impl TreeLexicon {
    pub fn bundled() -> Self {
        Self::from_text(lexicon::VERBS_SRC, lexicon::TOOLS_SRC)
    }

    pub fn from_text(verbs: &str, tools: &str) -> Self {
        let set = |src| lexicon::entries(src).map(|e| e.to_lowercase()).collect();
        TreeLexicon { verbs: set(verbs), tools: set(tools) }
    }

    pub fn add_verb(&mut self, verb: &str) {
        self.verbs.insert(verb.to_lowercase());
    }

    /// Verb stem of an inflected token (`stirring` → `stir`,
    /// `baked` → `bake`), if it is in the lexicon.
    pub fn verb_stem(&self, token: &str) -> Option<String> {
        let w = token.to_lowercase();
        let mut cands = vec![w.clone()];
        for suffix in ["ing", "ed", "es", "s"] {
            if let Some(stem) = w.strip_suffix(suffix).filter(|s| s.len() >= 2) {
                cands.push(stem.to_string());
                cands.push(alloc::format!("{stem}e"));
                let b = stem.as_bytes();
                if b.len() >= 3 && b[b.len() - 1] == b[b.len() - 2] {
                    cands.push(stem[..stem.len() - 1].to_string());
                }
            }
        }
        cands.into_iter().find(|c| self.verbs.contains(c))
    }

    pub fn is_tool(&self, lemma: &str) -> bool {
        self.tools.contains(lemma)
    }
}

/// Instruction tree: a synthetic root whose children are verbs in order of
/// appearance, each with the nouns that follow it as leaves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstructionTree(pub OrderedTree<String>);

impl InstructionTree {
    pub fn tree(&self) -> &OrderedTree<String> {
        &self.0
    }

    pub fn node_count(&self) -> usize {
        self.0.node_count()
    }
}

impl fmt::Display for InstructionTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Builds the instruction tree of a list of steps. Within each step, a verb
/// from the lexicon (not preceded by a determiner) opens a new stem under
/// the root; ingredient nouns from `dict` and tool nouns become leaves of the
/// latest stem in the same step, or of the root when the step has no verb
/// yet.
pub fn build_instruction_tree<S: AsRef<str>>(steps: &[S], lex: &TreeLexicon, dict: &IngredientDictionary) -> InstructionTree {
    let mut tree = OrderedTree::leaf(ROOT_LABEL.to_string());
    let lem = dict.lemmatizer();
    for step in steps {
        let stream = word_tokenize(step.as_ref());
        let mut current = 0;
        let mut prev: Option<&str> = None;
        for (w, _) in stream.words() {
            let after_det = prev.is_some_and(|p| DETERMINERS.contains(&p));
            prev = Some(w);
            if !after_det {
                if let Some(v) = lex.verb_stem(w) {
                    current = tree.add_child(0, v);
                    continue;
                }
            }
            let lemma = lem.lemmatize(w);
            if dict.contains(&lemma) || lex.is_tool(&lemma) {
                tree.add_child(current, lemma);
            }
        }
    }
    InstructionTree(tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(s: &str) -> OrderedTree {
        OrderedTree::parse(s).unwrap()
    }

    fn d(a: &str, b: &str) -> f64 {
        tree_edit_distance(&t(a), &t(b), &EditCost::default())
    }

    #[test]
    fn bracket_round_trip() {
        for s in ["a", "root(mix(egg,flour),bake)", "a(b(c(d)),e)", "x(y,z,w)"] {
            assert_eq!(t(s).to_string(), s);
        }
        assert_eq!(t("").node_count(), 0);
        for bad in ["a(", "a)", "(a)", "a(,b)", "a,b"] {
            assert!(OrderedTree::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn postorder_and_keyroots() {
        let p = PreparedTree::new(&t("f(d(a,c(b)),e)"));
        assert_eq!(p.labels, ["a", "b", "c", "d", "e", "f"]);
        assert_eq!(p.lld, [0, 1, 1, 0, 4, 0]);
        assert_eq!(p.keyroots, [2, 4, 5]);
    }

    #[test]
    fn worked_distances() {
        assert_eq!(d("root(mix(egg,flour))", "root(mix(egg,flour))"), 0.0);
        assert_eq!(d("mix", "stir"), 1.0);
        assert_eq!(d("root(mix(egg,flour))", "root(mix(flour))"), 1.0);
        let n = nted(&t("root(mix(egg,flour))"), &t("root(mix(flour))"), &EditCost::default()).unwrap();
        assert!((n - 1.0 / 7.0).abs() < 1e-12);
        // classic example from the original algorithm description
        assert_eq!(d("f(d(a,c(b)),e)", "f(c(d(a,b)),e)"), 2.0);
        assert_eq!(d("", "a(b,c)"), 3.0);
        assert_eq!(nted::<String>(&OrderedTree::empty(), &OrderedTree::empty(), &EditCost::default()), Err(MetricError::BothTreesEmpty));
    }

    #[test]
    fn single_node_nted() {
        let c = EditCost::default();
        assert_eq!(nted(&t("a"), &t("b"), &c).unwrap(), 0.5);
        assert_eq!(nted(&t("root(a)"), &t("root(b)"), &c).unwrap(), 0.25);
    }

    #[test]
    fn weighted_costs() {
        let c = EditCost::new(2.0, 3.0, 10.0);
        // relabel dearer than delete + insert
        assert_eq!(tree_edit_distance(&t("a"), &t("b"), &c), 5.0);
        assert_eq!(tree_edit_distance(&t("a(b)"), &t("a"), &c), 3.0);
        assert_eq!(tree_edit_distance(&t("a"), &t("a(b)"), &c), 2.0);
    }

    #[test]
    fn builds_instruction_trees() {
        let lex = TreeLexicon::bundled();
        let dict = IngredientDictionary::bundled();
        let tr = build_instruction_tree(&["Mix egg and flour.", "Bake."], &lex, &dict);
        assert_eq!(tr.to_string(), "root(mix(egg,flour),bake)");
        assert_eq!(build_instruction_tree::<&str>(&[], &lex, &dict).node_count(), 1);
        assert_eq!(build_instruction_tree(&["Serve."], &lex, &dict).node_count(), 2);
        let tr = build_instruction_tree(&["Eggs go in the bowl.", "Heat the grill and grilled the onions."], &lex, &dict);
        assert_eq!(tr.to_string(), "root(egg,bowl,heat(grill),grill(onion))");
    }

    #[test]
    fn verb_inflections() {
        let lex = TreeLexicon::bundled();
        for (w, v) in [("stirring", "stir"), ("baked", "bake"), ("chopped", "chop"), ("Mixes", "mix"), ("adds", "add"), ("whisked", "whisk")] {
            assert_eq!(lex.verb_stem(w).as_deref(), Some(v), "{w}");
        }
        assert_eq!(lex.verb_stem("flour"), None);
    }

    fn arb_tree() -> impl Strategy<Value = OrderedTree> {
        let leaf = prop_oneof![Just("a"), Just("b"), Just("c")].prop_map(|l| OrderedTree::leaf(l.to_string()));
        leaf.prop_recursive(3, 6, 3, |inner| {
            (prop_oneof![Just("a"), Just("b"), Just("c")], proptest::collection::vec(inner, 0..3))
                .prop_map(|(l, ch)| OrderedTree::node(l.to_string(), ch))
        })
    }

    proptest! {
        #[test]
        fn metric_properties(x in arb_tree(), y in arb_tree(), z in arb_tree()) {
            let c = EditCost::default();
            let dxy = tree_edit_distance(&x, &y, &c);
            prop_assert_eq!(tree_edit_distance(&x, &x, &c), 0.0);
            prop_assert_eq!(dxy, tree_edit_distance(&y, &x, &c));
            prop_assert!(dxy <= tree_edit_distance(&x, &z, &c) + tree_edit_distance(&z, &y, &c));
            let n = nted(&x, &y, &c).unwrap();
            prop_assert!((0.0..=1.0).contains(&n));
        }

        #[test]
        fn display_parse_round_trip(x in arb_tree()) {
            prop_assert_eq!(OrderedTree::parse(&x.to_string()).unwrap(), x);
        }
    }
}
