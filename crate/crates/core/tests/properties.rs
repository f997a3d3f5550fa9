use std::sync::OnceLock;

use proptest::prelude::*;
use recipe_core::corpus::{filter_recipe, RawRecipe};
use recipe_core::fieldcodec::{field_content, parse_multifield, serialize_canonical, train_bpe, BpeVocab, FieldKind};
use recipe_core::metrics::{bleu, nted, rouge_l, BleuConfig, EditCost, OrderedTree};
use recipe_core::textnorm::Lemmatizer;

fn vocab() -> &'static BpeVocab {
    static V: OnceLock<BpeVocab> = OnceLock::new();
    V.get_or_init(|| {
        let texts = [
            "2 cups flour\n1 cup sugar\n3 eggs",
            "Preheat the oven. Whisk the eggs and sugar until pale, then fold in the flour.",
            "Tomato soup with basil <and> $5 croutons \\ extra",
        ];
        train_bpe(&texts, 80).unwrap()
    })
}

fn lemmatizer() -> &'static Lemmatizer {
    static L: OnceLock<Lemmatizer> = OnceLock::new();
    L.get_or_init(Lemmatizer::standard)
}

fn tree(shape: &[(usize, u8)]) -> OrderedTree<u8> {
    let mut t = OrderedTree::leaf(0);
    for (i, &(parent, label)) in shape.iter().enumerate() {
        t.add_child(parent % (i + 1), label);
    }
    t
}

const WORD: &str = "[a-z<>$\\\\]{1,8}";

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encode_decode_is_identity(s in "\\PC{0,60}") {
        let v = vocab();
        let ids = v.encode(&s);
        prop_assert!(ids.iter().all(|&i| !v.is_special(i)));
        prop_assert_eq!(v.decode(&ids).unwrap(), s);
    }

    #[test]
    fn accepted_recipes_survive_serialization(
        title in "[A-Za-z<>$\\\\ ]{1,30}",
        ingredients in prop::collection::vec((1u8..5, "(cups?|tablespoons?|) ?", WORD), 2..6),
        sentences in prop::collection::vec(prop::collection::vec(WORD, 4..12), 2..5),
    ) {
        let raw = RawRecipe {
            source_id: "p".into(),
            title,
            ingredient_lines: ingredients.iter().map(|(q, u, n)| format!("{q} {u}{n}")).collect(),
            instruction_text: sentences.iter().map(|s| format!("{}.", s.join(" "))).collect::<Vec<_>>().join(" "),
        };
        let r = filter_recipe(&raw, lemmatizer());
        prop_assume!(r.is_ok());
        let r = r.unwrap();
        let order: Vec<usize> = (0..r.ingredients.len()).collect();
        let want: Vec<(FieldKind, String)> = FieldKind::ALL.iter().map(|&f| (f, field_content(&r, f, &order))).collect();
        prop_assert_eq!(parse_multifield(&serialize_canonical(&r)).unwrap(), want);
        let v = vocab();
        prop_assert_eq!(v.render(&v.encode_serialized(&serialize_canonical(&r))).unwrap(), serialize_canonical(&r));
    }

    #[test]
    fn ngram_scores_are_bounded(c in prop::collection::vec(0u8..4, 0..30), r in prop::collection::vec(0u8..4, 0..30)) {
        let b = bleu(&c, &r, &BleuConfig::default());
        prop_assert!((0.0..=1.0).contains(&b.score));
        let l = rouge_l(&c, &r);
        prop_assert!((0.0..=1.0).contains(&l.f));
        prop_assert!((l.f - rouge_l(&r, &c).f).abs() < 1e-12);
        if !c.is_empty() {
            prop_assert!((bleu(&c, &c, &BleuConfig::default()).score - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn nted_is_a_normalized_symmetric_distance(
        a in prop::collection::vec((0usize..20, 0u8..3), 0..15),
        b in prop::collection::vec((0usize..20, 0u8..3), 0..15),
    ) {
        let (a, b) = (tree(&a), tree(&b));
        let costs = EditCost::default();
        let d = nted(&a, &b, &costs).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!((d - nted(&b, &a, &costs).unwrap()).abs() < 1e-12);
        prop_assert_eq!(nted(&a, &a, &costs).unwrap(), 0.0);
    }
}
