//! Bundled word lists.
//!
//! The larger lists (ingredient dictionary, cooking verbs, tools, descriptors)
//! live as plain-text files under `data/` so they can be reviewed and extended
//! without touching code. Every file uses one lowercase entry per line and
//! `#` comments.

/// Ingredient root nouns (one per line).
pub const DICTIONARY_SRC: &str = include_str!("../data/dictionary.txt");
/// Cooking verbs used as instruction-tree stems.
pub const VERBS_SRC: &str = include_str!("../data/verbs.txt");
/// Cooking tools, treated as noun leaves in instruction trees.
pub const TOOLS_SRC: &str = include_str!("../data/tools.txt");
/// Adjectives and preparation words skipped by the head-word rule.
pub const DESCRIPTORS_SRC: &str = include_str!("../data/descriptors.txt");

/// Measurement units stripped from ingredient lines, with plural and
/// abbreviated forms.
pub const UNITS: &[&str] = &[
    "cup", "cups", "c",
    "tablespoon", "tablespoons", "tbsp", "tbsps", "tbs", "tbl",
    "teaspoon", "teaspoons", "tsp", "tsps",
    "ounce", "ounces", "oz",
    "fluid", "fl",
    "pound", "pounds", "lb", "lbs",
    "gram", "grams", "g",
    "kilogram", "kilograms", "kg",
    "milliliter", "milliliters", "millilitre", "millilitres", "ml",
    "liter", "liters", "litre", "litres", "l",
    "pinch", "pinches",
    "dash", "dashes",
    "clove", "cloves",
    "slice", "slices",
    "can", "cans",
    "package", "packages", "pkg",
    "quart", "quarts", "qt",
    "pint", "pints", "pt",
    "stick", "sticks",
    "bunch", "bunches",
    "jar", "jars",
    "bottle", "bottles",
    "envelope", "envelopes",
    "container", "containers",
    "head", "heads",
];

/// Words after a terminator that do not end a sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "approx", "tbsp", "tsp", "oz", "lb", "lbs", "min", "mins", "hr", "hrs", "pkg", "e.g", "i.e",
    "vs", "deg", "qt", "pt", "doz", "fl", "st", "no", "dr", "mr", "mrs",
];

/// Phrases that mark non-recipe content (nutrition facts, author credits).
pub const DENYLIST: &[&str] = &["nutrition", "calories", "submitted by", "recipe by"];

/// Trailing comments dropped from ingredient name phrases.
pub const TRAILING_COMMENTS: &[&str] = &[
    "to taste",
    "for garnish",
    "for serving",
    "as needed",
    "or to taste",
    "optional",
];

/// Iterates the entries of a bundled word-list file.
pub fn entries(src: &str) -> impl Iterator<Item = &str> {
    src.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

pub fn is_unit(word: &str) -> bool {
    UNITS.contains(&word)
}

pub fn is_descriptor(word: &str) -> bool {
    entries(DESCRIPTORS_SRC).any(|d| d == word)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_lists_are_lowercase_and_nonempty() {
        for src in [DICTIONARY_SRC, VERBS_SRC, TOOLS_SRC, DESCRIPTORS_SRC] {
            assert!(entries(src).count() > 10);
            for e in entries(src) {
                assert_eq!(e, e.to_lowercase());
                assert!(!e.contains(' '), "{e}");
            }
        }
    }

    #[test]
    fn bundled_dictionary_is_large() {
        assert!(entries(DICTIONARY_SRC).count() >= 450);
    }
}
