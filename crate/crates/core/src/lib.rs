//! Core algorithms for a recipe generation and evaluation studio.
//!
//! Everything in this crate is pure computation over in-memory values and
//! builds without `std` (only `alloc` is required). File formats, persistence,
//! the HTTP service and the command line live in the `recipe-studio` crate.
//!
//! Module map:
//!
//! - [`corpus`]: ingredient phrase parsing, sentence splitting, quality
//!   filters and deterministic corpus splits.
//! - [`textnorm`]: tokenization, lemmatization, root-noun extraction and
//!   ingredient overlap highlighting.
//! - [`fieldcodec`]: byte-pair encoding and the multi-field serialization
//!   with field delimiter tokens.
//! - [`langmodel`]: a small decoder-only transformer with training and top-k
//!   sampling.
//! - [`metrics`]: ingredient F1, BLEU, ROUGE-L, instruction trees, tree edit
//!   distance and ingredient coherence.
//! - [`retrieval`]: a BM25 inverted index over recipe fields.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod corpus;
pub mod fieldcodec;
pub mod langmodel;
pub mod lexicon;
pub mod metrics;
pub mod retrieval;
pub mod textnorm;

pub use corpus::{IngredientLine, RawRecipe, RecipeRecord};
pub use fieldcodec::{BpeVocab, FieldKind, GenerationMode};
pub use metrics::{EvaluationReport, Evaluator};
pub use retrieval::InvertedIndex;


