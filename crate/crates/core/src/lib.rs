//! Zero-shot cross-lingual dialogue generation.
//!
//! A generator is trained on source-language dialogues only. Bilingual
//! lexicons turn each example into code-switched and pseudo-target views
//! (target-language tokens plus `[MASK]` placeholders). Contrastive losses on
//! the encoder and decoder pull those views together. At inference the model
//! answers in the pseudo-target language and a mask filler replaces the
//! placeholders.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod generator;
pub mod lexicon;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod optim;
pub mod switcher;
pub mod synthetic;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
