//! Review-comment generation pipeline.
//!
//! The crate covers every stage between raw review triplets and scored
//! generations:
//!
//! - [`corpus`]: triplet records, JSONL storage, dedup/filter/split and an
//!   optional GitHub GraphQL miner.
//! - [`textprep`]: comment stripping, identifier splitting, lemmatization and
//!   the code/comment normalizers.
//! - [`augment`]: EDA-style comment augmentation.
//! - [`tagger`]: line diff, valid-modification runs, Java method extraction and
//!   `<review_tag>` insertion.
//! - [`vocab`]: word-level vocabulary and id encoding.
//! - [`model`]: a small encoder-decoder transformer with masked-token
//!   pre-training and teacher-forced fine-tuning.
//! - [`decode`]: greedy and beam-search generation.
//! - [`eval`]: ROUGE-1, ROUGE-L and perfect prediction with best-of-k.
//! - [`dataset`]: tagged pairs and the encoders that turn them into model
//!   examples.

pub mod augment;
pub mod corpus;
pub mod dataset;
pub mod decode;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod tagger;
pub mod textprep;
pub mod vocab;

mod util;

/// Literal marker placed on its own line before each review line.
pub const REVIEW_TAG: &str = "<review_tag>";

/// Version of the on-disk schemas (JSONL records, vocabulary, checkpoints).
pub const SCHEMA_VERSION: u32 = 1;
