//! Turns tagged pairs into model examples.

use crate::model::{mask_tokens, ModelError, TrainingExample};
use crate::tagger::TaggedPair;
use crate::util::fnv1a;
use crate::vocab::{VocabError, Vocabulary, TASK_PREFIX};
use crate::REVIEW_TAG;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("record {id}: empty comment")]
    EmptyTarget { id: String },
    #[error("record {id}: {source}")]
    Vocab {
        id: String,
        #[source]
        source: VocabError,
    },
    #[error("record {id}: {source}")]
    Model {
        id: String,
        #[source]
        source: ModelError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodeOptions {
    pub max_in_len: usize,
    pub max_out_len: usize,
    /// When false every `<review_tag>` token is dropped from the input.
    pub keep_tag: bool,
}

/// Whitespace tokens of the function side, tags optionally removed.
pub fn function_tokens(pair: &TaggedPair, keep_tag: bool) -> Vec<&str> {
    pair.function_tagged
        .split_whitespace()
        .filter(|t| keep_tag || *t != REVIEW_TAG)
        .collect()
}

pub fn comment_tokens(pair: &TaggedPair) -> Vec<&str> {
    pair.comment_prepared.split_whitespace().collect()
}

/// Lines used to build the vocabulary: the task prefix, then every function
/// and comment.
pub fn vocab_corpus(pairs: &[TaggedPair]) -> Vec<String> {
    let mut lines = vec![TASK_PREFIX.join(" ")];
    for p in pairs {
        lines.push(p.function_tagged.clone());
        lines.push(p.comment_prepared.clone());
    }
    lines
}

/// Model input for generation: prefix, function tokens, EOS.
pub fn encode_input(pair: &TaggedPair, vocab: &Vocabulary, opts: &EncodeOptions) -> Result<Vec<u32>, DatasetError> {
    vocab
        .encode(&function_tokens(pair, opts.keep_tag), &vocab.prefix_ids(), opts.max_in_len)
        .map_err(|source| DatasetError::Vocab {
            id: pair.id.clone(),
            source,
        })
}

/// Fine-tuning example: prefixed function in, comment plus EOS out.
pub fn finetune_example(pair: &TaggedPair, vocab: &Vocabulary, opts: &EncodeOptions) -> Result<TrainingExample, DatasetError> {
    let comment = comment_tokens(pair);
    if comment.is_empty() {
        return Err(DatasetError::EmptyTarget { id: pair.id.clone() });
    }
    let target_ids = vocab.encode(&comment, &[], opts.max_out_len).map_err(|source| DatasetError::Vocab {
        id: pair.id.clone(),
        source,
    })?;
    Ok(TrainingExample {
        id: pair.id.clone(),
        input_ids: encode_input(pair, vocab, opts)?,
        target_ids,
        mask_positions: Vec::new(),
    })
}

/// Pre-training example: prefix, function and comment in one sequence with a
/// seeded set of positions masked. The prefix is never masked.
pub fn pretrain_example(
    pair: &TaggedPair,
    vocab: &Vocabulary,
    max_len: usize,
    keep_tag: bool,
    mask_rate: f64,
    seed: u64,
) -> Result<TrainingExample, DatasetError> {
    let mut body = function_tokens(pair, keep_tag);
    body.extend(comment_tokens(pair));
    let prefix = vocab.prefix_ids();
    let ids = vocab.encode(&body, &prefix, max_len).map_err(|source| DatasetError::Vocab {
        id: pair.id.clone(),
        source,
    })?;
    let m = mask_tokens(&ids, prefix.len(), mask_rate, seed ^ fnv1a(pair.id.as_bytes())).map_err(|source| DatasetError::Model {
        id: pair.id.clone(),
        source,
    })?;
    Ok(TrainingExample {
        id: pair.id.clone(),
        input_ids: m.ids,
        target_ids: m.originals,
        mask_positions: m.positions,
    })
}
