//! Encoder-decoder transformer, masked-token pre-training and fine-tuning.

mod checkpoint;
mod params;
pub mod tape;
mod train;
mod transformer;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::util::derived_rng;
use crate::vocab::{Vocabulary, MASK_ID};

pub use checkpoint::{load_checkpoint, save_checkpoint, write_curve_csv, Checkpoint};
pub use params::ModelParameters;
pub use train::{
    batch_loss, batch_loss_and_grad, dataset_loss, finetune, pretrain_mlm, train, AdamState, CurvePoint, Objective,
    TrainOptions, TrainOutcome, TrainState,
};
pub use transformer::{DecoderState, IncrementalDecoder, Transformer};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence has no maskable token")]
    NothingMaskable,
    #[error("parameters were built for a vocabulary of {params} tokens, data uses {data}")]
    VocabMismatch { params: usize, data: usize },
    #[error("non-finite loss at step {step}; batch ids: {ids:?}")]
    NonFiniteLoss { step: u64, ids: Vec<String> },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("example {id}: {msg}")]
    BadExample { id: String, msg: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub max_in_len_pretrain: usize,
    pub max_in_len: usize,
    pub max_out_len: usize,
    pub lr_pretrain: f64,
    pub lr_finetune: f64,
    pub batch_pretrain: usize,
    pub batch_finetune: usize,
    pub length_penalty: f64,
    pub seed: u64,
    pub tie_embeddings: bool,
    pub mask_rate: f64,
    pub init_std: f64,
    pub clip_norm: f64,
    pub steps_pretrain: u64,
    pub steps_finetune: u64,
    pub eval_every: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_layers_enc: 2,
            n_layers_dec: 2,
            n_heads: 4,
            d_ff: 256,
            dropout: 0.1,
            max_in_len_pretrain: 256,
            max_in_len: 128,
            max_out_len: 128,
            lr_pretrain: 1e-4,
            lr_finetune: 1e-3,
            batch_pretrain: 16,
            batch_finetune: 32,
            length_penalty: 1.0,
            seed: 0,
            tie_embeddings: true,
            mask_rate: 0.10,
            init_std: 0.02,
            clip_norm: 1.0,
            steps_pretrain: 2000,
            steps_finetune: 3000,
            eval_every: 200,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.d_ff == 0 {
            return bad("d_ff must be positive".into());
        }
        for (name, v) in [
            ("max_in_len_pretrain", self.max_in_len_pretrain),
            ("max_in_len", self.max_in_len),
            ("max_out_len", self.max_out_len),
        ] {
            if v < 8 {
                return bad(format!("{name} = {v} is below 8"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return bad(format!("mask_rate {} outside (0, 1)", self.mask_rate));
        }
        for (name, v) in [
            ("lr_pretrain", self.lr_pretrain),
            ("lr_finetune", self.lr_finetune),
            ("init_std", self.init_std),
            ("clip_norm", self.clip_norm),
            ("length_penalty", self.length_penalty),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} = {v} must be finite and non-negative"));
            }
        }
        if self.batch_pretrain == 0 || self.batch_finetune == 0 || self.eval_every == 0 {
            return bad("batch sizes and eval_every must be positive".into());
        }
        Ok(())
    }
}

/// One model example. In pre-training `input_ids` carries MASK at every
/// `mask_positions[i]` and `target_ids[i]` is the token it hid; in fine-tuning
/// `mask_positions` is empty and `target_ids` ends with EOS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub id: String,
    pub input_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
    #[serde(default)]
    pub mask_positions: Vec<usize>,
}

impl TrainingExample {
    /// Input with every mask filled back in.
    pub fn unmasked_input(&self) -> Vec<u32> {
        let mut ids = self.input_ids.clone();
        for (&p, &t) in self.mask_positions.iter().zip(&self.target_ids) {
            ids[p] = t;
        }
        ids
    }

    pub fn max_id(&self) -> u32 {
        self.input_ids.iter().chain(&self.target_ids).copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Masked {
    pub ids: Vec<u32>,
    pub positions: Vec<usize>,
    pub originals: Vec<u32>,
}

/// Replaces exactly `max(1, round(rate·n))` maskable positions with MASK,
/// where `n` counts maskable positions: not a special id and not within the
/// first `protected` positions (the task prefix). Positions come back sorted.
pub fn mask_tokens(ids: &[u32], protected: usize, rate: f64, seed: u64) -> Result<Masked, ModelError> {
    let maskable: Vec<usize> = (protected.min(ids.len())..ids.len())
        .filter(|&i| !Vocabulary::is_special(ids[i]))
        .collect();
    if maskable.is_empty() {
        return Err(ModelError::NothingMaskable);
    }
    let n = ((rate * maskable.len() as f64).round() as usize).clamp(1, maskable.len());
    let mut rng = derived_rng(seed, &[0x4d41_534b]);
    let mut positions: Vec<usize> = maskable.choose_multiple(&mut rng, n).copied().collect();
    positions.sort_unstable();
    let mut out = ids.to_vec();
    let originals = positions.iter().map(|&p| std::mem::replace(&mut out[p], MASK_ID)).collect();
    Ok(Masked {
        ids: out,
        positions,
        originals,
    })
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = m + logits.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
    logits.iter().map(|&x| x - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{EOS_ID, PAD_ID, REVIEW_TAG_ID};
    use proptest::prelude::*;

    #[test]
    fn defaults_valid() {
        ModelConfig::default().validate().unwrap();
        let bad = ModelConfig {
            n_heads: 3,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let short = ModelConfig {
            max_out_len: 7,
            ..Default::default()
        };
        assert!(short.validate().is_err());
    }

    #[test]
    fn mask_counts() {
        let ids: Vec<u32> = (10..30).collect();
        let m = mask_tokens(&ids, 0, 0.10, 1).unwrap();
        assert_eq!(m.positions.len(), 2);
        let m = mask_tokens(&[EOS_ID, 42, PAD_ID], 0, 0.10, 1).unwrap();
        assert_eq!(m.positions, [1]);
        assert_eq!(m.ids, [EOS_ID, MASK_ID, PAD_ID]);
        assert_eq!(m.originals, [42]);
        assert!(matches!(mask_tokens(&[EOS_ID, REVIEW_TAG_ID, PAD_ID], 0, 0.1, 1), Err(ModelError::NothingMaskable)));
        assert!(matches!(mask_tokens(&[9, 9, 9], 3, 0.1, 1), Err(ModelError::NothingMaskable)));
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]), [0.5, 0.5]);
        let p = softmax(&[1000.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] >= 0.0 && p[1] < 1e-300);
        let p = softmax(&[1.0, 2.0, 3.0]);
        let z = 1f64.exp() + 2f64.exp() + 3f64.exp();
        for (i, v) in p.iter().enumerate() {
            assert!((v - ((i + 1) as f64).exp() / z).abs() < 1e-15);
        }
        assert!(p[0] < p[1] && p[1] < p[2]);
    }

    proptest! {
        #[test]
        fn mask_contract(ids in prop::collection::vec(0u32..40, 1..60), protected in 0usize..6, rate in 0.01f64..0.99, seed: u64) {
            let maskable = ids.iter().enumerate().filter(|(i, &t)| *i >= protected && t >= 5).count();
            match mask_tokens(&ids, protected, rate, seed) {
                Err(ModelError::NothingMaskable) => prop_assert_eq!(maskable, 0),
                Err(e) => prop_assert!(false, "{e}"),
                Ok(m) => {
                    let want = ((rate * maskable as f64).round() as usize).clamp(1, maskable);
                    prop_assert_eq!(m.positions.len(), want);
                    for (&p, &o) in m.positions.iter().zip(&m.originals) {
                        prop_assert!(p >= protected && o >= 5 && ids[p] == o && m.ids[p] == MASK_ID);
                    }
                    let ex = TrainingExample { id: "x".into(), input_ids: m.ids.clone(), target_ids: m.originals.clone(), mask_positions: m.positions.clone() };
                    prop_assert_eq!(ex.unmasked_input(), ids.clone());
                    prop_assert_eq!(mask_tokens(&ids, protected, rate, seed).unwrap(), m);
                }
            }
        }

        #[test]
        fn softmax_sums_to_one(xs in prop::collection::vec(-50.0f64..50.0, 1..30)) {
            let p = softmax(&xs);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
