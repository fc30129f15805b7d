use std::collections::HashMap;

use ndarray::{Array2, Zip};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::params::Layout;
use super::tape::Tape;
use super::transformer::{Dropout, Graph};
use super::{mask_tokens, ModelError, ModelParameters, TrainingExample};
use crate::util::{derived_rng, mix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    /// Masked-token prediction from the encoder.
    Mlm,
    /// Teacher-forced comment generation.
    Seq2Seq,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl AdamState {
    pub fn zeros(params: &ModelParameters) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// Everything needed to continue training bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParameters,
    pub adam: AdamState,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub best_valid: Option<f64>,
    /// Sum and count of batch losses since the last curve point.
    pub pending: (f64, u64),
    pub curve: Vec<CurvePoint>,
}

impl TrainState {
    pub fn fresh(params: ModelParameters) -> Self {
        Self {
            adam: AdamState::zeros(&params),
            params,
            step: 0,
            best_valid: None,
            pending: (0.0, 0),
            curve: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub objective: Objective,
    pub lr: f64,
    pub batch_size: usize,
    /// Train until `state.step` reaches this.
    pub total_steps: u64,
    pub eval_every: u64,
    /// Re-draw masks every epoch (pre-training only).
    pub dynamic_mask: bool,
    /// Leading positions never masked.
    pub protected_prefix: usize,
    /// Stop at the first evaluation where the full training-set loss falls
    /// below this value.
    pub stop_below: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters at the lowest validation loss seen during this call.
    pub best: Option<ModelParameters>,
    /// Step at which `stop_below` was met.
    pub reached_threshold_at: Option<u64>,
}

fn loss_node(g: &mut Graph, ex: &TrainingExample, objective: Objective) -> super::tape::Src {
    match objective {
        Objective::Mlm => g.mlm_loss(ex),
        Objective::Seq2Seq => g.seq2seq_loss(ex),
    }
}

fn token_count(batch: &[&TrainingExample]) -> usize {
    batch.iter().map(|e| e.target_ids.len()).sum()
}

fn check_example(ex: &TrainingExample, objective: Objective, vocab: usize) -> Result<(), ModelError> {
    let bad = |msg: &str| {
        Err(ModelError::BadExample {
            id: ex.id.clone(),
            msg: msg.to_string(),
        })
    };
    if ex.input_ids.is_empty() || ex.target_ids.is_empty() {
        return bad("empty input or target");
    }
    if ex.max_id() as usize >= vocab {
        return Err(ModelError::VocabMismatch {
            params: vocab,
            data: ex.max_id() as usize + 1,
        });
    }
    match objective {
        Objective::Mlm if ex.mask_positions.len() != ex.target_ids.len() => bad("mask positions and targets differ in length"),
        Objective::Mlm if ex.mask_positions.iter().any(|&p| p >= ex.input_ids.len()) => bad("mask position out of range"),
        Objective::Seq2Seq if ex.target_ids.last() != Some(&crate::vocab::EOS_ID) => bad("target does not end with EOS"),
        _ => Ok(()),
    }
}

/// Mean per-token loss of `batch` and its gradient. With `dropout_key =
/// Some((seed, step))` and a positive dropout rate, example `j` draws its
/// dropout masks from a stream keyed by `(seed, step, j)`.
pub fn batch_loss_and_grad(
    params: &ModelParameters,
    batch: &[&TrainingExample],
    objective: Objective,
    dropout_key: Option<(u64, u64)>,
) -> (f64, Vec<Array2<f64>>) {
    let layout = params.layout();
    let mut grads = params.zeros_like();
    let total = token_count(batch).max(1) as f64;
    let mut loss = 0.0;
    for (j, ex) in batch.iter().enumerate() {
        let drop = dropout_key.filter(|_| params.config.dropout > 0.0).map(|(seed, step)| Dropout {
            rate: params.config.dropout,
            rng: derived_rng(seed, &[0x4452_4f50, step, j as u64]),
        });
        let mut tape = Tape::new(&params.tensors, true);
        let root = {
            let mut g = Graph::new(&mut tape, &layout, &params.config, drop);
            let l = loss_node(&mut g, ex, objective);
            g.tape.scale(l, 1.0 / total)
        };
        loss += tape.value(root)[[0, 0]];
        tape.backward(root, &mut grads);
    }
    (loss, grads)
}

fn sum_loss(params: &ModelParameters, layout: &Layout, ex: &TrainingExample, objective: Objective) -> f64 {
    let mut tape = Tape::new(&params.tensors, false);
    let mut g = Graph::new(&mut tape, layout, &params.config, None);
    let l = loss_node(&mut g, ex, objective);
    tape.value(l)[[0, 0]]
}

/// Mean per-token loss without dropout.
pub fn batch_loss(params: &ModelParameters, batch: &[&TrainingExample], objective: Objective) -> f64 {
    let layout = params.layout();
    let total = token_count(batch).max(1) as f64;
    batch.iter().map(|ex| sum_loss(params, &layout, ex, objective)).sum::<f64>() / total
}

pub fn dataset_loss(params: &ModelParameters, data: &[TrainingExample], objective: Objective) -> f64 {
    let refs: Vec<&TrainingExample> = data.iter().collect();
    batch_loss(params, &refs, objective)
}

fn epoch_order(seed: u64, n: usize, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derived_rng(seed, &[0x4550_4f43, epoch]));
    order
}

/// Examples of step `step`: slice `[step·b, (step+1)·b)` of the stream formed
/// by concatenating one seeded permutation per epoch. Returns
/// `(example index, epoch)` pairs.
pub(crate) fn batch_indices(seed: u64, n: usize, b: usize, step: u64) -> Vec<(usize, u64)> {
    let mut orders: HashMap<u64, Vec<usize>> = HashMap::new();
    let start = step * b as u64;
    (start..start + b as u64)
        .map(|pos| {
            let epoch = pos / n as u64;
            let order = orders.entry(epoch).or_insert_with(|| epoch_order(seed, n, epoch));
            (order[(pos % n as u64) as usize], epoch)
        })
        .collect()
}

fn adam_update(state: &mut TrainState, grads: &[Array2<f64>], lr: f64, clip: f64) {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let norm = grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    let k = if clip > 0.0 && norm > clip { clip / norm } else { 1.0 };
    let t = (state.step + 1) as i32;
    let c1 = 1.0 - B1.powi(t);
    let c2 = 1.0 - B2.powi(t);
    for (i, g) in grads.iter().enumerate() {
        Zip::from(&mut state.params.tensors[i])
            .and(&mut state.adam.m[i])
            .and(&mut state.adam.v[i])
            .and(g)
            .for_each(|p, m, v, &g| {
                let g = g * k;
                *m = B1 * *m + (1.0 - B1) * g;
                *v = B2 * *v + (1.0 - B2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
            });
    }
}

/// Runs optimizer steps until `state.step == opts.total_steps` (or the
/// threshold is met). Batch order, masks and dropout depend only on the seed
/// and the step number, so stopping and resuming gives the same result as one
/// uninterrupted run.
pub fn train(
    state: &mut TrainState,
    train: &[TrainingExample],
    valid: &[TrainingExample],
    opts: &TrainOptions,
) -> Result<TrainOutcome, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if opts.batch_size == 0 || opts.eval_every == 0 {
        return Err(ModelError::InvalidConfig("batch_size and eval_every must be positive".into()));
    }
    let vocab = state.params.vocab_size;
    for ex in train.iter().chain(valid) {
        check_example(ex, opts.objective, vocab)?;
    }
    let seed = state.params.config.seed;
    let mut outcome = TrainOutcome {
        best: None,
        reached_threshold_at: None,
    };
    while state.step < opts.total_steps {
        let picks = batch_indices(seed, train.len(), opts.batch_size, state.step);
        let remasked: Vec<TrainingExample> = picks
            .iter()
            .map(|&(i, epoch)| {
                let ex = &train[i];
                if opts.objective == Objective::Mlm && opts.dynamic_mask && epoch > 0 {
                    let key = mix64(mix64(seed ^ 0x4d41_534b) ^ epoch) ^ i as u64;
                    if let Ok(m) = mask_tokens(&ex.unmasked_input(), opts.protected_prefix, state.params.config.mask_rate, key) {
                        return TrainingExample {
                            id: ex.id.clone(),
                            input_ids: m.ids,
                            target_ids: m.originals,
                            mask_positions: m.positions,
                        };
                    }
                }
                ex.clone()
            })
            .collect();
        let batch: Vec<&TrainingExample> = remasked.iter().collect();
        let (loss, grads) = batch_loss_and_grad(&state.params, &batch, opts.objective, Some((seed, state.step)));
        if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(ModelError::NonFiniteLoss {
                step: state.step,
                ids: batch.iter().map(|e| e.id.clone()).collect(),
            });
        }
        adam_update(state, &grads, opts.lr, state.params.config.clip_norm);
        state.step += 1;
        state.pending.0 += loss;
        state.pending.1 += 1;
        if state.step.is_multiple_of(opts.eval_every) || state.step == opts.total_steps {
            let valid_loss = (!valid.is_empty()).then(|| dataset_loss(&state.params, valid, opts.objective));
            state.curve.push(CurvePoint {
                step: state.step,
                train_loss: state.pending.0 / state.pending.1 as f64,
                valid_loss,
            });
            state.pending = (0.0, 0);
            if let Some(v) = valid_loss {
                if state.best_valid.is_none_or(|b| v < b) {
                    state.best_valid = Some(v);
                    outcome.best = Some(state.params.clone());
                }
            }
            if let Some(thr) = opts.stop_below {
                if dataset_loss(&state.params, train, opts.objective) < thr {
                    outcome.reached_threshold_at = Some(state.step);
                    break;
                }
            }
        }
    }
    Ok(outcome)
}

/// Masked-token pre-training from `params` with the config's pre-training
/// learning rate, batch size and step count.
pub fn pretrain_mlm(
    params: ModelParameters,
    train_set: &[TrainingExample],
    valid: &[TrainingExample],
    protected_prefix: usize,
) -> Result<(TrainState, TrainOutcome), ModelError> {
    let cfg = params.config.clone();
    let mut state = TrainState::fresh(params);
    let opts = TrainOptions {
        objective: Objective::Mlm,
        lr: cfg.lr_pretrain,
        batch_size: cfg.batch_pretrain,
        total_steps: cfg.steps_pretrain,
        eval_every: cfg.eval_every,
        dynamic_mask: true,
        protected_prefix,
        stop_below: None,
    };
    let out = train(&mut state, train_set, valid, &opts)?;
    Ok((state, out))
}

/// Teacher-forced fine-tuning starting from `init` (fresh or pre-trained).
pub fn finetune(
    init: ModelParameters,
    train_set: &[TrainingExample],
    valid: &[TrainingExample],
) -> Result<(TrainState, TrainOutcome), ModelError> {
    let cfg = init.config.clone();
    let mut state = TrainState::fresh(init);
    let opts = TrainOptions {
        objective: Objective::Seq2Seq,
        lr: cfg.lr_finetune,
        batch_size: cfg.batch_finetune,
        total_steps: cfg.steps_finetune,
        eval_every: cfg.eval_every,
        dynamic_mask: false,
        protected_prefix: 0,
        stop_below: None,
    };
    let out = train(&mut state, train_set, valid, &opts)?;
    Ok((state, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::vocab::EOS_ID;

    fn cfg() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            n_layers_enc: 1,
            n_layers_dec: 1,
            dropout: 0.0,
            seed: 3,
            ..Default::default()
        }
    }

    fn pairs() -> Vec<TrainingExample> {
        (0..6)
            .map(|i| TrainingExample {
                id: format!("p{i}"),
                input_ids: vec![5 + i, 6, 7, EOS_ID],
                target_ids: vec![8 + (i % 3), EOS_ID],
                mask_positions: vec![],
            })
            .collect()
    }

    fn opts(steps: u64) -> TrainOptions {
        TrainOptions {
            objective: Objective::Seq2Seq,
            lr: 1e-2,
            batch_size: 4,
            total_steps: steps,
            eval_every: 5,
            dynamic_mask: false,
            protected_prefix: 0,
            stop_below: None,
        }
    }

    #[test]
    fn batches_cover_each_epoch() {
        let mut seen: Vec<usize> = (0..3).flat_map(|s| batch_indices(9, 6, 2, s)).map(|(i, _)| i).collect();
        seen.sort();
        assert_eq!(seen, [0, 1, 2, 3, 4, 5]);
        assert_eq!(batch_indices(9, 6, 4, 1)[2].1, 1);
    }

    #[test]
    fn zero_lr_leaves_params() {
        let p = ModelParameters::init(&cfg(), 16).unwrap();
        let mut st = TrainState::fresh(p.clone());
        train(&mut st, &pairs(), &[], &TrainOptions { lr: 0.0, ..opts(5) }).unwrap();
        assert_eq!(st.params.tensors, p.tensors);
        assert_eq!(st.step, 5);
    }

    #[test]
    fn loss_goes_down() {
        let p = ModelParameters::init(&cfg(), 16).unwrap();
        let before = dataset_loss(&p, &pairs(), Objective::Seq2Seq);
        let mut st = TrainState::fresh(p);
        train(&mut st, &pairs(), &pairs(), &opts(60)).unwrap();
        let after = dataset_loss(&st.params, &pairs(), Objective::Seq2Seq);
        assert!(after < before, "{after} >= {before}");
        assert_eq!(st.curve.len(), 12);
    }

    #[test]
    fn resume_is_bit_identical() {
        let p = ModelParameters::init(&ModelConfig { dropout: 0.2, ..cfg() }, 16).unwrap();
        let mut straight = TrainState::fresh(p.clone());
        train(&mut straight, &pairs(), &[], &opts(14)).unwrap();
        let mut split = TrainState::fresh(p);
        train(&mut split, &pairs(), &[], &opts(7)).unwrap();
        train(&mut split, &pairs(), &[], &opts(14)).unwrap();
        assert_eq!(straight.params, split.params);
        assert_eq!(straight.adam, split.adam);
        assert_eq!(straight.step, split.step);
    }

    #[test]
    fn loss_ignores_batch_order() {
        let p = ModelParameters::init(&cfg(), 16).unwrap();
        let data = pairs();
        let a: Vec<&TrainingExample> = data.iter().collect();
        let b: Vec<&TrainingExample> = data.iter().rev().collect();
        let la = batch_loss(&p, &a, Objective::Seq2Seq);
        let lb = batch_loss(&p, &b, Objective::Seq2Seq);
        assert!((la - lb).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_data() {
        let p = ModelParameters::init(&cfg(), 10).unwrap();
        let mut st = TrainState::fresh(p);
        assert!(matches!(train(&mut st, &pairs(), &[], &opts(1)), Err(ModelError::VocabMismatch { params: 10, .. })));
        let mut no_eos = pairs();
        no_eos[0].target_ids = vec![8];
        let mut st = TrainState::fresh(ModelParameters::init(&cfg(), 16).unwrap());
        assert!(matches!(train(&mut st, &no_eos, &[], &opts(1)), Err(ModelError::BadExample { .. })));
        assert!(matches!(train(&mut st, &[], &[], &opts(1)), Err(ModelError::EmptyDataset)));
    }

    #[test]
    fn non_finite_loss_reports_batch() {
        let mut p = ModelParameters::init(&cfg(), 16).unwrap();
        p.tensors[0][[5, 0]] = f64::NAN;
        let mut st = TrainState::fresh(p);
        match train(&mut st, &pairs(), &[], &TrainOptions { batch_size: 6, ..opts(1) }) {
            Err(ModelError::NonFiniteLoss { step: 0, ids }) => assert!(ids.contains(&"p0".to_string())),
            other => panic!("{other:?}"),
        }
    }
}
