//! Greedy and beam-search generation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::model::{log_softmax, DecoderState, IncrementalDecoder, ModelParameters, Transformer};
use crate::vocab::{Vocabulary, EOS_ID, PAD_ID, REVIEW_TAG_ID};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("input is empty")]
    EmptyInput,
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecodeWarning {
    /// The input carries no `<review_tag>`; generation still ran.
    NoTag,
}

/// A decoder that emits next-token logits one step at a time. `step` feeds
/// one token and returns logits for the following position.
pub trait StepModel {
    type State: Clone;
    fn start(&self) -> Self::State;
    fn step(&self, state: &mut Self::State, token: u32) -> Vec<f64>;
}

impl StepModel for IncrementalDecoder<'_, '_> {
    type State = DecoderState;

    fn start(&self) -> DecoderState {
        IncrementalDecoder::start(self)
    }

    fn step(&self, state: &mut DecoderState, token: u32) -> Vec<f64> {
        IncrementalDecoder::step(self, state, token)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    pub k: usize,
    pub beam: usize,
    /// Maximum generated tokens, EOS included.
    pub max_len: usize,
    pub length_penalty: f64,
}

impl BeamConfig {
    /// Beam width `max(k, 10)`.
    pub fn new(k: usize, max_len: usize, length_penalty: f64) -> Self {
        Self {
            k,
            beam: k.max(10),
            max_len,
            length_penalty,
        }
    }
}

/// A finished hypothesis: tokens without EOS, total log-probability and the
/// length-normalized score used for ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub ids: Vec<u32>,
    pub logprob: f64,
    pub score: f64,
}

fn score(logprob: f64, len: usize, lp: f64) -> f64 {
    logprob / (len.max(1) as f64).powf(lp)
}

/// Highest-logit token; ties go to the smaller id.
fn argmax(v: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best as u32
}

/// Picks the most likely token at every step until EOS or `max_len` tokens.
pub fn greedy<M: StepModel>(model: &M, max_len: usize) -> Hypothesis {
    let mut st = model.start();
    let mut logits = model.step(&mut st, PAD_ID);
    let mut ids = Vec::new();
    let mut logprob = 0.0;
    for _ in 0..max_len {
        let lp = log_softmax(&logits);
        let t = argmax(&lp);
        logprob += lp[t as usize];
        if t == EOS_ID {
            return Hypothesis {
                score: score(logprob, ids.len() + 1, 1.0),
                ids,
                logprob,
            };
        }
        ids.push(t);
        if ids.len() == max_len {
            break;
        }
        logits = model.step(&mut st, t);
    }
    Hypothesis {
        score: score(logprob, ids.len(), 1.0),
        ids,
        logprob,
    }
}

struct Live<S> {
    ids: Vec<u32>,
    logprob: f64,
    state: S,
    next: Vec<f64>,
}

/// Beam search. Hypotheses end at EOS or after `max_len` tokens and are
/// ranked by `logprob / len^length_penalty` (EOS counts toward `len`).
/// Finished hypotheses that `key` maps to the same value are collapsed to the
/// best-scoring one, so up to `k` distinct results come back in descending
/// score order.
///
/// Search stops early only when no live hypothesis can still beat the k-th
/// distinct finished one, which keeps the result exact whenever the beam is
/// wide enough to hold every prefix.
pub fn beam_search<M: StepModel, K: Eq + std::hash::Hash>(
    model: &M,
    cfg: &BeamConfig,
    key: impl Fn(&[u32]) -> K,
) -> Vec<Hypothesis> {
    let beam = cfg.beam.max(cfg.k).max(1);
    let mut st = model.start();
    let first = model.step(&mut st, PAD_ID);
    let mut live = vec![Live {
        ids: Vec::new(),
        logprob: 0.0,
        state: st,
        next: log_softmax(&first),
    }];
    let mut finished: HashMap<K, Hypothesis> = HashMap::new();
    let finish = |h: Hypothesis, finished: &mut HashMap<K, Hypothesis>| {
        let k = key(&h.ids);
        match finished.get(&k) {
            Some(old) if old.score >= h.score => {}
            _ => {
                finished.insert(k, h);
            }
        }
    };
    while !live.is_empty() {
        let mut cands: Vec<(f64, usize, u32)> = Vec::new();
        for (hi, h) in live.iter().enumerate() {
            let mut order: Vec<u32> = (0..h.next.len() as u32).collect();
            order.sort_by(|&a, &b| h.next[b as usize].total_cmp(&h.next[a as usize]).then(a.cmp(&b)));
            for &t in order.iter().take(beam) {
                cands.push((h.logprob + h.next[t as usize], hi, t));
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next_live = Vec::with_capacity(beam);
        for (rank, &(lp, hi, t)) in cands.iter().enumerate() {
            if next_live.len() == beam {
                break;
            }
            let h = &live[hi];
            if t == EOS_ID {
                if rank < beam {
                    let len = h.ids.len() + 1;
                    finish(
                        Hypothesis {
                            ids: h.ids.clone(),
                            logprob: lp,
                            score: score(lp, len, cfg.length_penalty),
                        },
                        &mut finished,
                    );
                }
                continue;
            }
            let mut ids = h.ids.clone();
            ids.push(t);
            if ids.len() >= cfg.max_len {
                let len = ids.len();
                finish(
                    Hypothesis {
                        ids,
                        logprob: lp,
                        score: score(lp, len, cfg.length_penalty),
                    },
                    &mut finished,
                );
                continue;
            }
            let mut state = h.state.clone();
            let next = log_softmax(&model.step(&mut state, t));
            next_live.push(Live {
                ids,
                logprob: lp,
                state,
                next,
            });
        }
        live = next_live;
        if finished.len() >= cfg.k && cfg.length_penalty >= 0.0 {
            let mut scores: Vec<f64> = finished.values().map(|h| h.score).collect();
            scores.sort_by(|a, b| b.total_cmp(a));
            let kth = scores[cfg.k - 1];
            // logprob <= 0, so the best a live prefix can still reach is its
            // current logprob spread over the longest allowed length.
            let bound = live
                .iter()
                .map(|h| score(h.logprob, cfg.max_len, cfg.length_penalty))
                .fold(f64::NEG_INFINITY, f64::max);
            if kth > bound {
                break;
            }
        }
    }
    let mut out: Vec<Hypothesis> = finished.into_values().collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.ids.cmp(&b.ids)));
    out.truncate(cfg.k);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub id: String,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopK {
    pub candidates: Vec<Candidate>,
    pub warnings: Vec<DecodeWarning>,
}

fn check_input(input_ids: &[u32], k: usize) -> Result<Vec<DecodeWarning>, DecodeError> {
    if input_ids.is_empty() {
        return Err(DecodeError::EmptyInput);
    }
    if k == 0 {
        return Err(DecodeError::ZeroK);
    }
    Ok(if input_ids.contains(&REVIEW_TAG_ID) { vec![] } else { vec![DecodeWarning::NoTag] })
}

/// The `k` best distinct comments for one encoded input, by beam search with
/// width `max(k, 10)`.
pub fn generate_topk(params: &ModelParameters, vocab: &Vocabulary, input_ids: &[u32], k: usize) -> Result<TopK, DecodeError> {
    let warnings = check_input(input_ids, k)?;
    let model = Transformer::new(params);
    let dec = model.incremental(input_ids);
    let cfg = BeamConfig::new(k, params.config.max_out_len, params.config.length_penalty);
    let hyps = beam_search(&dec, &cfg, |ids| vocab.decode(ids).join(" "));
    let candidates = hyps
        .into_iter()
        .map(|h| Candidate {
            text: vocab.decode(&h.ids).join(" "),
            score: h.score,
        })
        .collect();
    Ok(TopK { candidates, warnings })
}

/// Greedy decode of one encoded input, as text.
pub fn generate_greedy(params: &ModelParameters, vocab: &Vocabulary, input_ids: &[u32]) -> Result<String, DecodeError> {
    check_input(input_ids, 1)?;
    let model = Transformer::new(params);
    let dec = model.incremental(input_ids);
    Ok(vocab.decode(&greedy(&dec, params.config.max_out_len).ids).join(" "))
}
