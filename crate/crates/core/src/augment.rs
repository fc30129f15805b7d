//! EDA-style augmentation of review comments. Only the comment changes; code
//! fields are copied byte for byte into every variant.

use std::collections::HashMap;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::ReviewTriplet;
use crate::tagger::TaggedPair;
use crate::util::{derived_rng, fnv1a};

static THESAURUS_TSV: &str = include_str!("../assets/thesaurus.tsv");

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AugmentError {
    #[error("augmentation factor must be at least 1")]
    BadFactor,
    #[error("alpha must lie strictly between 0 and 1, got {0}")]
    BadAlpha(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    /// Total records per input, the original included.
    pub factor: usize,
    /// Fraction of tokens each operation touches.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            factor: 9,
            alpha: 0.1,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.factor < 1 {
            return Err(AugmentError::BadFactor);
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(AugmentError::BadAlpha(self.alpha));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdaOp {
    SynonymReplacement,
    RandomInsertion,
    RandomSwap,
    RandomDeletion,
}

impl EdaOp {
    pub const ROUND_ROBIN: [EdaOp; 4] = [
        EdaOp::SynonymReplacement,
        EdaOp::RandomInsertion,
        EdaOp::RandomSwap,
        EdaOp::RandomDeletion,
    ];
}

/// Word to synonyms map.
#[derive(Debug, Clone, Default)]
pub struct Thesaurus {
    synonyms: HashMap<String, Vec<String>>,
}

impl Thesaurus {
    /// Parses `word<TAB>syn1,syn2,...` lines.
    pub fn from_tsv(text: &str) -> Self {
        let synonyms = text
            .lines()
            .filter_map(|l| {
                let (w, s) = l.split_once('\t')?;
                let syns: Vec<String> = s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(String::from).collect();
                (!syns.is_empty()).then(|| (w.trim().to_string(), syns))
            })
            .collect();
        Self { synonyms }
    }

    pub fn embedded() -> &'static Thesaurus {
        static T: OnceLock<Thesaurus> = OnceLock::new();
        T.get_or_init(|| Thesaurus::from_tsv(THESAURUS_TSV))
    }

    pub fn synonyms(&self, word: &str) -> &[String] {
        self.synonyms.get(word).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.synonyms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.synonyms.is_empty()
    }
}

fn touched(alpha: f64, len: usize) -> usize {
    ((alpha * len as f64).floor() as usize).max(1)
}

/// Applies one EDA operation to a token list.
pub fn apply_op(op: EdaOp, tokens: &[String], alpha: f64, thesaurus: &Thesaurus, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut out = tokens.to_vec();
    let n = touched(alpha, tokens.len());
    match op {
        EdaOp::SynonymReplacement => {
            let mut positions: Vec<usize> = (0..out.len()).filter(|&i| !thesaurus.synonyms(&out[i]).is_empty()).collect();
            positions.shuffle(rng);
            for &i in positions.iter().take(n) {
                let syns = thesaurus.synonyms(&out[i]);
                out[i] = syns[rng.gen_range(0..syns.len())].clone();
            }
        }
        EdaOp::RandomInsertion => {
            for _ in 0..n {
                let candidates: Vec<&String> = out.iter().filter(|w| !thesaurus.synonyms(w).is_empty()).collect();
                let Some(word) = candidates.choose(rng) else { break };
                let syns = thesaurus.synonyms(word);
                let syn = syns[rng.gen_range(0..syns.len())].clone();
                let at = rng.gen_range(0..=out.len());
                out.insert(at, syn);
            }
        }
        EdaOp::RandomSwap => {
            if out.len() >= 2 {
                for _ in 0..n {
                    let i = rng.gen_range(0..out.len());
                    let mut j = rng.gen_range(0..out.len() - 1);
                    if j >= i {
                        j += 1;
                    }
                    out.swap(i, j);
                }
            }
        }
        EdaOp::RandomDeletion => {
            let n = n.min(out.len().saturating_sub(1));
            let mut positions: Vec<usize> = (0..out.len()).collect();
            positions.shuffle(rng);
            let mut drop: Vec<usize> = positions.into_iter().take(n).collect();
            drop.sort_unstable_by(|a, b| b.cmp(a));
            for i in drop {
                out.remove(i);
            }
        }
    }
    out
}

/// Outcome of augmenting one record.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmented<T> {
    pub records: Vec<T>,
    /// The comment had fewer than three tokens; only the original is returned.
    pub too_short: bool,
}

/// A record whose comment can be augmented.
pub trait Augmentable: Clone {
    fn id(&self) -> &str;
    fn comment_text(&self) -> &str;
    fn variant(&self, id: String, comment: String) -> Self;
}

impl Augmentable for ReviewTriplet {
    fn id(&self) -> &str {
        &self.id
    }
    fn comment_text(&self) -> &str {
        &self.comment
    }
    fn variant(&self, id: String, comment: String) -> Self {
        Self {
            id,
            comment,
            ..self.clone()
        }
    }
}

impl Augmentable for TaggedPair {
    fn id(&self) -> &str {
        &self.id
    }
    fn comment_text(&self) -> &str {
        &self.comment_prepared
    }
    fn variant(&self, id: String, comment: String) -> Self {
        Self {
            id,
            comment_prepared: comment,
            ..self.clone()
        }
    }
}

/// Returns the original plus `factor - 1` variants. Variant `i` uses the EDA
/// operation at position `(i - 1) mod 4` of [`EdaOp::ROUND_ROBIN`]. The
/// randomness is derived from the config seed and the record id only.
pub fn eda_augment<T: Augmentable>(record: &T, cfg: &AugmentConfig, thesaurus: &Thesaurus) -> Result<Augmented<T>, AugmentError> {
    cfg.validate()?;
    let tokens: Vec<String> = record.comment_text().split_whitespace().map(String::from).collect();
    if tokens.len() < 3 {
        return Ok(Augmented {
            records: vec![record.clone()],
            too_short: true,
        });
    }
    let mut rng = derived_rng(cfg.seed, &[fnv1a(record.id().as_bytes())]);
    let mut records = Vec::with_capacity(cfg.factor);
    records.push(record.clone());
    for i in 1..cfg.factor {
        let op = EdaOp::ROUND_ROBIN[(i - 1) % 4];
        let variant = apply_op(op, &tokens, cfg.alpha, thesaurus, &mut rng);
        records.push(record.variant(format!("{}~aug{i}", record.id()), variant.join(" ")));
    }
    Ok(Augmented { records, too_short: false })
}

/// Augments a whole partition, keeping record order. Returns the records and
/// the number of inputs that were too short.
pub fn augment_all<T: Augmentable>(records: &[T], cfg: &AugmentConfig, thesaurus: &Thesaurus) -> Result<(Vec<T>, usize), AugmentError> {
    let mut out = Vec::with_capacity(records.len() * cfg.factor);
    let mut short = 0;
    for r in records {
        let a = eda_augment(r, cfg, thesaurus)?;
        short += usize::from(a.too_short);
        out.extend(a.records);
    }
    Ok((out, short))
}
