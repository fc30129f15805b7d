//! File-to-file pipeline stages, shared by the command-line tool and the
//! end-to-end tests.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::augment::{augment_all, AugmentConfig, AugmentError, Thesaurus};
use crate::corpus::{
    dedup, filter_triplets, read_corpus, read_jsonl, split_dataset, write_jsonl, CorpusError, ReviewTriplet,
};
use crate::dataset::{encode_input, finetune_example, pretrain_example, vocab_corpus, DatasetError, EncodeOptions};
use crate::decode::{generate_topk, Candidate, DecodeError, DecodeWarning, Generation};
use crate::eval::{evaluate_topk, render_csv, EvalError, EvalReport};
use crate::model::{
    load_checkpoint, save_checkpoint, train, write_curve_csv, ModelConfig, ModelError, ModelParameters, Objective,
    TrainOptions, TrainState,
};
use crate::tagger::{tag_line_ranges, tag_triplet, LineRun, TagError, TaggedPair};
use crate::textprep::{strip_source_comments, TextPrep};
use crate::vocab::{build_vocab, VocabError, Vocabulary, TASK_PREFIX};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    Corpus(#[from] CorpusError),
    #[error("{0}")]
    Dataset(#[from] DatasetError),
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Vocab(#[from] VocabError),
    #[error("{0}")]
    Augment(#[from] AugmentError),
    #[error("{0}")]
    Eval(#[from] EvalError),
    #[error("record {id}: {source}")]
    Decode {
        id: String,
        #[source]
        source: DecodeError,
    },
    #[error("record {id}: {source}")]
    Tag {
        id: String,
        #[source]
        source: TagError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad setting: {0}")]
    Setting(String),
    #[error("{0}")]
    Data(String),
}

impl PipelineError {
    /// Whether the error comes from the caller's arguments rather than the
    /// data they point at.
    pub fn is_usage(&self) -> bool {
        matches!(self, PipelineError::Setting(_))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Every tunable of the pipeline. Model fields sit at the top level next to
/// the data-side ones, so a settings file is a flat list of `key = value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Settings {
    #[serde(flatten)]
    pub model: ModelConfig,
    pub min_freq: usize,
    pub max_vocab: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub augment_factor: usize,
    pub augment_alpha: f64,
    pub keep_tag: bool,
    pub top_k: usize,
    pub eval_ks: Vec<usize>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            min_freq: 2,
            max_vocab: 32000,
            min_words: crate::corpus::MIN_WORDS,
            max_words: crate::corpus::MAX_WORDS,
            augment_factor: 9,
            augment_alpha: 0.1,
            keep_tag: true,
            top_k: 10,
            eval_ks: vec![1, 3, 6, 10],
        }
    }
}

impl Settings {
    /// Sets one field from its textual value. Lists are comma-separated.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let bad = |m: String| PipelineError::Setting(m);
        let mut obj = serde_json::to_value(&*self).map_err(|e| bad(e.to_string()))?;
        let map = obj.as_object_mut().expect("settings serialize to an object");
        let slot = map.get_mut(key).ok_or_else(|| bad(format!("unknown key {key:?}")))?;
        let parsed = match slot {
            Value::Bool(_) => value.parse::<bool>().map(Value::from).map_err(|e| e.to_string()),
            Value::Number(n) if n.is_f64() => value.parse::<f64>().map(Value::from).map_err(|e| e.to_string()),
            Value::Number(_) => value.parse::<u64>().map(Value::from).map_err(|e| e.to_string()),
            Value::Array(_) => value
                .split(',')
                .map(|v| v.trim().parse::<u64>().map(Value::from).map_err(|e| e.to_string()))
                .collect::<Result<Vec<_>, _>>()
                .map(Value::Array),
            _ => Ok(Value::from(value)),
        }
        .map_err(|e| bad(format!("{key} = {value:?}: {e}")))?;
        *slot = parsed;
        *self = serde_json::from_value(obj).map_err(|e| bad(format!("{key} = {value:?}: {e}")))?;
        Ok(())
    }

    /// Applies a `key = value` file. Blank lines and `#` comments are skipped.
    pub fn apply_kv(&mut self, text: &str) -> Result<(), PipelineError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::Setting(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.model.validate().map_err(|e| PipelineError::Setting(e.to_string()))?;
        if self.top_k == 0 || self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            return Err(PipelineError::Setting("top_k and eval_ks must be positive".into()));
        }
        if self.min_words > self.max_words {
            return Err(PipelineError::Setting("min_words exceeds max_words".into()));
        }
        Ok(())
    }

    fn encode_options(&self) -> EncodeOptions {
        EncodeOptions {
            max_in_len: self.model.max_in_len,
            max_out_len: self.model.max_out_len,
            keep_tag: self.keep_tag,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PrepareStats {
    pub read: usize,
    pub duplicates: usize,
    pub kept: usize,
    pub rejected: BTreeMap<String, usize>,
}

/// Dedup, filter, strip code comments and normalize review comments. The
/// comment field of each kept triplet becomes its space-joined normalized
/// tokens; code keeps its line layout.
pub fn prepare(raw: &Path, out: &Path, rejected_out: Option<&Path>, s: &Settings) -> Result<PrepareStats, PipelineError> {
    let prep = TextPrep::embedded();
    let records: Vec<ReviewTriplet> = read_corpus(raw)?;
    let read = records.len();
    let (unique, duplicates) = dedup(records);
    let outcome = filter_triplets(unique, &prep);
    let mut stats = PrepareStats {
        read,
        duplicates,
        kept: outcome.kept.len(),
        rejected: BTreeMap::new(),
    };
    for r in &outcome.rejected {
        *stats.rejected.entry(r.reason.to_string()).or_default() += 1;
    }
    let kept: Vec<ReviewTriplet> = outcome
        .kept
        .into_iter()
        .map(|t| ReviewTriplet {
            sub_code: strip_source_comments(&t.sub_code).text,
            rev_code: strip_source_comments(&t.rev_code).text,
            comment: prep.normalize_comment(&t.comment).detokenize(),
            ..t
        })
        .collect();
    write_jsonl(out, &kept)?;
    if let Some(path) = rejected_out {
        write_jsonl(path, &outcome.rejected)?;
    }
    let _ = s;
    Ok(stats)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TagStats {
    pub triplets: usize,
    pub pairs: usize,
    pub skipped: usize,
}

/// One tagged pair per valid modification of each triplet.
pub fn tag(prepared: &Path, out: &Path, s: &Settings) -> Result<TagStats, PipelineError> {
    let prep = TextPrep::embedded();
    let triplets: Vec<ReviewTriplet> = read_corpus(prepared)?;
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for t in &triplets {
        match tag_triplet(t, &prep, s.min_words, s.max_words) {
            Ok((p, sk)) => {
                pairs.extend(p);
                skipped += sk.len();
            }
            Err(_) => skipped += 1,
        }
    }
    write_jsonl(out, &pairs)?;
    Ok(TagStats {
        triplets: triplets.len(),
        pairs: pairs.len(),
        skipped,
    })
}

/// 80/10/10 seeded split into `train.jsonl`, `valid.jsonl`, `test.jsonl`.
/// Pairs that came from one triplet (`id#k`) stay in the same partition.
pub fn split(pairs_path: &Path, out_dir: &Path, seed: u64) -> Result<(usize, usize, usize), PipelineError> {
    let pairs: Vec<TaggedPair> = read_corpus(pairs_path)?;
    let mut groups: BTreeMap<String, Vec<TaggedPair>> = BTreeMap::new();
    let mut order = Vec::new();
    for p in pairs {
        let base = p.id.split('#').next().unwrap_or(&p.id).to_string();
        if !groups.contains_key(&base) {
            order.push(base.clone());
        }
        groups.entry(base).or_default().push(p);
    }
    let sp = split_dataset(order, seed)?;
    let expand = |ids: &[String]| -> Vec<TaggedPair> { ids.iter().flat_map(|i| groups[i].clone()).collect() };
    let (train, valid, test) = (expand(&sp.train), expand(&sp.valid), expand(&sp.test));
    write_jsonl(&out_dir.join("train.jsonl"), &train)?;
    write_jsonl(&out_dir.join("valid.jsonl"), &valid)?;
    write_jsonl(&out_dir.join("test.jsonl"), &test)?;
    Ok((train.len(), valid.len(), test.len()))
}

/// EDA over training comments; code fields are copied unchanged.
pub fn augment(train: &Path, out: &Path, s: &Settings) -> Result<(usize, usize), PipelineError> {
    let pairs: Vec<TaggedPair> = read_corpus(train)?;
    let cfg = AugmentConfig {
        factor: s.augment_factor,
        alpha: s.augment_alpha,
        seed: s.model.seed,
    };
    let (records, short) = augment_all(&pairs, &cfg, Thesaurus::embedded())?;
    write_jsonl(out, &records)?;
    Ok((records.len(), short))
}

/// Builds the vocabulary from training pairs and writes it.
pub fn build_vocabulary(train: &Path, out: &Path, s: &Settings) -> Result<Vocabulary, PipelineError> {
    let pairs: Vec<TaggedPair> = read_corpus(train)?;
    let v = build_vocab(vocab_corpus(&pairs), s.min_freq, s.max_vocab)?;
    // The task prefix must survive min_freq so it never turns into UNK.
    let v = if TASK_PREFIX.iter().all(|t| v.id(t).is_some()) {
        v
    } else {
        let mut lines = vocab_corpus(&pairs);
        let prefix = TASK_PREFIX.join(" ");
        lines.extend(std::iter::repeat_n(prefix, s.min_freq));
        build_vocab(lines, s.min_freq, s.max_vocab)?
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    v.save(out)?;
    Ok(v)
}

fn load_vocab(path: &Path) -> Result<Vocabulary, PipelineError> {
    Ok(Vocabulary::load(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub step: u64,
    pub examples: usize,
    pub final_train_loss: Option<f64>,
    pub best_valid_loss: Option<f64>,
}

fn summary(st: &TrainState, examples: usize) -> TrainSummary {
    TrainSummary {
        step: st.step,
        examples,
        final_train_loss: st.curve.last().map(|c| c.train_loss),
        best_valid_loss: st.best_valid,
    }
}

/// Masked-token pre-training over prefix + function + comment sequences.
/// Writes the final weights to `out_ckpt` and the loss curve to `curve_csv`.
pub fn pretrain(
    train_path: &Path,
    valid_path: Option<&Path>,
    vocab_path: &Path,
    out_ckpt: &Path,
    curve_csv: &Path,
    s: &Settings,
) -> Result<TrainSummary, PipelineError> {
    s.validate()?;
    let vocab = load_vocab(vocab_path)?;
    let cfg = &s.model;
    let build = |pairs: &[TaggedPair]| -> Vec<_> {
        pairs
            .iter()
            .filter_map(|p| pretrain_example(p, &vocab, cfg.max_in_len_pretrain, s.keep_tag, cfg.mask_rate, cfg.seed).ok())
            .collect()
    };
    let train_pairs: Vec<TaggedPair> = read_corpus(train_path)?;
    let train_set = build(&train_pairs);
    let valid_set = match valid_path {
        Some(p) => build(&read_corpus::<TaggedPair>(p)?),
        None => Vec::new(),
    };
    let params = ModelParameters::init(cfg, vocab.size())?;
    let mut st = TrainState::fresh(params);
    let opts = TrainOptions {
        objective: Objective::Mlm,
        lr: cfg.lr_pretrain,
        batch_size: cfg.batch_pretrain,
        total_steps: cfg.steps_pretrain,
        eval_every: cfg.eval_every,
        dynamic_mask: true,
        protected_prefix: TASK_PREFIX.len(),
        stop_below: None,
    };
    train(&mut st, &train_set, &valid_set, &opts)?;
    save_checkpoint(out_ckpt, &st, false)?;
    write_curve_csv(curve_csv, &st.curve)?;
    Ok(summary(&st, train_set.len()))
}

/// Where fine-tuning starts.
#[derive(Debug, Clone, Copy)]
pub enum Start<'a> {
    Scratch,
    /// Pre-trained weights; Adam and the step counter start fresh.
    Pretrained(&'a Path),
    /// A fine-tuning checkpoint saved with optimizer state; training
    /// continues for another `steps_finetune` steps.
    Resume(&'a Path),
}

/// Teacher-forced fine-tuning. Writes the final state (with optimizer) to
/// `out_ckpt`, the lowest-validation-loss weights to `best_ckpt` when a
/// validation set is given, and the loss curve to `curve_csv`.
#[allow(clippy::too_many_arguments)]
pub fn finetune(
    train_path: &Path,
    valid_path: Option<&Path>,
    vocab_path: &Path,
    start: Start,
    out_ckpt: &Path,
    best_ckpt: Option<&Path>,
    curve_csv: &Path,
    s: &Settings,
) -> Result<TrainSummary, PipelineError> {
    s.validate()?;
    let vocab = load_vocab(vocab_path)?;
    let opts_enc = s.encode_options();
    let build = |pairs: &[TaggedPair]| -> Result<Vec<_>, PipelineError> {
        pairs.iter().map(|p| Ok(finetune_example(p, &vocab, &opts_enc)?)).collect()
    };
    let train_set = build(&read_corpus::<TaggedPair>(train_path)?)?;
    let valid_set = match valid_path {
        Some(p) => build(&read_corpus::<TaggedPair>(p)?)?,
        None => Vec::new(),
    };
    let mut st = match start {
        Start::Scratch => TrainState::fresh(ModelParameters::init(&s.model, vocab.size())?),
        Start::Pretrained(p) => {
            let ck = load_checkpoint(p)?;
            TrainState::fresh(ck.state.params.with_runtime_config(&s.model)?)
        }
        Start::Resume(p) => {
            let mut ck = load_checkpoint(p)?;
            ck.state.params = ck.state.params.with_runtime_config(&s.model)?;
            ck.state
        }
    };
    if st.params.vocab_size != vocab.size() {
        return Err(ModelError::VocabMismatch {
            params: st.params.vocab_size,
            data: vocab.size(),
        }
        .into());
    }
    let opts = TrainOptions {
        objective: Objective::Seq2Seq,
        lr: s.model.lr_finetune,
        batch_size: s.model.batch_finetune,
        total_steps: st.step + s.model.steps_finetune,
        eval_every: s.model.eval_every,
        dynamic_mask: false,
        protected_prefix: 0,
        stop_below: None,
    };
    let outcome = train(&mut st, &train_set, &valid_set, &opts)?;
    save_checkpoint(out_ckpt, &st, true)?;
    if let (Some(path), Some(best)) = (best_ckpt, outcome.best) {
        save_checkpoint(path, &TrainState::fresh(best), false)?;
    }
    write_curve_csv(curve_csv, &st.curve)?;
    Ok(summary(&st, train_set.len()))
}

fn load_model(ckpt: &Path, vocab: &Vocabulary) -> Result<ModelParameters, PipelineError> {
    let params = load_checkpoint(ckpt)?.state.params;
    if params.vocab_size != vocab.size() {
        return Err(ModelError::VocabMismatch {
            params: params.vocab_size,
            data: vocab.size(),
        }
        .into());
    }
    Ok(params)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct GenerateStats {
    pub inputs: usize,
    /// Ids whose input carried no review tag.
    pub untagged: Vec<String>,
}

/// Top-k beam generation for every pair in `pairs_path`, written as JSONL
/// `{id, candidates: [{text, score}]}`.
pub fn generate(pairs_path: &Path, ckpt: &Path, vocab_path: &Path, out: &Path, s: &Settings) -> Result<GenerateStats, PipelineError> {
    s.validate()?;
    let vocab = load_vocab(vocab_path)?;
    let params = load_model(ckpt, &vocab)?;
    let pairs: Vec<TaggedPair> = read_corpus(pairs_path)?;
    let enc = s.encode_options();
    let mut gens = Vec::with_capacity(pairs.len());
    let mut stats = GenerateStats::default();
    for p in &pairs {
        let input = encode_input(p, &vocab, &enc)?;
        let top = generate_topk(&params, &vocab, &input, s.top_k).map_err(|source| PipelineError::Decode {
            id: p.id.clone(),
            source,
        })?;
        if top.warnings.contains(&DecodeWarning::NoTag) {
            stats.untagged.push(p.id.clone());
        }
        gens.push(Generation {
            id: p.id.clone(),
            candidates: top.candidates,
        });
    }
    write_jsonl(out, &gens)?;
    stats.inputs = gens.len();
    Ok(stats)
}

/// Best-of-k reports for each `k` in `s.eval_ks`, matched to references by id.
/// Writes the CSV when `csv_out` is given.
pub fn evaluate(generations: &Path, refs_path: &Path, csv_out: Option<&Path>, s: &Settings) -> Result<Vec<EvalReport>, PipelineError> {
    let gens: Vec<Generation> = read_jsonl(generations)?;
    let refs: Vec<TaggedPair> = read_corpus(refs_path)?;
    let by_id: BTreeMap<&str, &Generation> = gens.iter().map(|g| (g.id.as_str(), g)).collect();
    let mut cands = Vec::with_capacity(refs.len());
    let mut gold = Vec::with_capacity(refs.len());
    for r in &refs {
        let g = by_id
            .get(r.id.as_str())
            .ok_or_else(|| PipelineError::Data(format!("record {}: no generation", r.id)))?;
        cands.push(
            g.candidates
                .iter()
                .map(|c| c.text.split_whitespace().map(String::from).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        );
        let reference: Vec<String> = r.comment_prepared.split_whitespace().map(String::from).collect();
        if reference.is_empty() {
            return Err(PipelineError::Data(format!("record {}: empty reference", r.id)));
        }
        gold.push(reference);
    }
    let reports = s
        .eval_ks
        .iter()
        .map(|&k| evaluate_topk(&cands, &gold, k))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(path) = csv_out {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        std::fs::write(path, render_csv(&reports)).map_err(io_err(path))?;
    }
    Ok(reports)
}

/// Comments for one method touched by the selected lines.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Applied {
    pub start_line: usize,
    pub end_line: usize,
    pub tag_lines: Vec<usize>,
    pub candidates: Vec<Candidate>,
}

/// Tags the chosen line ranges of a Java file and generates comments for
/// each enclosing method.
pub fn apply(
    source: &str,
    ranges: &[LineRun],
    ckpt: &Path,
    vocab_path: &Path,
    k: usize,
    s: &Settings,
) -> Result<Vec<Applied>, PipelineError> {
    let vocab = load_vocab(vocab_path)?;
    let params = load_model(ckpt, &vocab)?;
    let prep = TextPrep::embedded();
    let functions = tag_line_ranges(source, ranges).map_err(|source| PipelineError::Tag {
        id: "input".into(),
        source,
    })?;
    let enc = s.encode_options();
    let mut out = Vec::with_capacity(functions.len());
    for f in functions {
        let pair = TaggedPair {
            id: format!("lines {}-{}", f.start_line, f.end_line),
            function_tagged: prep.normalize_tagged(&f.text).detokenize(),
            comment_prepared: String::new(),
            multi_run: false,
        };
        let input = encode_input(&pair, &vocab, &enc)?;
        let top = generate_topk(&params, &vocab, &input, k).map_err(|source| PipelineError::Decode {
            id: pair.id.clone(),
            source,
        })?;
        out.push(Applied {
            start_line: f.start_line,
            end_line: f.end_line,
            tag_lines: f.tag_lines,
            candidates: top.candidates,
        });
    }
    Ok(out)
}
