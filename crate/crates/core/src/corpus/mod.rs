//! Review triplets and the corpus-level operations applied to them.
//!
//! A corpus file is JSONL: one [`ReviewTriplet`] per line, UTF-8, with the keys
//! `id, repo, sub_code, rev_code, comment, meta` in that order.

mod fetch;
mod filter;
mod synthetic;

pub use fetch::{
    fetch_reviews, build_blob_query, build_pull_request_query, FetchConfig, FetchError,
    FetchStats, GraphqlTransport, HttpResponse,
};
pub use filter::{filter_triplets, FilterOutcome, RejectReason, Rejected, MAX_WORDS, MIN_WORDS};
pub use synthetic::{synthetic_corpus, SyntheticConfig};

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {source}")]
    Malformed {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate id {0:?} in corpus")]
    DuplicateId(String),
    #[error("corpus has {0} records, at least 10 are needed to split")]
    TooSmall(usize),
}

/// Metadata attached to a mined review event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewMeta {
    pub timestamp: String,
    pub author: String,
    pub pr_number: u64,
}

/// One review event: the reviewed code, the code after revision and the
/// reviewer's comment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewTriplet {
    pub id: String,
    pub repo: String,
    pub sub_code: String,
    pub rev_code: String,
    pub comment: String,
    pub meta: ReviewMeta,
}

/// Anything with a corpus-unique id.
pub trait Record {
    fn record_id(&self) -> &str;
}

impl Record for ReviewTriplet {
    fn record_id(&self) -> &str {
        &self.id
    }
}

/// Train/valid/test partition of a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplit<T = ReviewTriplet> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
    pub seed: u64,
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| CorpusError::Malformed {
            path: display.clone(),
            line: idx + 1,
            source,
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Reads a corpus file and rejects duplicate ids.
pub fn read_corpus<T: DeserializeOwned + Record>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let records: Vec<T> = read_jsonl(path)?;
    check_unique_ids(&records)?;
    Ok(records)
}

pub fn check_unique_ids<T: Record>(records: &[T]) -> Result<(), CorpusError> {
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if !seen.insert(r.record_id()) {
            return Err(CorpusError::DuplicateId(r.record_id().to_string()));
        }
    }
    Ok(())
}

pub fn to_jsonl_line<T: Serialize>(record: &T) -> String {
    // Serializing plain structs of strings and integers cannot fail.
    serde_json::to_string(record).expect("record serializes")
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
    }
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for r in records {
        writeln!(w, "{}", to_jsonl_line(r)).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Removes repeated `(sub_code, comment)` pairs, comparing whitespace-collapsed
/// text. The first occurrence wins and order is preserved. Returns the kept
/// records and how many were removed.
pub fn dedup(corpus: Vec<ReviewTriplet>) -> (Vec<ReviewTriplet>, usize) {
    let mut seen = HashSet::new();
    let before = corpus.len();
    let kept: Vec<_> = corpus
        .into_iter()
        .filter(|t| seen.insert((collapse_whitespace(&t.sub_code), collapse_whitespace(&t.comment))))
        .collect();
    let removed = before - kept.len();
    (kept, removed)
}

/// Shuffles deterministically under `seed` and cuts 80/10/10. Valid and test
/// get `floor(n / 10)` records each, the remainder goes to train.
pub fn split_dataset<T>(corpus: Vec<T>, seed: u64) -> Result<CorpusSplit<T>, CorpusError> {
    let n = corpus.len();
    if n < 10 {
        return Err(CorpusError::TooSmall(n));
    }
    let mut records = corpus;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    records.shuffle(&mut rng);

    let n_eval = n / 10;
    let n_train = n - 2 * n_eval;
    let test = records.split_off(n_train + n_eval);
    let valid = records.split_off(n_train);
    Ok(CorpusSplit {
        train: records,
        valid,
        test,
        seed,
    })
}
