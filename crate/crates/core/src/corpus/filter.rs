use serde::{Deserialize, Serialize};

use super::ReviewTriplet;
use crate::tagger::{tag_code_change, TagError};
use crate::textprep::TextPrep;

/// Inclusive word-count bounds for comments and tagged methods.
pub const MIN_WORDS: usize = 3;
pub const MAX_WORDS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectReason {
    TooShort,
    TooLong,
    BeyondFunction,
    Empty,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RejectReason::TooShort => "TOO_SHORT",
            RejectReason::TooLong => "TOO_LONG",
            RejectReason::BeyondFunction => "BEYOND_FUNCTION",
            RejectReason::Empty => "EMPTY",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejected {
    pub triplet: ReviewTriplet,
    pub reason: RejectReason,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterOutcome {
    pub kept: Vec<ReviewTriplet>,
    pub rejected: Vec<Rejected>,
}

fn bounds_reason(n: usize) -> Option<RejectReason> {
    if n < MIN_WORDS {
        Some(RejectReason::TooShort)
    } else if n > MAX_WORDS {
        Some(RejectReason::TooLong)
    } else {
        None
    }
}

fn check(t: &ReviewTriplet, prep: &TextPrep) -> Result<(), (RejectReason, String)> {
    if t.sub_code.trim().is_empty() || t.rev_code.trim().is_empty() || t.comment.trim().is_empty() {
        return Err((RejectReason::Empty, "empty code or comment".into()));
    }
    let comment_words = prep.normalize_comment(&t.comment).len();
    if let Some(r) = bounds_reason(comment_words) {
        return Err((r, format!("comment has {comment_words} words")));
    }
    // Malformed files (unbalanced braces) cannot yield a method either.
    let functions = tag_code_change(&t.sub_code, &t.rev_code)
        .map_err(|e: TagError| (RejectReason::BeyondFunction, e.to_string()))?;
    if functions.is_empty() {
        return Err((RejectReason::BeyondFunction, "no change inside a method body".into()));
    }
    let counts: Vec<usize> = functions.iter().map(|f| prep.normalize_tagged(&f.text).len()).collect();
    if counts.iter().any(|&n| bounds_reason(n).is_none()) {
        return Ok(());
    }
    let reason = if counts.iter().all(|&n| n < MIN_WORDS) {
        RejectReason::TooShort
    } else {
        RejectReason::TooLong
    };
    Err((reason, format!("tagged method word counts {counts:?}")))
}

/// Partitions triplets into kept and rejected.
///
/// Checks run in order: empty fields, comment length, whether any change lands
/// inside a method, and the tagged method length. A triplet survives when at
/// least one of its tagged methods is within bounds.
pub fn filter_triplets(corpus: Vec<ReviewTriplet>, prep: &TextPrep) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for t in corpus {
        match check(&t, prep) {
            Ok(()) => out.kept.push(t),
            Err((reason, detail)) => out.rejected.push(Rejected {
                triplet: t,
                reason,
                detail,
            }),
        }
    }
    out
}
