//! Review-line tagging: diff the submitted and revised code, keep the runs of
//! changed lines that sit inside a method, and cut that method out with a
//! `<review_tag>` line in front of every review line.

mod diff;
pub mod java;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use diff::{diff_lines, split_lines, DiffOp, DiffOpKind, LineDiff};
pub use java::{find_methods, innermost_method, JavaError, JavaMethod};

use crate::corpus::{Record, ReviewTriplet};
use crate::textprep::{strip_source_comments, TextPrep};
use crate::REVIEW_TAG;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TagError {
    #[error("no method encloses line {line}")]
    NoEnclosingFunction { line: usize },
    #[error(transparent)]
    Java(#[from] JavaError),
    #[error("empty line run")]
    EmptyRun,
    #[error("line range {start}:{end} is outside the file ({lines} lines)")]
    OutOfRange { start: usize, end: usize, lines: usize },
}

/// Inclusive range of 1-based sub_code lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LineRun {
    pub start: usize,
    pub end: usize,
}

impl LineRun {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn lines(&self) -> impl Iterator<Item = usize> {
        self.start..=self.end
    }
}

/// A single method with `<review_tag>` lines inserted before its review lines.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedFunction {
    pub text: String,
    pub start_line: usize,
    pub end_line: usize,
    /// Tagged lines in sub_code coordinates, ascending.
    pub tag_lines: Vec<usize>,
}

impl TaggedFunction {
    /// The method text with the tag lines removed.
    pub fn untagged(&self) -> String {
        self.text
            .split('\n')
            .filter(|l| *l != REVIEW_TAG)
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Changed sub_code lines grouped into maximal contiguous runs. Deleted lines
/// count as changed; a pure insertion marks the closest preceding sub line
/// (the first line when nothing precedes it).
pub fn changed_runs(diff: &LineDiff) -> Vec<LineRun> {
    let mut changed = BTreeSet::new();
    let mut last_sub = 0;
    let has_sub_lines = diff.ops.iter().any(|o| o.sub_line_no.is_some());
    for op in &diff.ops {
        match op.op {
            DiffOpKind::Keep => last_sub = op.sub_line_no.unwrap_or(last_sub),
            DiffOpKind::Delete => {
                last_sub = op.sub_line_no.unwrap_or(last_sub);
                changed.insert(last_sub);
            }
            DiffOpKind::Insert if has_sub_lines => {
                changed.insert(last_sub.max(1));
            }
            DiffOpKind::Insert => {}
        }
    }
    group_runs(changed)
}

fn group_runs(lines: impl IntoIterator<Item = usize>) -> Vec<LineRun> {
    let mut runs: Vec<LineRun> = Vec::new();
    for l in lines {
        match runs.last_mut() {
            Some(r) if r.end + 1 == l => r.end = l,
            _ => runs.push(LineRun::new(l, l)),
        }
    }
    runs
}

/// Splits runs at method boundaries and drops the lines no method contains.
pub fn restrict_to_methods(runs: &[LineRun], methods: &[JavaMethod]) -> Vec<LineRun> {
    let mut out = Vec::new();
    for run in runs {
        let mut current: Option<(LineRun, usize)> = None;
        for line in run.lines() {
            let owner = innermost_method(methods, line).map(|m| m.start_line);
            match (owner, current.as_mut()) {
                (Some(o), Some((r, co))) if *co == o => r.end = line,
                (Some(o), _) => {
                    if let Some((r, _)) = current.take() {
                        out.push(r);
                    }
                    current = Some((LineRun::new(line, line), o));
                }
                (None, _) => {
                    if let Some((r, _)) = current.take() {
                        out.push(r);
                    }
                }
            }
        }
        if let Some((r, _)) = current {
            out.push(r);
        }
    }
    out
}

/// Valid modifications: changed runs that fall inside method bodies, one run
/// per method.
pub fn select_valid_modifications(diff: &LineDiff, sub_code: &str) -> Result<Vec<LineRun>, TagError> {
    let runs = changed_runs(diff);
    if runs.is_empty() {
        return Ok(runs);
    }
    let methods = find_methods(sub_code)?;
    Ok(restrict_to_methods(&runs, &methods))
}

fn render(sub_lines: &[&str], method: &JavaMethod, tags: &BTreeSet<usize>) -> TaggedFunction {
    let mut out: Vec<&str> = Vec::with_capacity(method.end_line - method.start_line + 1 + tags.len());
    for line in method.start_line..=method.end_line {
        if tags.contains(&line) {
            out.push(REVIEW_TAG);
        }
        out.push(sub_lines.get(line - 1).copied().unwrap_or(""));
    }
    TaggedFunction {
        text: out.join("\n"),
        start_line: method.start_line,
        end_line: method.end_line,
        tag_lines: tags.iter().copied().collect(),
    }
}

pub(crate) fn extract_with(
    sub_lines: &[&str],
    methods: &[JavaMethod],
    run: LineRun,
) -> Result<TaggedFunction, TagError> {
    if run.end < run.start {
        return Err(TagError::EmptyRun);
    }
    let method = innermost_method(methods, run.start).ok_or(TagError::NoEnclosingFunction { line: run.start })?;
    let tags: BTreeSet<usize> = run.lines().filter(|l| method.contains(*l)).collect();
    Ok(render(sub_lines, method, &tags))
}

/// Cuts out the innermost method holding the run's first line and tags every
/// run line inside it.
pub fn extract_function(sub_code: &str, run: LineRun) -> Result<TaggedFunction, TagError> {
    let methods = find_methods(sub_code)?;
    extract_with(&split_lines(sub_code), &methods, run)
}

/// Diff, select and extract for one (sub, rev) pair. Comments are stripped
/// from both sides first. Returns one tagged function per valid run.
pub fn tag_code_change(sub_code: &str, rev_code: &str) -> Result<Vec<TaggedFunction>, TagError> {
    let sub = strip_source_comments(sub_code).text;
    let rev = strip_source_comments(rev_code).text;
    let diff = diff_lines(&sub, &rev);
    let runs = changed_runs(&diff);
    if runs.is_empty() {
        return Ok(Vec::new());
    }
    let methods = find_methods(&sub)?;
    let lines = split_lines(&sub);
    restrict_to_methods(&runs, &methods)
        .into_iter()
        .map(|run| extract_with(&lines, &methods, run))
        .collect()
}

/// Tags caller-chosen line ranges (the apply flow). Ranges are merged per
/// enclosing method; lines outside every method are ignored, and it is an
/// error when no line lands in a method.
pub fn tag_line_ranges(sub_code: &str, ranges: &[LineRun]) -> Result<Vec<TaggedFunction>, TagError> {
    let sub = strip_source_comments(sub_code).text;
    let lines = split_lines(&sub);
    for r in ranges {
        if r.start == 0 || r.end < r.start || r.end > lines.len() {
            return Err(TagError::OutOfRange {
                start: r.start,
                end: r.end,
                lines: lines.len(),
            });
        }
    }
    let methods = find_methods(&sub)?;
    let mut per_method: Vec<(&JavaMethod, BTreeSet<usize>)> = Vec::new();
    for line in ranges.iter().flat_map(LineRun::lines) {
        let Some(m) = innermost_method(&methods, line) else { continue };
        match per_method.iter_mut().find(|(pm, _)| *pm == m) {
            Some((_, set)) => {
                set.insert(line);
            }
            None => per_method.push((m, BTreeSet::from([line]))),
        }
    }
    if per_method.is_empty() {
        let line = ranges.first().map_or(0, |r| r.start);
        return Err(TagError::NoEnclosingFunction { line });
    }
    per_method.sort_by_key(|(m, _)| m.start_line);
    Ok(per_method.into_iter().map(|(m, tags)| render(&lines, m, &tags)).collect())
}

/// Prepared model pair: a tagged method and its comment, both normalized and
/// space-joined.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedPair {
    pub id: String,
    pub function_tagged: String,
    pub comment_prepared: String,
    #[serde(default)]
    pub multi_run: bool,
}

impl Record for TaggedPair {
    fn record_id(&self) -> &str {
        &self.id
    }
}

/// Why a run did not become a pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedRun {
    pub id: String,
    pub reason: String,
}

/// Builds the tagged pairs of one triplet. Runs whose tagged method falls
/// outside the word limits are skipped.
pub fn tag_triplet(
    triplet: &ReviewTriplet,
    prep: &TextPrep,
    min_words: usize,
    max_words: usize,
) -> Result<(Vec<TaggedPair>, Vec<SkippedRun>), TagError> {
    let functions = tag_code_change(&triplet.sub_code, &triplet.rev_code)?;
    let comment = prep.normalize_comment(&triplet.comment);
    let multi = functions.len() > 1;
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for (k, f) in functions.iter().enumerate() {
        let id = if multi { format!("{}#{}", triplet.id, k + 1) } else { triplet.id.clone() };
        let tokens = prep.normalize_tagged(&f.text);
        let n = tokens.len();
        if n < min_words || n > max_words {
            skipped.push(SkippedRun {
                id,
                reason: if n < min_words { "TOO_SHORT" } else { "TOO_LONG" }.to_string(),
            });
            continue;
        }
        if comment.len() < min_words || comment.len() > max_words {
            skipped.push(SkippedRun {
                id,
                reason: if comment.len() < min_words { "TOO_SHORT" } else { "TOO_LONG" }.to_string(),
            });
            continue;
        }
        pairs.push(TaggedPair {
            id,
            function_tagged: tokens.detokenize(),
            comment_prepared: comment.detokenize(),
            multi_run: multi,
        });
    }
    Ok((pairs, skipped))
}
