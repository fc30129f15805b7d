//! Text normalization for code and review comments.
//!
//! Code keeps its punctuation (except `.`) and has compound identifiers split
//! into sub-words. Comments are cut to their first three sentences, have
//! contractions and common acronyms expanded, lose mentions, markup and
//! punctuation, and are lemmatized. Both come out as lowercase token lists.

mod comments;
mod lemma;
mod lexicon;

use std::collections::HashMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

pub use comments::{strip_source_comments, StrippedSource};
pub use lemma::Lemmatizer;
pub use lexicon::{identifier_chunks, split_identifier, Lexicon, UNKNOWN_CHAR_COST};

use crate::REVIEW_TAG;

static CONTRACTIONS_TSV: &str = include_str!("../../assets/contractions.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenKind {
    Code,
    Comment,
}

/// Normalized token stream. Tokens are non-empty and lowercase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub kind: TokenKind,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Space-joined rendering; feeding it back through the matching
    /// normalizer yields the same tokens.
    pub fn detokenize(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CodeOptions {
    /// Lemmatize alphabetic code tokens. Off by default: sub-words such as
    /// `having` in `HavingDefaultValue` must survive unchanged.
    pub lemmatize: bool,
}

/// Shared resources for normalization.
#[derive(Debug, Clone)]
pub struct TextPrep {
    pub lexicon: &'static Lexicon,
    pub lemmatizer: &'static Lemmatizer,
    pub contractions: &'static HashMap<String, String>,
    pub code: CodeOptions,
}

impl Default for TextPrep {
    fn default() -> Self {
        Self::embedded()
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$'
}

fn is_punct_token(t: &str) -> bool {
    t != REVIEW_TAG && !t.chars().any(char::is_alphanumeric)
}

impl TextPrep {
    pub fn embedded() -> Self {
        static CONTRACTIONS: OnceLock<HashMap<String, String>> = OnceLock::new();
        Self {
            lexicon: Lexicon::embedded(),
            lemmatizer: Lemmatizer::embedded(),
            contractions: CONTRACTIONS.get_or_init(|| lemma::parse_tsv(CONTRACTIONS_TSV)),
            code: CodeOptions::default(),
        }
    }

    pub fn with_code_options(mut self, code: CodeOptions) -> Self {
        self.code = code;
        self
    }

    fn code_tokens(&self, code: &str, lemmatize: bool) -> Vec<String> {
        let mut out = Vec::new();
        let mut rest = code;
        while let Some(c) = rest.chars().next() {
            if rest.starts_with(REVIEW_TAG) {
                out.push(REVIEW_TAG.to_string());
                rest = &rest[REVIEW_TAG.len()..];
            } else if c.is_whitespace() {
                rest = &rest[c.len_utf8()..];
            } else if is_word_char(c) {
                let end = rest.find(|ch: char| !is_word_char(ch)).unwrap_or(rest.len());
                for piece in split_identifier(&rest[..end], self.lexicon) {
                    let piece = if lemmatize && piece.chars().all(|ch| ch.is_ascii_alphabetic()) {
                        self.lemmatizer.lemma(&piece)
                    } else {
                        piece
                    };
                    out.push(piece);
                }
                rest = &rest[end..];
            } else {
                if c != '.' {
                    out.extend(c.to_lowercase().map(String::from));
                }
                rest = &rest[c.len_utf8()..];
            }
        }
        out
    }

    /// Normalizes (already comment-stripped) code.
    pub fn normalize_code(&self, code: &str) -> TokenSequence {
        TokenSequence {
            tokens: self.code_tokens(code, self.code.lemmatize),
            kind: TokenKind::Code,
        }
    }

    /// Normalizes a review comment.
    pub fn normalize_comment(&self, comment: &str) -> TokenSequence {
        let pieces = first_sentences(&parse_backticks(comment), 3);
        let mut tokens = Vec::new();
        for piece in pieces {
            let words = match piece {
                Piece::Prose(text) => {
                    let expanded = self.expand_contractions(&text);
                    let cleaned = strip_mentions_and_markup(&expanded);
                    let lower = cleaned.to_lowercase();
                    prose_tokens(&lower)
                }
                Piece::Code(text) => self.code_tokens(&text, false),
            };
            tokens.extend(
                words
                    .into_iter()
                    .filter(|t| !is_punct_token(t) && t != REVIEW_TAG)
                    .map(|t| {
                        if t.chars().all(|c| c.is_ascii_alphabetic()) {
                            self.lemmatizer.lemma(&t)
                        } else {
                            t
                        }
                    }),
            );
        }
        TokenSequence {
            tokens,
            kind: TokenKind::Comment,
        }
    }

    /// Expands contractions and abbreviations in place; the rest of the text,
    /// case included, is untouched. Possessive `'s` is dropped.
    pub fn expand_contractions(&self, text: &str) -> String {
        let mut out = String::with_capacity(text.len());
        let mut word = String::new();
        let flush = |word: &mut String, out: &mut String| {
            if word.is_empty() {
                return;
            }
            let key = word.to_lowercase().replace('\u{2019}', "'");
            match self.contractions.get(&key) {
                Some(full) => out.push_str(full),
                None => match key.strip_suffix("'s") {
                    // Possessive.
                    Some(stem) if !stem.is_empty() => out.push_str(&word[..stem.len()]),
                    _ => out.push_str(word),
                },
            }
            word.clear();
        };
        let chars: Vec<char> = text.chars().collect();
        for (i, &c) in chars.iter().enumerate() {
            let joins = c.is_alphanumeric()
                || ((c == '\'' || c == '\u{2019}' || c == '/') && !word.is_empty())
                || (c == '.' && !word.is_empty() && chars.get(i + 1).is_some_and(|n| n.is_alphabetic()))
                || (c == '.' && self.contractions.contains_key(&format!("{}.", word.to_lowercase())));
            if joins {
                word.push(c);
            } else {
                flush(&mut word, &mut out);
                out.push(c);
            }
        }
        flush(&mut word, &mut out);
        out
    }

    /// Normalizes a function rendered with `<review_tag>` lines. Tags stay
    /// single tokens.
    pub fn normalize_tagged(&self, text: &str) -> TokenSequence {
        self.normalize_code(text)
    }
}

pub fn normalize_code(code: &str) -> TokenSequence {
    TextPrep::embedded().normalize_code(code)
}

pub fn normalize_comment(comment: &str) -> TokenSequence {
    TextPrep::embedded().normalize_comment(comment)
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Prose(String),
    Code(String),
}

fn parse_backticks(text: &str) -> Vec<Piece> {
    let mut pieces = Vec::new();
    let mut rest = text;
    loop {
        let Some(open) = rest.find('`') else { break };
        let ticks = rest[open..].chars().take_while(|&c| c == '`').count();
        let fence = &rest[open..open + ticks];
        let body_start = open + ticks;
        let Some(close) = rest[body_start..].find(fence) else { break };
        if open > 0 {
            pieces.push(Piece::Prose(rest[..open].to_string()));
        }
        pieces.push(Piece::Code(rest[body_start..body_start + close].to_string()));
        rest = &rest[body_start + close + ticks..];
    }
    if !rest.is_empty() {
        pieces.push(Piece::Prose(rest.to_string()));
    }
    pieces
}

const DOTTED_ABBREVIATIONS: [&str; 6] = ["e.g", "i.e", "etc", "vs", "cf", "approx"];

/// Keeps pieces up to the end of the `limit`-th sentence. A sentence ends at
/// `.`, `!` or `?` followed by whitespace or end of text, outside code spans.
fn first_sentences(pieces: &[Piece], limit: usize) -> Vec<Piece> {
    let mut out = Vec::new();
    let mut count = 0;
    for piece in pieces {
        match piece {
            Piece::Code(_) => out.push(piece.clone()),
            Piece::Prose(text) => {
                let chars: Vec<(usize, char)> = text.char_indices().collect();
                for (k, &(pos, c)) in chars.iter().enumerate() {
                    if !matches!(c, '.' | '!' | '?') {
                        continue;
                    }
                    let at_end = chars.get(k + 1).is_none_or(|&(_, n)| n.is_whitespace());
                    if !at_end {
                        continue;
                    }
                    if c == '.' {
                        let before = &text[..pos];
                        let last_word = before.rsplit(char::is_whitespace).next().unwrap_or("").to_lowercase();
                        if DOTTED_ABBREVIATIONS.contains(&last_word.trim_start_matches('(')) {
                            continue;
                        }
                    }
                    count += 1;
                    if count == limit {
                        out.push(Piece::Prose(text[..pos + c.len_utf8()].to_string()));
                        return out;
                    }
                }
                out.push(piece.clone());
            }
        }
    }
    out
}

fn strip_mentions_and_markup(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '@' => {
                while chars.peek().is_some_and(|&n| is_word_char(n) || n == '-') {
                    chars.next();
                }
                out.push(' ');
            }
            '*' | '#' | '~' | '>' | '<' | '|' | '_' | '[' | ']' => out.push(' '),
            _ => out.push(c),
        }
    }
    out
}

fn prose_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.push(c);
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !c.is_whitespace() {
                out.push(c.to_string());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}
