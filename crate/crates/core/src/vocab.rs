//! Word-level vocabulary with fixed special tokens.

use std::collections::HashMap;
use std::path::Path;

use crate::REVIEW_TAG;

pub const PAD: &str = "<pad>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const MASK: &str = "<mask>";

pub const PAD_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;
pub const MASK_ID: u32 = 3;
pub const REVIEW_TAG_ID: u32 = 4;

/// Specials in id order.
pub const SPECIALS: [&str; 5] = [PAD, EOS, UNK, MASK, REVIEW_TAG];

/// Task prefix prepended to every model input, already normalized.
pub const TASK_PREFIX: [&str; 4] = ["generating", "review", "comments", ":"];

#[derive(Debug, thiserror::Error)]
pub enum VocabError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("max_len {max_len} leaves no room for prefix ({prefix}) plus one token and EOS")]
    MaxLenTooSmall { max_len: usize, prefix: usize },
    #[error("vocabulary file is malformed: {0}")]
    Malformed(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_of: Vec<String>,
    id_of: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_tokens(token_of: Vec<String>) -> Result<Self, VocabError> {
        if token_of.len() < SPECIALS.len() || token_of[..SPECIALS.len()].iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(VocabError::Malformed("special tokens missing or out of order".into()));
        }
        let mut id_of = HashMap::with_capacity(token_of.len());
        for (i, t) in token_of.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(VocabError::Malformed(format!("bad token {t:?} at id {i}")));
            }
            if id_of.insert(t.clone(), i as u32).is_some() {
                return Err(VocabError::Malformed(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { token_of, id_of })
    }

    pub fn size(&self) -> usize {
        self.token_of.len()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.id_of.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.token_of.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.token_of
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < SPECIALS.len()
    }

    /// One token per line; line number minus one is the id.
    pub fn to_text(&self) -> String {
        let mut s = self.token_of.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self, VocabError> {
        Self::from_tokens(text.lines().map(String::from).collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Ids of [`TASK_PREFIX`].
    pub fn prefix_ids(&self) -> Vec<u32> {
        TASK_PREFIX.iter().map(|t| self.id_or_unk(t)).collect()
    }

    /// `prefix + body + EOS`, cut to `max_len` with EOS kept last. Tokens not
    /// in the vocabulary become UNK.
    pub fn encode<S: AsRef<str>>(&self, body: &[S], prefix: &[u32], max_len: usize) -> Result<Vec<u32>, VocabError> {
        if max_len < prefix.len() + 2 {
            return Err(VocabError::MaxLenTooSmall {
                max_len,
                prefix: prefix.len(),
            });
        }
        let room = max_len - prefix.len() - 1;
        let mut ids = Vec::with_capacity(max_len);
        ids.extend_from_slice(prefix);
        ids.extend(body.iter().take(room).map(|t| self.id_or_unk(t.as_ref())));
        ids.push(EOS_ID);
        Ok(ids)
    }

    /// Tokens up to the first EOS, PAD dropped.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS_ID)
            .filter(|&&i| i != PAD_ID)
            .map(|&i| self.token(i).unwrap_or(UNK).to_string())
            .collect()
    }
}

/// Counts tokens over `corpus`, keeps those seen at least `min_freq` times,
/// orders by descending frequency then lexicographically, and truncates so the
/// whole vocabulary (specials included) has at most `max_size` entries.
pub fn build_vocab<I, S>(corpus: I, min_freq: usize, max_size: usize) -> Result<Vocabulary, VocabError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut lines = 0usize;
    for seq in corpus {
        lines += 1;
        for tok in seq.as_ref().split_whitespace() {
            *counts.entry(tok.to_string()).or_default() += 1;
        }
    }
    if lines == 0 || counts.is_empty() {
        return Err(VocabError::EmptyCorpus);
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_freq.max(1) && !SPECIALS.contains(&t.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut token_of: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    let room = max_size.saturating_sub(SPECIALS.len());
    token_of.extend(ranked.into_iter().take(room).map(|(t, _)| t));
    Vocabulary::from_tokens(token_of)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn content(v: &Vocabulary) -> Vec<&str> {
        v.tokens()[SPECIALS.len()..].iter().map(String::as_str).collect()
    }

    #[test]
    fn frequency_order() {
        let v = build_vocab(["a a b"], 1, 100).unwrap();
        assert_eq!(&v.tokens()[..5], SPECIALS.map(String::from).as_slice());
        assert_eq!(content(&v), ["a", "b"]);
        assert_eq!(content(&build_vocab(["a a b"], 2, 100).unwrap()), ["a"]);
        assert_eq!(content(&build_vocab(["y x"], 1, 100).unwrap()), ["x", "y"]);
    }

    #[test]
    fn specials_and_tag_once() {
        let v = build_vocab(["<review_tag> x <review_tag>"], 1, 100).unwrap();
        assert_eq!(v.id(REVIEW_TAG), Some(REVIEW_TAG_ID));
        assert_eq!(v.tokens().iter().filter(|t| *t == REVIEW_TAG).count(), 1);
        assert_eq!(v.size(), 6);
    }

    #[test]
    fn max_size_truncates() {
        let v = build_vocab(["a a a b b c"], 1, 7).unwrap();
        assert_eq!(content(&v), ["a", "b"]);
    }

    #[test]
    fn empty_corpus() {
        assert!(matches!(build_vocab(Vec::<String>::new(), 1, 10), Err(VocabError::EmptyCorpus)));
        assert!(matches!(build_vocab(["  "], 1, 10), Err(VocabError::EmptyCorpus)));
    }

    #[test]
    fn encode_contract() {
        let v = build_vocab(["generating review comments : a b"], 1, 100).unwrap();
        let prefix = v.prefix_ids();
        let empty: [&str; 0] = [];
        assert_eq!(v.encode(&empty, &prefix, 10).unwrap(), [prefix.clone(), vec![EOS_ID]].concat());
        let ids = v.encode(&["a", "zzz", "b"], &prefix, 10).unwrap();
        assert_eq!(&ids[4..], &[v.id("a").unwrap(), UNK_ID, v.id("b").unwrap(), EOS_ID]);
        let long: Vec<String> = (0..20).map(|_| "a".to_string()).collect();
        let ids = v.encode(&long, &prefix, 10).unwrap();
        assert_eq!(ids.len(), 10);
        assert_eq!(*ids.last().unwrap(), EOS_ID);
        assert!(v.encode(&long, &prefix, 5).is_err());
        assert!(!ids.contains(&PAD_ID));
    }

    #[test]
    fn file_round_trip() {
        let v = build_vocab(["x y z y"], 1, 100).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
        assert!(Vocabulary::from_text("a\nb\n").is_err());
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(words in prop::collection::vec("[a-e]", 0..12)) {
            let v = build_vocab(["a b c d e"], 1, 100).unwrap();
            let ids = v.encode(&words, &[], 64).unwrap();
            prop_assert_eq!(v.decode(&ids), words);
        }
    }
}
