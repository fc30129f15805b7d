use std::collections::HashMap;
use std::sync::OnceLock;

use super::lexicon::Lexicon;

static EXCEPTIONS_TSV: &str = include_str!("../../assets/lemma_exceptions.tsv");

/// Words ranked below this in the lexicon count as dictionary words when the
/// suffix rules need to decide between candidate stems. The tail of the list
/// is mostly names and fragments.
const DICT_RANK: usize = 60_000;

/// Rule-based lemmatizer: an irregular-forms table first, then suffix
/// stripping (`-s`, `-es`, `-ies`, `-ed`, `-ied`, `-ing`) with consonant
/// undoubling and silent-`e` restoration checked against the lexicon.
#[derive(Debug, Clone)]
pub struct Lemmatizer {
    exceptions: HashMap<String, String>,
    lexicon: &'static Lexicon,
}

impl Lemmatizer {
    pub fn new(exceptions_tsv: &str, lexicon: &'static Lexicon) -> Self {
        Self {
            exceptions: parse_tsv(exceptions_tsv),
            lexicon,
        }
    }

    pub fn embedded() -> &'static Lemmatizer {
        static LEMMATIZER: OnceLock<Lemmatizer> = OnceLock::new();
        LEMMATIZER.get_or_init(|| Lemmatizer::new(EXCEPTIONS_TSV, Lexicon::embedded()))
    }

    /// Lemma of a lowercase word. Always a fixed point:
    /// `lemma(lemma(w)) == lemma(w)`.
    pub fn lemma(&self, word: &str) -> String {
        let once = self.apply_rules(word);
        if once != word && self.apply_rules(&once) != once {
            // The rules would keep walking; refuse rather than break idempotency.
            return word.to_string();
        }
        once
    }

    fn is_word(&self, w: &str) -> bool {
        self.lexicon.rank(w).is_some_and(|r| r < DICT_RANK)
    }

    fn apply_rules(&self, word: &str) -> String {
        if let Some(l) = self.exceptions.get(word) {
            return l.clone();
        }
        if word.len() <= 3 || !word.bytes().all(|b| b.is_ascii_lowercase()) {
            return word.to_string();
        }
        if let Some(stem) = word.strip_suffix("ies") {
            if stem.len() >= 2 {
                return format!("{stem}y");
            }
        }
        if let Some(stem) = word.strip_suffix("ied") {
            if stem.len() >= 2 {
                return format!("{stem}y");
            }
        }
        if word.ends_with("eed") {
            return word.to_string();
        }
        if let Some(stem) = word.strip_suffix("ed") {
            return self.verb_stem(word, stem);
        }
        if let Some(stem) = word.strip_suffix("ing") {
            return self.verb_stem(word, stem);
        }
        if word.ends_with('s') {
            return self.plural_stem(word);
        }
        word.to_string()
    }

    fn plural_stem(&self, word: &str) -> String {
        if ["ss", "us", "is", "'s"].iter().any(|s| word.ends_with(s)) {
            return word.to_string();
        }
        let drop_s = &word[..word.len() - 1];
        let sibilant = ["sses", "shes", "ches", "xes", "zes"].iter().any(|s| word.ends_with(s));
        if sibilant {
            let drop_es = &word[..word.len() - 2];
            return match (self.is_word(drop_es), self.is_word(drop_s)) {
                (false, true) => drop_s.to_string(),
                (true, _) | (false, false) => drop_es.to_string(),
            };
        }
        if self.is_word(drop_s) || !self.is_word(word) {
            drop_s.to_string()
        } else {
            word.to_string()
        }
    }

    fn verb_stem(&self, word: &str, stem: &str) -> String {
        if stem.len() < 2 || !stem.bytes().any(is_vowel) {
            return word.to_string();
        }
        let with_e = format!("{stem}e");
        let undoubled = undouble(stem);
        let stem_ok = self.is_word(stem);
        let e_ok = self.is_word(&with_e);
        match (stem_ok, e_ok) {
            (false, true) => with_e,
            (true, false) => stem.to_string(),
            (true, true) => {
                if wants_silent_e(stem) {
                    with_e
                } else {
                    stem.to_string()
                }
            }
            (false, false) => match undoubled {
                Some(u) if self.is_word(u) => u.to_string(),
                Some(u) => u.to_string(),
                None if wants_silent_e(stem) => with_e,
                None => stem.to_string(),
            },
        }
    }
}

fn is_vowel(b: u8) -> bool {
    matches!(b, b'a' | b'e' | b'i' | b'o' | b'u')
}

/// `stopp` -> `stop`; `l`, `s` and `z` doubles are genuine (`call`, `pass`).
fn undouble(stem: &str) -> Option<&str> {
    let b = stem.as_bytes();
    let n = b.len();
    if n >= 3 && b[n - 1] == b[n - 2] && !is_vowel(b[n - 1]) && !matches!(b[n - 1], b'l' | b's' | b'z') {
        Some(&stem[..n - 1])
    } else {
        None
    }
}

/// Porter-style test for a dropped silent `e`: a short consonant-vowel-consonant
/// stem (`hop`, `nam`) or an ending that rarely closes an English word.
fn wants_silent_e(stem: &str) -> bool {
    let b = stem.as_bytes();
    let n = b.len();
    if ["us", "at", "iz", "bl", "dl", "tl", "gl", "pl", "v", "c", "uir", "ar"]
        .iter()
        .any(|s| stem.ends_with(s))
    {
        return true;
    }
    if n >= 3 {
        let cvc = !is_vowel(b[n - 3]) && is_vowel(b[n - 2]) && !is_vowel(b[n - 1]) && !matches!(b[n - 1], b'w' | b'x' | b'y');
        let measure = b
            .windows(2)
            .filter(|w| is_vowel(w[0]) && !is_vowel(w[1]))
            .count();
        return cvc && measure == 1;
    }
    false
}

pub(crate) fn parse_tsv(text: &str) -> HashMap<String, String> {
    text.lines()
        .filter_map(|l| {
            let (k, v) = l.split_once('\t')?;
            let k = k.trim();
            (!k.is_empty()).then(|| (k.to_string(), v.trim().to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lemma(w: &str) -> String {
        Lemmatizer::embedded().lemma(w)
    }

    #[test]
    fn be_forms() {
        for w in ["is", "are", "was", "were", "am", "been", "being"] {
            assert_eq!(lemma(w), "be", "{w}");
        }
    }

    #[test]
    fn regular_forms() {
        let cases = [
            ("seems", "seem"),
            ("values", "value"),
            ("classes", "class"),
            ("matches", "match"),
            ("caches", "cache"),
            ("entries", "entry"),
            ("tried", "try"),
            ("used", "use"),
            ("using", "use"),
            ("created", "create"),
            ("updated", "update"),
            ("named", "name"),
            ("stopped", "stop"),
            ("committed", "commit"),
            ("added", "add"),
            ("called", "call"),
            ("wanted", "want"),
            ("returned", "return"),
            ("opened", "open"),
            ("running", "run"),
            ("making", "make"),
            ("handled", "handle"),
            ("moved", "move"),
            ("changes", "change"),
            ("methods", "method"),
            ("throws", "throw"),
        ];
        for (w, l) in cases {
            assert_eq!(lemma(w), l, "{w}");
        }
    }

    #[test]
    fn words_left_alone() {
        for w in ["this", "class", "process", "status", "string", "thing", "need", "exceed", "analysis", "during", "the", "null"] {
            assert_eq!(lemma(w), w);
        }
    }

    #[test]
    fn lemma_never_grows_beyond_table() {
        // Only the -ies/-ied and silent-e rules can add letters, and never more
        // than one beyond the stripped suffix.
        for w in ["tries", "hoped", "closing", "parsed", "stories", "defined"] {
            assert!(lemma(w).len() <= w.len(), "{w} -> {}", lemma(w));
        }
    }

    proptest! {
        #[test]
        fn idempotent(word in "[a-z]{1,12}") {
            let once = lemma(&word);
            prop_assert_eq!(lemma(&once), once);
        }
    }
}
