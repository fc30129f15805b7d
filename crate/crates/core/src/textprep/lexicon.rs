use std::collections::HashMap;
use std::io::Read;
use std::sync::OnceLock;

use flate2::read::GzDecoder;

static EMBEDDED_WORDLIST: &[u8] = include_bytes!("../../assets/wordlist.txt.gz");

/// Cost charged for a single character that is not in the lexicon. Large
/// enough that any lexicon segmentation wins, finite so the DP always has a
/// path.
pub const UNKNOWN_CHAR_COST: f64 = 1.0e6;

/// Frequency-ranked word list. Rank 0 is the most frequent word.
#[derive(Debug, Clone)]
pub struct Lexicon {
    ranks: HashMap<String, usize>,
    costs: HashMap<String, f64>,
    max_word_len: usize,
}

impl Lexicon {
    /// Builds a lexicon from words in rank order. Duplicates keep their first
    /// (best) rank.
    pub fn from_ranked<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut ranks = HashMap::new();
        for w in words {
            let w: String = w.into();
            if w.is_empty() {
                continue;
            }
            let next = ranks.len();
            ranks.entry(w).or_insert(next);
        }
        // Zipf: P(word) ~ 1 / (rank * ln N), cost = -ln P.
        let ln_n = (ranks.len().max(2) as f64).ln();
        let costs = ranks
            .iter()
            .map(|(w, &r)| (w.clone(), ((r as f64 + 1.0) * ln_n).ln()))
            .collect();
        let max_word_len = ranks.keys().map(|w| w.chars().count()).max().unwrap_or(1);
        Self {
            ranks,
            costs,
            max_word_len,
        }
    }

    /// Parses the asset format: gzip-compressed text, one word per line.
    pub fn from_gzip(bytes: &[u8]) -> std::io::Result<Self> {
        let mut text = String::new();
        GzDecoder::new(bytes).read_to_string(&mut text)?;
        Ok(Self::from_ranked(text.split_whitespace()))
    }

    /// The bundled English word list (about 126k entries).
    pub fn embedded() -> &'static Lexicon {
        static LEXICON: OnceLock<Lexicon> = OnceLock::new();
        LEXICON.get_or_init(|| Lexicon::from_gzip(EMBEDDED_WORDLIST).expect("bundled word list decodes"))
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    pub fn rank(&self, word: &str) -> Option<usize> {
        self.ranks.get(word).copied()
    }

    pub fn cost(&self, word: &str) -> Option<f64> {
        self.costs.get(word).copied()
    }

    pub fn max_word_len(&self) -> usize {
        self.max_word_len
    }

    /// Cost of using `piece` as one segment, including the unknown-char
    /// fallback. `None` means the piece is not allowed.
    pub fn segment_cost(&self, piece: &str) -> Option<f64> {
        match self.cost(piece) {
            Some(c) => Some(c),
            None if piece.chars().count() == 1 => Some(UNKNOWN_CHAR_COST),
            None => None,
        }
    }

    /// Minimum-cost segmentation of a lowercase run of letters.
    ///
    /// Ties prefer the shorter final piece, scanning right to left.
    pub fn segment(&self, text: &str) -> Vec<String> {
        let chars: Vec<char> = text.chars().collect();
        let n = chars.len();
        if n == 0 {
            return Vec::new();
        }
        let mut best = vec![f64::INFINITY; n + 1];
        let mut back = vec![0usize; n + 1];
        best[0] = 0.0;
        let mut piece = String::new();
        for end in 1..=n {
            let max_k = end.min(self.max_word_len.max(1));
            for k in 1..=max_k {
                let start = end - k;
                if !best[start].is_finite() {
                    continue;
                }
                piece.clear();
                piece.extend(&chars[start..end]);
                if let Some(c) = self.segment_cost(&piece) {
                    let total = best[start] + c;
                    if total < best[end] {
                        best[end] = total;
                        back[end] = k;
                    }
                }
            }
        }
        let mut out = Vec::new();
        let mut end = n;
        while end > 0 {
            let k = back[end];
            out.push(chars[end - k..end].iter().collect());
            end -= k;
        }
        out.reverse();
        out
    }
}

/// Splits on non-alphanumeric separators, on camelCase humps and on
/// letter/digit boundaries.
pub fn identifier_chunks(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let mut chunks = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if !c.is_alphanumeric() {
            if !cur.is_empty() {
                chunks.push(std::mem::take(&mut cur));
            }
            continue;
        }
        if let Some(&prev) = i.checked_sub(1).and_then(|p| chars.get(p)) {
            let next = chars.get(i + 1).copied();
            let boundary = prev.is_alphanumeric()
                && ((prev.is_lowercase() && c.is_uppercase())
                    || (prev.is_numeric() != c.is_numeric())
                    || (prev.is_uppercase()
                        && c.is_uppercase()
                        && next.is_some_and(|n| n.is_lowercase())));
            if boundary && !cur.is_empty() {
                chunks.push(std::mem::take(&mut cur));
            }
        }
        cur.push(c);
    }
    if !cur.is_empty() {
        chunks.push(cur);
    }
    chunks
}

/// Java keywords and primitive type names. They are never segmented, so
/// `int` does not become `in t`.
const JAVA_KEYWORDS: [&str; 50] = [
    "abstract", "assert", "boolean", "break", "byte", "case", "catch", "char", "class", "const", "continue",
    "default", "do", "double", "else", "enum", "extends", "final", "finally", "float", "for", "goto", "if",
    "implements", "import", "instanceof", "int", "interface", "long", "native", "new", "package", "private",
    "protected", "public", "return", "short", "static", "strictfp", "super", "switch", "synchronized", "this",
    "throw", "throws", "transient", "try", "void", "volatile", "while",
];

/// Splits a compound identifier into lowercase sub-words.
///
/// Case humps and separators are honoured first; each remaining alphabetic
/// chunk is segmented against the lexicon unless it is a Java keyword. Digit
/// runs pass through whole.
pub fn split_identifier(word: &str, lexicon: &Lexicon) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in identifier_chunks(word) {
        let lower = chunk.to_lowercase();
        if lower.chars().all(|c| c.is_numeric()) || JAVA_KEYWORDS.contains(&lower.as_str()) {
            out.push(lower);
        } else {
            out.extend(lexicon.segment(&lower));
        }
    }
    out
}
