//! Seeded synthetic review triplets for smoke runs and ablations.
//!
//! Each triplet is a small Java class with one method of `lines` assignment
//! statements. One statement is revised, and the comment is a fixed template
//! chosen by that statement's getter and filled with its variable name, so the
//! comment is fully determined by which line was reviewed.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{ReviewMeta, ReviewTriplet};
use crate::util::derived_rng;

const NOUNS: [&str; 30] = [
    "count", "total", "price", "name", "size", "index", "limit", "offset", "buffer", "token", "score", "weight",
    "level", "status", "owner", "label", "amount", "budget", "cursor", "depth", "height", "width", "margin",
    "period", "region", "source", "target", "timeout", "version", "volume",
];
const RECEIVERS: [&str; 4] = ["store", "cache", "repo", "service"];
const CLASSES: [&str; 6] = ["Order", "Invoice", "Account", "Widget", "Report", "Session"];
const METHODS: [&str; 6] = ["update", "render", "process", "validate", "compute", "refresh"];

/// Getter verb and the comment it triggers; `{}` is the variable.
const KINDS: [(&str, &str); 4] = [
    ("fetch", "`{}` may be null here, please add a check."),
    ("compute", "Consider caching {} instead of recomputing it."),
    ("parse", "Please handle invalid {} input."),
    ("load", "Load {} lazily instead."),
];

fn cap(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_ascii_uppercase().to_string() + c.as_str()).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticConfig {
    pub n: usize,
    /// Statements per method.
    pub lines: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { n: 500, lines: 4, seed: 0 }
    }
}

/// `cfg.n` triplets with ids `syn-0000`, `syn-0001`, ...
pub fn synthetic_corpus(cfg: &SyntheticConfig) -> Vec<ReviewTriplet> {
    (0..cfg.n).map(|i| synthetic_triplet(i, cfg)).collect()
}

fn synthetic_triplet(i: usize, cfg: &SyntheticConfig) -> ReviewTriplet {
    let mut rng = derived_rng(cfg.seed, &[0x5359_4e54, i as u64]);
    let lines = cfg.lines.clamp(1, NOUNS.len());
    let vars: Vec<&str> = NOUNS.choose_multiple(&mut rng, lines).copied().collect();
    let kinds: Vec<usize> = (0..lines).map(|_| rng.gen_range(0..KINDS.len())).collect();
    let recv = RECEIVERS.choose(&mut rng).expect("non-empty");
    let class = CLASSES.choose(&mut rng).expect("non-empty");
    let method = METHODS.choose(&mut rng).expect("non-empty");
    let target = rng.gen_range(0..lines);

    let stmt = |k: usize, revised: bool| {
        let (getter, _) = KINDS[kinds[k]];
        let arg = if revised { "0" } else { "" };
        format!("        int {} = {recv}.{getter}{}({arg});", vars[k], cap(vars[k]))
    };
    let render = |revised: bool| {
        let mut src = vec![format!("class {class} {{"), format!("    int {method}() {{")];
        src.extend((0..lines).map(|k| stmt(k, revised && k == target)));
        src.push(format!("        return {};", vars[lines - 1]));
        src.push("    }".to_string());
        src.push("}".to_string());
        src.join("\n") + "\n"
    };
    let comment = KINDS[kinds[target]].1.replace("{}", vars[target]);
    ReviewTriplet {
        id: format!("syn-{i:04}"),
        repo: "synthetic/shop".to_string(),
        sub_code: render(false),
        rev_code: render(true),
        comment,
        meta: ReviewMeta {
            timestamp: format!("2022-01-{:02}T00:00:00Z", 1 + i % 28),
            author: format!("reviewer{}", i % 7),
            pr_number: 1000 + i as u64,
        },
    }
}
