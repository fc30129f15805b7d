//! ROUGE-1, ROUGE-L and perfect prediction, with best-of-k aggregation.
//!
//! Scores are macro-averaged: each example is scored on its own and the
//! per-example values are averaged.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("reference is empty")]
    EmptyReference,
    #[error("{hyps} hypotheses for {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("nothing to evaluate")]
    NoExamples,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Clipped unigram overlap.
pub fn rouge_1<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> Result<Prf, EvalError> {
    if reference.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    let mut ref_counts: HashMap<&str, usize> = HashMap::new();
    for t in reference {
        *ref_counts.entry(t.as_ref()).or_default() += 1;
    }
    let mut overlap = 0;
    for t in hyp {
        if let Some(c) = ref_counts.get_mut(t.as_ref()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    let precision = if hyp.is_empty() { 0.0 } else { overlap as f64 / hyp.len() as f64 };
    let recall = overlap as f64 / reference.len() as f64;
    Ok(Prf {
        precision,
        recall,
        f1: harmonic(precision, recall),
    })
}

/// Longest common subsequence length, O(|a|·|b|) time and O(|b|) memory.
pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure with beta = 1.
pub fn rouge_l<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> Result<f64, EvalError> {
    if reference.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    let l = lcs_len(hyp, reference);
    if l == 0 {
        return Ok(0.0);
    }
    let p = l as f64 / hyp.len() as f64;
    let r = l as f64 / reference.len() as f64;
    Ok(harmonic(p, r))
}

/// Share of positions where the hypothesis equals the reference token for token.
pub fn perfect_prediction<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> Result<f64, EvalError> {
    if hyps.len() != refs.len() {
        return Err(EvalError::LengthMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    if refs.is_empty() {
        return Err(EvalError::NoExamples);
    }
    let hits = hyps.iter().zip(refs).filter(|(h, r)| same(h, r)).count();
    Ok(hits as f64 / refs.len() as f64)
}

fn same<S: AsRef<str>>(a: &[S], b: &[S]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.as_ref() == y.as_ref())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub rouge1_p: f64,
    pub rouge1_r: f64,
    pub rouge1_f: f64,
    pub rouge_l: f64,
    pub perfect_prediction: f64,
    pub n_examples: usize,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "k,rouge1_p,rouge1_r,rouge1_f,rougeL,perfect_prediction";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.k, self.rouge1_p, self.rouge1_r, self.rouge1_f, self.rouge_l, self.perfect_prediction
        )
    }

    /// The four headline metrics, in report order.
    pub fn metrics(&self) -> [f64; 5] {
        [self.rouge1_p, self.rouge1_r, self.rouge1_f, self.rouge_l, self.perfect_prediction]
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "top-{:<3} R1-P {:6.2}%  R1-R {:6.2}%  R1-F {:6.2}%  R-L {:6.2}%  PP {:6.2}%  (n={})",
            self.k,
            100.0 * self.rouge1_p,
            100.0 * self.rouge1_r,
            100.0 * self.rouge1_f,
            100.0 * self.rouge_l,
            100.0 * self.perfect_prediction,
            self.n_examples
        )
    }
}

/// Renders reports as an aligned text table.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut s = String::from("   k   R1-P     R1-R     R1-F     ROUGE-L  PerfPred   n\n");
    for r in reports {
        s.push_str(&format!(
            "{:>4}  {:7.3}  {:7.3}  {:7.3}  {:7.3}  {:7.3}  {}\n",
            r.k, r.rouge1_p, r.rouge1_r, r.rouge1_f, r.rouge_l, r.perfect_prediction, r.n_examples
        ));
    }
    s
}

pub fn render_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from(EvalReport::CSV_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Best-of-k: every metric takes its maximum over the first `k` candidates of
/// each example (missing candidates count as empty), then metrics are averaged
/// over examples. Perfect prediction counts an example when any of those
/// candidates matches exactly.
pub fn evaluate_topk<S: AsRef<str>>(candidates: &[Vec<Vec<S>>], refs: &[Vec<S>], k: usize) -> Result<EvalReport, EvalError> {
    if candidates.len() != refs.len() {
        return Err(EvalError::LengthMismatch {
            hyps: candidates.len(),
            refs: refs.len(),
        });
    }
    if refs.is_empty() {
        return Err(EvalError::NoExamples);
    }
    let mut sums = [0.0f64; 5];
    for (cands, reference) in candidates.iter().zip(refs) {
        let mut best = [0.0f64; 5];
        let empty: Vec<S> = Vec::new();
        let considered = cands.iter().take(k).chain(std::iter::repeat_n(&empty, k.saturating_sub(cands.len())));
        for hyp in considered {
            let r1 = rouge_1(hyp, reference)?;
            let rl = rouge_l(hyp, reference)?;
            let pp = if same(hyp, reference) { 1.0 } else { 0.0 };
            for (b, v) in best.iter_mut().zip([r1.precision, r1.recall, r1.f1, rl, pp]) {
                *b = b.max(v);
            }
        }
        for (s, b) in sums.iter_mut().zip(best) {
            *s += b;
        }
    }
    let n = refs.len() as f64;
    Ok(EvalReport {
        k,
        rouge1_p: sums[0] / n,
        rouge1_r: sums[1] / n,
        rouge1_f: sums[2] / n,
        rouge_l: sums[3] / n,
        perfect_prediction: sums[4] / n,
        n_examples: refs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn rouge1_cases() {
        assert_eq!(rouge_1(&w("a b c"), &w("a b c")).unwrap(), Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        // Clipped counts: "the" x1 and "cat" x1 overlap, "sat" does not.
        let p = rouge_1(&w("the cat sat"), &w("the cat on the mat")).unwrap();
        assert_eq!((p.precision, p.recall), (2.0 / 3.0, 2.0 / 5.0));
        assert_eq!(rouge_1(&w("x y"), &w("a b")).unwrap(), Prf::default());
        assert_eq!(rouge_1(&w("the the the"), &w("the cat")).unwrap().precision, 1.0 / 3.0);
        assert_eq!(rouge_1(&w(""), &w("a")).unwrap().precision, 0.0);
        assert_eq!(rouge_1(&w("a"), &w("")), Err(EvalError::EmptyReference));
    }

    #[test]
    fn rouge_l_cases() {
        assert_eq!(rouge_l(&w("a b c"), &w("a b c")).unwrap(), 1.0);
        assert_eq!(rouge_l(&w("the cat sat"), &w("the cat on the mat")).unwrap(), 0.5);
        assert_eq!(rouge_l(&w("x"), &w("y")).unwrap(), 0.0);
        assert_eq!(rouge_l(&w("x"), &w("")), Err(EvalError::EmptyReference));
    }

    #[test]
    fn perfect_prediction_cases() {
        assert_eq!(perfect_prediction(&[w("a b")], &[w("a b")]).unwrap(), 1.0);
        assert_eq!(perfect_prediction(&[w("a b"), w("c")], &[w("a b"), w("d")]).unwrap(), 0.5);
        assert_eq!(perfect_prediction(&[w("a b c")], &[w("a b d")]).unwrap(), 0.0);
        assert_eq!(
            perfect_prediction(&[w("a")], &[w("a"), w("b")]),
            Err(EvalError::LengthMismatch { hyps: 1, refs: 2 })
        );
    }

    #[test]
    fn topk_toy_set() {
        let cands = vec![
            vec![w("a b"), w("a b c")],
            vec![w("x"), w("y z")],
            vec![w("p q r s")],
            vec![],
        ];
        let refs = vec![w("a b c"), w("y z"), w("p q"), w("m")];
        // Hand enumeration for k = 2:
        // ex1 best: exact match -> P=R=F=L=PP=1.
        // ex2 best: "y z" exact -> all 1.
        // ex3: only "p q r s": P=2/4, R=1, F=2/3, L: LCS 2 -> 2*(.5*1)/1.5 = 2/3, PP 0.
        // ex4: no candidates -> zeros.
        let r = evaluate_topk(&cands, &refs, 2).unwrap();
        assert!((r.rouge1_p - (1.0 + 1.0 + 0.5) / 4.0).abs() < 1e-12);
        assert!((r.rouge1_r - (1.0 + 1.0 + 1.0) / 4.0).abs() < 1e-12);
        assert!((r.rouge1_f - (2.0 + 2.0 / 3.0) / 4.0).abs() < 1e-12);
        assert!((r.rouge_l - (2.0 + 2.0 / 3.0) / 4.0).abs() < 1e-12);
        assert!((r.perfect_prediction - 0.5).abs() < 1e-12);
        // k = 1 reduces to first-candidate scores.
        let r1 = evaluate_topk(&cands, &refs, 1).unwrap();
        let first_l = [rouge_l(&w("a b"), &w("a b c")).unwrap(), 0.0, 2.0 / 3.0, 0.0];
        assert!((r1.rouge_l - first_l.iter().sum::<f64>() / 4.0).abs() < 1e-12);
        assert_eq!(r1.perfect_prediction, 0.0);
    }

    #[test]
    fn csv_format() {
        let r = evaluate_topk(&[vec![w("a")]], &[w("a")], 1).unwrap();
        assert_eq!(render_csv(&[r]), "k,rouge1_p,rouge1_r,rouge1_f,rougeL,perfect_prediction\n1,1.000000,1.000000,1.000000,1.000000,1.000000\n");
    }

    /// LCS by enumerating every subsequence of the shorter side.
    fn brute_lcs(a: &[String], b: &[String]) -> usize {
        let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
        let mut best = 0;
        for mask in 0u32..(1 << short.len()) {
            let sub: Vec<&String> = (0..short.len()).filter(|i| mask >> i & 1 == 1).map(|i| &short[i]).collect();
            let mut it = long.iter();
            if sub.iter().all(|s| it.any(|x| x == *s)) {
                best = best.max(sub.len());
            }
        }
        best
    }

    fn seq() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]).prop_map(String::from), 0..=8)
    }

    proptest! {
        #[test]
        fn lcs_matches_brute_force(a in seq(), b in seq()) {
            prop_assert_eq!(lcs_len(&a, &b), brute_lcs(&a, &b));
        }

        #[test]
        fn rouge_l_one_iff_equal(a in seq(), b in seq()) {
            prop_assume!(!b.is_empty());
            let l = rouge_l(&a, &b).unwrap();
            prop_assert_eq!(l == 1.0, a == b);
        }

        #[test]
        fn sub_multiset_has_full_precision(b in seq(), keep in prop::collection::vec(any::<bool>(), 8)) {
            prop_assume!(!b.is_empty());
            let a: Vec<String> = b.iter().zip(&keep).filter(|(_, k)| **k).map(|(x, _)| x.clone()).collect();
            prop_assume!(!a.is_empty());
            prop_assert_eq!(rouge_1(&a, &b).unwrap().precision, 1.0);
        }

        #[test]
        fn topk_is_monotone(cands in prop::collection::vec(prop::collection::vec(seq(), 0..6), 1..5), refs_seed in prop::collection::vec(seq(), 5)) {
            let refs: Vec<Vec<String>> = refs_seed.into_iter().take(cands.len()).map(|r| if r.is_empty() { vec!["a".to_string()] } else { r }).collect();
            let mut prev = [0.0; 5];
            for k in 1..=6 {
                let r = evaluate_topk(&cands, &refs, k).unwrap();
                for (p, v) in prev.iter().zip(r.metrics()) {
                    prop_assert!(v + 1e-12 >= *p);
                }
                prop_assert!(r.perfect_prediction <= r.rouge_l + 1e-12);
                prev = r.metrics();
            }
        }
    }
}
