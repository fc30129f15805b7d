use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DiffOpKind {
    Keep,
    Delete,
    Insert,
}

/// One line-level edit. Line numbers are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffOp {
    pub op: DiffOpKind,
    pub sub_line_no: Option<usize>,
    pub rev_line_no: Option<usize>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LineDiff {
    pub ops: Vec<DiffOp>,
}

impl LineDiff {
    /// Applies the script to the submitted lines and returns the revised lines.
    /// `None` when a KEEP/DELETE does not match the line it claims.
    pub fn replay(&self, sub_lines: &[&str]) -> Option<Vec<String>> {
        let mut out = Vec::new();
        let mut cursor = 0;
        for op in &self.ops {
            match op.op {
                DiffOpKind::Keep | DiffOpKind::Delete => {
                    let line = sub_lines.get(cursor)?;
                    if *line != op.text || op.sub_line_no != Some(cursor + 1) {
                        return None;
                    }
                    cursor += 1;
                    if op.op == DiffOpKind::Keep {
                        out.push(op.text.clone());
                    }
                }
                DiffOpKind::Insert => out.push(op.text.clone()),
            }
        }
        (cursor == sub_lines.len()).then_some(out)
    }

    pub fn is_unchanged(&self) -> bool {
        self.ops.iter().all(|o| o.op == DiffOpKind::Keep)
    }
}

/// Splits text into lines the way every line-numbered operation in the crate
/// does: on `\n`, with a trailing `\r` removed and no phantom final line.
pub fn split_lines(text: &str) -> Vec<&str> {
    text.lines().collect()
}

/// Minimal line edit script via longest common subsequence.
///
/// Among equally short scripts a DELETE is emitted before an INSERT.
pub fn diff_lines(sub_code: &str, rev_code: &str) -> LineDiff {
    let a = split_lines(sub_code);
    let b = split_lines(rev_code);

    // Trim the common prefix and suffix; the DP only sees the middle.
    let prefix = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let suffix = a[prefix..]
        .iter()
        .rev()
        .zip(b[prefix..].iter().rev())
        .take_while(|(x, y)| x == y)
        .count();
    let am = &a[prefix..a.len() - suffix];
    let bm = &b[prefix..b.len() - suffix];

    // lcs[i][j] = LCS length of am[i..] and bm[j..].
    let (n, m) = (am.len(), bm.len());
    let width = m + 1;
    let mut lcs = vec![0u32; (n + 1) * width];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i * width + j] = if am[i] == bm[j] {
                lcs[(i + 1) * width + j + 1] + 1
            } else {
                lcs[(i + 1) * width + j].max(lcs[i * width + j + 1])
            };
        }
    }

    let mut ops = Vec::with_capacity(a.len().max(b.len()));
    let keep = |ops: &mut Vec<DiffOp>, i: usize, j: usize, text: &str| {
        ops.push(DiffOp {
            op: DiffOpKind::Keep,
            sub_line_no: Some(i + 1),
            rev_line_no: Some(j + 1),
            text: text.to_string(),
        })
    };
    for k in 0..prefix {
        keep(&mut ops, k, k, a[k]);
    }
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        if i < n && j < m && am[i] == bm[j] && lcs[i * width + j] == lcs[(i + 1) * width + j + 1] + 1 {
            keep(&mut ops, prefix + i, prefix + j, am[i]);
            i += 1;
            j += 1;
        } else if i < n && (j == m || lcs[(i + 1) * width + j] >= lcs[i * width + j + 1]) {
            ops.push(DiffOp {
                op: DiffOpKind::Delete,
                sub_line_no: Some(prefix + i + 1),
                rev_line_no: None,
                text: am[i].to_string(),
            });
            i += 1;
        } else {
            ops.push(DiffOp {
                op: DiffOpKind::Insert,
                sub_line_no: None,
                rev_line_no: Some(prefix + j + 1),
                text: bm[j].to_string(),
            });
            j += 1;
        }
    }
    for k in 0..suffix {
        keep(&mut ops, prefix + n + k, prefix + m + k, a[prefix + n + k]);
    }
    LineDiff { ops }
}
