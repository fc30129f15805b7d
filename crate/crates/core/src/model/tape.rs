//! Reverse-mode autodiff over row-major f64 matrices.
//!
//! A [`Tape`] records one forward pass. Parameters are borrowed, never copied;
//! their gradients are accumulated straight into caller-owned buffers.

use ndarray::{s, Array2, Axis, Zip};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Src {
    Node(usize),
    Param(usize),
}

enum Op {
    Leaf,
    Gather { src: Src, rows: Vec<usize>, scale: f64 },
    Add(Src, Src),
    AddRow(Src, Src),
    MatMul(Src, Src),
    MatMulBT(Src, Src),
    LayerNorm { x: Src, g: Src, b: Src, xhat: Array2<f64>, inv_std: Vec<f64> },
    Gelu(Src),
    MulConst(Src, Array2<f64>),
    Scale(Src, f64),
    SliceCols(Src, usize),
    ConcatCols(Vec<Src>),
    Softmax(Src),
    CrossEntropy { logits: Src, targets: Vec<usize>, probs: Array2<f64> },
}

pub const LN_EPS: f64 = 1e-6;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Row-wise softmax in place. With `causal`, entry (i, j) for j > i + offset
/// is forced to exactly zero.
pub fn softmax_rows(x: &mut Array2<f64>, causal_offset: Option<usize>) {
    for (i, mut row) in x.axis_iter_mut(Axis(0)).enumerate() {
        let limit = causal_offset.map_or(row.len(), |o| (i + o + 1).min(row.len()));
        let m = row.iter().take(limit).fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for (j, v) in row.iter_mut().enumerate() {
            if j < limit {
                *v = (*v - m).exp();
                sum += *v;
            } else {
                *v = 0.0;
            }
        }
        row.mapv_inplace(|v| v / sum);
    }
}

pub fn layer_norm_rows(x: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
    let n = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv = Vec::with_capacity(x.nrows());
    for mut row in xhat.axis_iter_mut(Axis(0)) {
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * is);
        inv.push(is);
    }
    (xhat, inv)
}

fn acc(grads: &mut [Array2<f64>], g: &mut [Option<Array2<f64>>], s: Src, d: Array2<f64>) {
    match s {
        Src::Param(p) => grads[p] += &d,
        Src::Node(n) => match &mut g[n] {
            Some(e) => *e += &d,
            slot => *slot = Some(d),
        },
    }
}

pub struct Tape<'p> {
    params: &'p [Array2<f64>],
    track: bool,
    vals: Vec<Array2<f64>>,
    ops: Vec<Op>,
    needs: Vec<bool>,
}

impl<'p> Tape<'p> {
    /// `track = false` skips everything backward needs.
    pub fn new(params: &'p [Array2<f64>], track: bool) -> Self {
        Self {
            params,
            track,
            vals: Vec::new(),
            ops: Vec::new(),
            needs: Vec::new(),
        }
    }

    pub fn value(&self, s: Src) -> &Array2<f64> {
        match s {
            Src::Node(i) => &self.vals[i],
            Src::Param(i) => &self.params[i],
        }
    }

    pub fn take_value(mut self, s: Src) -> Array2<f64> {
        match s {
            Src::Node(i) => std::mem::take(&mut self.vals[i]),
            Src::Param(i) => self.params[i].clone(),
        }
    }

    fn needs(&self, s: Src) -> bool {
        match s {
            Src::Node(i) => self.needs[i],
            Src::Param(_) => self.track,
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op, parents: &[Src]) -> Src {
        let needs = self.track && parents.iter().any(|&p| self.needs(p));
        self.vals.push(value);
        self.ops.push(if needs { op } else { Op::Leaf });
        self.needs.push(needs);
        Src::Node(self.vals.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Src {
        self.push(value, Op::Leaf, &[])
    }

    pub fn gather(&mut self, src: Src, rows: &[usize], scale: f64) -> Src {
        let v = self.value(src);
        let mut out = Array2::zeros((rows.len(), v.ncols()));
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).assign(&(&v.row(r) * scale));
        }
        self.push(out, Op::Gather { src, rows: rows.to_vec(), scale }, &[src])
    }

    pub fn add(&mut self, a: Src, b: Src) -> Src {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    /// `a + b` with `b` a 1×n row broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Src, b: Src) -> Src {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::AddRow(a, b), &[a, b])
    }

    pub fn matmul(&mut self, a: Src, b: Src) -> Src {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Src, b: Src) -> Src {
        let out = self.value(a).dot(&self.value(b).t());
        self.push(out, Op::MatMulBT(a, b), &[a, b])
    }

    pub fn layer_norm(&mut self, x: Src, g: Src, b: Src) -> Src {
        let (xhat, inv_std) = layer_norm_rows(self.value(x));
        let out = &xhat * self.value(g) + self.value(b);
        self.push(out, Op::LayerNorm { x, g, b, xhat, inv_std }, &[x, g, b])
    }

    pub fn gelu(&mut self, x: Src) -> Src {
        let out = self.value(x).mapv(gelu);
        self.push(out, Op::Gelu(x), &[x])
    }

    pub fn mul_const(&mut self, x: Src, m: Array2<f64>) -> Src {
        let out = self.value(x) * &m;
        self.push(out, Op::MulConst(x, m), &[x])
    }

    pub fn scale(&mut self, x: Src, k: f64) -> Src {
        let out = self.value(x) * k;
        self.push(out, Op::Scale(x, k), &[x])
    }

    pub fn slice_cols(&mut self, x: Src, start: usize, width: usize) -> Src {
        let out = self.value(x).slice(s![.., start..start + width]).to_owned();
        self.push(out, Op::SliceCols(x, start), &[x])
    }

    pub fn concat_cols(&mut self, parts: &[Src]) -> Src {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn softmax(&mut self, x: Src, causal_offset: Option<usize>) -> Src {
        let mut out = self.value(x).clone();
        softmax_rows(&mut out, causal_offset);
        self.push(out, Op::Softmax(x), &[x])
    }

    /// Summed negative log-likelihood of `targets[i]` under row `i` of `logits`.
    pub fn cross_entropy_sum(&mut self, logits: Src, targets: &[usize]) -> Src {
        let mut probs = self.value(logits).clone();
        softmax_rows(&mut probs, None);
        let z = self.value(logits);
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = z.row(i);
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[t];
        }
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        self.push(Array2::from_elem((1, 1), loss), op, &[logits])
    }

    /// Backpropagates from the scalar `root`, adding parameter gradients into
    /// `grads` (one buffer per parameter, same shapes).
    pub fn backward(&self, root: Src, grads: &mut [Array2<f64>]) {
        let Src::Node(root) = root else { return };
        let mut g: Vec<Option<Array2<f64>>> = (0..=root).map(|_| None).collect();
        g[root] = Some(Array2::ones(self.vals[root].raw_dim()));
        for i in (0..=root).rev() {
            let Some(gi) = g[i].take() else { continue };
            match &self.ops[i] {
                Op::Leaf => {}
                Op::Gather { src, rows, scale } => match *src {
                    Src::Param(p) => {
                        for (k, &r) in rows.iter().enumerate() {
                            grads[p].row_mut(r).scaled_add(*scale, &gi.row(k));
                        }
                    }
                    Src::Node(_) if self.needs(*src) => {
                        let mut d = Array2::zeros(self.value(*src).raw_dim());
                        for (k, &r) in rows.iter().enumerate() {
                            d.row_mut(r).scaled_add(*scale, &gi.row(k));
                        }
                        acc(grads, &mut g, *src, d);
                    }
                    Src::Node(_) => {}
                },
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        acc(grads, &mut g, *b, gi.clone());
                    }
                    if self.needs(*a) {
                        acc(grads, &mut g, *a, gi);
                    }
                }
                Op::AddRow(a, b) => {
                    if self.needs(*b) {
                        acc(grads, &mut g, *b, gi.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.needs(*a) {
                        acc(grads, &mut g, *a, gi);
                    }
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        acc(grads, &mut g, *a, gi.dot(&self.value(*b).t()));
                    }
                    if self.needs(*b) {
                        acc(grads, &mut g, *b, self.value(*a).t().dot(&gi));
                    }
                }
                Op::MatMulBT(a, b) => {
                    if self.needs(*a) {
                        acc(grads, &mut g, *a, gi.dot(self.value(*b)));
                    }
                    if self.needs(*b) {
                        acc(grads, &mut g, *b, gi.t().dot(self.value(*a)));
                    }
                }
                Op::LayerNorm { x, g: gamma, b, xhat, inv_std } => {
                    if self.needs(*b) {
                        acc(grads, &mut g, *b, gi.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.needs(*gamma) {
                        acc(grads, &mut g, *gamma, (&gi * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.needs(*x) {
                        let dxhat = &gi * self.value(*gamma);
                        let n = dxhat.ncols() as f64;
                        let mut dx = Array2::zeros(dxhat.raw_dim());
                        for r in 0..dxhat.nrows() {
                            let dh = dxhat.row(r);
                            let xh = xhat.row(r);
                            let sum_dh = dh.sum();
                            let sum_dh_xh = dh.dot(&xh);
                            let k = inv_std[r] / n;
                            Zip::from(dx.row_mut(r)).and(dh).and(xh).for_each(|d, &a, &h| {
                                *d = k * (n * a - sum_dh - h * sum_dh_xh);
                            });
                        }
                        acc(grads, &mut g, *x, dx);
                    }
                }
                Op::Gelu(x) => {
                    let mut d = self.value(*x).mapv(gelu_grad);
                    d *= &gi;
                    acc(grads, &mut g, *x, d);
                }
                Op::MulConst(x, m) => acc(grads, &mut g, *x, gi * m),
                Op::Scale(x, k) => acc(grads, &mut g, *x, gi * *k),
                Op::SliceCols(x, start) => {
                    let mut d = Array2::zeros(self.value(*x).raw_dim());
                    d.slice_mut(s![.., *start..*start + gi.ncols()]).assign(&gi);
                    acc(grads, &mut g, *x, d);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        if self.needs(p) {
                            acc(grads, &mut g, p, gi.slice(s![.., at..at + w]).to_owned());
                        }
                        at += w;
                    }
                }
                Op::Softmax(x) => {
                    let p = &self.vals[i];
                    let mut d = &gi * p;
                    for (mut row, prow) in d.axis_iter_mut(Axis(0)).zip(p.axis_iter(Axis(0))) {
                        let dot = row.sum();
                        Zip::from(&mut row).and(&prow).for_each(|v, &pv| *v -= pv * dot);
                    }
                    acc(grads, &mut g, *x, d);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let scale = gi[[0, 0]];
                    let mut d = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        d[[r, t]] -= 1.0;
                    }
                    d.mapv_inplace(|v| v * scale);
                    acc(grads, &mut g, *logits, d);
                }
            }
        }
    }
}
