use ndarray::{s, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{Attn, Ffn, Layout, Ln};
use super::tape::{gelu, layer_norm_rows, softmax_rows, Src, Tape};
use super::{ModelConfig, ModelParameters, TrainingExample};
use crate::vocab::PAD_ID;

/// Sinusoidal absolute position table, `len × d`.
pub(crate) fn positions(len: usize, d: usize) -> Array2<f64> {
    let mut pe = Array2::zeros((len, d));
    for pos in 0..len {
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = pos as f64 * freq;
            pe[[pos, i]] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    pe
}

pub(crate) struct Dropout {
    pub rate: f64,
    pub rng: ChaCha8Rng,
}

/// Builds forward graphs for one parameter set.
pub(crate) struct Graph<'t, 'p> {
    pub tape: &'t mut Tape<'p>,
    lay: &'t Layout,
    cfg: &'t ModelConfig,
    drop: Option<Dropout>,
}

impl<'t, 'p> Graph<'t, 'p> {
    pub fn new(tape: &'t mut Tape<'p>, lay: &'t Layout, cfg: &'t ModelConfig, drop: Option<Dropout>) -> Self {
        Self { tape, lay, cfg, drop }
    }

    fn dropout(&mut self, x: Src) -> Src {
        let Some(d) = self.drop.as_mut().filter(|d| d.rate > 0.0) else { return x };
        let keep = 1.0 - d.rate;
        let shape = self.tape.value(x).raw_dim();
        let mask = Array2::from_shape_simple_fn(shape, || if d.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 });
        self.tape.mul_const(x, mask)
    }

    fn ln(&mut self, x: Src, ln: Ln) -> Src {
        self.tape.layer_norm(x, Src::Param(ln.g), Src::Param(ln.b))
    }

    fn embed(&mut self, ids: &[u32]) -> Src {
        let rows: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let d = self.cfg.d_model;
        let x = self.tape.gather(Src::Param(self.lay.embed), &rows, (d as f64).sqrt());
        let pe = self.tape.constant(positions(ids.len(), d));
        let x = self.tape.add(x, pe);
        self.dropout(x)
    }

    fn attention(&mut self, q_in: Src, kv_in: Src, a: Attn, causal: bool) -> Src {
        let t = &mut *self.tape;
        let q = t.matmul(q_in, Src::Param(a.wq));
        let k = t.matmul(kv_in, Src::Param(a.wk));
        let v = t.matmul(kv_in, Src::Param(a.wv));
        let h = self.cfg.n_heads;
        let dk = self.cfg.d_model / h;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut heads = Vec::with_capacity(h);
        for i in 0..h {
            let qh = t.slice_cols(q, i * dk, dk);
            let kh = t.slice_cols(k, i * dk, dk);
            let vh = t.slice_cols(v, i * dk, dk);
            let sc = t.matmul_bt(qh, kh);
            let sc = t.scale(sc, scale);
            let p = t.softmax(sc, causal.then_some(0));
            heads.push(t.matmul(p, vh));
        }
        let ctx = if h == 1 { heads[0] } else { t.concat_cols(&heads) };
        t.matmul(ctx, Src::Param(a.wo))
    }

    fn ffn(&mut self, x: Src, f: Ffn) -> Src {
        let t = &mut *self.tape;
        let h = t.matmul(x, Src::Param(f.w1));
        let h = t.add_row(h, Src::Param(f.b1));
        let h = t.gelu(h);
        let h = t.matmul(h, Src::Param(f.w2));
        t.add_row(h, Src::Param(f.b2))
    }

    fn residual(&mut self, x: Src, y: Src) -> Src {
        let y = self.dropout(y);
        self.tape.add(x, y)
    }

    pub fn encode(&mut self, ids: &[u32]) -> Src {
        let mut x = self.embed(ids);
        for l in self.lay.enc.clone() {
            let h = self.ln(x, l.ln1);
            let a = self.attention(h, h, l.attn, false);
            x = self.residual(x, a);
            let h = self.ln(x, l.ln2);
            let f = self.ffn(h, l.ffn);
            x = self.residual(x, f);
        }
        self.ln(x, self.lay.enc_ln)
    }

    pub fn decode(&mut self, ids: &[u32], memory: Src) -> Src {
        let mut x = self.embed(ids);
        for l in self.lay.dec.clone() {
            let h = self.ln(x, l.ln1);
            let a = self.attention(h, h, l.self_attn, true);
            x = self.residual(x, a);
            let h = self.ln(x, l.ln2);
            let c = self.attention(h, memory, l.cross, false);
            x = self.residual(x, c);
            let h = self.ln(x, l.ln3);
            let f = self.ffn(h, l.ffn);
            x = self.residual(x, f);
        }
        self.ln(x, self.lay.dec_ln)
    }

    pub fn output_logits(&mut self, h: Src) -> Src {
        let w = self.lay.out_w.unwrap_or(self.lay.embed);
        let z = self.tape.matmul_bt(h, Src::Param(w));
        self.tape.add_row(z, Src::Param(self.lay.out_b))
    }

    /// Masked-token head on the encoder states at `positions`; the output
    /// projection is always the (shared) embedding matrix.
    pub fn mlm_logits(&mut self, enc: Src, positions: &[usize]) -> Src {
        let t = &mut *self.tape;
        let g = t.gather(enc, positions, 1.0);
        let h = t.matmul(g, Src::Param(self.lay.mlm_dense));
        let h = t.add_row(h, Src::Param(self.lay.mlm_dense_b));
        let h = t.gelu(h);
        let h = self.ln(h, self.lay.mlm_ln);
        let t = &mut *self.tape;
        let z = t.matmul_bt(h, Src::Param(self.lay.embed));
        t.add_row(z, Src::Param(self.lay.mlm_b))
    }

    /// Summed cross-entropy of the teacher-forced target.
    pub fn seq2seq_loss(&mut self, ex: &TrainingExample) -> Src {
        let mem = self.encode(&ex.input_ids);
        let dec_in = decoder_input(&ex.target_ids);
        let h = self.decode(&dec_in, mem);
        let z = self.output_logits(h);
        let targets: Vec<usize> = ex.target_ids.iter().map(|&t| t as usize).collect();
        self.tape.cross_entropy_sum(z, &targets)
    }

    /// Summed cross-entropy over masked positions.
    pub fn mlm_loss(&mut self, ex: &TrainingExample) -> Src {
        let enc = self.encode(&ex.input_ids);
        let z = self.mlm_logits(enc, &ex.mask_positions);
        let targets: Vec<usize> = ex.target_ids.iter().map(|&t| t as usize).collect();
        self.tape.cross_entropy_sum(z, &targets)
    }
}

/// Decoder input for teacher forcing: PAD as the start token, then the target
/// shifted right by one.
pub(crate) fn decoder_input(target: &[u32]) -> Vec<u32> {
    std::iter::once(PAD_ID).chain(target.iter().copied().take(target.len().saturating_sub(1))).collect()
}

/// Read-only inference view of a parameter set.
pub struct Transformer<'a> {
    params: &'a ModelParameters,
    lay: Layout,
}

impl<'a> Transformer<'a> {
    pub fn new(params: &'a ModelParameters) -> Self {
        Self {
            params,
            lay: params.layout(),
        }
    }

    pub fn params(&self) -> &ModelParameters {
        self.params
    }

    fn p(&self, i: usize) -> &Array2<f64> {
        &self.params.tensors[i]
    }

    pub fn encode(&self, input_ids: &[u32]) -> Array2<f64> {
        let mut tape = Tape::new(&self.params.tensors, false);
        let mut g = Graph::new(&mut tape, &self.lay, &self.params.config, None);
        let out = g.encode(input_ids);
        tape.take_value(out)
    }

    /// Full-sequence decoder logits (one row per position of `dec_in`).
    pub fn logits(&self, input_ids: &[u32], dec_in: &[u32]) -> Array2<f64> {
        let mut tape = Tape::new(&self.params.tensors, false);
        let mut g = Graph::new(&mut tape, &self.lay, &self.params.config, None);
        let mem = g.encode(input_ids);
        let h = g.decode(dec_in, mem);
        let z = g.output_logits(h);
        tape.take_value(z)
    }

    pub fn mlm_logits(&self, input_ids: &[u32], positions: &[usize]) -> Array2<f64> {
        let mut tape = Tape::new(&self.params.tensors, false);
        let mut g = Graph::new(&mut tape, &self.lay, &self.params.config, None);
        let enc = g.encode(input_ids);
        let z = g.mlm_logits(enc, positions);
        tape.take_value(z)
    }

    /// Starts cached step-by-step decoding against one encoded input.
    pub fn incremental(&self, input_ids: &[u32]) -> IncrementalDecoder<'_, 'a> {
        let memory = self.encode(input_ids);
        let cross = self
            .lay
            .dec
            .iter()
            .map(|l| (memory.dot(self.p(l.cross.wk)), memory.dot(self.p(l.cross.wv))))
            .collect();
        IncrementalDecoder { model: self, cross }
    }

    fn ln_row(&self, x: &Array2<f64>, ln: Ln) -> Array2<f64> {
        let (xhat, _) = layer_norm_rows(x);
        xhat * self.p(ln.g) + self.p(ln.b)
    }

    fn attend(&self, q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, wo: usize) -> Array2<f64> {
        let h = self.params.config.n_heads;
        let dk = self.params.config.d_model / h;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut ctx = Array2::zeros(q.raw_dim());
        for i in 0..h {
            let cols = s![.., i * dk..(i + 1) * dk];
            let mut sc = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            softmax_rows(&mut sc, None);
            ctx.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
        }
        ctx.dot(self.p(wo))
    }

    fn ffn_row(&self, x: &Array2<f64>, f: Ffn) -> Array2<f64> {
        let h = (x.dot(self.p(f.w1)) + self.p(f.b1)).mapv(gelu);
        h.dot(self.p(f.w2)) + self.p(f.b2)
    }
}

/// Self-attention keys and values seen so far, one pair per decoder layer.
#[derive(Debug, Clone)]
pub struct DecoderState {
    kv: Vec<(Array2<f64>, Array2<f64>)>,
    len: usize,
}

impl DecoderState {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

pub struct IncrementalDecoder<'m, 'a> {
    model: &'m Transformer<'a>,
    cross: Vec<(Array2<f64>, Array2<f64>)>,
}

impl IncrementalDecoder<'_, '_> {
    pub fn start(&self) -> DecoderState {
        let d = self.model.params.config.d_model;
        DecoderState {
            kv: self.cross.iter().map(|_| (Array2::zeros((0, d)), Array2::zeros((0, d)))).collect(),
            len: 0,
        }
    }

    /// Feeds `token` at the next position and returns the logits for the
    /// position after it.
    pub fn step(&self, state: &mut DecoderState, token: u32) -> Vec<f64> {
        let m = self.model;
        let cfg = &m.params.config;
        let d = cfg.d_model;
        let pe = positions(state.len + 1, d);
        let mut x = (&m.p(m.lay.embed).row(token as usize) * (d as f64).sqrt() + pe.row(state.len)).insert_axis(Axis(0));
        for (li, l) in m.lay.dec.iter().enumerate() {
            let h = m.ln_row(&x, l.ln1);
            let q = h.dot(m.p(l.self_attn.wq));
            let (ks, vs) = &mut state.kv[li];
            *ks = ndarray::concatenate(Axis(0), &[ks.view(), h.dot(m.p(l.self_attn.wk)).view()]).expect("same width");
            *vs = ndarray::concatenate(Axis(0), &[vs.view(), h.dot(m.p(l.self_attn.wv)).view()]).expect("same width");
            x = x + m.attend(&q, ks, vs, l.self_attn.wo);
            let h = m.ln_row(&x, l.ln2);
            let q = h.dot(m.p(l.cross.wq));
            let (ck, cv) = &self.cross[li];
            x = x + m.attend(&q, ck, cv, l.cross.wo);
            let h = m.ln_row(&x, l.ln3);
            x = x + m.ffn_row(&h, l.ffn);
        }
        state.len += 1;
        let h = m.ln_row(&x, m.lay.dec_ln);
        let w = m.p(m.lay.out_w.unwrap_or(m.lay.embed));
        let z = h.dot(&w.t()) + m.p(m.lay.out_b);
        z.row(0).to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(tie: bool) -> ModelParameters {
        let cfg = ModelConfig {
            d_model: 8,
            n_heads: 2,
            d_ff: 12,
            n_layers_enc: 2,
            n_layers_dec: 2,
            tie_embeddings: tie,
            init_std: 0.3,
            seed: 5,
            ..Default::default()
        };
        ModelParameters::init(&cfg, 13).unwrap()
    }

    #[test]
    fn incremental_matches_full_pass() {
        for tie in [true, false] {
            let p = tiny(tie);
            let m = Transformer::new(&p);
            let input = [5, 6, 7, 8, 1];
            let dec_in = [0, 9, 10, 11, 12];
            let full = m.logits(&input, &dec_in);
            let inc = m.incremental(&input);
            let mut st = inc.start();
            for (t, &tok) in dec_in.iter().enumerate() {
                let row = inc.step(&mut st, tok);
                for (a, b) in row.iter().zip(full.row(t)) {
                    assert!((a - b).abs() < 1e-9, "position {t}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn decoder_is_causal() {
        let p = tiny(true);
        let m = Transformer::new(&p);
        let input = [5, 6, 7, 1];
        let a = m.logits(&input, &[0, 9, 10, 11]);
        let b = m.logits(&input, &[0, 9, 12, 5]);
        for t in 0..2 {
            assert_eq!(a.row(t), b.row(t));
        }
        assert_ne!(a.row(2), b.row(2));
    }

    #[test]
    fn decoder_input_shifts_right() {
        assert_eq!(decoder_input(&[7, 8, 1]), [PAD_ID, 7, 8]);
        assert_eq!(decoder_input(&[1]), [PAD_ID]);
    }

    #[test]
    fn positions_table() {
        let pe = positions(3, 4);
        assert_eq!(pe.row(0).to_vec(), vec![0.0, 1.0, 0.0, 1.0]);
        assert!((pe[[1, 0]] - 1f64.sin()).abs() < 1e-15);
        assert!((pe[[1, 2]] - (0.01f64).sin()).abs() < 1e-15);
    }
}
