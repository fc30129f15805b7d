use ndarray::Array2;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, ModelError};
use crate::util::derived_rng;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Ln {
    pub g: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Attn {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Ffn {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncLayer {
    pub ln1: Ln,
    pub attn: Attn,
    pub ln2: Ln,
    pub ffn: Ffn,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DecLayer {
    pub ln1: Ln,
    pub self_attn: Attn,
    pub ln2: Ln,
    pub cross: Attn,
    pub ln3: Ln,
    pub ffn: Ffn,
}

/// Indices of every named tensor inside [`ModelParameters::tensors`].
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub embed: usize,
    pub enc: Vec<EncLayer>,
    pub enc_ln: Ln,
    pub dec: Vec<DecLayer>,
    pub dec_ln: Ln,
    pub out_w: Option<usize>,
    pub out_b: usize,
    pub mlm_dense: usize,
    pub mlm_dense_b: usize,
    pub mlm_ln: Ln,
    pub mlm_b: usize,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

struct Builder {
    specs: Vec<(String, (usize, usize), Init)>,
}

impl Builder {
    fn add(&mut self, name: String, shape: (usize, usize), init: Init) -> usize {
        self.specs.push((name, shape, init));
        self.specs.len() - 1
    }

    fn ln(&mut self, prefix: &str, d: usize) -> Ln {
        Ln {
            g: self.add(format!("{prefix}.g"), (1, d), Init::Ones),
            b: self.add(format!("{prefix}.b"), (1, d), Init::Zeros),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> Attn {
        Attn {
            wq: self.add(format!("{prefix}.wq"), (d, d), Init::Normal),
            wk: self.add(format!("{prefix}.wk"), (d, d), Init::Normal),
            wv: self.add(format!("{prefix}.wv"), (d, d), Init::Normal),
            wo: self.add(format!("{prefix}.wo"), (d, d), Init::Normal),
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, ff: usize) -> Ffn {
        Ffn {
            w1: self.add(format!("{prefix}.w1"), (d, ff), Init::Normal),
            b1: self.add(format!("{prefix}.b1"), (1, ff), Init::Zeros),
            w2: self.add(format!("{prefix}.w2"), (ff, d), Init::Normal),
            b2: self.add(format!("{prefix}.b2"), (1, d), Init::Zeros),
        }
    }
}

fn plan(cfg: &ModelConfig, vocab_size: usize) -> (Layout, Vec<(String, (usize, usize), Init)>) {
    let d = cfg.d_model;
    let mut b = Builder { specs: Vec::new() };
    let embed = b.add("embed".into(), (vocab_size, d), Init::Normal);
    let enc = (0..cfg.n_layers_enc)
        .map(|i| EncLayer {
            ln1: b.ln(&format!("enc{i}.ln1"), d),
            attn: b.attn(&format!("enc{i}.attn"), d),
            ln2: b.ln(&format!("enc{i}.ln2"), d),
            ffn: b.ffn(&format!("enc{i}.ffn"), d, cfg.d_ff),
        })
        .collect();
    let enc_ln = b.ln("enc.ln", d);
    let dec = (0..cfg.n_layers_dec)
        .map(|i| DecLayer {
            ln1: b.ln(&format!("dec{i}.ln1"), d),
            self_attn: b.attn(&format!("dec{i}.self"), d),
            ln2: b.ln(&format!("dec{i}.ln2"), d),
            cross: b.attn(&format!("dec{i}.cross"), d),
            ln3: b.ln(&format!("dec{i}.ln3"), d),
            ffn: b.ffn(&format!("dec{i}.ffn"), d, cfg.d_ff),
        })
        .collect();
    let dec_ln = b.ln("dec.ln", d);
    let out_w = (!cfg.tie_embeddings).then(|| b.add("out.w".into(), (vocab_size, d), Init::Normal));
    let out_b = b.add("out.b".into(), (1, vocab_size), Init::Zeros);
    let mlm_dense = b.add("mlm.dense".into(), (d, d), Init::Normal);
    let mlm_dense_b = b.add("mlm.dense_b".into(), (1, d), Init::Zeros);
    let mlm_ln = b.ln("mlm.ln", d);
    let mlm_b = b.add("mlm.b".into(), (1, vocab_size), Init::Zeros);
    let layout = Layout {
        embed,
        enc,
        enc_ln,
        dec,
        dec_ln,
        out_w,
        out_b,
        mlm_dense,
        mlm_dense_b,
        mlm_ln,
        mlm_b,
    };
    (layout, b.specs)
}

/// Every weight of the model, in a fixed order with stable names.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub names: Vec<String>,
    pub tensors: Vec<Array2<f64>>,
}

impl ModelParameters {
    /// Normal(0, init_std) weights, unit LayerNorm gains, zero biases.
    pub fn init(cfg: &ModelConfig, vocab_size: usize) -> Result<Self, ModelError> {
        cfg.validate()?;
        if vocab_size == 0 {
            return Err(ModelError::InvalidConfig("vocabulary is empty".into()));
        }
        let (_, specs) = plan(cfg, vocab_size);
        let mut rng = derived_rng(cfg.seed, &[0x494e_4954]);
        let normal = Normal::new(0.0, cfg.init_std).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for (name, shape, init) in specs {
            let t = match init {
                Init::Zeros => Array2::zeros(shape),
                Init::Ones => Array2::ones(shape),
                Init::Normal => Array2::from_shape_simple_fn(shape, || normal.sample(&mut rng)),
            };
            names.push(name);
            tensors.push(t);
        }
        Ok(Self {
            config: cfg.clone(),
            vocab_size,
            names,
            tensors,
        })
    }

    pub(crate) fn layout(&self) -> Layout {
        plan(&self.config, self.vocab_size).0
    }

    /// Checks names and shapes against what the config implies, and that
    /// every value is finite.
    pub fn validate(&self) -> Result<(), ModelError> {
        self.config.validate()?;
        let (_, specs) = plan(&self.config, self.vocab_size);
        if specs.len() != self.tensors.len() || specs.len() != self.names.len() {
            return Err(ModelError::Checkpoint(format!("expected {} tensors, found {}", specs.len(), self.tensors.len())));
        }
        for ((name, shape, _), (n, t)) in specs.iter().zip(self.names.iter().zip(&self.tensors)) {
            if name != n || t.dim() != *shape {
                return Err(ModelError::Checkpoint(format!("tensor {n} {:?} does not match {name} {shape:?}", t.dim())));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::Checkpoint(format!("tensor {n} has non-finite values")));
            }
        }
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Array2<f64>> {
        self.tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect()
    }

    /// Same architecture, different dropout or decoding settings.
    pub fn with_runtime_config(mut self, cfg: &ModelConfig) -> Result<Self, ModelError> {
        let arch = |c: &ModelConfig| (c.d_model, c.n_layers_enc, c.n_layers_dec, c.n_heads, c.d_ff, c.tie_embeddings);
        if arch(cfg) != arch(&self.config) {
            return Err(ModelError::InvalidConfig("architecture differs from the checkpoint".into()));
        }
        cfg.validate()?;
        self.config = cfg.clone();
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            n_layers_enc: 1,
            n_layers_dec: 1,
            ..Default::default()
        }
    }

    #[test]
    fn init_is_seeded_and_shaped() {
        let a = ModelParameters::init(&tiny(), 11).unwrap();
        let b = ModelParameters::init(&tiny(), 11).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        assert_eq!(a.tensors[a.layout().embed].dim(), (11, 8));
        let c = ModelParameters::init(&ModelConfig { seed: 1, ..tiny() }, 11).unwrap();
        assert_ne!(a.tensors[0], c.tensors[0]);
    }

    #[test]
    fn untied_adds_output_matrix() {
        let tied = ModelParameters::init(&tiny(), 11).unwrap();
        let untied = ModelParameters::init(&ModelConfig { tie_embeddings: false, ..tiny() }, 11).unwrap();
        assert_eq!(untied.tensors.len(), tied.tensors.len() + 1);
        assert!(untied.layout().out_w.is_some());
    }

    #[test]
    fn runtime_config_keeps_architecture() {
        let p = ModelParameters::init(&tiny(), 11).unwrap();
        assert!(p.clone().with_runtime_config(&ModelConfig { dropout: 0.0, ..tiny() }).is_ok());
        assert!(p.with_runtime_config(&ModelConfig { d_model: 16, ..tiny() }).is_err());
    }
}
