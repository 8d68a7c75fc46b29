//! Script-specific pre-norm transformer encoder.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attention::{affine, multi_head_attention};
use crate::checkpoint::{BoundParams, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

pub const INIT_STD: f64 = 0.02;

/// Name under which the frozen reference copy of the Devanagari encoder lives.
pub const FROZEN_PREFIX: &str = "frozen";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        Ok(())
    }

    /// Fresh parameters under `prefix/`: N(0, 0.02) weights, zero biases,
    /// unit layer-norm gains.
    pub fn init(&self, prefix: &str, rng: &mut impl Rng) -> Result<ParamStore> {
        self.validate()?;
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut gauss = |shape: &[usize]| {
            let n = shape.iter().product();
            let data = (0..n).map(|_| normal.sample(rng)).collect();
            Tensor::new(shape.to_vec(), data).expect("shape matches data")
        };
        let (d, f) = (self.d_model, self.d_ff);
        let mut store = ParamStore::new();
        store.insert(format!("{prefix}/tok_emb"), gauss(&[self.vocab_size, d]));
        store.insert(format!("{prefix}/pos_emb"), gauss(&[self.max_len, d]));
        for l in 0..self.num_layers {
            let p = format!("{prefix}/layer{l}");
            store.insert(format!("{p}/ln1_g"), Tensor::filled(&[d], 1.0));
            store.insert(format!("{p}/ln1_b"), Tensor::zeros(&[d]));
            for w in ["wq", "wk", "wv", "wo"] {
                store.insert(format!("{p}/{w}"), gauss(&[d, d]));
                store.insert(format!("{p}/b{}", &w[1..]), Tensor::zeros(&[d]));
            }
            store.insert(format!("{p}/ln2_g"), Tensor::filled(&[d], 1.0));
            store.insert(format!("{p}/ln2_b"), Tensor::zeros(&[d]));
            store.insert(format!("{p}/ff1_w"), gauss(&[d, f]));
            store.insert(format!("{p}/ff1_b"), Tensor::zeros(&[f]));
            store.insert(format!("{p}/ff2_w"), gauss(&[f, d]));
            store.insert(format!("{p}/ff2_b"), Tensor::zeros(&[d]));
        }
        store.insert(format!("{prefix}/lnf_g"), Tensor::filled(&[d], 1.0));
        store.insert(format!("{prefix}/lnf_b"), Tensor::zeros(&[d]));
        Ok(store)
    }
}

/// Residual stream after the embeddings (`hidden[0]`) and after each block;
/// the last entry additionally passes through the final layer norm.
#[derive(Clone, Debug)]
pub struct EncoderStates {
    pub hidden: Vec<Var>,
    pub mask: Vec<bool>,
    pub batch: usize,
    pub seq_len: usize,
}

impl EncoderStates {
    pub fn num_layers(&self) -> usize {
        self.hidden.len() - 1
    }

    pub fn last(&self) -> Var {
        *self.hidden.last().expect("at least the embedding layer")
    }

    /// Flat `[B*T]` row indices of example `ex`'s unmasked positions.
    pub fn positions(&self, ex: usize) -> Vec<usize> {
        let base = ex * self.seq_len;
        (0..self.seq_len)
            .filter(|&t| self.mask[base + t])
            .map(|t| base + t)
            .collect()
    }
}

/// Runs the encoder stored under `prefix/` on a row-major `[batch x seq_len]`
/// id matrix. Masked positions are excluded as attention keys everywhere.
#[allow(clippy::too_many_arguments)]
pub fn forward(
    g: &mut Graph,
    params: &BoundParams,
    prefix: &str,
    cfg: &EncoderConfig,
    ids: &[usize],
    mask: &[bool],
    batch: usize,
    seq_len: usize,
) -> Result<EncoderStates> {
    if ids.len() != batch * seq_len || mask.len() != ids.len() {
        return Err(Error::Dimension {
            op: "encoder input",
            lhs: vec![batch, seq_len],
            rhs: vec![ids.len(), mask.len()],
        });
    }
    if seq_len > cfg.max_len {
        return Err(Error::Config(format!("sequence length {seq_len} exceeds max_len {}", cfg.max_len)));
    }
    let d = cfg.d_model;
    let p = |name: &str| params.get(&format!("{prefix}/{name}"));

    let tok = g.embedding(p("tok_emb")?, ids)?;
    let pos_ids: Vec<usize> = (0..batch).flat_map(|_| 0..seq_len).collect();
    let pos = g.embedding(p("pos_emb")?, &pos_ids)?;
    let emb = g.add(tok, pos)?;
    let mut h = g.reshape(emb, &[batch, seq_len, d])?;
    let mut hidden = vec![h];

    for l in 0..cfg.num_layers {
        let lp = |name: &str| p(&format!("layer{l}/{name}"));
        let x = g.layer_norm(h, lp("ln1_g")?, lp("ln1_b")?)?;
        let q = affine(g, x, lp("wq")?, lp("bq")?)?;
        let k = affine(g, x, lp("wk")?, lp("bk")?)?;
        let v = affine(g, x, lp("wv")?, lp("bv")?)?;
        let att = multi_head_attention(g, q, k, v, mask, cfg.num_heads)?;
        let out = affine(g, att.context, lp("wo")?, lp("bo")?)?;
        h = g.add(h, out)?;

        let x = g.layer_norm(h, lp("ln2_g")?, lp("ln2_b")?)?;
        let f = affine(g, x, lp("ff1_w")?, lp("ff1_b")?)?;
        let f = g.gelu(f);
        let f = affine(g, f, lp("ff2_w")?, lp("ff2_b")?)?;
        h = g.add(h, f)?;
        if l + 1 == cfg.num_layers {
            h = g.layer_norm(h, p("lnf_g")?, p("lnf_b")?)?;
        }
        hidden.push(h);
    }
    Ok(EncoderStates {
        hidden,
        mask: mask.to_vec(),
        batch,
        seq_len,
    })
}

/// Copy of the Devanagari encoder's parameters, re-rooted under
/// [`FROZEN_PREFIX`]. Bind it with `trainable = false`.
pub fn snapshot_frozen(params: &ParamStore) -> ParamStore {
    params.rename_prefix(crate::text::Script::Deva.prefix(), FROZEN_PREFIX)
}
