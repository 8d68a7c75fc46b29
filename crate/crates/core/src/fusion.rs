//! Cross-attention fusion of two encoders, pooling, classifier and loss.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attention::multi_head_attention;
use crate::checkpoint::{BoundParams, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};
use crate::text::NUM_CLASSES;

pub const CE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Cls,
}

/// N(0, 1/fan_in) for a `[fan_in, fan_out]` matrix.
fn gaussian(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let normal = Normal::new(0.0, 1.0 / (shape[0] as f64).sqrt()).expect("valid std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| normal.sample(rng)).collect()).expect("shape matches")
}

/// `fusion/head{i}/{wq,wk,wv}` of shape `[d, d/heads]` and `fusion/wo` `[d, d]`,
/// drawn with fan-in scaling.
pub fn init_fusion(d_model: usize, heads: usize, rng: &mut impl Rng) -> Result<ParamStore> {
    if heads == 0 || !d_model.is_multiple_of(heads) {
        return Err(Error::Config(format!("{heads} heads do not divide d_model {d_model}")));
    }
    let mut store = ParamStore::new();
    for i in 0..heads {
        for w in ["wq", "wk", "wv"] {
            store.insert(format!("fusion/head{i}/{w}"), gaussian(rng, &[d_model, d_model / heads]));
        }
    }
    store.insert("fusion/wo", gaussian(rng, &[d_model, d_model]));
    Ok(store)
}

/// `cls/w` `[d, 3]` and zero `cls/b`.
pub fn init_classifier(d_model: usize, rng: &mut impl Rng) -> ParamStore {
    let mut store = ParamStore::new();
    store.insert("cls/w", gaussian(rng, &[d_model, NUM_CLASSES]));
    store.insert("cls/b", Tensor::zeros(&[NUM_CLASSES]));
    store
}

pub struct CrossAttention {
    /// `[B, T_A, d]`
    pub fused: Var,
    /// `[B * heads, T_A, T_B]`
    pub weights: Var,
}

/// `concat_i(softmax(H_A W_i^Q (H_B W_i^K)^T / sqrt(d/N)) H_B W_i^V) W^O`,
/// with B's masked positions removed from the keys.
pub fn cross_attend(
    g: &mut Graph,
    h_a: Var,
    h_b: Var,
    mask_b: &[bool],
    params: &BoundParams,
    heads: usize,
) -> Result<CrossAttention> {
    let (sa, sb) = (g.shape(h_a).to_vec(), g.shape(h_b).to_vec());
    if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[2] {
        return Err(Error::Dimension {
            op: "cross_attend",
            lhs: sa,
            rhs: sb,
        });
    }
    let stacked = |g: &mut Graph, w: &str| -> Result<Var> {
        let parts = (0..heads)
            .map(|i| params.get(&format!("fusion/head{i}/{w}")))
            .collect::<Result<Vec<_>>>()?;
        g.concat_last(&parts)
    };
    let wq = stacked(g, "wq")?;
    let wk = stacked(g, "wk")?;
    let wv = stacked(g, "wv")?;
    let q = g.linear(h_a, wq)?;
    let k = g.linear(h_b, wk)?;
    let v = g.linear(h_b, wv)?;
    let att = multi_head_attention(g, q, k, v, mask_b, heads)?;
    let fused = g.linear(att.context, params.get("fusion/wo")?)?;
    Ok(CrossAttention {
        fused,
        weights: att.weights,
    })
}

/// `[B, T, d] -> [B, d]` by mean over unmasked positions, or by taking position 0.
pub fn pool(g: &mut Graph, x: Var, mask: &[bool], pooling: Pooling) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() != 3 || mask.len() != s[0] * s[1] {
        return Err(Error::Dimension {
            op: "pool",
            lhs: s,
            rhs: vec![mask.len()],
        });
    }
    let (b, t, d) = (s[0], s[1], s[2]);
    let mut weights = vec![0.0; b * t];
    for r in 0..b {
        let row = &mask[r * t..(r + 1) * t];
        match pooling {
            Pooling::Mean => {
                let n = row.iter().filter(|&&m| m).count();
                if n == 0 {
                    return Err(Error::DegenerateRow { op: "pool", row: r });
                }
                for (w, &m) in weights[r * t..(r + 1) * t].iter_mut().zip(row) {
                    if m {
                        *w = 1.0 / n as f64;
                    }
                }
            }
            Pooling::Cls => {
                if !row[0] {
                    return Err(Error::DegenerateRow { op: "pool", row: r });
                }
                weights[r * t] = 1.0;
            }
        }
    }
    let w = g.constant(Tensor::new(vec![b, 1, t], weights)?);
    let pooled = g.batch_matmul(w, x, false)?;
    g.reshape(pooled, &[b, d])
}

/// Linear layer `cls/w`, `cls/b` then softmax: `[B, d] -> [B, 3]`.
pub fn classify(g: &mut Graph, pooled: Var, params: &BoundParams) -> Result<Var> {
    let logits = g.matmul(pooled, params.get("cls/w")?)?;
    let logits = g.add_row_bias(logits, params.get("cls/b")?)?;
    g.softmax_rows(logits, None)
}

pub fn pool_and_classify(
    g: &mut Graph,
    fused: Var,
    mask_a: &[bool],
    params: &BoundParams,
    pooling: Pooling,
) -> Result<Var> {
    let pooled = pool(g, fused, mask_a, pooling)?;
    classify(g, pooled, params)
}

/// Mean of `-ln(max(p_true, 1e-12))`.
pub fn ce_loss(g: &mut Graph, probs: Var, labels: &[usize]) -> Result<Var> {
    g.cross_entropy(probs, labels, CE_EPS)
}
