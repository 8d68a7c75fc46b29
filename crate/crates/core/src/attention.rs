use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

pub struct AttentionOutput {
    /// `[B, Tq, heads * dh]`, heads concatenated in order.
    pub context: Var,
    /// `[B * heads, Tq, Tk]` attention weights.
    pub weights: Var,
}

/// Scaled dot-product attention over `heads` column blocks of `q` `[B,Tq,D]`
/// and `k`, `v` `[B,Tk,D]`. Keys whose `key_mask` entry (`[B*Tk]`) is false
/// get zero weight. Scores are scaled by `1/sqrt(D/heads)`.
pub fn multi_head_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    key_mask: &[bool],
    heads: usize,
) -> Result<AttentionOutput> {
    let (sq, sk) = (g.shape(q).to_vec(), g.shape(k).to_vec());
    if sq.len() != 3 || sk.len() != 3 || sq[0] != sk[0] || sq[2] != sk[2] || g.shape(v) != sk.as_slice() {
        return Err(Error::Dimension {
            op: "attention",
            lhs: sq,
            rhs: sk,
        });
    }
    let (b, tq, d, tk) = (sq[0], sq[1], sq[2], sk[1]);
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("{heads} heads do not divide width {d}")));
    }
    if key_mask.len() != b * tk {
        return Err(Error::Dimension {
            op: "attention mask",
            lhs: vec![b, tk],
            rhs: vec![key_mask.len()],
        });
    }
    let dh = d / heads;
    let split = |g: &mut Graph, x: Var, t: usize| -> Result<Var> {
        let x = g.reshape(x, &[b, t, heads, dh])?;
        let x = g.swap_axes12(x)?;
        g.reshape(x, &[b * heads, t, dh])
    };
    let qh = split(g, q, tq)?;
    let kh = split(g, k, tk)?;
    let vh = split(g, v, tk)?;
    let scores = g.batch_matmul(qh, kh, true)?;
    let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
    let mut mask = Vec::with_capacity(b * heads * tq * tk);
    for bi in 0..b {
        let row = &key_mask[bi * tk..(bi + 1) * tk];
        for _ in 0..heads * tq {
            mask.extend_from_slice(row);
        }
    }
    let weights = g.softmax_rows(scores, Some(&mask))?;
    let ctx = g.batch_matmul(weights, vh, false)?;
    let ctx = g.reshape(ctx, &[b, heads, tq, dh])?;
    let ctx = g.swap_axes12(ctx)?;
    let context = g.reshape(ctx, &[b, tq, d])?;
    Ok(AttentionOutput { context, weights })
}

/// `x W + b` over the last axis.
pub fn affine(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.linear(x, w)?;
    g.add_row_bias(y, b)
}
