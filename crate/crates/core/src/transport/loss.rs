use super::{emd_var, TransportPlan};
use crate::encoder::EncoderStates;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

/// Batch-mean EMD between one layer of two encoders.
pub struct LayerEmd {
    pub value: Var,
    pub per_example: Vec<f64>,
    pub plans: Vec<TransportPlan>,
}

/// Script-alignment loss: mean over the batch of the EMD between the
/// layer-`layer` vectors of each example's non-PAD positions (CLS included).
pub fn alignment_loss(g: &mut Graph, a: &EncoderStates, b: &EncoderStates, layer: usize) -> Result<LayerEmd> {
    layer_emd(g, a, b, layer)
}

/// Regularization loss between the live encoder and its frozen snapshot run
/// on the same input. The snapshot's states are graph constants, so no
/// gradient reaches it.
pub fn regularization_loss(
    g: &mut Graph,
    live: &EncoderStates,
    frozen: &EncoderStates,
    layer: usize,
) -> Result<LayerEmd> {
    layer_emd(g, live, frozen, layer)
}

fn layer_emd(g: &mut Graph, a: &EncoderStates, b: &EncoderStates, layer: usize) -> Result<LayerEmd> {
    let layers = a.num_layers();
    if layer == 0 || layer > layers || b.num_layers() != layers {
        return Err(Error::Config(format!(
            "alignment layer {layer} outside 1..={layers}"
        )));
    }
    if a.batch != b.batch {
        return Err(Error::Dimension {
            op: "layer_emd",
            lhs: vec![a.batch],
            rhs: vec![b.batch],
        });
    }
    let (ha, hb) = (a.hidden[layer], b.hidden[layer]);
    let mut total: Option<Var> = None;
    let mut per_example = Vec::with_capacity(a.batch);
    let mut plans = Vec::with_capacity(a.batch);
    for ex in 0..a.batch {
        let pa = g.gather_rows(ha, &a.positions(ex))?;
        let pb = g.gather_rows(hb, &b.positions(ex))?;
        let (e, plan) = emd_var(g, pa, pb)?;
        per_example.push(g.value(e).item()?);
        plans.push(plan);
        total = Some(match total {
            None => e,
            Some(t) => g.add(t, e)?,
        });
    }
    let total = total.ok_or_else(|| Error::Config("empty batch".into()))?;
    let value = g.scale(total, 1.0 / a.batch as f64);
    Ok(LayerEmd {
        value,
        per_example,
        plans,
    })
}
