//! Earth mover's distance between weighted sets of hidden vectors.
//!
//! Ground distance is the per-coordinate mean squared error. The distance is
//! the optimal transport objective divided by the total flow, and its
//! gradient treats the optimal flow as constant (envelope theorem).

mod loss;
mod solver;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

pub use loss::{alignment_loss, regularization_loss, LayerEmd};
pub use solver::{solve_transport, TransportPlan};

/// Weighted point set; `points` is `[m x d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Tensor,
    weights: Vec<f64>,
}

impl PointCloud {
    /// Uniform weights `1/m`.
    pub fn uniform(points: Tensor) -> Result<Self> {
        let m = Self::rows_of(&points)?;
        Ok(Self {
            points,
            weights: vec![1.0 / m as f64; m],
        })
    }

    pub fn weighted(points: Tensor, weights: Vec<f64>) -> Result<Self> {
        let m = Self::rows_of(&points)?;
        if weights.len() != m {
            return Err(Error::Dimension {
                op: "point_cloud",
                lhs: points.shape().to_vec(),
                rhs: vec![weights.len()],
            });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Config("point weights must be positive".into()));
        }
        Ok(Self { points, weights })
    }

    fn rows_of(points: &Tensor) -> Result<usize> {
        match points.shape() {
            [m, _] if *m >= 1 => Ok(*m),
            s => Err(Error::Dimension {
                op: "point_cloud",
                lhs: s.to_vec(),
                rhs: vec![2],
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.shape()[1]
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// `d_xy = (1/d) sum_k (a_xk - b_yk)^2`, row-major `[m x n]`.
pub fn ground_distance(p: &PointCloud, q: &PointCloud) -> Result<Tensor> {
    if p.dim() != q.dim() {
        return Err(Error::Dimension {
            op: "ground_distance",
            lhs: p.points.shape().to_vec(),
            rhs: q.points.shape().to_vec(),
        });
    }
    let d = p.dim();
    let (m, n) = (p.len(), q.len());
    let mut out = Vec::with_capacity(m * n);
    for x in 0..m {
        let a = p.points.row(x);
        for y in 0..n {
            let b = q.points.row(y);
            let s: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
            out.push(s / d as f64);
        }
    }
    Tensor::new(vec![m, n], out)
}

/// EMD together with the optimal plan that realizes it.
pub fn emd_with_plan(p: &PointCloud, q: &PointCloud) -> Result<(f64, TransportPlan)> {
    let cost = ground_distance(p, q)?;
    let plan = solve_transport(cost.data(), &p.weights, &q.weights)?;
    Ok((plan.normalized_cost(), plan))
}

pub fn emd(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    emd_with_plan(p, q).map(|(v, _)| v)
}

/// Gradients of the EMD with respect to every coordinate of `p` and `q`,
/// holding the optimal `plan` fixed.
pub fn emd_gradient(plan: &TransportPlan, p: &PointCloud, q: &PointCloud) -> (Vec<f64>, Vec<f64>) {
    flow_gradient(plan, p.points.data(), q.points.data(), p.dim())
}

fn flow_gradient(plan: &TransportPlan, a: &[f64], b: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let (m, n) = (plan.rows, plan.cols);
    let scale = 2.0 / (d as f64 * plan.total_flow);
    let mut ga = vec![0.0; m * d];
    let mut gb = vec![0.0; n * d];
    for x in 0..m {
        for y in 0..n {
            let f = plan.flow_at(x, y);
            if f == 0.0 {
                continue;
            }
            for k in 0..d {
                let diff = f * scale * (a[x * d + k] - b[y * d + k]);
                ga[x * d + k] += diff;
                gb[y * d + k] -= diff;
            }
        }
    }
    (ga, gb)
}

/// Differentiable EMD between the rows of `a` `[m x d]` and `b` `[n x d]`
/// with uniform weights. Returns the scalar node and the plan used.
pub fn emd_var(g: &mut Graph, a: Var, b: Var) -> Result<(Var, TransportPlan)> {
    let p = PointCloud::uniform(g.value(a).clone())?;
    let q = PointCloud::uniform(g.value(b).clone())?;
    let (value, plan) = emd_with_plan(&p, &q)?;
    let d = p.dim();
    let captured = plan.clone();
    let node = g.custom(
        &[a, b],
        Tensor::scalar(value),
        Box::new(move |adj, inputs| {
            let (ga, gb) = flow_gradient(&captured, inputs[0].data(), inputs[1].data(), d);
            let s = adj[0];
            vec![
                Some(ga.into_iter().map(|v| v * s).collect()),
                Some(gb.into_iter().map(|v| v * s).collect()),
            ]
        }),
    );
    Ok((node, plan))
}

/// Solver cross-check record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransportDump {
    pub cost: Vec<Vec<f64>>,
    pub flow: Vec<Vec<f64>>,
    pub objective: f64,
}

impl TransportDump {
    pub fn new(cost: &Tensor, plan: &TransportPlan) -> Self {
        Self {
            cost: (0..plan.rows).map(|x| cost.row(x).to_vec()).collect(),
            flow: plan.flow.chunks(plan.cols).map(<[f64]>::to_vec).collect(),
            objective: plan.objective,
        }
    }
}
