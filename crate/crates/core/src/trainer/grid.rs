//! Exhaustive hyperparameter grids and layer sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_loop, RunResult, TrainConfig, TrainData};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Candidate values per hyperparameter. An empty list keeps the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub align_layer: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub index: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub align_layer: usize,
}

impl GridCell {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            align_layer: self.align_layer,
            ..base.clone()
        }
    }
}

impl GridSpec {
    /// Only the alignment layer varies, over `1..=num_layers`.
    pub fn layer_sweep(num_layers: usize) -> Self {
        Self {
            align_layer: (1..=num_layers).collect(),
            ..Self::default()
        }
    }

    /// Cartesian product in alpha, beta, gamma, align_layer order (the last
    /// varies fastest).
    pub fn cells(&self, base: &TrainConfig) -> Result<Vec<GridCell>> {
        let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
        let alphas = or(&self.alpha, base.alpha);
        let betas = or(&self.beta, base.beta);
        let gammas = or(&self.gamma, base.gamma);
        let layers = if self.align_layer.is_empty() {
            vec![base.align_layer]
        } else {
            self.align_layer.clone()
        };
        if self == &GridSpec::default() {
            return Err(Error::Config("grid has no candidate values".into()));
        }
        let mut cells = Vec::new();
        for &alpha in &alphas {
            for &beta in &betas {
                for &gamma in &gammas {
                    for &align_layer in &layers {
                        cells.push(GridCell {
                            index: cells.len(),
                            alpha,
                            beta,
                            gamma,
                            align_layer,
                        });
                    }
                }
            }
        }
        Ok(cells)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub cell: GridCell,
    pub result: std::result::Result<RunResult, String>,
}

/// Runs `run` on every cell, sequentially or on the rayon pool. A failing
/// cell is recorded and does not stop the others. Output is in cell order.
pub fn run_cells<F>(cells: &[GridCell], parallel: bool, run: F) -> Vec<CellOutcome>
where
    F: Fn(&GridCell) -> Result<RunResult> + Sync,
{
    let one = |cell: &GridCell| CellOutcome {
        cell: cell.clone(),
        result: run(cell).map_err(|e| e.to_string()),
    };
    if parallel {
        cells.par_iter().map(one).collect()
    } else {
        cells.iter().map(one).collect()
    }
}

/// Indices of successful outcomes, best validation weighted F1 first; ties
/// keep the lower cell index first.
pub fn rank(outcomes: &[CellOutcome]) -> Vec<usize> {
    let mut ok: Vec<(usize, f64)> = outcomes
        .iter()
        .enumerate()
        .filter_map(|(i, o)| o.result.as_ref().ok().map(|r| (i, r.best_val_f1)))
        .collect();
    ok.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ok.into_iter().map(|(i, _)| i).collect()
}

pub fn grid_search(
    model: &ModelConfig,
    base: &TrainConfig,
    grid: &GridSpec,
    data: &TrainData,
    parallel: bool,
) -> Result<Vec<CellOutcome>> {
    let cells = grid.cells(base)?;
    Ok(run_cells(&cells, parallel, |cell| {
        train_loop(model, &cell.apply(base), data).map(|o| o.result)
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub layer: usize,
    pub val_f1: f64,
    pub test_f1: f64,
}

/// One point per successful cell of a layer sweep, in layer order, and the
/// layer with the highest validation F1 (lowest layer on ties).
pub fn layer_curve(outcomes: &[CellOutcome]) -> (Vec<CurvePoint>, Option<usize>) {
    let mut curve: Vec<CurvePoint> = outcomes
        .iter()
        .filter_map(|o| {
            o.result.as_ref().ok().map(|r| CurvePoint {
                layer: o.cell.align_layer,
                val_f1: r.best_val_f1,
                test_f1: r.test_f1,
            })
        })
        .collect();
    curve.sort_by_key(|p| p.layer);
    let mut best: Option<&CurvePoint> = None;
    for p in &curve {
        if best.is_none_or(|b| p.val_f1 > b.val_f1) {
            best = Some(p);
        }
    }
    let best = best.map(|p| p.layer);
    (curve, best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> TrainConfig {
        TrainConfig::default()
    }

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            architecture: crate::model::Architecture::Fusion {
                query: crate::text::Script::Roman,
            },
            num_layers: 4,
            num_heads: 1,
            d_model: 4,
            d_ff: 4,
            max_len: 8,
            fusion_heads: 1,
            pooling: crate::fusion::Pooling::Mean,
            roman_vocab: 5,
            deva_vocab: 5,
        }
    }

    #[test]
    fn product_size_and_order() {
        let spec = GridSpec {
            beta: vec![0.3, 0.5, 0.7, 1.0],
            gamma: vec![0.3, 0.5, 0.7, 1.0],
            ..GridSpec::default()
        };
        let cells = spec.cells(&base()).unwrap();
        assert_eq!(cells.len(), 16);
        assert_eq!((cells[1].beta, cells[1].gamma), (0.3, 0.5));
        assert!(cells.iter().all(|c| c.alpha == 1.0 && c.align_layer == 1));
        assert!(cells.iter().enumerate().all(|(i, c)| c.index == i));
    }

    #[test]
    fn empty_grid_rejected() {
        assert!(matches!(GridSpec::default().cells(&base()), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_varies_only_the_layer() {
        let cells = GridSpec::layer_sweep(4).cells(&base()).unwrap();
        assert_eq!(cells.iter().map(|c| c.align_layer).collect::<Vec<_>>(), [1, 2, 3, 4]);
        assert!(cells.iter().all(|c| (c.alpha, c.beta, c.gamma) == (1.0, 0.7, 0.7)));
    }

    fn fake(cells: &[GridCell], f1: &[f64]) -> Vec<CellOutcome> {
        run_cells(cells, false, |c| {
            if f1[c.index].is_nan() {
                return Err(Error::Numeric("boom".into()));
            }
            Ok(RunResult {
                config: super::super::RunConfig {
                    model: tiny_model(),
                    train: c.apply(&base()),
                },
                epochs: vec![],
                best_epoch: 1,
                best_val_f1: f1[c.index],
                test_f1: f1[c.index] / 2.0,
                stopped_epoch: 1,
                final_reg_emd: None,
            })
        })
    }

    #[test]
    fn ranking_by_validation_with_index_tiebreak_and_failures_recorded() {
        let cells = GridSpec::layer_sweep(4).cells(&base()).unwrap();
        let outcomes = fake(&cells, &[0.5, 0.7, f64::NAN, 0.7]);
        assert!(outcomes[2].result.is_err());
        assert_eq!(rank(&outcomes), [1, 3, 0]);
        let (curve, best) = layer_curve(&outcomes);
        assert_eq!(curve.len(), 3);
        assert_eq!(best, Some(2));
    }

    #[test]
    fn parallel_matches_sequential() {
        let cells = GridSpec::layer_sweep(3).cells(&base()).unwrap();
        let f = [0.1, 0.3, 0.2];
        let seq = fake(&cells, &f);
        let par = run_cells(&cells, true, |c| seq[c.index].result.clone().map_err(Error::Data));
        assert_eq!(par, seq);
    }
}
