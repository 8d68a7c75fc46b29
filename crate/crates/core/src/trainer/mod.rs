//! Composite objective, optimization loop, early stopping and evaluation.

mod adam;
pub mod grid;
mod metrics;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{BoundParams, ParamStore};
use crate::encoder::{self, snapshot_frozen, FROZEN_PREFIX};
use crate::error::{Error, Result};
use crate::fusion::ce_loss;
use crate::model::{self, argmax, init_params, ModelConfig};
use crate::tensor::{Graph, Var};
use crate::text::{Batch, EncodedPair, Script};
use crate::transport::{alignment_loss, regularization_loss, TransportPlan};

pub use adam::Adam;
pub use metrics::{evaluate, weighted_f1, ClassMetrics, Metrics};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Encoder layer (1-based) whose states the EMD terms compare.
    pub align_layer: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// When false the EMD terms and frozen snapshot are never built.
    pub alignment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.7,
            gamma: 0.7,
            align_layer: 1,
            learning_rate: 2e-5,
            batch_size: 32,
            patience: 3,
            max_epochs: 20,
            seed: 0,
            alignment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite non-negative number, got {w}")));
            }
        }
        if self.align_layer == 0 || self.align_layer > model.num_layers {
            return Err(Error::Config(format!(
                "align_layer {} outside 1..={}",
                self.align_layer, model.num_layers
            )));
        }
        if self.patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("patience, batch_size and max_epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

fn check_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{name} loss is {v}")))
    }
}

/// `ce + alpha * (beta * sa + gamma * reg)`
pub fn combined_loss(ce: f64, sa: f64, reg: f64, config: &TrainConfig) -> Result<f64> {
    check_finite("ce", ce)?;
    check_finite("sa", sa)?;
    check_finite("reg", reg)?;
    Ok(ce + config.alpha * (config.beta * sa + config.gamma * reg))
}

/// Graph form of [`combined_loss`]; absent terms are left out.
pub fn combined_loss_var(g: &mut Graph, ce: Var, sa: Option<Var>, reg: Option<Var>, config: &TrainConfig) -> Result<Var> {
    check_finite("ce", g.value(ce).item()?)?;
    let mut inner = None;
    for (name, term, w) in [("sa", sa, config.beta), ("reg", reg, config.gamma)] {
        if let Some(t) = term {
            check_finite(name, g.value(t).item()?)?;
            let scaled = g.scale(t, w);
            inner = Some(match inner {
                None => scaled,
                Some(acc) => g.add(acc, scaled)?,
            });
        }
    }
    match inner {
        None => Ok(ce),
        Some(inner) => {
            let weighted = g.scale(inner, config.alpha);
            g.add(ce, weighted)
        }
    }
}

pub struct LossTerms {
    pub total: Var,
    pub ce: Var,
    pub sa: Option<Var>,
    pub reg: Option<Var>,
    /// Optimal transport plans behind `sa` then `reg`, one per example.
    pub plans: Vec<TransportPlan>,
}

impl LossTerms {
    /// Nonzero-flow cells of every plan; changes when a perturbation moves
    /// the solver to a different basis.
    pub fn plan_supports(&self) -> Vec<Vec<(usize, usize)>> {
        self.plans.iter().map(|p| p.support(0.0)).collect()
    }
}

/// Builds the full objective for one batch. `params` must also hold the
/// frozen snapshot (under `frozen/`) when alignment is on for a fusion model.
pub fn loss_graph(
    g: &mut Graph,
    model: &ModelConfig,
    config: &TrainConfig,
    params: &BoundParams,
    batch: &Batch,
) -> Result<LossTerms> {
    let out = model::forward(g, model, params, batch)?;
    let ce = ce_loss(g, out.probs, &batch.labels)?;
    let (mut sa, mut reg, mut plans) = (None, None, Vec::new());
    if model.architecture.is_fusion() && config.alignment {
        let roman = out.states(Script::Roman).expect("fusion encodes both scripts");
        let deva = out.states(Script::Deva).expect("fusion encodes both scripts");
        let align = alignment_loss(g, roman, deva, config.align_layer)?;
        sa = Some(align.value);
        plans.extend(align.plans);
        let frozen = encoder::forward(
            g,
            params,
            FROZEN_PREFIX,
            &model.encoder(Script::Deva),
            batch.ids(Script::Deva),
            batch.mask(Script::Deva),
            batch.batch_size,
            batch.seq_len,
        )?;
        let r = regularization_loss(g, deva, &frozen, config.align_layer)?;
        reg = Some(r.value);
        plans.extend(r.plans);
    }
    let total = combined_loss_var(g, ce, sa, reg, config)?;
    Ok(LossTerms {
        total,
        ce,
        sa,
        reg,
        plans,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub ce: f64,
    pub sa: Option<f64>,
    pub reg: Option<f64>,
    pub total: f64,
}

/// Optimization state of one run.
pub struct Trainer {
    pub model: ModelConfig,
    pub config: TrainConfig,
    pub params: ParamStore,
    /// Snapshot of the Devanagari encoder taken at construction.
    pub frozen: Option<ParamStore>,
    adam: Adam,
}

impl Trainer {
    pub fn new(model: ModelConfig, config: TrainConfig, params: ParamStore) -> Result<Self> {
        model.validate()?;
        config.validate(&model)?;
        let frozen = (model.architecture.is_fusion() && config.alignment).then(|| snapshot_frozen(&params));
        let adam = Adam::new(config.learning_rate);
        Ok(Self {
            model,
            config,
            params,
            frozen,
            adam,
        })
    }

    fn bind(&self, g: &mut Graph) -> BoundParams {
        let mut bound = BoundParams::bind(g, &self.params, true);
        if let Some(f) = &self.frozen {
            bound.merge(BoundParams::bind(g, f, false));
        }
        bound
    }

    /// One Adam update on `batch`.
    pub fn step(&mut self, batch: &Batch) -> Result<StepLosses> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let terms = loss_graph(&mut g, &self.model, &self.config, &bound, batch)?;
        let value = |g: &Graph, v: Var| g.value(v).item();
        let losses = StepLosses {
            ce: value(&g, terms.ce)?,
            sa: terms.sa.map(|v| value(&g, v)).transpose()?,
            reg: terms.reg.map(|v| value(&g, v)).transpose()?,
            total: value(&g, terms.total)?,
        };
        if !losses.total.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss: ce={} sa={:?} reg={:?} total={}",
                losses.ce, losses.sa, losses.reg, losses.total
            )));
        }
        g.backward(terms.total)?;
        let mut grads = BTreeMap::new();
        for (name, t) in self.params.iter() {
            let v = bound.get(name)?;
            let grad = g.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec);
            if let Some(bad) = grad.iter().find(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("gradient of {name} is {bad}")));
            }
            grads.insert(name.to_string(), grad);
        }
        self.adam.step(&mut self.params, &grads)?;
        Ok(losses)
    }
}

/// Tracks the best validation score and signals when `patience` epochs in a
/// row failed to improve on it.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    epochs: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            epochs: 0,
            stale: 0,
        }
    }

    /// Records one epoch's score. Returns `(improved, stop)`.
    pub fn observe(&mut self, score: f64) -> (bool, bool) {
        self.epochs += 1;
        let improved = self.best.is_none_or(|(_, b)| score > b);
        if improved {
            self.best = Some((self.epochs, score));
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        (improved, self.stale >= self.patience)
    }

    /// 1-based epoch and score of the best observation.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// Encoded splits ready for training.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub train: Vec<EncodedPair>,
    pub validation: Vec<EncodedPair>,
    pub test: Vec<EncodedPair>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub ce: f64,
    pub sa: Option<f64>,
    pub reg: Option<f64>,
    pub total: f64,
    pub val_ce: f64,
    pub val_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: RunConfig,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub test_f1: f64,
    pub stopped_epoch: usize,
    /// Mean validation-set EMD between the live Devanagari encoder and its
    /// snapshot at `align_layer`, after restoring the best parameters.
    pub final_reg_emd: Option<f64>,
}

pub struct TrainOutcome {
    pub result: RunResult,
    pub params: ParamStore,
    pub frozen: Option<ParamStore>,
}

const EVAL_CHUNK: usize = 64;

fn val_scores(model: &ModelConfig, params: &ParamStore, pairs: &[EncodedPair]) -> Result<(f64, f64)> {
    let probs = model::predict(model, params, pairs, EVAL_CHUNK)?;
    let preds: Vec<usize> = probs.iter().map(argmax).collect();
    let labels: Vec<usize> = pairs.iter().map(|p| p.label).collect();
    let ce = probs
        .iter()
        .zip(&labels)
        .map(|(p, &l)| -p[l].max(crate::fusion::CE_EPS).ln())
        .sum::<f64>()
        / pairs.len() as f64;
    Ok((ce, weighted_f1(&preds, &labels)?))
}

/// Mean per-example EMD at `layer` between the Devanagari encoder in
/// `params` and the frozen copy, over `pairs`.
pub fn snapshot_distance(
    model: &ModelConfig,
    params: &ParamStore,
    frozen: &ParamStore,
    pairs: &[EncodedPair],
    layer: usize,
) -> Result<f64> {
    let enc = model.encoder(Script::Deva);
    let mut total = 0.0;
    for part in pairs.chunks(EVAL_CHUNK) {
        let refs: Vec<&EncodedPair> = part.iter().collect();
        let batch = Batch::collate(&refs, true);
        let mut g = Graph::new();
        let mut bound = BoundParams::bind(&mut g, params, false);
        bound.merge(BoundParams::bind(&mut g, frozen, false));
        let run = |g: &mut Graph, prefix: &str| {
            encoder::forward(
                g,
                &bound,
                prefix,
                &enc,
                batch.ids(Script::Deva),
                batch.mask(Script::Deva),
                batch.batch_size,
                batch.seq_len,
            )
        };
        let live = run(&mut g, Script::Deva.prefix())?;
        let snap = run(&mut g, FROZEN_PREFIX)?;
        let emd = regularization_loss(&mut g, &live, &snap, layer)?;
        total += emd.per_example.iter().sum::<f64>();
    }
    Ok(total / pairs.len() as f64)
}

/// Full training run from a seeded initialization: shuffled mini-batches,
/// per-epoch validation weighted F1, early stopping, restoration of the best
/// parameters, and a final test evaluation.
pub fn train_loop(model: &ModelConfig, config: &TrainConfig, data: &TrainData) -> Result<TrainOutcome> {
    if data.train.is_empty() || data.validation.is_empty() || data.test.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let params = init_params(model, config.seed)?;
    let mut trainer = Trainer::new(model.clone(), config.clone(), params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(7);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best_params = trainer.params.clone();
    let mut epochs = Vec::new();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let (mut ce, mut sa, mut reg, mut total) = (0.0, 0.0, 0.0, 0.0);
        let mut n = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let items: Vec<&EncodedPair> = chunk.iter().map(|&i| &data.train[i]).collect();
            let batch = Batch::collate(&items, true);
            let l = trainer.step(&batch)?;
            let w = chunk.len() as f64;
            ce += w * l.ce;
            sa += w * l.sa.unwrap_or(0.0);
            reg += w * l.reg.unwrap_or(0.0);
            total += w * l.total;
            n += w;
        }
        let (val_ce, val_f1) = val_scores(model, &trainer.params, &data.validation)?;
        let tracked = trainer.frozen.is_some();
        epochs.push(EpochLog {
            epoch,
            ce: ce / n,
            sa: tracked.then_some(sa / n),
            reg: tracked.then_some(reg / n),
            total: total / n,
            val_ce,
            val_f1,
        });
        let (improved, stop) = stopper.observe(val_f1);
        if improved {
            best_params = trainer.params.clone();
        }
        if stop {
            break;
        }
    }
    let (best_epoch, best_val_f1) = stopper.best().expect("at least one epoch");
    let (_, test_f1) = val_scores(model, &best_params, &data.test)?;
    let final_reg_emd = trainer
        .frozen
        .as_ref()
        .map(|f| snapshot_distance(model, &best_params, f, &data.validation, config.align_layer))
        .transpose()?;
    Ok(TrainOutcome {
        result: RunResult {
            config: RunConfig {
                model: model.clone(),
                train: config.clone(),
            },
            stopped_epoch: epochs.len(),
            epochs,
            best_epoch,
            best_val_f1,
            test_f1,
            final_reg_emd,
        },
        params: best_params,
        frozen: trainer.frozen,
    })
}
