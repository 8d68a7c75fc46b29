//! Experiment configuration: TOML file merged with command-line overrides.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use xscript_core::fusion::Pooling;
use xscript_core::model::{Ablation, ModelConfig};
use xscript_core::text::{Script, Vocabulary};
use xscript_core::trainer::TrainConfig;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub fusion_heads: usize,
    pub pooling: Pooling,
    pub query: Script,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            num_layers: 2,
            num_heads: 4,
            d_model: 64,
            d_ff: 128,
            max_len: 100,
            fusion_heads: 4,
            pooling: Pooling::Mean,
            query: Script::Roman,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub align_layer: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            alpha: t.alpha,
            beta: t.beta,
            gamma: t.gamma,
            align_layer: t.align_layer,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            patience: t.patience,
            max_epochs: t.max_epochs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Words seen fewer times than this in the training split map to UNK.
    pub min_frequency: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { min_frequency: 1 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub train: TrainSection,
    pub data: DataSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn model_config(&self, ablation: Ablation, roman: &Vocabulary, deva: &Vocabulary) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            architecture: ablation.architecture(m.query),
            num_layers: m.num_layers,
            num_heads: m.num_heads,
            d_model: m.d_model,
            d_ff: m.d_ff,
            max_len: m.max_len,
            fusion_heads: m.fusion_heads,
            pooling: m.pooling,
            roman_vocab: roman.len(),
            deva_vocab: deva.len(),
        }
    }

    pub fn train_config(&self, ablation: Ablation, seed: u64) -> TrainConfig {
        let t = &self.train;
        let base = TrainConfig {
            alpha: t.alpha,
            beta: t.beta,
            gamma: t.gamma,
            align_layer: t.align_layer,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            patience: t.patience,
            max_epochs: t.max_epochs,
            seed,
            alignment: true,
        };
        ablation.train_config(&base)
    }
}

/// `--config` plus per-field overrides; flags win over the file.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// TOML file with [model], [train] and [data] tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub num_layers: Option<usize>,
    #[arg(long)]
    pub num_heads: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub fusion_heads: Option<usize>,
    /// mean or cls.
    #[arg(long)]
    pub pooling: Option<String>,
    /// Script whose states form the attention queries: roman or deva.
    #[arg(long)]
    pub query: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Encoder layer (1-based) compared by the EMD terms.
    #[arg(long)]
    pub align_layer: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub min_frequency: Option<usize>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> CliResult<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $dst:expr),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { $dst = v; })*
            };
        }
        set! {
            num_layers => c.model.num_layers,
            num_heads => c.model.num_heads,
            d_model => c.model.d_model,
            d_ff => c.model.d_ff,
            max_len => c.model.max_len,
            fusion_heads => c.model.fusion_heads,
            alpha => c.train.alpha,
            beta => c.train.beta,
            gamma => c.train.gamma,
            align_layer => c.train.align_layer,
            learning_rate => c.train.learning_rate,
            batch_size => c.train.batch_size,
            patience => c.train.patience,
            max_epochs => c.train.max_epochs,
            min_frequency => c.data.min_frequency,
        }
        if let Some(p) = &self.pooling {
            c.model.pooling = match p.as_str() {
                "mean" => Pooling::Mean,
                "cls" => Pooling::Cls,
                other => return Err(CliError::Config(format!("unknown pooling {other:?}"))),
            };
        }
        if let Some(q) = &self.query {
            c.model.query = q.parse()?;
        }
        Ok(c)
    }
}
