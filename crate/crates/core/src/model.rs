//! Model bundle: architecture choice, parameters and vocabularies.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{BoundParams, ParamStore};
use crate::encoder::{self, EncoderConfig, EncoderStates};
use crate::error::{Error, Result};
use crate::fusion::{self, Pooling};
use crate::tensor::{Graph, Var};
use crate::trainer::TrainConfig;
use crate::text::{encode, Batch, EncodedPair, Script, ScriptPairExample, Vocabulary, NUM_CLASSES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// Both encoders, `query` attends over the other script.
    Fusion { query: Script },
    /// One encoder, pooled straight into the classifier.
    Baseline { script: Script },
}

impl Architecture {
    pub fn scripts(self) -> Vec<Script> {
        match self {
            Architecture::Fusion { .. } => vec![Script::Roman, Script::Deva],
            Architecture::Baseline { script } => vec![script],
        }
    }

    pub fn is_fusion(self) -> bool {
        matches!(self, Architecture::Fusion { .. })
    }
}

/// Named ablations of the full objective and architecture.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    None,
    NoReg,
    NoAlign,
    BaselineRoman,
    BaselineDeva,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::None,
        Ablation::NoReg,
        Ablation::NoAlign,
        Ablation::BaselineRoman,
        Ablation::BaselineDeva,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoReg => "no-reg",
            Ablation::NoAlign => "no-align",
            Ablation::BaselineRoman => "baseline-roman",
            Ablation::BaselineDeva => "baseline-deva",
        }
    }

    /// Architecture after the ablation, given the configured query script.
    pub fn architecture(self, query: Script) -> Architecture {
        match self {
            Ablation::BaselineRoman => Architecture::Baseline { script: Script::Roman },
            Ablation::BaselineDeva => Architecture::Baseline { script: Script::Deva },
            _ => Architecture::Fusion { query },
        }
    }

    /// Loss weights after the ablation: `no-reg` zeroes gamma, `no-align`
    /// zeroes alpha.
    pub fn train_config(self, base: &TrainConfig) -> TrainConfig {
        match self {
            Ablation::NoReg => TrainConfig { gamma: 0.0, ..base.clone() },
            Ablation::NoAlign => TrainConfig { alpha: 0.0, ..base.clone() },
            _ => base.clone(),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub fusion_heads: usize,
    pub pooling: Pooling,
    pub roman_vocab: usize,
    pub deva_vocab: usize,
}

impl ModelConfig {
    pub fn encoder(&self, script: Script) -> EncoderConfig {
        EncoderConfig {
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            vocab_size: match script {
                Script::Roman => self.roman_vocab,
                Script::Deva => self.deva_vocab,
            },
            max_len: self.max_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for s in [Script::Roman, Script::Deva] {
            self.encoder(s).validate()?;
        }
        if self.fusion_heads == 0 || !self.d_model.is_multiple_of(self.fusion_heads) {
            return Err(Error::Config(format!(
                "fusion_heads {} must divide d_model {}",
                self.fusion_heads, self.d_model
            )));
        }
        Ok(())
    }
}

/// Seeded initialization. Each component draws from its own ChaCha stream,
/// so the encoders of a baseline and a fusion model with the same seed start
/// identical.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParamStore> {
    config.validate()?;
    let stream = |s: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(s);
        r
    };
    let mut store = ParamStore::new();
    for script in config.architecture.scripts() {
        let s = match script {
            Script::Roman => 1,
            Script::Deva => 2,
        };
        store.extend(config.encoder(script).init(script.prefix(), &mut stream(s))?);
    }
    if config.architecture.is_fusion() {
        store.extend(fusion::init_fusion(config.d_model, config.fusion_heads, &mut stream(3))?);
    }
    store.extend(fusion::init_classifier(config.d_model, &mut stream(4)));
    Ok(store)
}

pub struct ForwardOutput {
    /// `[B, 3]`
    pub probs: Var,
    pub roman: Option<EncoderStates>,
    pub deva: Option<EncoderStates>,
}

impl ForwardOutput {
    pub fn states(&self, script: Script) -> Option<&EncoderStates> {
        match script {
            Script::Roman => self.roman.as_ref(),
            Script::Deva => self.deva.as_ref(),
        }
    }
}

pub fn forward(g: &mut Graph, config: &ModelConfig, params: &BoundParams, batch: &Batch) -> Result<ForwardOutput> {
    let (mut roman, mut deva) = (None, None);
    for script in config.architecture.scripts() {
        let states = encoder::forward(
            g,
            params,
            script.prefix(),
            &config.encoder(script),
            batch.ids(script),
            batch.mask(script),
            batch.batch_size,
            batch.seq_len,
        )?;
        match script {
            Script::Roman => roman = Some(states),
            Script::Deva => deva = Some(states),
        }
    }
    let last = |s: Script| match s {
        Script::Roman => roman.as_ref().map(EncoderStates::last),
        Script::Deva => deva.as_ref().map(EncoderStates::last),
    };
    let probs = match config.architecture {
        Architecture::Fusion { query } => {
            let (a, b) = (last(query).expect("encoded"), last(query.other()).expect("encoded"));
            let cross = fusion::cross_attend(g, a, b, batch.mask(query.other()), params, config.fusion_heads)?;
            fusion::pool_and_classify(g, cross.fused, batch.mask(query), params, config.pooling)?
        }
        Architecture::Baseline { script } => {
            let h = last(script).expect("encoded");
            fusion::pool_and_classify(g, h, batch.mask(script), params, config.pooling)?
        }
    };
    Ok(ForwardOutput { probs, roman, deva })
}

/// Class probabilities for encoded pairs, evaluated in chunks of `chunk`.
pub fn predict(config: &ModelConfig, params: &ParamStore, pairs: &[EncodedPair], chunk: usize) -> Result<Vec<[f64; NUM_CLASSES]>> {
    let mut out = Vec::with_capacity(pairs.len());
    for part in pairs.chunks(chunk.max(1)) {
        let refs: Vec<&EncodedPair> = part.iter().collect();
        let batch = Batch::collate(&refs, true);
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, params, false);
        let f = forward(&mut g, config, &bound, &batch)?;
        for row in g.value(f.probs).data().chunks(NUM_CLASSES) {
            out.push([row[0], row[1], row[2]]);
        }
    }
    Ok(out)
}

pub fn argmax(p: &[f64; NUM_CLASSES]) -> usize {
    let mut best = 0;
    for c in 1..NUM_CLASSES {
        if p[c] > p[best] {
            best = c;
        }
    }
    best
}

/// A trained model together with the vocabularies it was trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub roman_vocab: Vocabulary,
    pub deva_vocab: Vocabulary,
}

#[derive(Serialize, Deserialize)]
struct StoredConfig {
    model: ModelConfig,
}

impl Classifier {
    pub fn encode(&self, example: &ScriptPairExample) -> EncodedPair {
        encode(example, &self.roman_vocab, &self.deva_vocab, self.config.max_len)
    }

    pub fn predict(&self, examples: &[ScriptPairExample]) -> Result<Vec<[f64; NUM_CLASSES]>> {
        let pairs: Vec<EncodedPair> = examples.iter().map(|e| self.encode(e)).collect();
        predict(&self.config, &self.params, &pairs, 64)
    }

    /// Writes `model.json`, `params.ckpt`, `vocab.roman.txt` and `vocab.deva.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let cfg = serde_json::to_string_pretty(&StoredConfig {
            model: self.config.clone(),
        })?;
        std::fs::write(dir.join("model.json"), cfg + "\n")?;
        self.params.save(&dir.join("params.ckpt"))?;
        self.roman_vocab.save(&dir.join("vocab.roman.txt"))?;
        self.deva_vocab.save(&dir.join("vocab.deva.txt"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let stored: StoredConfig = serde_json::from_str(&std::fs::read_to_string(dir.join("model.json"))?)?;
        let c = Classifier {
            config: stored.model,
            params: ParamStore::load(&dir.join("params.ckpt"))?,
            roman_vocab: Vocabulary::load(&dir.join("vocab.roman.txt"))?,
            deva_vocab: Vocabulary::load(&dir.join("vocab.deva.txt"))?,
        };
        if c.roman_vocab.len() != c.config.roman_vocab || c.deva_vocab.len() != c.config.deva_vocab {
            return Err(Error::Checkpoint("vocabulary files do not match model.json".into()));
        }
        Ok(c)
    }
}
