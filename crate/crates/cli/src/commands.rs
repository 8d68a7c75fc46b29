//! Fully resolved command invocations and their execution.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use xscript_core::explainer::{self, Attribution, PlotFormat};
use xscript_core::model::{argmax, Ablation, Classifier};
use xscript_core::text::synthetic::{gen_synthetic, oracle_report, CuePlacement, OracleReport, SynthConfig};
use xscript_core::text::{build_vocab, encode, load_dataset, write_tsv, ScriptPairExample, Split, Vocabulary};
use xscript_core::trainer::grid::{layer_curve, rank, run_cells, CellOutcome, GridSpec};
use xscript_core::trainer::{evaluate, train_loop, TrainData};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub size: usize,
    pub cue_placement: CuePlacement,
    pub min_words: usize,
    pub max_words: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub data: PathBuf,
    pub ablation: Ablation,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRunSpec {
    pub data: PathBuf,
    pub config: ExperimentConfig,
    pub grid: GridSpec,
    pub sweep_layer: bool,
    pub parallel: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SentenceSource {
    Inline { roman: String, deva: String },
    Dataset { data: PathBuf, split: Split, index: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainSpec {
    pub checkpoint: PathBuf,
    pub compare_baseline: Option<PathBuf>,
    pub sentence: SentenceSource,
    pub class: Option<usize>,
    /// Permutation count for sampled mode; exact enumeration when absent.
    pub permutations: Option<usize>,
    pub format: PlotFormat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Invocation {
    GenSynthetic(GenSpec),
    Train(TrainSpec),
    Eval(EvalSpec),
    Grid(GridRunSpec),
    Explain(ExplainSpec),
}

/// Everything needed to repeat a run, plus what it wrote. Output paths are
/// relative to the output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    #[serde(flatten)]
    pub invocation: Invocation,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<Value>,
}

struct Outputs {
    root: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn write(&mut self, rel: &str, contents: &str) -> CliResult<()> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(p, contents)?;
        self.record(rel);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> CliResult<()> {
        self.write(rel, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    fn record(&mut self, rel: &str) {
        self.files.push(rel.to_string());
    }
}

pub fn execute(invocation: &Invocation, seed: u64, out: &Path) -> CliResult<Manifest> {
    let mut outputs = Outputs::new(out)?;
    let report = match invocation {
        Invocation::GenSynthetic(s) => gen(s, seed, &mut outputs)?,
        Invocation::Train(s) => train(s, seed, &mut outputs)?,
        Invocation::Eval(s) => eval(s, &mut outputs)?,
        Invocation::Grid(s) => grid(s, seed, &mut outputs)?,
        Invocation::Explain(s) => explain(s, seed, &mut outputs)?,
    };
    let manifest = Manifest {
        seed,
        invocation: invocation.clone(),
        outputs: outputs.files.clone(),
        report,
    };
    outputs.write_json(MANIFEST, &manifest)?;
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> CliResult<Manifest> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct SplitReports {
    train: OracleReport,
    validation: OracleReport,
    test: OracleReport,
}

fn gen(spec: &GenSpec, seed: u64, out: &mut Outputs) -> CliResult<Option<Value>> {
    let cfg = SynthConfig {
        min_words: spec.min_words,
        max_words: spec.max_words,
        ..SynthConfig::new(spec.size, seed, spec.cue_placement)
    };
    let corpus = gen_synthetic(&cfg)?;
    for (split, examples) in Split::ALL.into_iter().zip([&corpus.train, &corpus.validation, &corpus.test]) {
        let name = split.file_name();
        write_tsv(&out.path(&name), examples)?;
        out.record(&name);
    }
    out.write("lexicon.tsv", &corpus.lexicon.to_tsv())?;
    let reports = SplitReports {
        train: oracle_report(&corpus.train, &corpus.lexicon),
        validation: oracle_report(&corpus.validation, &corpus.lexicon),
        test: oracle_report(&corpus.test, &corpus.lexicon),
    };
    println!(
        "{} train / {} validation / {} test examples; test oracle roman {:.3}, deva {:.3}",
        corpus.train.len(),
        corpus.validation.len(),
        corpus.test.len(),
        reports.test.roman_oracle,
        reports.test.deva_oracle
    );
    Ok(Some(serde_json::json!({ "oracle": reports })))
}

struct Prepared {
    roman: Vocabulary,
    deva: Vocabulary,
    data: TrainData,
}

fn prepare(dir: &Path, config: &ExperimentConfig) -> CliResult<Prepared> {
    let train = load_dataset(dir, Split::Train)?;
    let validation = load_dataset(dir, Split::Validation)?;
    let test = load_dataset(dir, Split::Test)?;
    let (roman, deva) = build_vocab(&train, config.data.min_frequency)?;
    let max_len = config.model.max_len;
    let enc = |xs: &[ScriptPairExample]| xs.iter().map(|e| encode(e, &roman, &deva, max_len)).collect();
    let data = TrainData {
        train: enc(&train),
        validation: enc(&validation),
        test: enc(&test),
    };
    Ok(Prepared { roman, deva, data })
}

fn train(spec: &TrainSpec, seed: u64, out: &mut Outputs) -> CliResult<Option<Value>> {
    let p = prepare(&spec.data, &spec.config)?;
    let model = spec.config.model_config(spec.ablation, &p.roman, &p.deva);
    let cfg = spec.config.train_config(spec.ablation, seed);
    let outcome = train_loop(&model, &cfg, &p.data)?;
    for e in &outcome.result.epochs {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!(
            "epoch {:>3}  ce {:.4}  sa {}  reg {}  val_ce {:.4}  val_f1 {:.4}",
            e.epoch,
            e.ce,
            opt(e.sa),
            opt(e.reg),
            e.val_ce,
            e.val_f1
        );
    }
    let r = &outcome.result;
    println!(
        "{}: best epoch {} val_f1 {:.4} test_f1 {:.4}",
        spec.ablation, r.best_epoch, r.best_val_f1, r.test_f1
    );
    let classifier = Classifier {
        config: model,
        params: outcome.params,
        roman_vocab: p.roman,
        deva_vocab: p.deva,
    };
    classifier.save(&out.path("checkpoint"))?;
    for f in ["model.json", "params.ckpt", "vocab.roman.txt", "vocab.deva.txt"] {
        out.record(&format!("checkpoint/{f}"));
    }
    out.write_json("result.json", r)?;
    Ok(None)
}

#[derive(Serialize)]
struct EvalReport {
    split: Split,
    examples: usize,
    #[serde(flatten)]
    metrics: xscript_core::trainer::Metrics,
}

fn eval(spec: &EvalSpec, out: &mut Outputs) -> CliResult<Option<Value>> {
    let classifier = load_checkpoint(&spec.checkpoint)?;
    let examples = load_dataset(&spec.data, spec.split)?;
    if examples.is_empty() {
        return Err(xscript_core::Error::EmptyCorpus.into());
    }
    let probs = classifier.predict(&examples)?;
    let preds: Vec<usize> = probs.iter().map(argmax).collect();
    let labels: Vec<usize> = examples.iter().map(|e| e.label.index()).collect();
    let metrics = evaluate(&preds, &labels)?;
    println!(
        "{} examples: weighted F1 {:.4}, accuracy {:.4}",
        examples.len(),
        metrics.weighted_f1,
        metrics.accuracy
    );
    out.write_json(
        "metrics.json",
        &EvalReport {
            split: spec.split,
            examples: examples.len(),
            metrics,
        },
    )?;
    Ok(None)
}

fn cell_file(index: usize) -> String {
    format!("cells/cell_{index:03}.json")
}

fn grid(spec: &GridRunSpec, seed: u64, out: &mut Outputs) -> CliResult<Option<Value>> {
    let p = prepare(&spec.data, &spec.config)?;
    let model = spec.config.model_config(Ablation::None, &p.roman, &p.deva);
    let base = spec.config.train_config(Ablation::None, seed);
    let grid = if spec.sweep_layer {
        GridSpec::layer_sweep(model.num_layers)
    } else {
        spec.grid.clone()
    };
    let cells = grid.cells(&base)?;
    for c in &cells {
        c.apply(&base).validate(&model)?;
    }

    let previous = |c: &xscript_core::trainer::grid::GridCell| -> Option<CellOutcome> {
        let text = std::fs::read_to_string(out.path(&cell_file(c.index))).ok()?;
        let o: CellOutcome = serde_json::from_str(&text).ok()?;
        let r = o.result.as_ref().ok()?;
        (o.cell == *c && r.config.model == model && r.config.train == c.apply(&base)).then_some(o)
    };
    let done: Vec<Option<CellOutcome>> = cells.iter().map(previous).collect();
    let todo: Vec<_> = cells.iter().filter(|c| done[c.index].is_none()).cloned().collect();
    if todo.len() < cells.len() {
        println!("resuming: {} of {} cells already complete", cells.len() - todo.len(), cells.len());
    }
    let fresh = run_cells(&todo, spec.parallel, |cell| {
        let r = train_loop(&model, &cell.apply(&base), &p.data).map(|o| o.result);
        match &r {
            Ok(r) => eprintln!("cell {:03}: val_f1 {:.4} test_f1 {:.4}", cell.index, r.best_val_f1, r.test_f1),
            Err(e) => eprintln!("cell {:03}: failed: {e}", cell.index),
        }
        r
    });
    let mut outcomes: Vec<CellOutcome> = done.into_iter().flatten().chain(fresh).collect();
    outcomes.sort_by_key(|o| o.cell.index);
    for o in &outcomes {
        out.write_json(&cell_file(o.cell.index), o)?;
    }

    let order = rank(&outcomes);
    let mut tsv = String::from("rank\tcell\talpha\tbeta\tgamma\talign_layer\tbest_val_f1\ttest_f1\n");
    let mut table = String::from(" rank  cell  alpha   beta  gamma  layer  val_f1  test_f1\n");
    for (r, &i) in order.iter().enumerate() {
        let o = &outcomes[i];
        let res = o.result.as_ref().expect("ranked outcomes succeeded");
        let c = &o.cell;
        let _ = writeln!(
            tsv,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r + 1,
            c.index,
            c.alpha,
            c.beta,
            c.gamma,
            c.align_layer,
            res.best_val_f1,
            res.test_f1
        );
        let _ = writeln!(
            table,
            "{:>5}  {:>4}  {:>5}  {:>5}  {:>5}  {:>5}  {:.4}  {:.4}",
            r + 1,
            c.index,
            c.alpha,
            c.beta,
            c.gamma,
            c.align_layer,
            res.best_val_f1,
            res.test_f1
        );
    }
    for o in outcomes.iter().filter(|o| o.result.is_err()) {
        let c = &o.cell;
        let _ = writeln!(tsv, "failed\t{}\t{}\t{}\t{}\t{}\t-\t-", c.index, c.alpha, c.beta, c.gamma, c.align_layer);
    }
    print!("{table}");
    out.write("summary.tsv", &tsv)?;

    let mut summary = serde_json::json!({
        "cells": outcomes.len(),
        "failed": outcomes.iter().filter(|o| o.result.is_err()).count(),
        "ranking": order.iter().map(|&i| outcomes[i].cell.index).collect::<Vec<_>>(),
        "best_cell": order.first().map(|&i| outcomes[i].cell.clone()),
    });
    if spec.sweep_layer {
        let (curve, best) = layer_curve(&outcomes);
        let mut text = String::from("layer\tval_f1\ttest_f1\n");
        for p in &curve {
            let _ = writeln!(text, "{}\t{}\t{}", p.layer, p.val_f1, p.test_f1);
        }
        out.write("layer_curve.tsv", &text)?;
        summary["best_layer"] = serde_json::json!(best);
        if let Some(b) = best {
            println!("best alignment layer: {b}");
        }
    }
    out.write_json("summary.json", &summary)?;
    Ok(Some(summary))
}

fn load_checkpoint(dir: &Path) -> CliResult<Classifier> {
    Classifier::load(dir).map_err(|e| match e {
        xscript_core::Error::Io(io) => CliError::Data(format!("checkpoint {}: {io}", dir.display())),
        other => other.into(),
    })
}

fn sentence(source: &SentenceSource) -> CliResult<ScriptPairExample> {
    match source {
        SentenceSource::Inline { roman, deva } => Ok(ScriptPairExample::from_text(
            roman,
            deva,
            xscript_core::text::Sentiment::Neutral,
        )?),
        SentenceSource::Dataset { data, split, index } => {
            let examples = load_dataset(data, *split)?;
            let n = examples.len();
            examples
                .into_iter()
                .nth(*index)
                .ok_or_else(|| CliError::Data(format!("{split} split has {n} examples, index {index} is out of range")))
        }
    }
}

fn attribute(classifier: &Classifier, ex: &ScriptPairExample, class: Option<usize>, spec: &ExplainSpec, seed: u64) -> CliResult<Attribution> {
    Ok(match spec.permutations {
        Some(n) => explainer::shapley_sampled(classifier, ex, class, n, seed)?,
        None => explainer::shapley_exact(classifier, ex, class)?,
    })
}

fn explain(spec: &ExplainSpec, seed: u64, out: &mut Outputs) -> CliResult<Option<Value>> {
    let ex = sentence(&spec.sentence)?;
    if ex.is_empty() {
        return Err(CliError::Data("cannot explain an empty sentence".into()));
    }
    let classifier = load_checkpoint(&spec.checkpoint)?;
    let proposed = attribute(&classifier, &ex, spec.class, spec, seed)?;
    let plot_name = match spec.format {
        PlotFormat::Ansi => "plot.txt",
        PlotFormat::Html => "plot.html",
    };
    let plot = match &spec.compare_baseline {
        None => {
            out.write_json("attribution.json", &proposed)?;
            explainer::render_text_plot(&proposed, spec.format)
        }
        Some(dir) => {
            let baseline = load_checkpoint(dir)?;
            let base_attr = attribute(&baseline, &ex, Some(proposed.class), spec, seed)?;
            out.write_json(
                "attribution.json",
                &serde_json::json!({ "baseline": base_attr, "proposed": proposed }),
            )?;
            explainer::render_comparison(&[("baseline", &base_attr), ("proposed", &proposed)], spec.format)
        }
    };
    out.write(plot_name, &plot)?;
    match spec.format {
        PlotFormat::Ansi => print!("{plot}"),
        PlotFormat::Html => println!("wrote {}", out.path(plot_name).display()),
    }
    Ok(None)
}
