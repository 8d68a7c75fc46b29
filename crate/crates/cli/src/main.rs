//! `xscript`: synthetic data, training, evaluation, grid search and
//! explanations for cross-script sentiment models.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xscript_core::explainer::{PlotFormat, MIN_PERMUTATIONS};
use xscript_core::text::synthetic::CuePlacement;
use xscript_core::text::{Sentiment, Split, TableTransliterator, Transliterator};
use xscript_core::trainer::grid::GridSpec;

use commands::{EvalSpec, ExplainSpec, GenSpec, GridRunSpec, Invocation, SentenceSource, TrainSpec, MANIFEST};
use config::ConfigArgs;
use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "xscript", version, about = "Cross-script sentiment experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic paired-script corpus.
    GenSynthetic(GenArgs),
    /// Train one model (or ablation) and save a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Train every cell of a hyperparameter grid or alignment-layer sweep.
    Grid(GridArgs),
    /// Shapley word attributions for one sentence.
    Explain(ExplainArgs),
    /// Re-run a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    /// Training split size.
    #[arg(long, default_value_t = 1000)]
    size: usize,
    /// roman_only, deva_advantaged or mixed.
    #[arg(long, default_value = "mixed")]
    cue_placement: String,
    #[arg(long, default_value_t = 3)]
    min_words: usize,
    #[arg(long, default_value_t = 7)]
    max_words: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Directory with train.tsv, validation.tsv and test.tsv.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// none, no-reg, no-align, baseline-roman or baseline-deva.
    #[arg(long, default_value = "none")]
    ablation: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// TOML file with candidate lists for alpha, beta, gamma and align_layer.
    #[arg(long, conflicts_with = "sweep_layer")]
    grid: Option<PathBuf>,
    /// One run per encoder layer, varying only the alignment layer.
    #[arg(long)]
    sweep_layer: bool,
    /// Run cells on all cores.
    #[arg(long)]
    parallel: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Romanized sentence to explain.
    #[arg(long, conflicts_with = "data")]
    sentence: Option<String>,
    /// Devanagari form of --sentence; transliterated word by word if omitted.
    #[arg(long, requires = "sentence")]
    deva: Option<String>,
    /// Dataset directory to take the sentence from, with --index.
    #[arg(long, requires = "index")]
    data: Option<PathBuf>,
    #[arg(long)]
    index: Option<usize>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Class to explain (name or index); defaults to the predicted class.
    #[arg(long)]
    class: Option<String>,
    /// Permutation sampling instead of exact enumeration.
    #[arg(long)]
    sampled: bool,
    #[arg(long, default_value_t = 1000, requires = "sampled")]
    permutations: usize,
    /// ansi or html.
    #[arg(long, default_value = "ansi")]
    format: String,
    /// Checkpoint of a baseline model to render alongside.
    #[arg(long)]
    compare_baseline: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Output directory; defaults to the manifest's directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accepted for uniformity; the manifest's seed is always used.
    #[arg(long)]
    seed: Option<u64>,
}

fn parse<T: std::str::FromStr<Err = xscript_core::Error>>(s: &str) -> CliResult<T> {
    s.parse().map_err(|e: xscript_core::Error| CliError::Usage(e.to_string()))
}

fn class_index(s: &str) -> CliResult<usize> {
    if let Ok(i) = s.parse::<usize>() {
        Sentiment::from_index(i).map_err(|e| CliError::Usage(e.to_string()))?;
        return Ok(i);
    }
    s.parse::<Sentiment>()
        .map(Sentiment::index)
        .map_err(|_| CliError::Usage(format!("unknown class {s:?}")))
}

fn resolve(command: Command) -> CliResult<(Invocation, u64, PathBuf)> {
    Ok(match command {
        Command::GenSynthetic(a) => (
            Invocation::GenSynthetic(GenSpec {
                size: a.size,
                cue_placement: parse::<CuePlacement>(&a.cue_placement)?,
                min_words: a.min_words,
                max_words: a.max_words,
            }),
            a.seed,
            a.out,
        ),
        Command::Train(a) => (
            Invocation::Train(TrainSpec {
                data: a.data,
                ablation: parse(&a.ablation)?,
                config: a.config.resolve()?,
            }),
            a.seed,
            a.out,
        ),
        Command::Eval(a) => (
            Invocation::Eval(EvalSpec {
                checkpoint: a.checkpoint,
                data: a.data,
                split: parse(&a.split)?,
            }),
            a.seed,
            a.out,
        ),
        Command::Grid(a) => {
            let grid = match &a.grid {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
                }
                None if a.sweep_layer => GridSpec::default(),
                None => return Err(CliError::Usage("grid needs --grid FILE or --sweep-layer".into())),
            };
            (
                Invocation::Grid(GridRunSpec {
                    data: a.data,
                    config: a.config.resolve()?,
                    grid,
                    sweep_layer: a.sweep_layer,
                    parallel: a.parallel,
                }),
                a.seed,
                a.out,
            )
        }
        Command::Explain(a) => {
            let sentence = match (a.sentence, a.data, a.index) {
                (Some(roman), None, _) => {
                    let deva = match a.deva {
                        Some(d) => d,
                        None => {
                            let t = TableTransliterator::default();
                            roman.split_whitespace().map(|w| t.transliterate(w)).collect::<Vec<_>>().join(" ")
                        }
                    };
                    SentenceSource::Inline { roman, deva }
                }
                (None, Some(data), Some(index)) => SentenceSource::Dataset {
                    data,
                    split: parse::<Split>(&a.split)?,
                    index,
                },
                _ => return Err(CliError::Usage("explain needs --sentence or --data with --index".into())),
            };
            if a.sampled && a.permutations < MIN_PERMUTATIONS {
                return Err(CliError::Usage(format!("--permutations must be at least {MIN_PERMUTATIONS}")));
            }
            (
                Invocation::Explain(ExplainSpec {
                    checkpoint: a.checkpoint,
                    compare_baseline: a.compare_baseline,
                    sentence,
                    class: a.class.as_deref().map(class_index).transpose()?,
                    permutations: a.sampled.then_some(a.permutations),
                    format: parse::<PlotFormat>(&a.format)?,
                }),
                a.seed,
                a.out,
            )
        }
        Command::Replay(a) => {
            let m = commands::load_manifest(&a.manifest)?;
            let out = match a.out {
                Some(o) => o,
                None => a.manifest.parent().map(PathBuf::from).unwrap_or_default(),
            };
            (m.invocation, m.seed, out)
        }
    })
}

fn run(cli: Cli) -> CliResult<()> {
    let (invocation, seed, out) = resolve(cli.command)?;
    commands::execute(&invocation, seed, &out)?;
    eprintln!("manifest: {}", out.join(MANIFEST).display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
