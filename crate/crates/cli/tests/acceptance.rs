//! Acceptance suite: one PASS/FAIL line per criterion. Run with
//! `cargo test -p xscript-cli --test acceptance`.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use xscript_core::encoder::snapshot_frozen;
use xscript_core::explainer::{shapley_exact, shapley_sampled, CoalitionModel};
use xscript_core::fusion::Pooling;
use xscript_core::model::{init_params, Ablation, Architecture, Classifier, ModelConfig};
use xscript_core::oracle::{param_grad_check, transport_lp};
use xscript_core::text::synthetic::{gen_synthetic, CuePlacement, SynthConfig};
use xscript_core::text::{build_vocab, encode, Batch, EncodedPair, EncodedSeq, Script, ScriptPairExample, Sentiment, NUM_CLASSES};
use xscript_core::trainer::{combined_loss, loss_graph, train_loop, TrainConfig, TrainData};
use xscript_core::transport::{emd, emd_with_plan, ground_distance, PointCloud};
use xscript_core::{Result as CoreResult, Tensor};

const ABLATION_SEEDS: u64 = 3;
const ABLATION_TRAIN_SIZE: usize = 2000;
const ABLATION_MIN_GAP: f64 = 0.03;
const ABLATION_BUDGET: Duration = Duration::from_secs(30 * 60);
const ABLATION_CONFIG: &str = "\
[model]
num_layers = 2
num_heads = 4
d_model = 32
d_ff = 64
max_len = 16
fusion_heads = 4

[train]
learning_rate = 3e-3
batch_size = 32
patience = 5
max_epochs = 30
";

const EMD_INSTANCES: usize = 200;
const EMD_TOL: f64 = 1e-9;
const EMD_BUDGET: Duration = Duration::from_secs(10);
const EMD_CLOUDS: usize = 100;

const GRAD_TOL: f64 = 1e-3;
const GRAD_STEP: f64 = 1e-6;
const GRAD_FLOOR: f64 = 1e-6;
const GRAD_INSTANCES: usize = 2;
const GRAD_BUDGET: Duration = Duration::from_secs(60);

const SHAP_EFFICIENCY_TOL: f64 = 1e-9;
const SHAP_PERMUTATIONS: usize = 10_000;
const SHAP_STDERRS: f64 = 3.0;

const SWEEP_LAYERS: usize = 4;

fn xscript(dir: &Path, args: &[&str]) -> std::result::Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_xscript"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)))
    }
}

fn json(path: &Path) -> std::result::Result<Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

type Outcome = std::result::Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn non_reproducibility() -> Outcome {
    Ok("absolute F1 of pretrained-encoder setups on the original corpora is out of reach for toy encoders; \
        criteria 2-10 test orderings and properties instead"
        .into())
}

struct AblationRuns {
    work: PathBuf,
    means: [f64; 5],
}

fn ablation_ordering(work: &Path) -> (Outcome, Option<AblationRuns>) {
    let run = || -> std::result::Result<(AblationRuns, Duration, Duration), String> {
        std::fs::write(work.join("ablation.toml"), ABLATION_CONFIG).map_err(|e| e.to_string())?;
        let size = ABLATION_TRAIN_SIZE.to_string();
        for s in 0..ABLATION_SEEDS {
            let seed = (100 + s).to_string();
            xscript(
                work,
                &["gen-synthetic", "--out", &format!("data{s}"), "--size", &size, "--seed", &seed, "--cue-placement", "deva_advantaged"],
            )?;
        }
        let jobs: Vec<(u64, Ablation)> = (0..ABLATION_SEEDS).flat_map(|s| Ablation::ALL.map(|a| (s, a))).collect();
        let next = Mutex::new(0usize);
        let busy = Mutex::new(Duration::ZERO);
        let errors = Mutex::new(Vec::new());
        let start = Instant::now();
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len());
        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(|| loop {
                    let i = {
                        let mut n = next.lock().unwrap();
                        *n += 1;
                        *n - 1
                    };
                    let Some(&(s, a)) = jobs.get(i) else { break };
                    let t = Instant::now();
                    let r = xscript(
                        work,
                        &[
                            "train",
                            "--data",
                            &format!("data{s}"),
                            "--out",
                            &format!("run{s}_{a}"),
                            "--ablation",
                            a.as_str(),
                            "--seed",
                            &s.to_string(),
                            "--config",
                            "ablation.toml",
                        ],
                    );
                    *busy.lock().unwrap() += t.elapsed();
                    if let Err(e) = r {
                        errors.lock().unwrap().push(e);
                    }
                });
            }
        });
        let wall = start.elapsed();
        if let Some(e) = errors.into_inner().unwrap().into_iter().next() {
            return Err(e);
        }
        let mut means = [0.0; 5];
        for s in 0..ABLATION_SEEDS {
            for (k, a) in Ablation::ALL.iter().enumerate() {
                let r = json(&work.join(format!("run{s}_{a}/result.json")))?;
                means[k] += r["test_f1"].as_f64().ok_or("missing test_f1")? / ABLATION_SEEDS as f64;
            }
        }
        Ok((
            AblationRuns {
                work: work.to_path_buf(),
                means,
            },
            wall,
            busy.into_inner().unwrap(),
        ))
    };
    match run() {
        Err(e) => (Err(e), None),
        Ok((runs, wall, busy)) => {
            let [full, no_reg, no_align, base_r, base_d] = runs.means;
            let best_base = base_r.max(base_d);
            let detail = format!(
                "mean test F1 proposed {full:.4}, no-reg {no_reg:.4}, no-align {no_align:.4}, baseline-roman {base_r:.4}, \
                 baseline-deva {base_d:.4}; gap {:.2} points; {:.0}s single-core total ({:.0}s wall)",
                100.0 * (full - best_base),
                busy.as_secs_f64(),
                wall.as_secs_f64()
            );
            let ok = full >= no_reg && no_reg >= no_align && no_align >= best_base && full - best_base >= ABLATION_MIN_GAP && busy < ABLATION_BUDGET;
            (check(ok, detail), Some(runs))
        }
    }
}

fn random_cloud(rng: &mut ChaCha8Rng, m: usize, d: usize, weighted: bool) -> PointCloud {
    let points = Tensor::new(vec![m, d], (0..m * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    if weighted {
        PointCloud::weighted(points, (0..m).map(|_| rng.random_range(0.1..2.0)).collect()).unwrap()
    } else {
        PointCloud::uniform(points).unwrap()
    }
}

fn emd_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_obj, mut violations) = (0.0f64, 0);
    for i in 0..EMD_INSTANCES {
        let (m, n, d) = (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4));
        let weighted = i % 2 == 0;
        let p = random_cloud(&mut rng, m, d, weighted);
        let q = random_cloud(&mut rng, n, d, weighted);
        let (_, plan) = emd_with_plan(&p, &q).map_err(|e| e.to_string())?;
        let cost = ground_distance(&p, &q).map_err(|e| e.to_string())?;
        let rows: Vec<Vec<f64>> = cost.data().chunks(n).map(<[f64]>::to_vec).collect();
        let (lp, _) = transport_lp(&rows, p.weights(), q.weights());
        worst_obj = worst_obj.max((plan.objective - lp).abs());
        if plan.check_constraints(p.weights(), q.weights(), EMD_TOL).is_err() {
            violations += 1;
        }
    }
    let elapsed = start.elapsed();
    check(
        worst_obj <= EMD_TOL && violations == 0 && elapsed < EMD_BUDGET,
        format!(
            "{EMD_INSTANCES} instances, max |objective - LP oracle| {worst_obj:.2e}, {violations} constraint violations, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn emd_identity_symmetry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut nonzero, mut worst_asym) = (0, 0.0f64);
    for _ in 0..EMD_CLOUDS {
        let (m, n, d) = (rng.random_range(1..=6), rng.random_range(1..=6), rng.random_range(1..=4));
        let p = random_cloud(&mut rng, m, d, false);
        if emd(&p, &p).map_err(|e| e.to_string())? != 0.0 {
            nonzero += 1;
        }
        let q = random_cloud(&mut rng, n, d, false);
        let (pq, qp) = (emd(&p, &q).map_err(|e| e.to_string())?, emd(&q, &p).map_err(|e| e.to_string())?);
        worst_asym = worst_asym.max((pq - qp).abs());
    }
    check(
        nonzero == 0 && worst_asym <= EMD_TOL,
        format!("{EMD_CLOUDS} clouds: {nonzero} nonzero self-distances, max |EMD(P,Q) - EMD(Q,P)| {worst_asym:.2e}"),
    )
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let (b, t) = (2usize, 6usize);
    let model = ModelConfig {
        architecture: Architecture::Fusion { query: Script::Roman },
        num_layers: 2,
        num_heads: 2,
        d_model: 8,
        d_ff: 16,
        max_len: t,
        fusion_heads: 2,
        pooling: Pooling::Mean,
        roman_vocab: 7,
        deva_vocab: 7,
    };
    let cfg = TrainConfig::default();
    let (mut passed, mut resampled, mut worst, mut checked_params) = (0, 0, 0.0f64, 0);
    let mut failures = Vec::new();
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = init_params(&model, seed).map_err(|e| e.to_string())?;
        let names: Vec<String> = params.names().map(str::to_string).collect();
        for n in &names {
            for v in params.get_mut(n).unwrap().data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        let frozen = snapshot_frozen(&params);
        for v in params.get_mut("deva/tok_emb").unwrap().data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        let pairs: Vec<EncodedPair> = (0..b)
            .map(|i| {
                let len = rng.random_range(2..=t);
                let mut seq = || EncodedSeq {
                    ids: (0..t).map(|k| if k == 0 { 0 } else if k < len { rng.random_range(3..7) } else { 1 }).collect(),
                    mask: (0..t).map(|k| k < len).collect(),
                };
                EncodedPair {
                    roman: seq(),
                    deva: seq(),
                    label: (i + 1) % NUM_CLASSES,
                }
            })
            .collect();
        let refs: Vec<&EncodedPair> = pairs.iter().collect();
        let batch = Batch::collate(&refs, false);
        let gc = param_grad_check(&params, &frozen, GRAD_STEP, GRAD_FLOOR, |g, p| {
            let terms = loss_graph(g, &model, &cfg, p, &batch)?;
            Ok((terms.total, terms.plan_supports()))
        })
        .map_err(|e| e.to_string())?;
        if !gc.stable {
            resampled += 1;
            continue;
        }
        checked_params = gc.errors.len();
        for (name, e) in &gc.errors {
            worst = worst.max(*e);
            if *e > GRAD_TOL {
                failures.push(format!("seed {seed} {name}: {e:.2e}"));
            }
        }
        passed += 1;
        if passed == GRAD_INSTANCES {
            break;
        }
    }
    let elapsed = start.elapsed();
    check(
        passed == GRAD_INSTANCES && failures.is_empty() && elapsed < GRAD_BUDGET,
        format!(
            "{passed} instances x {checked_params} parameter tensors, worst relative error {worst:.2e}, \
             {resampled} degenerate instances resampled, {:.1}s{}",
            elapsed.as_secs_f64(),
            if failures.is_empty() { String::new() } else { format!("; failures: {}", failures.join(", ")) }
        ),
    )
}

fn loss_arithmetic() -> Outcome {
    let cfg = |alpha, gamma| TrainConfig {
        alpha,
        beta: 0.7,
        gamma,
        ..TrainConfig::default()
    };
    let weighted = combined_loss(1.0, 2.0, 3.0, &cfg(1.0, 0.7)).map_err(|e| e.to_string())?;
    let no_align = combined_loss(1.0, 2.0, 3.0, &cfg(0.0, 0.7)).map_err(|e| e.to_string())?;
    let no_reg = combined_loss(1.0, 2.0, 3.0, &cfg(1.0, 0.0)).map_err(|e| e.to_string())?;
    check(
        weighted == 4.5 && no_align == 1.0 && no_reg == 1.0 + 0.7 * 2.0,
        format!("(1,2,3; 1,0.7,0.7) = {weighted}; alpha=0 gives {no_align}; gamma=0 gives {no_reg}"),
    )
}

fn regularization_effect() -> Outcome {
    let corpus = gen_synthetic(&SynthConfig::new(400, 31, CuePlacement::DevaAdvantaged)).map_err(|e| e.to_string())?;
    let (rv, dv) = build_vocab(&corpus.train, 1).map_err(|e| e.to_string())?;
    let enc = |xs: &[ScriptPairExample]| xs.iter().map(|e| encode(e, &rv, &dv, 16)).collect();
    let data = TrainData {
        train: enc(&corpus.train),
        validation: enc(&corpus.validation),
        test: enc(&corpus.test),
    };
    let model = ModelConfig {
        architecture: Architecture::Fusion { query: Script::Roman },
        num_layers: 2,
        num_heads: 4,
        d_model: 32,
        d_ff: 64,
        max_len: 16,
        fusion_heads: 4,
        pooling: Pooling::Mean,
        roman_vocab: rv.len(),
        deva_vocab: dv.len(),
    };
    let cfg = |gamma| TrainConfig {
        gamma,
        learning_rate: 3e-3,
        max_epochs: 5,
        seed: 11,
        ..TrainConfig::default()
    };
    let with = train_loop(&model, &cfg(0.7), &data).map_err(|e| e.to_string())?;
    let without = train_loop(&model, &cfg(0.0), &data).map_err(|e| e.to_string())?;
    let initial = snapshot_frozen(&init_params(&model, 11).map_err(|e| e.to_string())?);
    let identical = with.frozen.as_ref() == Some(&initial) && without.frozen.as_ref() == Some(&initial);
    let (a, b) = (with.result.final_reg_emd.unwrap_or(f64::NAN), without.result.final_reg_emd.unwrap_or(f64::NAN));
    check(
        a < b && identical,
        format!("final EMD(live, snapshot) gamma=0.7 {a:.5} vs gamma=0 {b:.5}; snapshot bit-identical: {identical}"),
    )
}

/// v(S) symmetric in words 1 and 2, with interactions.
struct Symmetric;

impl CoalitionModel for Symmetric {
    fn probs(&self, _: &ScriptPairExample, coalitions: &[Vec<bool>]) -> CoreResult<Vec<[f64; NUM_CLASSES]>> {
        Ok(coalitions
            .iter()
            .map(|c| {
                let x = |k: usize| if c[k] { 1.0 } else { 0.0 };
                let v = 0.3 * x(0) + 0.2 * (x(1) + x(2)) + 0.45 * x(1) * x(2) * x(3) - 0.1 * x(0) * x(3) + 0.05 * x(4);
                [v; NUM_CLASSES]
            })
            .collect())
    }
}

fn shapley_axioms(runs: Option<&AblationRuns>) -> Outcome {
    let runs = runs.ok_or("needs the trained proposed model from criterion 2")?;
    let classifier = Classifier::load(&runs.work.join(format!("run0_{}/checkpoint", Ablation::None))).map_err(|e| e.to_string())?;
    let test = xscript_core::text::load_dataset(&runs.work.join("data0"), xscript_core::text::Split::Test).map_err(|e| e.to_string())?;
    let base = test.iter().find(|e| e.len() >= 5).ok_or("no test sentence with 5 words")?;
    let mut roman = base.roman().to_vec();
    let mut deva = base.deva().to_vec();
    for w in ["qqqq", "zzzz"] {
        roman.push(w.into());
        deva.push(w.into());
    }
    let ex = ScriptPairExample::new(roman, deva, Sentiment::Neutral).map_err(|e| e.to_string())?;
    let n = ex.len();
    let exact = shapley_exact(&classifier, &ex, None).map_err(|e| e.to_string())?;
    let efficiency = (exact.values.iter().sum::<f64>() - (exact.full_value - exact.base_value)).abs();
    let dummies_zero = exact.values[n - 2] == 0.0 && exact.values[n - 1] == 0.0;

    let sym = shapley_exact(&Symmetric, &ScriptPairExample::from_text("a b c d e", "a b c d e", Sentiment::Neutral).unwrap(), Some(0))
        .map_err(|e| e.to_string())?;
    let symmetric = sym.values[1] == sym.values[2] && exact.values[n - 2] == exact.values[n - 1];

    let sampled = shapley_sampled(&classifier, &ex, Some(exact.class), SHAP_PERMUTATIONS, 1).map_err(|e| e.to_string())?;
    let stderr = sampled.stderr.as_ref().ok_or("sampled mode without stderr")?;
    let worst_z = (0..n)
        .filter(|&k| stderr[k] > 0.0)
        .map(|k| (sampled.values[k] - exact.values[k]).abs() / stderr[k])
        .fold(0.0f64, f64::max);
    let zero_se_exact = (0..n).filter(|&k| stderr[k] == 0.0).all(|k| sampled.values[k] == exact.values[k]);
    check(
        efficiency <= SHAP_EFFICIENCY_TOL && dummies_zero && symmetric && worst_z <= SHAP_STDERRS && zero_se_exact,
        format!(
            "{n}-word sentence: efficiency error {efficiency:.2e}, dummy words zero: {dummies_zero}, symmetric pair equal: {symmetric}, \
             sampled ({SHAP_PERMUTATIONS} permutations) max |sampled - exact| = {worst_z:.2} stderr"
        ),
    )
}

fn layer_sweep(work: &Path) -> Outcome {
    xscript(work, &["gen-synthetic", "--out", "sweep_data", "--size", "300", "--seed", "5", "--cue-placement", "deva_advantaged"])?;
    let layers = SWEEP_LAYERS.to_string();
    xscript(
        work,
        &[
            "grid", "--data", "sweep_data", "--out", "sweep", "--sweep-layer", "--num-layers", &layers, "--d-model", "16", "--d-ff", "32",
            "--max-len", "12", "--lr", "3e-3", "--max-epochs", "4", "--seed", "3",
        ],
    )?;
    let curve = std::fs::read_to_string(work.join("sweep/layer_curve.tsv")).map_err(|e| e.to_string())?;
    let rows: Vec<(usize, f64)> = curve
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap())
        })
        .collect();
    let mut argmax = rows[0];
    for &r in &rows[1..] {
        if r.1 > argmax.1 {
            argmax = r;
        }
    }
    let summary = json(&work.join("sweep/summary.json"))?;
    let recorded = summary["best_layer"].as_u64().map(|v| v as usize);
    let cells = std::fs::read_dir(work.join("sweep/cells")).map_err(|e| e.to_string())?.count();
    let complete = rows.iter().map(|r| r.0).eq(1..=SWEEP_LAYERS);
    check(
        rows.len() == SWEEP_LAYERS && complete && cells == SWEEP_LAYERS && recorded == Some(argmax.0),
        format!(
            "{} curve entries for L={SWEEP_LAYERS}, {cells} runs, summary best layer {recorded:?}, curve argmax {} (val F1 by layer: {})",
            rows.len(),
            argmax.0,
            rows.iter().map(|r| format!("{:.3}", r.1)).collect::<Vec<_>>().join(" ")
        ),
    )
}

fn determinism(runs: Option<&AblationRuns>) -> Outcome {
    let work = runs.ok_or("needs the artifacts of criterion 2")?.work.as_path();
    let ckpt = format!("run0_{}/checkpoint", Ablation::None);
    let base = format!("run0_{}/checkpoint", Ablation::BaselineDeva);
    xscript(work, &["eval", "--checkpoint", &ckpt, "--data", "data0", "--out", "eval0"])?;
    xscript(
        work,
        &["explain", "--checkpoint", &ckpt, "--compare-baseline", &base, "--data", "data0", "--index", "3", "--format", "html", "--out", "explain0"],
    )?;
    xscript(work, &["explain", "--checkpoint", &ckpt, "--data", "data0", "--index", "4", "--sampled", "--permutations", "200", "--seed", "8", "--out", "explain1"])?;
    let dirs = ["data0".to_string(), format!("run0_{}", Ablation::None), format!("run1_{}", Ablation::NoReg), "eval0".into(), "sweep".into(), "explain0".into(), "explain1".into()];
    let mut compared = 0;
    for dir in &dirs {
        let replay = format!("replay_{dir}");
        xscript(work, &["replay", &format!("{dir}/manifest.json"), "--out", &replay])?;
        let m = json(&work.join(dir).join("manifest.json"))?;
        let mut files: Vec<String> = m["outputs"].as_array().ok_or("manifest without outputs")?.iter().filter_map(|v| v.as_str().map(String::from)).collect();
        files.push("manifest.json".into());
        for f in files {
            let a = std::fs::read(work.join(dir).join(&f)).map_err(|e| e.to_string())?;
            let b = std::fs::read(work.join(&replay).join(&f)).map_err(|e| e.to_string())?;
            if a != b {
                return Err(format!("{dir}/{f} differs after replay"));
            }
            compared += 1;
        }
    }
    Ok(format!(
        "{} manifests (gen-synthetic, train x2, eval, grid, explain x2) replayed; {compared} files byte-identical",
        dirs.len()
    ))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let work = tmp.path();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |n: u32, name: &'static str, o: Outcome| {
        let (tag, detail) = match &o {
            Ok(d) => ("PASS", d.as_str()),
            Err(d) => ("FAIL", d.as_str()),
        };
        println!("{tag} [{n:>2}] {name}: {detail}");
        results.push((n, name, o));
    };
    report(1, "benchmark-scale F1 non-reproducibility", non_reproducibility());
    let (o, runs) = ablation_ordering(work);
    report(2, "ablation ordering", o);
    report(3, "EMD solver exactness", emd_exactness());
    report(4, "EMD identity and symmetry", emd_identity_symmetry());
    report(5, "end-to-end gradient check", gradient_check());
    report(6, "composite-loss arithmetic", loss_arithmetic());
    report(7, "regularization effect", regularization_effect());
    report(8, "Shapley axioms", shapley_axioms(runs.as_ref()));
    report(9, "layer-sweep artifact", layer_sweep(work));
    report(10, "determinism", determinism(runs.as_ref()));
    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
