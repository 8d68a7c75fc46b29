use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;
use xscript_core::explainer::{shapley_exact, shapley_sampled, CoalitionModel};
use xscript_core::fusion::Pooling;
use xscript_core::model::{init_params, Architecture, Classifier, ModelConfig};
use xscript_core::text::{build_vocab, Batch, EncodedPair, Script, ScriptPairExample, Sentiment, NUM_CLASSES};
use xscript_core::transport::{emd, PointCloud};
use xscript_core::{BoundParams, Graph, Tensor};

fn cloud(rng: &mut ChaCha8Rng, m: usize, d: usize) -> PointCloud {
    PointCloud::uniform(Tensor::new(vec![m, d], (0..m * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()).unwrap()
}

fn transport(c: &mut Criterion) {
    let mut group = c.benchmark_group("emd");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for m in [4, 16, 64] {
        let (p, q) = (cloud(&mut rng, m, 32), cloud(&mut rng, m + 3, 32));
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| b.iter(|| emd(black_box(&p), black_box(&q)).unwrap()));
    }
    group.finish();
}

fn model(arch: Architecture, vocab: usize) -> ModelConfig {
    ModelConfig {
        architecture: arch,
        num_layers: 2,
        num_heads: 4,
        d_model: 32,
        d_ff: 64,
        max_len: 16,
        fusion_heads: 4,
        pooling: Pooling::Mean,
        roman_vocab: vocab,
        deva_vocab: vocab,
    }
}

fn forward(c: &mut Criterion) {
    let cfg = model(Architecture::Fusion { query: Script::Roman }, 50);
    let params = init_params(&cfg, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pairs: Vec<EncodedPair> = (0..32)
        .map(|_| {
            let len = rng.random_range(4..=16);
            let mut seq = || xscript_core::text::EncodedSeq {
                ids: (0..16).map(|k| if k == 0 { 0 } else if k < len { rng.random_range(3..50) } else { 1 }).collect(),
                mask: (0..16).map(|k| k < len).collect(),
            };
            EncodedPair {
                roman: seq(),
                deva: seq(),
                label: 0,
            }
        })
        .collect();
    let refs: Vec<&EncodedPair> = pairs.iter().collect();
    let batch = Batch::collate(&refs, true);
    c.bench_function("fusion_forward_b32", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let bound = BoundParams::bind(&mut g, &params, false);
            let out = xscript_core::model::forward(&mut g, &cfg, &bound, black_box(&batch)).unwrap();
            black_box(g.value(out.probs).data()[0])
        })
    });
}

struct Additive(Vec<f64>);

impl CoalitionModel for Additive {
    fn probs(&self, _: &ScriptPairExample, coalitions: &[Vec<bool>]) -> xscript_core::Result<Vec<[f64; NUM_CLASSES]>> {
        Ok(coalitions
            .iter()
            .map(|c| [c.iter().zip(&self.0).filter(|(k, _)| **k).map(|(_, w)| w).sum(); NUM_CLASSES])
            .collect())
    }
}

fn shapley(c: &mut Criterion) {
    let words: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
    let ex = ScriptPairExample::new(words.clone(), words, Sentiment::Neutral).unwrap();
    let game = Additive((0..12).map(|i| i as f64 / 10.0).collect());
    c.bench_function("shapley_exact_enumeration_12", |b| b.iter(|| shapley_exact(&game, black_box(&ex), Some(0)).unwrap()));

    let sentence = ScriptPairExample::from_text("timi ra ma sital kaam ramro", "तिमि र म सितल काम् रम्रो", Sentiment::Neutral).unwrap();
    let (rv, dv) = build_vocab(std::slice::from_ref(&sentence), 1).unwrap();
    let cfg = model(Architecture::Fusion { query: Script::Roman }, rv.len());
    let classifier = Classifier {
        config: ModelConfig {
            deva_vocab: dv.len(),
            ..cfg.clone()
        },
        params: init_params(&ModelConfig { deva_vocab: dv.len(), ..cfg }, 0).unwrap(),
        roman_vocab: rv,
        deva_vocab: dv,
    };
    let mut group = c.benchmark_group("shapley_model");
    group.sample_size(10);
    group.bench_function("exact_6_words", |b| b.iter(|| shapley_exact(&classifier, black_box(&sentence), None).unwrap()));
    group.bench_function("sampled_6_words_200", |b| b.iter(|| shapley_sampled(&classifier, black_box(&sentence), None, 200, 0).unwrap()));
    group.finish();
}

criterion_group!(benches, transport, forward, shapley);
criterion_main!(benches);
