use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use layoutgen_core::codec::{canonicalize, encode_edges, Codec};
use layoutgen_core::model::{
    ElementBatchItem, ElementModel, ModelConfig, Preset, Strategy, TrainConfig,
};
use layoutgen_core::opt::{optimize, ConstraintSet};
use layoutgen_core::stats::compute_stats;
use layoutgen_core::synth::{generate_corpus, GenConfig};
use layoutgen_core::tensor::{Adam, AdamConfig};
use layoutgen_core::{EdgeKind, Layout};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn corpus(n: usize) -> Vec<Layout> {
    generate_corpus(&GenConfig {
        seed: 1,
        n_layouts: n,
        ..GenConfig::default()
    })
    .unwrap()
}

fn codec(c: &mut Criterion) {
    let layouts: Vec<Layout> = corpus(100).iter().map(canonicalize).collect();
    c.bench_function("codec/encode_100_layouts", |b| {
        b.iter(|| {
            for l in &layouts {
                let codec = Codec::for_layout(l);
                black_box(codec.encode_elements(l).unwrap());
                black_box(encode_edges(l, EdgeKind::HorizontalAdjacency, true));
            }
        })
    });
}

fn optimizer(c: &mut Criterion) {
    let sets: Vec<ConstraintSet> = corpus(50)
        .iter()
        .map(|l| ConstraintSet::from_layout(l).unwrap())
        .collect();
    c.bench_function("opt/reconstruct_50_layouts", |b| {
        b.iter(|| {
            for cs in &sets {
                let _ = black_box(optimize(cs));
            }
        })
    });
}

fn model(c: &mut Criterion) {
    let layouts = corpus(16);
    let codec = Codec::for_layout(&layouts[0]);
    let seqs: Vec<_> = layouts
        .iter()
        .map(|l| codec.encode_elements(&canonicalize(l)).unwrap())
        .collect();
    let items: Vec<_> = seqs
        .iter()
        .map(|s| ElementBatchItem { seq: s, cond: None })
        .collect();
    let config = ModelConfig::element(Preset::Desk, codec.vocab_size(), false);
    let base = ElementModel::new(config, codec.clone(), 0).unwrap();
    c.bench_function("model/desk_element_train_step_b16", |b| {
        b.iter_batched(
            || {
                let m = base.clone();
                let adam = Adam::new(AdamConfig::default(), &m.params);
                (m, adam)
            },
            |(mut m, mut adam)| {
                let cfg = TrainConfig {
                    epochs: 1,
                    batch_size: 16,
                    ..TrainConfig::default()
                };
                black_box(m.train(&items, &cfg, &mut adam).unwrap())
            },
            BatchSize::LargeInput,
        )
    });
    c.bench_function("model/desk_element_sample", |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        b.iter(|| black_box(base.sample(None, Strategy::default(), &mut rng).unwrap()))
    });
}

fn statistics(c: &mut Criterion) {
    let layouts = corpus(200);
    let (mode, types) = (layouts[0].mode, layouts[0].types.clone());
    c.bench_function("stats/compute_200_layouts", |b| {
        b.iter(|| black_box(compute_stats(mode, &types, &layouts).unwrap()))
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = codec, optimizer, model, statistics
}
criterion_main!(benches);
