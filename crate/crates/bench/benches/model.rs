use std::hint::black_box;

use aqcf_core::model::{ForwardOptions, Model, ModelConfig};
use aqcf_core::training::{Example, TrainConfig, TrainState, Trainer};
use aqcf_core::{rng, Mode};
use criterion::{criterion_group, criterion_main, Criterion};

fn toy() -> ModelConfig {
    ModelConfig {
        vocab_size: 52,
        d_model: 32,
        n_heads: 2,
        n_layers: 1,
        n_qubits: 4,
        l_max: 4,
        max_seq_len: 16,
        memory_slots: 8,
        depth_hidden: 8,
        fusion_hidden: 8,
        ..ModelConfig::default()
    }
}

fn forward(c: &mut Criterion) {
    let (model, store) = Model::new(&toy(), &mut rng::stream(0, &[])).unwrap();
    let ids: Vec<usize> = (2..14).collect();
    let opts = ForwardOptions::new(Mode::Infer);
    c.bench_function("model/predict_12_tokens", |b| {
        b.iter(|| model.predict(&store, black_box(&ids), &opts, &mut rng::stream(1, &[])).unwrap())
    });
}

fn train_step(c: &mut Criterion) {
    let (model, store) = Model::new(&toy(), &mut rng::stream(0, &[])).unwrap();
    let data: Vec<Example> = (0..32)
        .map(|i| Example {
            ids: (0..8).map(|k| 2 + (i * 7 + k * 3) % 50).collect(),
            label: i % 2,
        })
        .collect();
    let batch: Vec<&Example> = data.iter().collect();
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&model, cfg, TrainState::new(store, 0)).unwrap();
    c.bench_function("model/train_step_batch32_stage3", |b| {
        b.iter(|| trainer.train_step(black_box(&batch), 0.9, 1000).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = forward, train_step
}
criterion_main!(benches);
