use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use sdcn_core::model::{init_params, loss_and_grads, LossKind, TrainItem};
use sdcn_core::presets;
use sdcn_core::src_baseline::{build_reference_dictionary, somp};
use sdcn_core::synth::{
    make_ground_chip, make_object_chip, standard_templates, GroundModel, Pol,
};

fn bench_generator(c: &mut Criterion) {
    let templates = standard_templates();
    let channels = Pol::ALL.to_vec();
    c.bench_function("object_chip_16x16_3ch", |b| {
        b.iter(|| {
            make_object_chip(black_box(&templates[0]), 75.0, &channels, 16, 16, 9).unwrap()
        })
    });
    let model = GroundModel {
        scale: 1.0,
        correlation_length: presets::GROUND_CORR,
        seed: 3,
    };
    c.bench_function("ground_chip_16x16_3ch", |b| {
        b.iter(|| make_ground_chip(black_box(&model), &channels, 16, 16).unwrap())
    });
}

fn bench_sparse(c: &mut Criterion) {
    let combo = [Pol::HH, Pol::VV];
    let dict = build_reference_dictionary(&combo, 16, 16, 30, presets::GROUND_CORR, 5).unwrap();
    let templates = standard_templates();
    let x = make_object_chip(&templates[2], 42.0, &combo, 16, 16, 11).unwrap();
    let g = make_ground_chip(
        &GroundModel {
            scale: 1.0,
            correlation_length: presets::GROUND_CORR,
            seed: 8,
        },
        &combo,
        16,
        16,
    )
    .unwrap();
    let noisy = sdcn_core::synth::augment(&x, &g, 2.0).unwrap();
    c.bench_function("somp_k8_150_atoms_2ch", |b| {
        b.iter(|| somp(black_box(&dict), black_box(&noisy), 8, 1e-6).unwrap())
    });
}

fn bench_train_step(c: &mut Criterion) {
    let net = presets::desk_net(2);
    let params = init_params(&net, 1).unwrap();
    let combo = [Pol::HH, Pol::VV];
    let templates = standard_templates();
    let x = make_object_chip(&templates[0], 30.0, &combo, 16, 16, 1).unwrap();
    let g = make_ground_chip(
        &GroundModel {
            scale: 1.0,
            correlation_length: presets::GROUND_CORR,
            seed: 2,
        },
        &combo,
        16,
        16,
    )
    .unwrap();
    let noisy = sdcn_core::synth::augment(&x, &g, 1.5).unwrap();
    let item = TrainItem {
        noisy: &noisy.data,
        clean: &x.data,
        label: 0,
    };
    c.bench_function("loss_and_grads_single_item_desk_net", |b| {
        b.iter(|| {
            loss_and_grads(
                black_box(&params),
                &[item],
                LossKind::Joint { gamma: 1.0 },
            )
            .unwrap()
        })
    });
}

criterion_group!(benches, bench_generator, bench_sparse, bench_train_step);
criterion_main!(benches);
