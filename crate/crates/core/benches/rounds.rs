use colearn_core::baselines::ensemble_train;
use colearn_core::coordinator::{run_round, ColearnConfig, RoundContext, RoundState};
use colearn_core::datasets::{gen_gaussian_blobs, gen_xor_rings, partition_iid};
use colearn_core::schedule::{ClrSchedule, ElrSchedule, EpochPolicy, FlePolicy, RateSchedule};
use colearn_core::{Activation, Execution, ModelSpec};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn colearn_round(c: &mut Criterion) {
    let mut group = c.benchmark_group("colearn_round");
    group.sample_size(20);
    let cases = [
        (
            "blobs_logistic",
            gen_gaussian_blobs(1, 10_000, 20, 5, 3.0).unwrap(),
            ModelSpec::logistic(20, 5).unwrap(),
        ),
        (
            "xor_mlp",
            gen_xor_rings(1, 5_000, 0.1).unwrap(),
            ModelSpec::mlp(2, &[16, 16], 2, Activation::Relu).unwrap(),
        ),
    ];
    for (name, data, spec) in cases {
        let shards = partition_iid(&data, 5, 0).unwrap();
        for (label, execution) in MODES {
            let mut cfg = ColearnConfig::new(
                spec.clone(),
                RateSchedule::Clr(ClrSchedule::default()),
                EpochPolicy::Fle(FlePolicy::new(1).unwrap()),
                0,
            );
            cfg.execution = execution;
            let state = RoundState::initial(cfg.initial_params(), 1, 0.01);
            let ctx = RoundContext {
                config: &cfg,
                shards: &shards,
                test: None,
                epochs_done: 0,
            };
            group.bench_with_input(BenchmarkId::new(name, label), &ctx, |b, ctx| {
                b.iter(|| run_round(&state, ctx).unwrap())
            });
        }
    }
    group.finish();
}

fn ensemble(c: &mut Criterion) {
    let mut group = c.benchmark_group("ensemble_train");
    group.sample_size(20);
    let data = gen_xor_rings(2, 5_000, 0.1).unwrap();
    let shards = partition_iid(&data, 5, 0).unwrap();
    let spec = ModelSpec::mlp(2, &[16, 16], 2, Activation::Relu).unwrap();
    let sched = ElrSchedule::new(0.1, 0.25, 2).unwrap();
    for (label, execution) in MODES {
        group.bench_function(label, |b| {
            b.iter(|| ensemble_train(&shards, &spec, &sched, 2, 32, 0, execution).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, colearn_round, ensemble);
criterion_main!(benches);
