use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use hire_bench::Fixture;
use hire_core::eval::evaluate;
use hire_core::meta::NO_DROP;
use hire_core::trainer::{pretrain_transe, task_gradient, train, Checkpoint, MamlOrder, TrainConfig};

fn task_gradients(c: &mut Criterion) {
    let f = Fixture::desk(32);
    let sampler = f.sampler();
    let task = f.train_task(1);
    let mut group = c.benchmark_group("task_gradient");
    for order in [MamlOrder::First, MamlOrder::Full] {
        let cfg = TrainConfig { order, ..f.cfg.clone() };
        group.bench_function(format!("{order:?}").to_lowercase(), |b| {
            b.iter(|| task_gradient(&f.params, &sampler, &task, &cfg, NO_DROP, 3).unwrap())
        });
    }
    let cfg = TrainConfig {
        no_context: true,
        ..f.cfg.clone()
    };
    group.bench_function("no_context", |b| {
        b.iter(|| task_gradient(&f.params, &sampler, &task, &cfg, NO_DROP, 3).unwrap())
    });
    group.finish();
}

fn outer_step(c: &mut Criterion) {
    let f = Fixture::desk(32);
    let cfg = TrainConfig {
        max_steps: 1,
        eval_interval: 1000,
        ..f.cfg.clone()
    };
    let mut data = f.data.clone();
    data.dev.clear();
    c.bench_function("outer_step", |b| {
        b.iter_batched(
            || Checkpoint::new(f.params.clone(), cfg.clone()),
            |start| train(&data, start, &cfg, &mut |_| {}).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

fn evaluation(c: &mut Criterion) {
    let f = Fixture::desk(32);
    let sampler = f.sampler();
    let tasks = f.test_tasks();
    c.bench_function("evaluate_test_split", |b| {
        b.iter(|| evaluate(&f.params, &sampler, &tasks, &f.cfg, true).unwrap())
    });
}

fn pretraining(c: &mut Criterion) {
    let f = Fixture::desk(32);
    c.bench_function("transe_10_epochs", |b| {
        b.iter(|| pretrain_transe(&f.data.graph, 32, 10, 0.01, 1).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = task_gradients, outer_step, evaluation, pretraining
}
criterion_main!(benches);
