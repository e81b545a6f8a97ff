use std::collections::BTreeSet;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use prefetchlab_core::address::{delta_set, reconstruct, LogicalLba, ReferenceStrategy};
use prefetchlab_core::config::ExperimentConfig;
use prefetchlab_core::pipeline::train_pipeline;
use prefetchlab_core::prefetcher::{Grasp, NaiveDelta, NoPrefetch};
use prefetchlab_core::simulator::run;
use prefetchlab_core::trace::generate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn deltas(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let set = |rng: &mut ChaCha8Rng| -> BTreeSet<LogicalLba> {
        (0..16).map(|_| LogicalLba::new(rng.random_range(0..4), rng.random_range(0..10_000))).collect()
    };
    let pairs: Vec<_> = (0..256).map(|_| (set(&mut rng), set(&mut rng))).collect();
    c.bench_function("delta_set+reconstruct x256", |b| {
        b.iter(|| {
            for (prev, cur) in &pairs {
                let ds = delta_set(prev, cur, ReferenceStrategy::Min).unwrap();
                black_box(reconstruct(&ds, |_| Some(10_000)).unwrap());
            }
        })
    });
}

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.gen.query_count = 2000;
    cfg.vocab.ds = 128;
    cfg.train.max_epochs = 1;
    cfg.encoder.ae_epochs = 1;
    cfg.resolved()
}

fn simulate(c: &mut Criterion) {
    let cfg = small_config();
    let w = generate(&cfg.gen).unwrap();
    c.bench_function("simulate np 2000 queries", |b| {
        b.iter(|| black_box(run(&w.queries, &w.catalog, &mut NoPrefetch, &cfg.sim).unwrap()))
    });
    c.bench_function("simulate naive 2000 queries", |b| {
        b.iter(|| black_box(run(&w.queries, &w.catalog, &mut NaiveDelta::new(cfg.prefetch.k), &cfg.sim).unwrap()))
    });

    let train = generate(&{
        let mut g = cfg.gen.clone();
        g.query_count = 300;
        g
    })
    .unwrap();
    let (parts, _) = train_pipeline(&train, &cfg).unwrap();
    let mut sim = cfg.sim.clone();
    sim.l_tune = 0;
    let replay = &w.queries[..200];
    let mut group = c.benchmark_group("grasp");
    group.sample_size(10);
    group.bench_function("simulate grasp 200 queries", |b| {
        b.iter(|| {
            let mut g = Grasp::new(parts.clone(), &w.catalog, cfg.grasp.clone());
            black_box(run(replay, &w.catalog, &mut g, &sim).unwrap())
        })
    });
    group.finish();
}

criterion_group!(benches, deltas, simulate);
criterion_main!(benches);
