use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use irtime::ir::parse_module;
use irtime::ml::forest::fit_forest;
use irtime::ml::ForestParams;
use irtime::par::Execution;
use irtime::pipeline::corpus;
use irtime::trace::{simulate, FeatureVector, SimSettings};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn forest_training(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<FeatureVector> = (0..300)
        .map(|_| {
            let mut v = FeatureVector::zeros();
            for f in v.0.iter_mut() {
                *f = rng.random_range(0.0..1000.0);
            }
            v
        })
        .collect();
    let y: Vec<f64> = x.iter().map(|v| v.0.iter().sum()).collect();
    let params = ForestParams {
        n_trees: 32,
        ..ForestParams::default()
    };
    let mut g = c.benchmark_group("forest_fit_300x42_32_trees");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| fit_forest(&x, &y, &params, 7, exec).unwrap())
        });
    }
    g.finish();
}

fn batch_simulation(c: &mut Criterion) {
    let modules: Vec<_> = corpus::supported_ops()
        .iter()
        .map(|op| parse_module(&corpus::generate(op, 5_000, 3).unwrap(), op).unwrap())
        .collect();
    let settings = SimSettings::default();
    let mut g = c.benchmark_group("simulate_25_programs");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| exec.map(&modules, |m| simulate(m, "bench", &settings).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, forest_training, batch_simulation);
criterion_main!(benches);
