use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use insdvl_core::datagen::{
    build_dataset, generate_baselines, DatasetRecipe, EvalSensors, NoiseGrid,
};
use insdvl_core::harness::{monte_carlo, RunConfig};
use insdvl_core::trees::{fit_ensemble, EnsembleParams};
use insdvl_core::{Exec, StrategySpec};

const MODES: [(&str, Exec); 2] = [
    ("sequential", Exec::Sequential),
    ("parallel", Exec::Parallel),
];

fn recipe() -> DatasetRecipe {
    DatasetRecipe {
        duration_s: 40.0,
        grid: NoiseGrid::log_spaced(0.001, 0.05, 6).unwrap(),
        ..Default::default()
    }
}

fn dataset(c: &mut Criterion) {
    let r = recipe();
    let baselines = generate_baselines(r.rate_hz, r.duration_s).unwrap();
    let mut g = c.benchmark_group("build_dataset");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| build_dataset(&baselines, &r, exec).unwrap())
        });
    }
    g.finish();
}

fn ensemble(c: &mut Criterion) {
    let r = recipe();
    let baselines = generate_baselines(r.rate_hz, r.duration_s).unwrap();
    let (train, _) = build_dataset(&baselines, &r, Exec::default()).unwrap();
    let data = train.examples();
    let params = EnsembleParams {
        n_trees: 8,
        ..Default::default()
    };
    let mut g = c.benchmark_group("fit_ensemble");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| fit_ensemble(&data, &params, exec).unwrap())
        });
    }
    g.finish();
}

fn monte_carlo_runs(c: &mut Criterion) {
    let cfg = RunConfig {
        sensors: EvalSensors {
            duration: 30.0,
            ..EvalSensors::default()
        },
        ..RunConfig::default()
    };
    let specs: Vec<StrategySpec> = ["constant:0.01,0.001", "adaptive:5"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    let mut g = c.benchmark_group("monte_carlo");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| monte_carlo(&cfg, &specs, None, 4, 0, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, dataset, ensemble, monte_carlo_runs);
criterion_main!(benches);
