use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use unlearn_forge::attacks::{train_shadow_ensemble, ReaClassConfig, rea_classwise};
use unlearn_forge::data::{make_synthetic_gaussian, SyntheticSpec};
use unlearn_forge::landscape::{loss_grid, make_plane};
use unlearn_forge::nn::{Activation, MlpArchitecture, SgdConfig};
use unlearn_forge::par::ExecMode;

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn landscape_grid(c: &mut Criterion) {
    let arch = MlpArchitecture::new(vec![16, 64, 64, 12], Activation::Relu, 1).unwrap();
    let p = arch.init_params();
    let data = make_synthetic_gaussian(12, 16, 40, 0.5, 2);
    let basis = make_plane(&p, 3, 1.0, 11).unwrap();
    let mut g = c.benchmark_group("loss_grid_11x11");
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| loss_grid(&basis, &arch, &data, mode).unwrap())
        });
    }
    g.finish();
}

fn shadow_training(c: &mut Criterion) {
    let arch = MlpArchitecture::new(vec![16, 32, 8], Activation::Relu, 1).unwrap();
    let spec = SyntheticSpec {
        class_count: 8,
        per_class: 30,
        ..Default::default()
    };
    let sgd = SgdConfig::default();
    let mut g = c.benchmark_group("shadow_ensemble_8");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                train_shadow_ensemble(&arch, |k| spec.sample(30, 2 + k as u64, "s"), &sgd, 3, 8, 10, 0, mode).unwrap()
            })
        });
    }
    g.finish();
}

fn reminiscence(c: &mut Criterion) {
    let arch = MlpArchitecture::new(vec![16, 64, 12], Activation::Relu, 1).unwrap();
    let p = arch.init_params();
    let candidate = make_synthetic_gaussian(12, 16, 2, 0.5, 4);
    let reference = make_synthetic_gaussian(12, 16, 10, 0.5, 5);
    let cfg = ReaClassConfig {
        idx_max: 30,
        ..Default::default()
    };
    let mut g = c.benchmark_group("rea_classwise_4_lrs");
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| rea_classwise(&p, &arch, &candidate, &reference, &cfg, mode).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, landscape_grid, shadow_training, reminiscence);
criterion_main!(benches);
