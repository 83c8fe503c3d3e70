use bowden_exo::controller::{DirectionalRegression, GravityAssist, SigmoidBlend, TensionController};
use bowden_exo::exec::Exec;
use bowden_exo::plantsim::{run_identification_protocol, run_trial_grid, IdentificationProtocol, PlantConfig, TrialProtocol};
use bowden_exo::transmission::BowdenModel;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

const STRATEGIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn trial_grid(c: &mut Criterion) {
    let model = BowdenModel::default();
    let plant = PlantConfig::default();
    let controller = TensionController::new(
        GravityAssist::default(),
        DirectionalRegression::from_model(&model),
        SigmoidBlend::default(),
    )
    .unwrap();
    let protocol = TrialProtocol {
        repetitions: 3,
        ..TrialProtocol::default()
    };
    let mut group = c.benchmark_group("trial_grid");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_trial_grid(&controller, &model, &plant, black_box(&protocol), 7, exec).unwrap())
        });
    }
    group.finish();
}

fn identification_grid(c: &mut Criterion) {
    let model = BowdenModel::default();
    let plant = PlantConfig::default();
    let protocol = IdentificationProtocol {
        repetitions: 1,
        ..IdentificationProtocol::default()
    };
    let mut group = c.benchmark_group("identification_grid");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_identification_protocol(&model, &plant, black_box(&protocol), 7, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, trial_grid, identification_grid);
criterion_main!(benches);
