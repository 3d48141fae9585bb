use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pafmsm::cohort::{discretize, to_transitions};
use pafmsm::discrete::{compute_weights, expand_person_days, ExposureModel};
use pafmsm::multistate::aalen_johansen_extended;
use pafmsm::paf::{bootstrap_ci, EstimatorSpec};
use pafmsm::simulate::{simulate_cohort, HazardSpec};
use pafmsm::{Estimand, Estimator};
use pafmsm_bench::daily_cohort;

fn aalen_johansen(c: &mut Criterion) {
    let mut group = c.benchmark_group("aalen_johansen_extended");
    for n in [1_000, 10_000] {
        let records = to_transitions(&daily_cohort(n, 1));
        group.bench_with_input(BenchmarkId::from_parameter(n), &records, |b, r| {
            b.iter(|| aalen_johansen_extended(black_box(r)).unwrap())
        });
    }
    group.finish();
}

fn ipw_weights(c: &mut Criterion) {
    let panel = discretize(&daily_cohort(5_000, 2), false).unwrap();
    let model = ExposureModel::nonparametric(&expand_person_days(&panel, &[]).unwrap());
    c.bench_function("compute_weights/5000", |b| b.iter(|| compute_weights(black_box(&panel), &model).unwrap()));
}

fn simulation(c: &mut Criterion) {
    let spec = HazardSpec::constant(0.05, 0.05, 0.02, 0.05, 0.03, 100.0);
    c.bench_function("simulate_cohort/10000", |b| b.iter(|| simulate_cohort(black_box(&spec), 10_000, 3).unwrap()));
}

fn bootstrap(c: &mut Criterion) {
    let cohort = daily_cohort(1_000, 4);
    let spec = EstimatorSpec::new(Estimand::PafC, Estimator::Multistate).unwrap();
    let grid: Vec<f64> = (1..=100).map(f64::from).collect();
    let mut group = c.benchmark_group("bootstrap_ci");
    group.sample_size(10);
    group.bench_function("n1000_B100", |b| b.iter(|| bootstrap_ci(black_box(&cohort), &spec, 100, 5, &grid).unwrap()));
    group.finish();
}

criterion_group!(benches, aalen_johansen, ipw_weights, simulation, bootstrap);
criterion_main!(benches);
