//! Timings for the operations that dominate an experiment: single reservoir
//! transitions and their inversion, teacher-forced driving, the closed-form
//! readout fit, closed-loop forecasting, and density estimation.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use ndarray::Array1;

use causal_embed::{
    build, closed_loop, estimate_density, fit_pca, fit_ridge, generate, make_dataset, observe,
    EscapeGuard, ObservationSpec, ReadoutModel, Reservoir, SystemKind, SystemSpec, TargetKind,
    TimeSeries,
};

fn lorenz_inputs(n_samples: usize, seed: u64) -> TimeSeries {
    let spec = SystemSpec {
        kind: SystemKind::Lorenz,
        parameters: Default::default(),
        dt: Some(0.02),
        n_samples,
        seed,
        initial_state: vec![],
        transient_discard: 500,
    };
    let hidden = generate(&spec).unwrap();
    observe(&hidden, &ObservationSpec::identity(0.01, 0.01, false), seed ^ 1).unwrap()
}

/// A small trained experiment shared by the forecasting benches.
fn trained(n: usize) -> (Reservoir, ReadoutModel, TimeSeries) {
    let inputs = lorenz_inputs(900, 7);
    let res = build(n, 0.5, 0.99, 7).unwrap();
    let traj = res.drive(&inputs, 100, &Array1::zeros(n)).unwrap();
    let basis = fit_pca(&traj, false).unwrap();
    let set = make_dataset(&traj, &inputs, TargetKind::NextInput, 1.0, &basis).unwrap();
    let reg = fit_ridge(&set, 1e-6).unwrap();
    let model = ReadoutModel::new(basis, reg, TargetKind::NextInput, 1.0).unwrap();
    (res, model, inputs)
}

fn bench_step_and_inversion(c: &mut Criterion) {
    let n = 1000;
    let res = build(n, 0.5, 0.99, 3).unwrap();
    let inputs = lorenz_inputs(10, 3);
    let u = res.pad_input(inputs.row(0)).unwrap();
    let x = Array1::from_elem(n, 0.1);
    let x_next = res.step(u.view(), x.view()).unwrap();

    c.bench_function("reservoir_step/n1000", |b| {
        b.iter(|| res.step(black_box(u.view()), black_box(x.view())).unwrap())
    });
    c.bench_function("input_inversion/n1000", |b| {
        b.iter(|| {
            res.invert_input(black_box(x.view()), black_box(x_next.view()))
                .unwrap()
        })
    });
}

fn bench_drive(c: &mut Criterion) {
    let n = 200;
    let res = build(n, 0.5, 0.99, 5).unwrap();
    let inputs = lorenz_inputs(600, 5);
    let x0 = Array1::zeros(n);
    let mut g = c.benchmark_group("drive");
    g.throughput(Throughput::Elements(inputs.len() as u64));
    g.bench_function("n200_steps600", |b| {
        b.iter(|| res.drive(black_box(&inputs), 100, &x0).unwrap())
    });
    g.finish();
}

fn bench_ridge_fit(c: &mut Criterion) {
    let n = 200;
    let res = build(n, 0.5, 0.99, 5).unwrap();
    let inputs = lorenz_inputs(900, 5);
    let traj = res.drive(&inputs, 100, &Array1::zeros(n)).unwrap();
    let basis = fit_pca(&traj, false).unwrap();
    let set = make_dataset(&traj, &inputs, TargetKind::NextInput, 1.0, &basis).unwrap();
    c.bench_function("ridge_fit/n200_pairs799", |b| {
        b.iter(|| fit_ridge(black_box(&set), 1e-6).unwrap())
    });
}

fn bench_closed_loop(c: &mut Criterion) {
    let (res, model, inputs) = trained(200);
    let traj = res.drive(&inputs, 100, &Array1::zeros(200)).unwrap();
    let last = inputs.len() - 1;
    let guard = EscapeGuard::from_series(&inputs, 10.0);
    let horizon = 200;
    let mut g = c.benchmark_group("closed_loop");
    g.throughput(Throughput::Elements(horizon as u64));
    g.bench_function("n200_steps200", |b| {
        b.iter(|| {
            closed_loop(
                &res,
                &model,
                inputs.row(last),
                traj.states.row(last),
                horizon,
                Some(&guard),
                false,
            )
            .unwrap()
        })
    });
    g.finish();
}

fn bench_density(c: &mut Criterion) {
    let inputs = lorenz_inputs(20_000, 9);
    let samples: Vec<f64> = inputs.values.column(0).to_vec();
    c.bench_function("density/20k_samples_100_bins", |b| {
        b.iter(|| estimate_density(black_box(&samples), 100, 2.0).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(30);
    targets = bench_step_and_inversion, bench_drive, bench_ridge_fit, bench_closed_loop, bench_density
}
criterion_main!(benches);
