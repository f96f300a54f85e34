use criterion::{criterion_group, criterion_main, Criterion};
use elm_core::hermite::{cell_nodes, eval_patch, fit_hermite, HermiteBasis};
use elm_core::lagrangian::eval_density;
use elm_core::mlp::{PlaneWave, PlaneWaveMode};
use elm_core::patch::residual;
use elm_core::{DoublePendulum, Jet, LagrangianDensity, Layout, MlpDensity, Wave1d};
use std::hint::black_box;

fn jet_1d() -> Jet {
    let wave = PlaneWave {
        c2: 0.05,
        modes: vec![PlaneWaveMode {
            amplitude: 0.4,
            k: vec![1.3],
            phase: 0.2,
        }],
    };
    wave.jet(&[0.7, 1.1])
}

fn densities(c: &mut Criterion) {
    let jet = jet_1d();
    let mlp = MlpDensity::new(Layout::wave(1), &[32, 32], 0).unwrap();
    c.bench_function("residual/wave1d", |b| b.iter(|| residual(&Wave1d { c2: 0.05 }, black_box(&jet))));
    c.bench_function("residual/mlp_32x32", |b| b.iter(|| residual(&mlp, black_box(&jet))));
    c.bench_function("eval_density/mlp_32x32", |b| b.iter(|| eval_density(&mlp, black_box(&jet))));
    let pj = Jet {
        layout: DoublePendulum.layout(),
        first: vec![1.3, 2.3, 0.1, -0.2],
        second: Some(vec![0.5, -0.4]),
        coord: vec![0.0],
    };
    c.bench_function("residual/double_pendulum", |b| b.iter(|| residual(&DoublePendulum, black_box(&pj))));
}

fn hermite(c: &mut Criterion) {
    for (name, layout) in [("1d", Layout::wave(1)), ("2d", Layout::wave(2))] {
        let basis = HermiteBasis::new(layout);
        let d = basis.axes();
        let nodes = cell_nodes(&vec![0.0; d], &vec![0.1; d]);
        let data: Vec<f64> = (0..basis.data_len()).map(|i| (i as f64 * 0.37).sin()).collect();
        c.bench_function(&format!("hermite/fit_{name}"), |b| {
            b.iter(|| fit_hermite(&nodes, black_box(&data), &basis).unwrap())
        });
        let patch = fit_hermite(&nodes, &data, &basis).unwrap();
        let point = vec![0.05; d];
        c.bench_function(&format!("hermite/eval_{name}"), |b| {
            b.iter(|| eval_patch(&patch, black_box(&point)).unwrap())
        });
    }
}

criterion_group!(benches, densities, hermite);
criterion_main!(benches);
