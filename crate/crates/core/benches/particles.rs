use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mvsde::coefficients::{eval_b, Example5Family};
use mvsde::measure::{w2_assignment_with, EmpiricalMeasure};
use mvsde::path::SegmentBuf;
use mvsde::presets::Preset;
use mvsde::solver::{simulate_clt_pair, simulate_perturbed, solve_deterministic_limit};
use mvsde::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn perturbed(c: &mut Criterion) {
    let base = Preset::Example5TanhReflected
        .problem()
        .sim_config()
        .unwrap()
        .with_epsilon(0.1)
        .with_seed(1);
    let mut group = c.benchmark_group("simulate_perturbed");
    group.sample_size(10);
    for particles in [64, 512, 2048] {
        for (name, exec) in MODES {
            let cfg = base.clone().with_particles(particles).with_execution(exec);
            group.bench_with_input(BenchmarkId::new(name, particles), &cfg, |b, cfg| {
                b.iter(|| black_box(simulate_perturbed(cfg).unwrap()))
            });
        }
    }
    group.finish();
}

fn clt_pair(c: &mut Criterion) {
    let base = Preset::Example5TanhReflected
        .problem()
        .sim_config()
        .unwrap()
        .with_epsilon(0.01)
        .with_seed(2);
    let x0 = solve_deterministic_limit(&base).unwrap().path;
    let mut group = c.benchmark_group("simulate_clt_pair");
    group.sample_size(10);
    for particles in [64, 512] {
        for (name, exec) in MODES {
            let cfg = base.clone().with_particles(particles).with_execution(exec);
            group.bench_with_input(BenchmarkId::new(name, particles), &cfg, |b, cfg| {
                b.iter(|| black_box(simulate_clt_pair(cfg, &x0).unwrap()))
            });
        }
    }
    group.finish();
}

fn wasserstein(c: &mut Criterion) {
    let grid = Preset::Example5TanhReflected.problem().grid;
    let atoms = |shift: f64, n: usize| -> Vec<SegmentBuf> {
        (0..n)
            .map(|i| SegmentBuf::from_fn(1, &grid, |t| vec![(i as f64 * 0.37 + shift + t).sin()]))
            .collect()
    };
    let mut group = c.benchmark_group("w2_assignment");
    for n in [32, 128] {
        let (a, b) = (atoms(0.0, n), atoms(0.5, n));
        let mu = EmpiricalMeasure::new(a.iter().map(|s| s.view()).collect()).unwrap();
        let nu = EmpiricalMeasure::new(b.iter().map(|s| s.view()).collect()).unwrap();
        for (name, exec) in MODES {
            group.bench_function(BenchmarkId::new(name, n), |bch| {
                bch.iter(|| black_box(w2_assignment_with(&mu, &nu, exec).unwrap()))
            });
        }
    }
    group.finish();
}

fn drift(c: &mut Criterion) {
    let p = Preset::Example5TanhReflected.problem();
    let family: &Example5Family = &p.coefficients;
    let atoms: Vec<SegmentBuf> = (0..256)
        .map(|i| SegmentBuf::constant(&[0.01 * i as f64], &p.grid))
        .collect();
    let mu = EmpiricalMeasure::new(atoms.iter().map(|s| s.view()).collect()).unwrap();
    c.bench_function("eval_b/256 atoms", |b| {
        b.iter(|| black_box(eval_b(family, &p.initial.view(), &mu).unwrap()))
    });
}

criterion_group!(benches, perturbed, clt_pair, wasserstein, drift);
criterion_main!(benches);
