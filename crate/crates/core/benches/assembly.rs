use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use schur_ode::galerkin::{AssemblyOptions, BasisSpace};
use schur_ode::par::{self, Execution};
use schur_ode::perturbation::{solve_direct, SolveOptions};
use schur_ode::poly::parse_system;
use schur_ode::report::sample_points;

const DUFFING: &str = "var q p\ndq = 1 p\ndp = -1 q ; -0.1 q^3\n";

fn modes() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)]
}

fn operator_assembly(c: &mut Criterion) {
    let sys = parse_system(DUFFING).unwrap();
    let mut group = c.benchmark_group("operator_assembly");
    group.sample_size(10);
    for sigma in [7, 11, 15] {
        let space = BasisSpace::new(2, sigma).unwrap();
        for (name, exec) in modes() {
            let opts = AssemblyOptions { exec, ..AssemblyOptions::default() };
            group.bench_with_input(BenchmarkId::new(name, sigma), &space, |b, space| {
                b.iter(|| space.operator(black_box(&sys), opts).unwrap())
            });
        }
    }
    group.finish();
}

fn trajectory_sampling(c: &mut Criterion) {
    let sys = parse_system(DUFFING).unwrap();
    let space = BasisSpace::new(2, 11).unwrap();
    let m = space.operator(&sys, AssemblyOptions::default()).unwrap();
    let h0 = space.initial(&[1.0, 0.0]).unwrap();
    let sol = solve_direct(&m, &space.h, &h0, 0.0, &SolveOptions::default()).unwrap();
    let xs = sample_points(0.0, 2.0 * std::f64::consts::PI, 2001).unwrap();
    let mut group = c.benchmark_group("trajectory_sampling");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_function(name, |b| b.iter(|| par::map_slice(exec, black_box(&xs), |&x| sol.y(x))));
    }
    group.finish();
}

criterion_group!(benches, operator_assembly, trajectory_sampling);
criterion_main!(benches);
