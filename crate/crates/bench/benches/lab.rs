use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use vrjp_bench::{complete_trajectory, ramp, sim_config, torus};
use vrjp_core::forest::{ForestCatalog, KappaMatrix};
use vrjp_core::linalg::{build_generator, poisson_solution, PoissonRoute};
use vrjp_core::probe::{decompose_trajectory, ProbeOptions};
use vrjp_core::{init_sim, make_named_graph, ReinforcementSpec};

fn sim_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("sim_step");
    for side in [5, 31] {
        group.bench_with_input(BenchmarkId::new("torus", side), &side, |b, &side| {
            let mut state = init_sim(sim_config(torus(side), 1.0, 1)).unwrap();
            b.iter(|| black_box(state.step().unwrap()));
        });
    }
    group.finish();
}

fn kappa_matrix(c: &mut Criterion) {
    let mut group = c.benchmark_group("kappa_matrix");
    for n in [6, 24, 96] {
        let g = make_named_graph("cycle", &[n]).unwrap();
        let bundle = build_generator(&g, &ReinforcementSpec::power(2.0), &ramp(n)).unwrap();
        group.bench_with_input(BenchmarkId::new("cycle", n), &n, |b, &n| {
            b.iter(|| {
                let m = KappaMatrix::new(&bundle.h, 0, n / 2).unwrap();
                black_box(m.kappa(1, n - 1))
            });
        });
    }
    group.finish();
}

fn forest_sums(c: &mut Criterion) {
    let mut group = c.benchmark_group("forest_sums");
    for n in [4, 6] {
        let g = make_named_graph("complete", &[n]).unwrap();
        let catalog = ForestCatalog::new(&g).unwrap();
        let weights: Vec<f64> = ramp(n).iter().map(|z| z * z).collect();
        group.bench_with_input(BenchmarkId::new("complete", n), &n, |b, _| {
            b.iter(|| black_box(catalog.sums(&weights).tree_sum));
        });
    }
    group.finish();
}

fn poisson_routes(c: &mut Criterion) {
    let mut group = c.benchmark_group("poisson");
    let g = make_named_graph("path", &[8]).unwrap();
    let bundle = build_generator(&g, &ReinforcementSpec::power(2.0), &ramp(8)).unwrap();
    for route in [PoissonRoute::ClosedForm, PoissonRoute::LinearSolve, PoissonRoute::Integral] {
        group.bench_function(format!("{route:?}"), |b| {
            b.iter(|| black_box(poisson_solution(&bundle, route).unwrap().residual));
        });
    }
    group.finish();
}

fn probe(c: &mut Criterion) {
    let mut group = c.benchmark_group("probe");
    group.sample_size(10);
    let (g, traj) = complete_trajectory(4, 200);
    let w = ReinforcementSpec::power(2.0);
    let grid: Vec<f64> = (0..=20).map(|k| traj.end_time * f64::from(k) / 20.0).map(|t| t.min(traj.end_time)).collect();
    for fast_path in [false, true] {
        let opts = ProbeOptions {
            fast_path,
            ..ProbeOptions::default()
        };
        let name = if fast_path { "sherman_morrison" } else { "refactorize" };
        group.bench_function(name, |b| {
            b.iter(|| black_box(decompose_trajectory(&traj, &g, &w, 0, 1, &grid, &opts).unwrap()));
        });
    }
    group.finish();
}

criterion_group!(benches, sim_step, kappa_matrix, forest_sums, poisson_routes, probe);
criterion_main!(benches);
