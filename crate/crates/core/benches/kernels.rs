//! Kernel timings on one worker thread against the full pool.
//!
//! Build with `--no-default-features` to time the sequential fallback
//! instead of rayon.

use std::sync::Arc;

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pointassim::fem::{assemble_weighted_stiffness, interpolate_callable, Coefficient, FunctionSpace, P2};
use pointassim::mesh::{build_rectangle_mesh, Point};
use pointassim::par;
use pointassim::pointeval::build_point_interpolator;
use pointassim::reconstruct::{reconstruct, ReconstructionMethod};
use pointassim::vom::build_vertex_only_mesh;

fn modes() -> Vec<(&'static str, Option<usize>)> {
    vec![("one_thread", Some(1)), ("pool", None)]
}

fn random_points(n: usize) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..n).map(|_| [rng.gen(), rng.gen()]).collect()
}

fn assembly(c: &mut Criterion) {
    let mut g = c.benchmark_group("stiffness_assembly");
    for n in [16, 64] {
        let mesh = Arc::new(build_rectangle_mesh(n, n, 1.0, 1.0).unwrap());
        let space = FunctionSpace::new(mesh, P2).unwrap();
        let q = interpolate_callable(&space, |x| (3.0 * x[0]).sin() * x[1]);
        let map = |v: f64| 0.5 * v.exp();
        for (label, jobs) in modes() {
            g.bench_with_input(BenchmarkId::new(label, n), &n, |b, _| {
                b.iter(|| {
                    par::with_jobs(jobs, || {
                        assemble_weighted_stiffness(&space, &Coefficient::MappedField(&q, &map)).unwrap()
                    })
                })
            });
        }
    }
    g.finish();
}

fn location(c: &mut Criterion) {
    let mut g = c.benchmark_group("vertex_only_mesh");
    let mesh = Arc::new(build_rectangle_mesh(64, 64, 1.0, 1.0).unwrap());
    for npts in [1_000, 20_000] {
        let pts = random_points(npts);
        for (label, jobs) in modes() {
            g.bench_with_input(BenchmarkId::new(label, npts), &npts, |b, _| {
                b.iter(|| par::with_jobs(jobs, || build_vertex_only_mesh(mesh.clone(), black_box(pts.clone())).unwrap()))
            });
        }
    }
    g.finish();
}

fn interpolator(c: &mut Criterion) {
    let mut g = c.benchmark_group("point_interpolator");
    let mesh = Arc::new(build_rectangle_mesh(64, 64, 1.0, 1.0).unwrap());
    let space = FunctionSpace::new(mesh.clone(), P2).unwrap();
    let vom = Arc::new(build_vertex_only_mesh(mesh, random_points(20_000)).unwrap());
    for (label, jobs) in modes() {
        g.bench_function(label, |b| b.iter(|| par::with_jobs(jobs, || build_point_interpolator(&space, &vom).unwrap())));
    }
    g.finish();
}

fn nearest_reconstruction(c: &mut Criterion) {
    let mut g = c.benchmark_group("nearest_reconstruction");
    g.sample_size(10);
    let mesh = Arc::new(build_rectangle_mesh(32, 32, 1.0, 1.0).unwrap());
    let space = FunctionSpace::new(mesh.clone(), P2).unwrap();
    let pts = random_points(1024);
    let vom = Arc::new(build_vertex_only_mesh(mesh, pts.clone()).unwrap());
    let values: Vec<f64> = pts.iter().map(|p| p[0] * p[1]).collect();
    let obs = pointassim::assimilate::Observations::new(vom, values, vec![1.0; pts.len()]).unwrap();
    for (label, jobs) in modes() {
        g.bench_function(label, |b| {
            b.iter(|| par::with_jobs(jobs, || reconstruct(&obs, &space, &ReconstructionMethod::Nearest).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, assembly, location, interpolator, nearest_reconstruction);
criterion_main!(benches);
