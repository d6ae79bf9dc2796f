use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use majorant_bench::fixture;
use majorant_core::bounds::{majorant_i_n, minorant, MajorantInput, MinorantParams};
use majorant_core::constants::{eigenvalue_oracle, OracleConstraint};
use majorant_core::mesh::Shape;
use majorant_core::pipeline::prepare;
use majorant_core::problems::ManufacturedId;

fn majorant(c: &mut Criterion) {
    let mut g = c.benchmark_group("majorant_I_N");
    for n in [4, 8] {
        let (mp, s, setup) = fixture(ManufacturedId::Mp1, n);
        let input = MajorantInput {
            part: &setup.part,
            v: &setup.v,
            y: &setup.y,
            w: None,
            spec: &mp.spec,
            constants: &setup.constants,
            mu: &setup.mu,
            times: &setup.times,
        };
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| majorant_i_n(&input, &s.majorant).unwrap()));
    }
    g.finish();
}

fn lower_bound(c: &mut Criterion) {
    let mut g = c.benchmark_group("minorant");
    g.sample_size(10);
    for n in [4, 8] {
        let (mp, _, setup) = fixture(ManufacturedId::Mp1, n);
        let p = MinorantParams::default();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| minorant(&setup.part, &setup.v, &mp.spec, &setup.times, &p).unwrap())
        });
    }
    g.finish();
}

fn pipeline(c: &mut Criterion) {
    let mut g = c.benchmark_group("prepare");
    g.sample_size(10);
    let (mp, s, _) = fixture(ManufacturedId::Mp2, 8);
    g.bench_function("mp2_8", |b| b.iter(|| prepare(&mp.spec, &s, None, None).unwrap()));
    g.finish();
}

fn oracle(c: &mut Criterion) {
    let mut g = c.benchmark_group("eigenvalue_oracle");
    g.sample_size(10);
    let rect = Shape::Rectangle { h1: 1.0, h2: 1.0 };
    let tri = Shape::Triangle { vertices: [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]] };
    for grid in [16, 32] {
        g.bench_with_input(BenchmarkId::new("rect_trace", grid), &grid, |b, &n| {
            b.iter(|| eigenvalue_oracle(&rect, &OracleConstraint::ZeroMeanTrace(vec![0]), n).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("tri_poincare", grid), &grid, |b, &n| {
            b.iter(|| eigenvalue_oracle(&tri, &OracleConstraint::ZeroMeanVolume, n).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, majorant, lower_bound, pipeline, oracle);
criterion_main!(benches);
