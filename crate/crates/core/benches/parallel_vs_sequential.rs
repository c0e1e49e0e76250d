use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use num_complex::Complex64 as C64;

use fkneq_core::contour::build_contour;
use fkneq_core::dmft::lattice_sum;
use fkneq_core::exec::Parallelism;
use fkneq_core::lattice::{FieldProtocol, QuadratureSpec};
use fkneq_core::propagators::{bare_isolated_level, ThermalState};

/// Momentum sum of the driven lattice with a nonzero self-energy, the inner
/// loop of every self-consistency iteration.
fn lattice(c: &mut Criterion) {
    let ts = ThermalState::new(0.5, 0.0).unwrap();
    let fp = FieldProtocol { e: 0.5, t_on: 0.5 };
    let quad = QuadratureSpec::GaussHermite { order: 6 }.build().unwrap();
    let mut group = c.benchmark_group("lattice_sum");
    group.sample_size(10);
    for t_max in [2.0, 4.0] {
        let grid = Arc::new(build_contour(0.0, t_max, ts.beta(), 0.1, 16).unwrap());
        let sigma = bare_isolated_level(&grid, 0.0, 0.0).scale(C64::new(0.25, 0.0));
        for policy in [Parallelism::Sequential, Parallelism::Parallel] {
            group.bench_with_input(BenchmarkId::new(format!("{policy:?}"), grid.len()), &sigma, |b, s| {
                b.iter(|| black_box(lattice_sum(s, &quad, &fp, &ts, policy).unwrap()))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, lattice);
criterion_main!(benches);
