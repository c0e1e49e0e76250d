#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use fkneq_core::contour::{build_contour, ContourGrid};
use fkneq_core::dmft::{scf_solve, ModelParams, ScfOptions, TransientSolution};
use fkneq_core::lattice::{FieldProtocol, QuadratureGrid, QuadratureSpec};

pub fn grid(t_max: f64, beta: f64, dt: f64, n_tau: usize) -> Arc<ContourGrid> {
    Arc::new(build_contour(0.0, t_max, beta, dt, n_tau).unwrap())
}

pub fn small_quad() -> QuadratureGrid {
    QuadratureSpec::GaussHermite { order: 6 }.build().unwrap()
}

pub fn tight() -> ScfOptions {
    ScfOptions { tol: 1e-9, max_iter: 80, ..Default::default() }
}

/// Driven interacting run, `U = 1`, `T = 0.5`, `E = 0.5` from `t = 1`, on `[0, 6]`.
pub fn small_run() -> &'static TransientSolution {
    static RUN: OnceLock<TransientSolution> = OnceLock::new();
    RUN.get_or_init(|| {
        let p = ModelParams::half_filling(1.0, 0.5, FieldProtocol { e: 0.5, t_on: 1.0 }).unwrap();
        scf_solve(&p, &grid(6.0, 2.0, 0.1, 12), &small_quad(), &tight()).unwrap()
    })
}
