//! Quadratic extrapolation of transient runs to `dt -> 0`.
//!
//! Three runs with steps `h1 > h2 > h3` are combined pointwise with the
//! Lagrange weights of the parabola through `(h_i, v_i)` evaluated at zero.
//! Values are compared on the real times shared by all three grids.

use faer::Mat;
use num_complex::Complex64 as C64;

use crate::contour::{extract_components, ContourGrid};
use crate::dmft::TransientSolution;
use crate::error::{Error, Result};

/// Lagrange weights `L_i(0)` of the parabola through the three steps.
pub fn zero_step_weights(h: [f64; 3]) -> Result<[f64; 3]> {
    if h.iter().any(|&x| !(x > 0.0)) || h[0] == h[1] || h[1] == h[2] || h[0] == h[2] {
        return Err(Error::Incommensurate("extrapolation needs three distinct positive steps".into()));
    }
    let mut w = [0.0; 3];
    for i in 0..3 {
        let mut p = 1.0;
        for j in 0..3 {
            if j != i {
                p *= h[j] / (h[j] - h[i]);
            }
        }
        w[i] = p;
    }
    Ok(w)
}

/// Extrapolates one scalar sequence.
pub fn extrapolate_values(h: [f64; 3], v: [f64; 3]) -> Result<f64> {
    let w = zero_step_weights(h)?;
    Ok(w[0] * v[0] + w[1] * v[1] + w[2] * v[2])
}

/// Time steps present in all grids, as index triples into each grid.
pub fn common_times(grids: [&ContourGrid; 3]) -> Result<Vec<(f64, [usize; 3])>> {
    let g0 = grids[0];
    for g in &grids[1..] {
        if (g.t_min() - g0.t_min()).abs() > 1e-12 || (g.t_max() - g0.t_max()).abs() > 1e-9 * g0.t_max().abs().max(1.0) {
            return Err(Error::Incommensurate("runs cover different time windows".into()));
        }
        if (g.beta() - g0.beta()).abs() > 1e-12 * g0.beta() {
            return Err(Error::Incommensurate("runs use different temperatures".into()));
        }
    }
    let mut out = Vec::new();
    for i in 0..g0.n_t() {
        let t = g0.time(i);
        if let (Some(a), Some(b)) = (grids[1].time_index(t), grids[2].time_index(t)) {
            out.push((t, [i, a, b]));
        }
    }
    if out.len() < 2 {
        return Err(Error::Incommensurate("the three grids share fewer than two real times".into()));
    }
    Ok(out)
}

/// Extrapolated real-time tables and scalar observables on the common times.
#[derive(Debug, Clone)]
pub struct Extrapolated {
    pub steps: [f64; 3],
    pub times: Vec<f64>,
    /// Per-run current on the common times.
    pub run_current: [Vec<f64>; 3],
    pub current: Vec<f64>,
    pub density: Vec<f64>,
    pub kinetic: Vec<f64>,
    pub sigma_lesser: Mat<C64>,
    pub sigma_retarded: Mat<C64>,
    pub g_lesser: Mat<C64>,
    pub g_retarded: Mat<C64>,
}

/// Quadratic `dt -> 0` extrapolation of three runs sorted by decreasing step.
pub fn extrapolate_dt(runs: [&TransientSolution; 3]) -> Result<Extrapolated> {
    let h = [runs[0].grid.dt(), runs[1].grid.dt(), runs[2].grid.dt()];
    if !(h[0] > h[1] && h[1] > h[2]) {
        return Err(Error::Incommensurate(format!("steps must decrease strictly, got {h:?}")));
    }
    if runs.iter().any(|r| r.params != runs[0].params) || runs.iter().any(|r| r.grid.n_tau() != runs[0].grid.n_tau()) {
        return Err(Error::Incommensurate("runs differ in model parameters or spur size".into()));
    }
    let common = common_times([&runs[0].grid, &runs[1].grid, &runs[2].grid])?;
    let w = zero_step_weights(h)?;
    let times: Vec<f64> = common.iter().map(|c| c.0).collect();
    let n = times.len();

    let series = |get: &dyn Fn(&TransientSolution) -> &Vec<f64>| -> ([Vec<f64>; 3], Vec<f64>) {
        let per: [Vec<f64>; 3] = std::array::from_fn(|r| common.iter().map(|c| get(runs[r])[c.1[r]]).collect());
        let ext = (0..n).map(|i| w[0] * per[0][i] + w[1] * per[1][i] + w[2] * per[2][i]).collect();
        (per, ext)
    };
    let (run_current, current) = series(&|r| &r.current);
    let (_, density) = series(&|r| &r.density);
    let (_, kinetic) = series(&|r| &r.kinetic);

    let sig: Vec<_> = runs.iter().map(|r| extract_components(&r.sigma)).collect();
    let gl: Vec<_> = runs.iter().map(|r| extract_components(&r.g_loc)).collect();
    let table = |tables: [&Mat<C64>; 3]| {
        Mat::from_fn(n, n, |i, j| (0..3).map(|r| w[r] * tables[r][(common[i].1[r], common[j].1[r])]).sum::<C64>())
    };
    Ok(Extrapolated {
        steps: h,
        times,
        run_current,
        current,
        density,
        kinetic,
        sigma_lesser: table([&sig[0].lesser, &sig[1].lesser, &sig[2].lesser]),
        sigma_retarded: table([&sig[0].retarded, &sig[1].retarded, &sig[2].retarded]),
        g_lesser: table([&gl[0].lesser, &gl[1].lesser, &gl[2].lesser]),
        g_retarded: table([&gl[0].retarded, &gl[1].retarded, &gl[2].retarded]),
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
