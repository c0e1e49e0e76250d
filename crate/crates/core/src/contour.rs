//! Discretized Kadanoff-Baym-Keldysh contour and the algebra of two-time
//! contour kernels.
//!
//! Point layout for a grid with `n_t` real times and `n_tau` spur points:
//!
//! ```text
//! index 0 .. n_t            forward branch, t_i = t_min + i dt
//! index n_t .. 2 n_t        backward branch, reversed (index 2 n_t - 1 - i holds t_i)
//! index 2 n_t .. N          spur, tau_m = m beta / (n_tau - 1)
//! ```
//!
//! A larger index is later on the contour. On the diagonal a kernel holds the
//! mean of its two equal-time limits, which keeps the trapezoid contour
//! integrals second order across the equal-time jump. Physical components are
//! read from the off-diagonal branch blocks and never touch the diagonal.

use std::sync::Arc;

use faer::linalg::solvers::DenseSolveCore;
use faer::{Mat, MatRef};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Relative tolerance used when checking that a span is an integer number of steps.
pub const COMMENSURATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    Forward,
    Backward,
    Spur,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourPoint {
    pub branch: Branch,
    /// Real time for the horizontal branches; `t_min` on the spur.
    pub t: f64,
    /// Imaginary time; zero on the horizontal branches.
    pub tau: f64,
    /// Index of the real time (`t = t_min + step dt`) or spur slot.
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourGrid {
    t_min: f64,
    t_max: f64,
    dt: f64,
    beta: f64,
    n_t: usize,
    n_tau: usize,
    points: Vec<ContourPoint>,
    weights: Vec<C64>,
}

/// Number of steps `span / dt` if it is an integer to within [`COMMENSURATE_TOL`].
pub fn commensurate_steps(span: f64, dt: f64) -> Option<usize> {
    if !(span.is_finite() && dt.is_finite()) || dt <= 0.0 || span < 0.0 {
        return None;
    }
    let ratio = span / dt;
    let n = ratio.round();
    ((ratio - n).abs() <= COMMENSURATE_TOL * n.max(1.0)).then_some(n as usize)
}

/// Builds the three-branch contour with trapezoid weights.
pub fn build_contour(t_min: f64, t_max: f64, beta: f64, dt: f64, n_tau: usize) -> Result<ContourGrid> {
    if !(t_min.is_finite() && t_max.is_finite()) || t_max <= t_min {
        return Err(Error::InvalidGrid(format!("need t_max > t_min, got [{t_min}, {t_max}]")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidGrid(format!("dt must be positive, got {dt}")));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidGrid(format!("beta must be positive, got {beta}")));
    }
    if n_tau < 2 {
        return Err(Error::InvalidGrid(format!("n_tau must be at least 2, got {n_tau}")));
    }
    let steps = commensurate_steps(t_max - t_min, dt).ok_or_else(|| {
        Error::InvalidGrid(format!(
            "(t_max - t_min)/dt = {} is not an integer",
            (t_max - t_min) / dt
        ))
    })?;
    let n_t = steps + 1;
    let dtau = beta / (n_tau - 1) as f64;
    let mut points = Vec::with_capacity(2 * n_t + n_tau);
    let mut weights = Vec::with_capacity(2 * n_t + n_tau);
    let edge = |k: usize, n: usize| if k == 0 || k + 1 == n { 0.5 } else { 1.0 };
    for i in 0..n_t {
        points.push(ContourPoint { branch: Branch::Forward, t: t_min + i as f64 * dt, tau: 0.0, step: i });
        weights.push(C64::new(dt * edge(i, n_t), 0.0));
    }
    for r in 0..n_t {
        let i = n_t - 1 - r;
        points.push(ContourPoint { branch: Branch::Backward, t: t_min + i as f64 * dt, tau: 0.0, step: i });
        weights.push(C64::new(-dt * edge(i, n_t), 0.0));
    }
    for m in 0..n_tau {
        points.push(ContourPoint { branch: Branch::Spur, t: t_min, tau: m as f64 * dtau, step: m });
        weights.push(C64::new(0.0, -dtau * edge(m, n_tau)));
    }
    Ok(ContourGrid { t_min, t_max, dt, beta, n_t, n_tau, points, weights })
}

impl ContourGrid {
    pub fn t_min(&self) -> f64 {
        self.t_min
    }
    pub fn t_max(&self) -> f64 {
        self.t_max
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn n_t(&self) -> usize {
        self.n_t
    }
    pub fn n_tau(&self) -> usize {
        self.n_tau
    }
    pub fn dtau(&self) -> f64 {
        self.beta / (self.n_tau - 1) as f64
    }
    /// Total number of contour points.
    pub fn len(&self) -> usize {
        self.points.len()
    }
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
    pub fn points(&self) -> &[ContourPoint] {
        &self.points
    }
    pub fn weights(&self) -> &[C64] {
        &self.weights
    }
    pub fn time(&self, i: usize) -> f64 {
        self.t_min + i as f64 * self.dt
    }
    pub fn real_times(&self) -> Vec<f64> {
        (0..self.n_t).map(|i| self.time(i)).collect()
    }
    pub fn fwd(&self, i: usize) -> usize {
        i
    }
    pub fn bwd(&self, i: usize) -> usize {
        2 * self.n_t - 1 - i
    }
    pub fn spur(&self, m: usize) -> usize {
        2 * self.n_t + m
    }
    /// Real-time trapezoid weight of time index `i` (positive).
    pub fn time_weight(&self, i: usize) -> f64 {
        self.weights[i].re
    }
    /// Ordering along the contour: later points compare greater.
    pub fn contour_order(&self, p: usize, q: usize) -> std::cmp::Ordering {
        p.cmp(&q)
    }
    /// Index of a real time on this grid, if it is a grid point.
    pub fn time_index(&self, t: f64) -> Option<usize> {
        let x = (t - self.t_min) / self.dt;
        let k = x.round();
        ((x - k).abs() <= 1e-6 && k >= 0.0 && (k as usize) < self.n_t).then_some(k as usize)
    }
    /// Same physical parameters and discretization.
    pub fn same_as(&self, other: &ContourGrid) -> bool {
        self == other
    }
}

/// Dense two-time function on a contour grid; entry `(i, j)` is `F(z_i, z_j)`.
#[derive(Debug, Clone)]
pub struct ContourKernel {
    grid: Arc<ContourGrid>,
    values: Mat<C64>,
}

impl ContourKernel {
    pub fn new(grid: Arc<ContourGrid>, values: Mat<C64>) -> Result<Self> {
        let n = grid.len();
        if values.nrows() != n || values.ncols() != n {
            return Err(Error::InvalidGrid(format!(
                "kernel shape {}x{} does not match {n} contour points",
                values.nrows(),
                values.ncols()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<ContourGrid>) -> Self {
        let n = grid.len();
        Self { grid, values: Mat::zeros(n, n) }
    }

    pub fn from_fn(grid: Arc<ContourGrid>, f: impl FnMut(usize, usize) -> C64) -> Self {
        let n = grid.len();
        Self { grid, values: Mat::from_fn(n, n, f) }
    }

    pub fn grid(&self) -> &ContourGrid {
        &self.grid
    }
    pub fn grid_arc(&self) -> &Arc<ContourGrid> {
        &self.grid
    }
    pub fn values(&self) -> MatRef<'_, C64> {
        self.values.as_ref()
    }
    pub fn values_mut(&mut self) -> &mut Mat<C64> {
        &mut self.values
    }
    pub fn into_values(self) -> Mat<C64> {
        self.values
    }
    pub fn len(&self) -> usize {
        self.values.nrows()
    }
    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.values[(i, j)]
    }

    pub fn is_finite(&self) -> bool {
        let n = self.len();
        (0..n).all(|j| (0..n).all(|i| self.values[(i, j)].is_finite()))
    }

    fn check_same_grid(&self, other: &ContourKernel) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, s: C64, other: &ContourKernel) -> Result<ContourKernel> {
        self.check_same_grid(other)?;
        let n = self.len();
        let values = Mat::from_fn(n, n, |i, j| self.values[(i, j)] + s * other.values[(i, j)]);
        Ok(Self { grid: self.grid.clone(), values })
    }

    pub fn add(&self, other: &ContourKernel) -> Result<ContourKernel> {
        self.add_scaled(C64::new(1.0, 0.0), other)
    }

    pub fn sub(&self, other: &ContourKernel) -> Result<ContourKernel> {
        self.add_scaled(C64::new(-1.0, 0.0), other)
    }

    pub fn scale(&self, s: C64) -> ContourKernel {
        let n = self.len();
        let values = Mat::from_fn(n, n, |i, j| s * self.values[(i, j)]);
        Self { grid: self.grid.clone(), values }
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &ContourKernel) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(max_abs_diff(self.values.as_ref(), other.values.as_ref()))
    }

    pub fn max_abs(&self) -> f64 {
        let n = self.len();
        let mut m = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                m = m.max(self.values[(i, j)].norm());
            }
        }
        m
    }
}

pub(crate) fn max_abs_diff(a: MatRef<'_, C64>, b: MatRef<'_, C64>) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    m
}

/// The contour delta function: `diag(1 / w)`.
pub fn contour_delta(grid: &Arc<ContourGrid>) -> ContourKernel {
    let w = grid.weights();
    let n = grid.len();
    let mut values = Mat::zeros(n, n);
    for k in 0..n {
        values[(k, k)] = w[k].inv();
    }
    ContourKernel { grid: grid.clone(), values }
}

/// Discrete contour integral `C(z, z') = sum_k A(z, z_k) w_k B(z_k, z')`.
pub fn convolve(a: &ContourKernel, b: &ContourKernel) -> Result<ContourKernel> {
    a.check_same_grid(b)?;
    let w = a.grid.weights();
    let n = a.len();
    let aw = Mat::from_fn(n, n, |i, j| a.values[(i, j)] * w[j]);
    let values = &aw * &b.values;
    Ok(ContourKernel { grid: a.grid.clone(), values })
}

/// Dense LU inverse with a pivot-ratio condition estimate.
pub(crate) fn lu_inverse(m: MatRef<'_, C64>, context: &str) -> Result<Mat<C64>> {
    let lu = m.partial_piv_lu();
    let u = lu.U();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for k in 0..u.nrows() {
        let p = u[(k, k)].norm();
        lo = lo.min(p);
        hi = hi.max(p);
    }
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !condition.is_finite() || condition > 1e13 {
        return Err(Error::Singular { context: context.to_string(), condition });
    }
    let inv = lu.inverse();
    let n = inv.nrows();
    for j in 0..n {
        for i in 0..n {
            if !inv[(i, j)].is_finite() {
                return Err(Error::Singular { context: context.to_string(), condition });
            }
        }
    }
    Ok(inv)
}

/// Contour inverse `X` with `A * X = X * A = delta_c`, i.e. `W^-1 A^-1 W^-1` as matrices.
pub fn invert(a: &ContourKernel) -> Result<ContourKernel> {
    let w = a.grid.weights();
    let inv = lu_inverse(a.values.as_ref(), "contour inverse")?;
    let n = a.len();
    let values = Mat::from_fn(n, n, |i, j| inv[(i, j)] / (w[i] * w[j]));
    Ok(ContourKernel { grid: a.grid.clone(), values })
}

/// `[K^-1 - S]^-1` computed as `(I - K W S W)^-1 K`.
///
/// Kernels with the mean value on the diagonal are nearly singular on the
/// alternating (Nyquist) mode, so differences of their contour inverses lose
/// precision. Dyson-type solves only invert `I - K W S W`, which stays well
/// conditioned.
pub fn dyson(k: &ContourKernel, s: &ContourKernel) -> Result<ContourKernel> {
    k.check_same_grid(s)?;
    let w = k.grid.weights();
    let n = k.len();
    let sw = Mat::from_fn(n, n, |i, j| w[i] * s.values[(i, j)] * w[j]);
    let kw = &k.values * &sw;
    solve_identity_minus(k, kw, "Dyson operator")
}

/// `[K^-1 - c delta_c]^-1` computed as `(I - c K W)^-1 K`: a constant energy shift.
pub fn shift_level(k: &ContourKernel, c: f64) -> Result<ContourKernel> {
    if c == 0.0 {
        return Ok(k.clone());
    }
    let w = k.grid.weights();
    let n = k.len();
    let kw = Mat::from_fn(n, n, |i, j| c * k.values[(i, j)] * w[j]);
    solve_identity_minus(k, kw, "shifted operator")
}

fn solve_identity_minus(k: &ContourKernel, a: Mat<C64>, context: &str) -> Result<ContourKernel> {
    let n = k.len();
    let m = Mat::from_fn(n, n, |i, j| if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) } - a[(i, j)]);
    let inv = lu_inverse(m.as_ref(), context)?;
    Ok(ContourKernel { grid: k.grid.clone(), values: &inv * &k.values })
}

/// Real-time components, Matsubara block and mixed blocks of a contour kernel.
///
/// Real-time tables are indexed by time step `(i, j)` of `(t, t')`; `right_mixed`
/// is `F(t, tau)` and `left_mixed` is `F(tau, t)`.
#[derive(Debug, Clone)]
pub struct ComponentSet {
    pub lesser: Mat<C64>,
    pub greater: Mat<C64>,
    pub retarded: Mat<C64>,
    pub advanced: Mat<C64>,
    pub matsubara: Mat<C64>,
    pub right_mixed: Mat<C64>,
    pub left_mixed: Mat<C64>,
}

/// Splits a contour kernel into its physical components.
pub fn extract_components(a: &ContourKernel) -> ComponentSet {
    let g = a.grid();
    let (nt, ntau) = (g.n_t(), g.n_tau());
    let v = &a.values;
    let lesser = Mat::from_fn(nt, nt, |i, j| v[(g.fwd(i), g.bwd(j))]);
    let greater = Mat::from_fn(nt, nt, |i, j| v[(g.bwd(i), g.fwd(j))]);
    let retarded = Mat::from_fn(nt, nt, |i, j| if i >= j { greater[(i, j)] - lesser[(i, j)] } else { C64::new(0.0, 0.0) });
    let advanced = Mat::from_fn(nt, nt, |i, j| if i <= j { lesser[(i, j)] - greater[(i, j)] } else { C64::new(0.0, 0.0) });
    let matsubara = Mat::from_fn(ntau, ntau, |m, n| v[(g.spur(m), g.spur(n))]);
    let right_mixed = Mat::from_fn(nt, ntau, |i, m| v[(g.fwd(i), g.spur(m))]);
    let left_mixed = Mat::from_fn(ntau, nt, |m, j| v[(g.spur(m), g.fwd(j))]);
    ComponentSet { lesser, greater, retarded, advanced, matsubara, right_mixed, left_mixed }
}

/// Reassembles a contour kernel from its components (the inverse of
/// [`extract_components`] for kernels whose branch blocks obey the Keldysh structure).
pub fn assemble_kernel(grid: &Arc<ContourGrid>, c: &ComponentSet) -> ContourKernel {
    let g = grid.as_ref();
    let pts = g.points();
    ContourKernel::from_fn(grid.clone(), |p, q| {
        let (a, b) = (pts[p], pts[q]);
        match (a.branch, b.branch) {
            (Branch::Spur, Branch::Spur) => c.matsubara[(a.step, b.step)],
            (Branch::Spur, _) => c.left_mixed[(a.step, b.step)],
            (_, Branch::Spur) => c.right_mixed[(a.step, b.step)],
            _ => match p.cmp(&q) {
                std::cmp::Ordering::Greater => c.greater[(a.step, b.step)],
                std::cmp::Ordering::Less => c.lesser[(a.step, b.step)],
                std::cmp::Ordering::Equal => 0.5 * (c.lesser[(a.step, b.step)] + c.greater[(a.step, b.step)]),
            },
        }
    })
}

/// Largest modulus of the retarded table strictly above the diagonal (`t < t'`).
pub fn causality_violation(retarded: MatRef<'_, C64>) -> f64 {
    let n = retarded.nrows();
    let mut m = 0.0f64;
    for j in 0..n {
        for i in 0..j {
            m = m.max(retarded[(i, j)].norm());
        }
    }
    m
}

/// Largest deviation from skew-Hermiticity `L(t,t') = -conj(L(t',t))`.
pub fn skew_hermitian_violation(lesser: MatRef<'_, C64>) -> f64 {
    let n = lesser.nrows();
    let mut m = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            m = m.max((lesser[(i, j)] + lesser[(j, i)].conj()).norm());
        }
    }
    m
}
