//! Exact noninteracting contour propagators.
//!
//! For a single level with instantaneous energy `eps_k(t)` the contour Green's
//! function is `G(z, z') = -i [theta_c(z, z') - f] u(z) / u(z')` with
//! `u(t) = exp(-i int_{t_min}^t (eps_k - mu))` on the real branches and
//! `u(t_min - i tau) = exp(-(eps_k(t_min) - mu) tau)` on the spur, and the mean
//! of the two equal-time limits on the diagonal.
//!
//! With the lesser value on the diagonal (`L`), the propagator matrix has an
//! inverse `M` that is bidiagonal plus one corner entry. The stored kernel is
//! `G = L + c I` with `c = -i/2`, so `[G^-1 - X]^-1 = [M - (I + c M) X]^-1 (I + c M)`
//! costs a single dense inversion.

use std::sync::Arc;

use faer::{Mat, MatRef};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::contour::{invert, lu_inverse, Branch, ContourGrid, ContourKernel};
use crate::error::{Error, Result};
use crate::exec::{map_chunks, Parallelism};
use crate::lattice::{instantaneous_dispersion, phase_integral, FieldProtocol, QuadratureGrid};

const I: C64 = C64::new(0.0, 1.0);

/// Difference between the stored equal-time value and the lesser limit,
/// half of the equal-time jump `G^> - G^< = -i`.
pub const DIAGONAL_SHIFT: C64 = C64::new(0.0, -0.5);

/// Initial equilibrium state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalState {
    pub temperature: f64,
    pub mu: f64,
}

impl ThermalState {
    pub fn new(temperature: f64, mu: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidParameter(format!("temperature must be positive, got {temperature}")));
        }
        Ok(Self { temperature, mu })
    }
    pub fn beta(&self) -> f64 {
        1.0 / self.temperature
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Fermi function at inverse temperature `beta`; `beta = 0` gives 1/2.
pub fn fermi_beta(omega: f64, beta: f64) -> f64 {
    let x = beta * omega;
    if x > 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

/// Fermi-Dirac distribution `1 / (1 + e^{omega/T})`.
pub fn fermi(omega: f64, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidParameter(format!("temperature must be positive, got {temperature}")));
    }
    Ok(fermi_beta(omega, 1.0 / temperature))
}

fn check_thermal(grid: &ContourGrid, ts: &ThermalState) -> Result<()> {
    if (grid.beta() - ts.beta()).abs() > 1e-12 * grid.beta().max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "grid beta {} does not match thermal state beta {}",
            grid.beta(),
            ts.beta()
        )));
    }
    Ok(())
}

/// Log-amplitudes `ln u(z)` per contour point plus `ln f`, `ln(1 - f)`.
struct LevelPhases {
    a: Vec<C64>,
    ln_f: f64,
    ln_1mf: f64,
}

fn level_phases(eps: f64, eps_bar: f64, grid: &ContourGrid, fp: &FieldProtocol, mu: f64) -> LevelPhases {
    let t0 = grid.t_min();
    let x = instantaneous_dispersion(eps, eps_bar, t0, fp) - mu;
    let beta = grid.beta();
    let real: Vec<f64> = (0..grid.n_t())
        .map(|i| {
            let t = grid.time(i);
            phase_integral(eps, eps_bar, t, t0, fp) - mu * (t - t0)
        })
        .collect();
    let a = grid
        .points()
        .iter()
        .map(|p| match p.branch {
            Branch::Spur => C64::new(-x * p.tau, 0.0),
            _ => C64::new(0.0, -real[p.step]),
        })
        .collect();
    LevelPhases { a, ln_f: -softplus(beta * x), ln_1mf: -softplus(-beta * x) }
}

fn level_kernel(grid: &Arc<ContourGrid>, ph: &LevelPhases) -> ContourKernel {
    let a = &ph.a;
    ContourKernel::from_fn(grid.clone(), |p, q| level_entry(ph, a, p, q))
}

#[inline]
fn level_entry(ph: &LevelPhases, a: &[C64], p: usize, q: usize) -> C64 {
    match p.cmp(&q) {
        std::cmp::Ordering::Greater => -I * (ph.ln_1mf + a[p] - a[q]).exp(),
        std::cmp::Ordering::Less => I * (ph.ln_f + a[p] - a[q]).exp(),
        std::cmp::Ordering::Equal => I * ph.ln_f.exp() + DIAGONAL_SHIFT,
    }
}

/// Dense matrix of the driven level propagator, without the kernel wrapper.
pub(crate) fn bare_gk_matrix(eps: f64, eps_bar: f64, grid: &ContourGrid, fp: &FieldProtocol, mu: f64) -> Mat<C64> {
    let ph = level_phases(eps, eps_bar, grid, fp, mu);
    let a = &ph.a;
    Mat::from_fn(grid.len(), grid.len(), |p, q| level_entry(&ph, a, p, q))
}

/// Driven momentum-resolved propagator of the level `(eps, eps_bar)`.
pub fn bare_gk_contour(
    eps: f64,
    eps_bar: f64,
    grid: &Arc<ContourGrid>,
    fp: &FieldProtocol,
    ts: &ThermalState,
) -> Result<ContourKernel> {
    check_thermal(grid, ts)?;
    Ok(level_kernel(grid, &level_phases(eps, eps_bar, grid, fp, ts.mu)))
}

/// Propagator of an isolated level; its contour inverse represents
/// `(i d/dt + mu - shift) delta_c`.
pub fn bare_isolated_level(grid: &Arc<ContourGrid>, mu: f64, shift: f64) -> ContourKernel {
    level_kernel(grid, &level_phases(shift, 0.0, grid, &FieldProtocol::off(), mu))
}

/// Sparse inverse `M` of the lesser-diagonal propagator matrix: `-i` on the
/// diagonal, the one-step propagation factors on the superdiagonal and `-i` in
/// the bottom-left corner (the antiperiodic closure of the contour).
#[derive(Debug, Clone)]
pub struct BareInverse {
    pub superdiag: Vec<C64>,
}

impl BareInverse {
    pub fn new(eps: f64, eps_bar: f64, grid: &ContourGrid, fp: &FieldProtocol, mu: f64) -> Self {
        let ph = level_phases(eps, eps_bar, grid, fp, mu);
        let superdiag = ph.a.windows(2).map(|w| I * (w[0] - w[1]).exp()).collect();
        Self { superdiag }
    }

    pub fn len(&self) -> usize {
        self.superdiag.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Dense `M`.
    pub fn to_dense(&self) -> Mat<C64> {
        let n = self.len();
        let mut m = Mat::zeros(n, n);
        for k in 0..n {
            m[(k, k)] = -I;
        }
        for (k, &s) in self.superdiag.iter().enumerate() {
            m[(k, k + 1)] = s;
        }
        m[(n - 1, 0)] = -I;
        m
    }

    /// `[G^-1 - X]^-1` for the stored (mean-diagonal) propagator `G`, with `X`
    /// given as a plain matrix (for a self-energy kernel, `X = W Sigma W`).
    pub fn dress(&self, x: MatRef<'_, C64>, context: &str) -> Result<Mat<C64>> {
        let n = self.len();
        let c = DIAGONAL_SHIFT;
        let s = &self.superdiag;
        // (I + cM) has 1 + c(-i) = 1/2 on the diagonal, c s_k above it and -1/2 in the corner
        let half = C64::new(0.5, 0.0);
        let mut b = Mat::<C64>::zeros(n, n);
        for j in 0..n {
            for i in 0..n - 1 {
                b[(i, j)] = -(half * x[(i, j)] + c * s[i] * x[(i + 1, j)]);
            }
            b[(n - 1, j)] = -(half * x[(n - 1, j)] - half * x[(0, j)]);
        }
        for k in 0..n {
            b[(k, k)] += -I;
        }
        for (k, &sk) in s.iter().enumerate() {
            b[(k, k + 1)] += sk;
        }
        b[(n - 1, 0)] += -I;
        let binv = lu_inverse(b.as_ref(), context)?;
        let mut g = Mat::<C64>::zeros(n, n);
        for i in 0..n {
            g[(i, 0)] = half * binv[(i, 0)] - half * binv[(i, n - 1)];
        }
        for j in 1..n {
            let f = c * s[j - 1];
            for i in 0..n {
                g[(i, j)] = half * binv[(i, j)] + f * binv[(i, j - 1)];
            }
        }
        Ok(g)
    }
}

/// Contour inverse of the driven level propagator.
pub fn bare_gk_inverse(
    eps: f64,
    eps_bar: f64,
    grid: &Arc<ContourGrid>,
    fp: &FieldProtocol,
    ts: &ThermalState,
) -> Result<ContourKernel> {
    invert(&bare_gk_contour(eps, eps_bar, grid, fp, ts)?)
}

/// Momentum sum of the driven bare propagators.
pub fn bare_local(
    grid: &Arc<ContourGrid>,
    quad: &QuadratureGrid,
    fp: &FieldProtocol,
    ts: &ThermalState,
    policy: Parallelism,
) -> Result<ContourKernel> {
    check_thermal(grid, ts)?;
    let n = grid.len();
    let partials = map_chunks(policy, quad.len(), |range| {
        let mut acc = Mat::<C64>::zeros(n, n);
        for k in range {
            let (e, b) = quad.nodes()[k];
            let w = quad.weights()[k];
            let ph = level_phases(e, b, grid, fp, ts.mu);
            let a = &ph.a;
            for q in 0..n {
                for p in 0..n {
                    acc[(p, q)] += w * level_entry(&ph, a, p, q);
                }
            }
        }
        acc
    });
    let mut total = Mat::<C64>::zeros(n, n);
    for p in &partials {
        total += p;
    }
    ContourKernel::new(grid.clone(), total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contour::{build_contour, contour_delta, convolve, invert};

    #[test]
    fn fermi_closed_form() {
        assert_eq!(fermi(0.0, 0.3).unwrap(), 0.5);
        assert!((fermi(0.1, 0.1).unwrap() - 1.0 / (1.0 + std::f64::consts::E)).abs() < 1e-15);
        assert!(fermi(1.0, 0.0).is_err());
        assert_eq!(fermi_beta(1e6, 1.0), 0.0);
        assert_eq!(fermi_beta(-1e6, 1.0), 1.0);
    }

    #[test]
    fn sparse_inverse_of_lesser_diagonal_matrix() {
        let g = Arc::new(build_contour(0.0, 2.0, 3.0, 0.25, 5).unwrap());
        let fp = FieldProtocol { e: 0.7, t_on: 0.5 };
        let ts = ThermalState::new(1.0 / 3.0, 0.2).unwrap();
        let gk = bare_gk_contour(0.8, -0.4, &g, &fp, &ts).unwrap();
        let mut lesser_diag = gk.values().to_owned();
        for k in 0..g.len() {
            lesser_diag[(k, k)] -= DIAGONAL_SHIFT;
        }
        let m = BareInverse::new(0.8, -0.4, &g, &fp, ts.mu).to_dense();
        let id = &m * &lesser_diag;
        for j in 0..g.len() {
            for i in 0..g.len() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id[(i, j)] - want).norm() < 1e-12, "({i},{j}) {}", id[(i, j)]);
            }
        }
    }

    #[test]
    fn dressing_matches_dense_dyson() {
        let g = Arc::new(build_contour(0.0, 1.5, 2.0, 0.25, 4).unwrap());
        let fp = FieldProtocol { e: 0.4, t_on: 0.5 };
        let ts = ThermalState::new(0.5, -0.1).unwrap();
        let n = g.len();
        let sigma = ContourKernel::from_fn(g.clone(), |i, j| C64::new(0.1 * ((i + 2 * j) as f64).sin(), 0.05 * (i as f64 - j as f64).cos()));
        let gk = bare_gk_contour(-0.3, 0.9, &g, &fp, &ts).unwrap();
        let direct = invert(&invert(&gk).unwrap().sub(&sigma).unwrap()).unwrap();
        let w = g.weights();
        let x = Mat::from_fn(n, n, |i, j| w[i] * sigma.get(i, j) * w[j]);
        let fast = BareInverse::new(-0.3, 0.9, &g, &fp, ts.mu).dress(x.as_ref(), "test").unwrap();
        let fast = ContourKernel::new(g.clone(), fast).unwrap();
        assert!(direct.max_abs_diff(&fast).unwrap() < 1e-11);
        let bare = BareInverse::new(-0.3, 0.9, &g, &fp, ts.mu).dress(Mat::zeros(n, n).as_ref(), "test").unwrap();
        assert!(ContourKernel::new(g.clone(), bare).unwrap().max_abs_diff(&gk).unwrap() < 1e-12);
        let _ = contour_delta(&g);
        let _ = convolve(&gk, &gk).unwrap();
    }
}
