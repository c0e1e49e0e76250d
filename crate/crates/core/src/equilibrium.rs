//! Equilibrium Falicov-Kimball DMFT on the real-frequency axis for the
//! Gaussian density of states, and the energy-temperature calibration used to
//! define effective temperatures.
//!
//! Self-energies are Hartree subtracted. With the localized filling held fixed
//! the retarded self-energy does not depend on temperature, so one solve per
//! `U` serves the whole calibration table.

use errorfunctions::w_with_relerror;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_ordered, Parallelism};
use crate::propagators::fermi_beta;

const SQRT_PI: f64 = 1.772_453_850_905_516;

/// `int rho(e) / (z - e) de` for `rho(e) = exp(-e^2)/sqrt(pi)` and `Im z > 0`.
pub fn hilbert_gaussian(z: C64) -> Result<C64> {
    if !(z.im > 0.0) || !z.re.is_finite() {
        return Err(Error::InvalidParameter(format!("Hilbert transform needs Im z > 0, got {z}")));
    }
    Ok(hilbert_closed(z))
}

/// Same as [`hilbert_gaussian`] on the closed upper half plane (boundary value on the real axis).
fn hilbert_closed(z: C64) -> C64 {
    let z = C64::new(z.re, z.im.max(0.0));
    C64::new(0.0, -SQRT_PI) * w_with_relerror(z, 1e-14)
}

/// Hilbert transform of the Gaussian density with energy scale `s`.
fn hilbert_scaled(z: C64, s: f64) -> C64 {
    hilbert_closed(z / s) / s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EqParams {
    pub u: f64,
    pub w1: f64,
    /// Chemical potential; `U w1` at half filling.
    pub mu: f64,
    /// Width of the Gaussian band (1 for the hypercubic lattice); small values
    /// approach the atomic limit.
    #[serde(default = "unit")]
    pub band_scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl EqParams {
    pub fn half_filling(u: f64) -> Self {
        Self { u, w1: 0.5, mu: 0.5 * u, band_scale: 1.0 }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.w1) || !self.u.is_finite() || !self.mu.is_finite() || !(self.band_scale > 0.0) {
            return Err(Error::InvalidParameter(format!("invalid equilibrium parameters {self:?}")));
        }
        Ok(())
    }

    fn mu_eff(&self) -> f64 {
        self.mu - self.u * self.w1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EqOptions {
    pub n_omega: usize,
    pub omega_max: f64,
    /// Positive imaginary shadow added to real frequencies.
    pub eta: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub parallelism: Parallelism,
}

impl Default for EqOptions {
    fn default() -> Self {
        Self { n_omega: 4096, omega_max: 10.0, eta: 1e-10, tol: 1e-12, max_iter: 10_000, parallelism: Parallelism::default() }
    }
}

/// Uniform grid on `[-omega_max, omega_max]` shifted by half a step, so zero is never a node.
pub fn omega_grid(n: usize, omega_max: f64) -> Result<Vec<f64>> {
    if n < 2 || !(omega_max > 0.0) {
        return Err(Error::InvalidParameter(format!("frequency grid needs n >= 2 and omega_max > 0, got {n}, {omega_max}")));
    }
    let h = 2.0 * omega_max / n as f64;
    Ok((0..n).map(|k| -omega_max + (k as f64 + 0.5) * h).collect())
}

#[derive(Debug, Clone)]
pub struct EqSolution {
    pub params: EqParams,
    pub omega: Vec<f64>,
    pub sigma_r: Vec<C64>,
    pub g_r: Vec<C64>,
    pub dos: Vec<f64>,
    /// Largest number of fixed-point sweeps used at any frequency.
    pub max_sweeps: usize,
}

impl EqSolution {
    fn step(&self) -> f64 {
        self.omega[1] - self.omega[0]
    }

    /// `int A(omega) d omega`.
    pub fn spectral_weight(&self) -> f64 {
        self.dos.iter().sum::<f64>() * self.step()
    }

    /// Value of the density of states nearest to `omega`.
    pub fn dos_near(&self, omega: f64) -> f64 {
        let k = self
            .omega
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - omega).abs().total_cmp(&(b.1 - omega).abs()))
            .map(|p| p.0)
            .unwrap_or(0);
        self.dos[k]
    }

    /// Largest `|A(omega) - A(-omega)|`; the grid is symmetric by construction.
    pub fn dos_asymmetry(&self) -> f64 {
        let n = self.dos.len();
        (0..n).map(|k| (self.dos[k] - self.dos[n - 1 - k]).abs()).fold(0.0, f64::max)
    }

    /// Deviations from `Re Sigma` odd and `Im Sigma` even.
    pub fn sigma_parity_violation(&self) -> (f64, f64) {
        let n = self.sigma_r.len();
        let (mut odd, mut even) = (0.0f64, 0.0f64);
        for k in 0..n {
            let (a, b) = (self.sigma_r[k], self.sigma_r[n - 1 - k]);
            odd = odd.max((a.re + b.re).abs());
            even = even.max((a.im - b.im).abs());
        }
        (odd, even)
    }

    /// Grand-canonical energy per site `int omega f_T(omega) A(omega) d omega`.
    pub fn energy(&self, beta: f64) -> f64 {
        let h = self.step();
        self.omega.iter().zip(&self.dos).map(|(&w, &a)| w * fermi_beta(w, beta) * a).sum::<f64>() * h
    }

    /// Zero-temperature limit of [`EqSolution::energy`].
    pub fn ground_energy(&self) -> f64 {
        let h = self.step();
        self.omega.iter().zip(&self.dos).filter(|(w, _)| **w < 0.0).map(|(&w, &a)| w * a).sum::<f64>() * h
    }

    /// Infinite-temperature limit of [`EqSolution::energy`].
    pub fn plateau_energy(&self) -> f64 {
        0.5 * self.omega.iter().zip(&self.dos).map(|(&w, &a)| w * a).sum::<f64>() * self.step()
    }
}

/// Solves the single-frequency fixed point
/// `Sigma = w1 (1 - w1) U^2 / (G^-1 + Sigma - U (1 - 2 w1))`, `G = H(z - Sigma)`,
/// by secant steps on the residual with a damped fixed-point fallback.
fn solve_frequency(p: &EqParams, z: C64, tol: f64, max_iter: usize) -> Result<(C64, C64, usize)> {
    let c = p.w1 * (1.0 - p.w1) * p.u * p.u;
    let shift = p.u * (1.0 - 2.0 * p.w1);
    if c == 0.0 {
        return Ok((C64::new(0.0, 0.0), hilbert_scaled(z, p.band_scale), 0));
    }
    let map = |sigma: C64| {
        let g = hilbert_scaled(z - sigma, p.band_scale);
        let mut next = c / (g.inv() + sigma - shift);
        // roundoff must not push the self-energy into the upper half plane
        next.im = next.im.min(0.0);
        next
    };
    let converged = |r: C64, s: C64| r.norm() <= tol * s.norm().max(1.0);
    let mut prev: Option<(C64, C64)> = None;
    let mut sigma = C64::new(0.0, 0.0);
    let mut last = f64::INFINITY;
    for sweep in 1..=max_iter {
        let r = map(sigma) - sigma;
        if !r.norm().is_finite() {
            return Err(Error::NotConverged { iterations: sweep, last: r.norm(), history: vec![] });
        }
        if converged(r, sigma) {
            return Ok((sigma, hilbert_scaled(z - sigma, p.band_scale), sweep));
        }
        last = r.norm();
        let damped = sigma + 0.5 * r;
        let next = match prev {
            Some((s0, r0)) if (r - r0).norm() > 0.0 => {
                let trial = sigma - r * (sigma - s0) / (r - r0);
                if trial.im <= 0.0 && trial.is_finite() && (map(trial) - trial).norm() < r.norm() {
                    trial
                } else {
                    damped
                }
            }
            _ => damped,
        };
        prev = Some((sigma, r));
        sigma = next;
    }
    Err(Error::NotConverged { iterations: max_iter, last, history: vec![] })
}

/// Retarded self-energy and Green's function at arbitrary real frequencies.
pub fn eq_sigma_at(p: &EqParams, omegas: &[f64], opts: &EqOptions) -> Result<Vec<(C64, C64)>> {
    p.validate()?;
    let mu = p.mu_eff();
    let out = map_ordered(opts.parallelism, omegas, |&w| {
        solve_frequency(p, C64::new(w + mu, opts.eta), opts.tol, opts.max_iter).map_err(|e| match e {
            Error::NotConverged { iterations, last, .. } => Error::NotConverged {
                iterations,
                last,
                history: vec![w],
            },
            other => other,
        })
    });
    out.into_iter().map(|r| r.map(|(s, g, _)| (s, g))).collect()
}

/// Equilibrium solution on the default frequency grid.
pub fn eq_scf(p: &EqParams, opts: &EqOptions) -> Result<EqSolution> {
    p.validate()?;
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter("tol must be positive".into()));
    }
    let omega = omega_grid(opts.n_omega, opts.omega_max)?;
    let mu = p.mu_eff();
    let solved = map_ordered(opts.parallelism, &omega, |&w| solve_frequency(p, C64::new(w + mu, opts.eta), opts.tol, opts.max_iter));
    let mut sigma_r = Vec::with_capacity(omega.len());
    let mut g_r = Vec::with_capacity(omega.len());
    let mut max_sweeps = 0;
    for r in solved {
        let (s, g, n) = r?;
        sigma_r.push(s);
        g_r.push(g);
        max_sweeps = max_sweeps.max(n);
    }
    let dos = g_r.iter().map(|g| -g.im / std::f64::consts::PI).collect();
    Ok(EqSolution { params: *p, omega, sigma_r, g_r, dos, max_sweeps })
}

/// Energy versus temperature for one model, with inverse interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub params: EqParams,
    /// Ascending temperatures.
    pub temperatures: Vec<f64>,
    pub energies: Vec<f64>,
    /// `T -> 0` limit.
    pub ground: f64,
    /// `T -> infinity` limit.
    pub plateau: f64,
}

/// Result of inverting the calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TemperatureEstimate {
    Finite(f64),
    /// At or above the infinite-temperature plateau (`beta = 0`).
    Saturated,
}

impl TemperatureEstimate {
    pub fn beta(&self) -> f64 {
        match *self {
            TemperatureEstimate::Finite(t) => 1.0 / t,
            TemperatureEstimate::Saturated => 0.0,
        }
    }
}

/// Calibration table from an equilibrium solution.
pub fn energy_vs_temperature(sol: &EqSolution, temperatures: &[f64]) -> Result<CalibrationTable> {
    if temperatures.is_empty() || temperatures.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::Calibration("temperatures must be positive and finite".into()));
    }
    if temperatures.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Calibration("temperatures must be sorted ascending".into()));
    }
    let energies: Vec<f64> = temperatures.iter().map(|&t| sol.energy(1.0 / t)).collect();
    let ground = sol.ground_energy();
    let plateau = sol.plateau_energy();
    let mut chain = vec![ground];
    chain.extend(&energies);
    chain.push(plateau);
    if let Some(k) = chain.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::Calibration(format!("energy is not increasing in temperature near entry {k}: {chain:?}")));
    }
    Ok(CalibrationTable { params: sol.params, temperatures: temperatures.to_vec(), energies, ground, plateau })
}

/// Geometric temperature list between `t_lo` and `t_hi`.
pub fn geometric_temperatures(t_lo: f64, t_hi: f64, n: usize) -> Vec<f64> {
    let r = (t_hi / t_lo).ln() / (n.max(2) - 1) as f64;
    (0..n.max(2)).map(|k| t_lo * (r * k as f64).exp()).collect()
}

impl CalibrationTable {
    /// Energy at temperature `t` by the same monotone interpolation, in inverse temperature.
    pub fn energy_at(&self, t: f64) -> f64 {
        let (e, b) = self.beta_nodes();
        let beta = 1.0 / t;
        // nodes are ordered by increasing energy, i.e. decreasing beta
        let rev_b: Vec<f64> = b.iter().rev().copied().collect();
        let rev_e: Vec<f64> = e.iter().rev().copied().collect();
        if beta > rev_b[rev_b.len() - 1] {
            return self.ground + (self.energies[0] - self.ground) * t / self.temperatures[0];
        }
        pchip(&rev_b, &rev_e, beta)
    }

    fn beta_nodes(&self) -> (Vec<f64>, Vec<f64>) {
        let mut e: Vec<f64> = self.energies.clone();
        let mut b: Vec<f64> = self.temperatures.iter().map(|t| 1.0 / t).collect();
        e.push(self.plateau);
        b.push(0.0);
        (e, b)
    }
}

/// Inverts the calibration: the temperature whose equilibrium energy is `e_total`.
pub fn temperature_from_energy(table: &CalibrationTable, e_total: f64) -> Result<TemperatureEstimate> {
    if !e_total.is_finite() {
        return Err(Error::Calibration(format!("energy {e_total} is not finite")));
    }
    if let Some(k) = table.energies.iter().position(|&e| e == e_total) {
        return Ok(TemperatureEstimate::Finite(table.temperatures[k]));
    }
    if e_total >= table.plateau {
        return Ok(TemperatureEstimate::Saturated);
    }
    let scale = table.plateau - table.ground;
    if e_total < table.ground - 1e-12 * scale.max(1.0) {
        return Err(Error::Calibration(format!(
            "energy {e_total} lies below the zero-temperature value {}",
            table.ground
        )));
    }
    let (e, b) = table.beta_nodes();
    if e_total < e[0] {
        // between the ground state and the coldest node: linear in T
        let t = table.temperatures[0] * (e_total - table.ground) / (e[0] - table.ground);
        return Ok(if t > 0.0 { TemperatureEstimate::Finite(t) } else { TemperatureEstimate::Finite(f64::MIN_POSITIVE) });
    }
    let beta = pchip(&e, &b, e_total);
    Ok(if beta > 0.0 { TemperatureEstimate::Finite(1.0 / beta) } else { TemperatureEstimate::Saturated })
}

/// Monotone piecewise cubic Hermite interpolation (Fritsch-Carlson slopes);
/// `x` strictly increasing, evaluation clamped to the end nodes.
pub fn pchip(x: &[f64], y: &[f64], at: f64) -> f64 {
    let n = x.len();
    if n == 1 || at <= x[0] {
        return y[0];
    }
    if at >= x[n - 1] {
        return y[n - 1];
    }
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let d: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    let mut m = vec![0.0; n];
    m[0] = d[0];
    m[n - 1] = d[n - 2];
    for k in 1..n - 1 {
        if d[k - 1] * d[k] <= 0.0 {
            m[k] = 0.0;
        } else {
            let (w1, w2) = (2.0 * h[k] + h[k - 1], h[k] + 2.0 * h[k - 1]);
            m[k] = (w1 + w2) / (w1 / d[k - 1] + w2 / d[k]);
        }
    }
    let k = x.partition_point(|&v| v <= at) - 1;
    let s = (at - x[k]) / h[k];
    let (h00, h10, h01, h11) = (
        (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s),
        s * (1.0 - s) * (1.0 - s),
        s * s * (3.0 - 2.0 * s),
        s * s * (s - 1.0),
    );
    h00 * y[k] + h10 * h[k] * m[k] + h01 * y[k + 1] + h11 * h[k] * m[k + 1]
}

/// Scalar Falicov-Kimball dressing `(1 - w1) G0 + w1 / (G0^-1 - U)` of a
/// Weiss-field spectrum. Points where `G0^-1 - U` vanishes are reported.
pub fn fk_dress_steady(g0: &[C64], w1: f64, u: f64) -> Result<Vec<C64>> {
    g0.iter()
        .enumerate()
        .map(|(k, &g)| {
            if g.norm() == 0.0 {
                return Err(Error::InvalidParameter(format!("Weiss field vanishes at point {k}")));
            }
            if u == 0.0 || w1 == 0.0 {
                return Ok(g);
            }
            let d = g.inv() - u;
            if d.norm() < 1e-12 {
                return Err(Error::Singular { context: format!("pole of the dressed spectrum at point {k}"), condition: f64::INFINITY });
            }
            Ok((1.0 - w1) * g + w1 / d)
        })
        .collect()
}
