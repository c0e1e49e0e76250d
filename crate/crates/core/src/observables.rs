//! Time-resolved observables: current, density, total energy from Joule
//! heating, and the effective temperature obtained by inverting the
//! equilibrium energy calibration.
//!
//! Currents are per direction and per site. With the field along the body
//! diagonal every component carries the same current, and the energy
//! absorbed per site is `int E j dt` in the single-component convention used
//! by the lattice sum (`d eps_k / dt = -E v_k`).

use serde::{Deserialize, Serialize};

use crate::dmft::TransientSolution;
use crate::equilibrium::{temperature_from_energy, CalibrationTable};
use crate::error::{Error, Result};
use crate::lattice::FieldProtocol;

/// A real time series with a provenance tag (run id, step, "extrapolated", ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub provenance: String,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, values: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::InvalidParameter(format!("{} times but {} values", times.len(), values.len())));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("trajectory times must increase strictly".into()));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite value at t = {}", times[k])));
        }
        Ok(Self { times, values, provenance: provenance.into() })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Linear interpolation; `None` outside the covered range.
    pub fn at(&self, t: f64) -> Option<f64> {
        let n = self.times.len();
        if n == 0 || t < self.times[0] - 1e-12 || t > self.times[n - 1] + 1e-12 {
            return None;
        }
        let k = self.times.partition_point(|&x| x <= t).clamp(1, n.max(2) - 1);
        if n == 1 {
            return Some(self.values[0]);
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let s = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        Some(self.values[k - 1] + s * (self.values[k] - self.values[k - 1]))
    }

    /// Samples with `t >= from`.
    pub fn since(&self, from: f64) -> (Vec<f64>, Vec<f64>) {
        let k = self.times.partition_point(|&x| x < from - 1e-12);
        (self.times[k..].to_vec(), self.values[k..].to_vec())
    }
}

/// Per-direction current of a converged run, from its final lattice sum.
pub fn current(solution: &TransientSolution) -> Result<Trajectory> {
    Trajectory::new(solution.grid.real_times(), solution.current.clone(), format!("dt={}", solution.grid.dt()))
}

/// `n(t) = -i G_loc^<(t, t)`.
pub fn local_density(solution: &TransientSolution) -> Result<Trajectory> {
    Trajectory::new(solution.grid.real_times(), solution.density.clone(), format!("dt={}", solution.grid.dt()))
}

/// Band energy `sum_k eps_k(t) n_k(t)`.
pub fn kinetic_energy(solution: &TransientSolution) -> Result<Trajectory> {
    Trajectory::new(solution.grid.real_times(), solution.kinetic.clone(), format!("dt={}", solution.grid.dt()))
}

/// `E_tot(t) = E_eq0 + int_{t_on}^t E j`, trapezoid rule on the current's grid.
pub fn total_energy(j: &Trajectory, fp: &FieldProtocol, e_eq0: f64) -> Result<Trajectory> {
    if !e_eq0.is_finite() {
        return Err(Error::InvalidParameter("initial energy is not finite".into()));
    }
    if j.is_empty() {
        return Err(Error::InvalidParameter("empty current trajectory".into()));
    }
    if fp.is_on() && j.times[0] > fp.t_on + 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "current starts at t = {} after the switch-on at {}; the heating integral has a gap",
            j.times[0], fp.t_on
        )));
    }
    let mut out = Vec::with_capacity(j.len());
    let mut acc = 0.0;
    let power = |k: usize| if j.times[k] >= fp.t_on - 1e-12 { fp.e * j.values[k] } else { 0.0 };
    out.push(e_eq0);
    for k in 1..j.len() {
        let (a, b) = (j.times[k - 1], j.times[k]);
        if b > fp.t_on {
            // the piece of [a, b] after the switch-on
            let a_eff = a.max(fp.t_on);
            let pa = if a >= fp.t_on { power(k - 1) } else { fp.e * j.at(a_eff).unwrap_or(0.0) };
            acc += 0.5 * (b - a_eff) * (pa + power(k));
        }
        out.push(e_eq0 + acc);
    }
    Trajectory::new(j.times.clone(), out, format!("{}; joule", j.provenance))
}

/// `beta_eff(t)` from the calibration; energies at or above the plateau give 0.
pub fn effective_temperature(e_tot: &Trajectory, table: &CalibrationTable) -> Result<Trajectory> {
    let betas = e_tot
        .values
        .iter()
        .map(|&e| temperature_from_energy(table, e).map(|est| est.beta()))
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(e_tot.times.clone(), betas, format!("{}; calibrated", e_tot.provenance))
}

/// Initial slope `dE/dt` just after the switch-on, by least squares over `[t_on, t_on + span]`.
pub fn initial_heating_rate(e_tot: &Trajectory, fp: &FieldProtocol, span: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = e_tot
        .times
        .iter()
        .zip(&e_tot.values)
        .filter(|(t, _)| **t >= fp.t_on && **t <= fp.t_on + span)
        .map(|(t, v)| (*t, *v))
        .collect();
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
