//! Transient DMFT self-consistency with the exact Falicov-Kimball impurity solution.
//!
//! Stored self-energies exclude the Hartree constant `U w1`; the lattice
//! propagators are built with `mu_eff = mu - U w1` instead. The impurity step
//! only solves Dyson-type equations `(I - K W S W) X = K`; no self-energy is
//! formed as a difference of contour inverses.

use std::sync::Arc;

use faer::Mat;
use log::{debug, info};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::contour::{dyson, invert, shift_level, ContourGrid, ContourKernel};
use crate::error::{Error, Result};
use crate::exec::{map_chunks, Parallelism};
use crate::lattice::{band_velocity, instantaneous_dispersion, FieldProtocol, QuadratureGrid};
use crate::propagators::{bare_gk_matrix, bare_isolated_level, BareInverse, ThermalState};

const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub u: f64,
    /// Filling of the localized fermions.
    pub w1: f64,
    pub thermal: ThermalState,
    pub field: FieldProtocol,
}

impl ModelParams {
    /// Particle-hole symmetric half filling: `mu = U/2`, `w1 = 1/2`.
    pub fn half_filling(u: f64, temperature: f64, field: FieldProtocol) -> Result<Self> {
        Ok(Self { u, w1: 0.5, thermal: ThermalState::new(temperature, 0.5 * u)?, field })
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.w1) {
            return Err(Error::InvalidParameter(format!("w1 must lie in [0, 1], got {}", self.w1)));
        }
        if !self.u.is_finite() || !self.thermal.mu.is_finite() || !self.field.e.is_finite() {
            return Err(Error::InvalidParameter("model parameters must be finite".into()));
        }
        Ok(())
    }

    /// Chemical potential seen by the Hartree-shifted lattice propagators.
    pub fn mu_eff(&self) -> f64 {
        self.thermal.mu - self.u * self.w1
    }

    pub fn lattice_thermal(&self) -> ThermalState {
        ThermalState { temperature: self.thermal.temperature, mu: self.mu_eff() }
    }
}

/// Local Green's function plus equal-time momentum-resolved observables.
#[derive(Debug, Clone)]
pub struct LatticeSum {
    pub g_loc: ContourKernel,
    /// Current per direction, `-sum_k w v_k(t) n_k(t)`, per real time.
    pub current: Vec<f64>,
    /// Band energy `sum_k w eps_k(t) n_k(t)`.
    pub kinetic: Vec<f64>,
    /// Local density `sum_k w n_k(t)`.
    pub density: Vec<f64>,
}

struct Partial {
    g: Mat<C64>,
    current: Vec<f64>,
    kinetic: Vec<f64>,
    density: Vec<f64>,
}

/// `G_loc = sum_k w_k [G0_k^-1 - Sigma]^-1` in contour algebra.
pub fn lattice_sum(
    sigma: &ContourKernel,
    quad: &QuadratureGrid,
    fp: &FieldProtocol,
    ts: &ThermalState,
    policy: Parallelism,
) -> Result<LatticeSum> {
    let grid = sigma.grid_arc().clone();
    if (grid.beta() - ts.beta()).abs() > 1e-12 * grid.beta().max(1.0) {
        return Err(Error::InvalidParameter("grid and thermal state disagree on beta".into()));
    }
    let n = grid.len();
    let nt = grid.n_t();
    let w = grid.weights();
    // matrix form: G_k = (G0_k^-1 - W Sigma W)^-1
    let s = sigma.values();
    let wsw = Mat::from_fn(n, n, |i, j| w[i] * s[(i, j)] * w[j]);
    let times = grid.real_times();
    // without a self-energy the node propagators are known in closed form
    let free = sigma.max_abs() == 0.0;

    let partials = map_chunks(policy, quad.len(), |range| -> Result<Partial> {
        let mut acc = Partial {
            g: Mat::zeros(n, n),
            current: vec![0.0; nt],
            kinetic: vec![0.0; nt],
            density: vec![0.0; nt],
        };
        for k in range {
            let (e, b) = quad.nodes()[k];
            let wk = quad.weights()[k];
            let gk = if free {
                bare_gk_matrix(e, b, &grid, fp, ts.mu)
            } else {
                BareInverse::new(e, b, &grid, fp, ts.mu)
                    .dress(wsw.as_ref(), &format!("lattice node {k} (eps={e:.4}, eps_bar={b:.4})"))?
            };
            acc.g += wk * &gk;
            for (i, &t) in times.iter().enumerate() {
                let nk = (-I * gk[(grid.fwd(i), grid.bwd(i))]).re;
                acc.density[i] += wk * nk;
                acc.kinetic[i] += wk * instantaneous_dispersion(e, b, t, fp) * nk;
                acc.current[i] -= wk * band_velocity(e, b, t, fp) * nk;
            }
        }
        Ok(acc)
    });

    let mut g = Mat::<C64>::zeros(n, n);
    let (mut current, mut kinetic, mut density) = (vec![0.0; nt], vec![0.0; nt], vec![0.0; nt]);
    for p in partials {
        let p = p?;
        g += &p.g;
        for i in 0..nt {
            current[i] += p.current[i];
            kinetic[i] += p.kinetic[i];
            density[i] += p.density[i];
        }
    }
    Ok(LatticeSum { g_loc: ContourKernel::new(grid, g)?, current, kinetic, density })
}

/// Contour inverse of the isolated level, the discrete `(i d/dt + mu - shift) delta_c`.
pub fn level_inverse(grid: &Arc<ContourGrid>, mu: f64, shift: f64) -> Result<ContourKernel> {
    invert(&bare_isolated_level(grid, mu, shift))
}

/// Exact Falicov-Kimball impurity Green's function for the Weiss field `g0_eff`:
/// `(1 - w1) g0_eff + w1 [g0_eff^-1 - U delta_c]^-1`.
pub fn impurity_green(g0_eff: &ContourKernel, u: f64, w1: f64) -> Result<ContourKernel> {
    if u == 0.0 || w1 == 0.0 {
        return Ok(g0_eff.clone());
    }
    let upper = shift_level(g0_eff, u).map_err(|e| match e {
        Error::Singular { condition, .. } => Error::Singular { context: format!("U-shifted Weiss operator (U={u})"), condition },
        other => other,
    })?;
    g0_eff.scale(C64::new(1.0 - w1, 0.0)).add_scaled(C64::new(w1, 0.0), &upper)
}

/// Impurity self-energy without the Hartree constant, for the Hartree-frame
/// Weiss field `weiss = [G_loc^-1 + Sigma]^-1`:
/// `w1 (1 - w1) U^2 [weiss^-1 - U (1 - 2 w1) delta_c]^-1`.
pub fn impurity_self_energy(weiss: &ContourKernel, u: f64, w1: f64) -> Result<ContourKernel> {
    let g = shift_level(weiss, u * (1.0 - 2.0 * w1))?;
    Ok(g.scale(C64::new(w1 * (1.0 - w1) * u * u, 0.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScfOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub mixing: f64,
    pub parallelism: Parallelism,
}

impl Default for ScfOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 100, mixing: 1.0, parallelism: Parallelism::default() }
    }
}

/// State handed to the per-iteration observer.
pub struct IterationState<'a> {
    pub iteration: usize,
    pub residual: f64,
    pub mixing: f64,
    /// Self-energy that will be used in the next iteration.
    pub sigma: &'a ContourKernel,
}

#[derive(Debug, Clone)]
pub struct TransientSolution {
    pub params: ModelParams,
    pub grid: Arc<ContourGrid>,
    /// Local self-energy without the Hartree constant.
    pub sigma: ContourKernel,
    pub g_loc: ContourKernel,
    /// Weiss field in the Hartree-shifted frame, `[G_loc^-1 + Sigma]^-1`.
    pub weiss: ContourKernel,
    /// Full Weiss field entering the impurity formula.
    pub g0_eff: ContourKernel,
    pub g_imp: ContourKernel,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub current: Vec<f64>,
    pub kinetic: Vec<f64>,
    pub density: Vec<f64>,
}

impl TransientSolution {
    /// Hybridization `Lambda = g_mu^-1 - g0_eff^-1`. Computed from contour
    /// inverses, so it carries roundoff on the alternating mode.
    pub fn hybridization(&self) -> Result<ContourKernel> {
        level_inverse(&self.grid, self.params.thermal.mu, 0.0)?.sub(&invert(&self.g0_eff)?)
    }

    /// `max |G_imp - G_loc|`.
    pub fn impurity_mismatch(&self) -> f64 {
        self.g_imp.max_abs_diff(&self.g_loc).unwrap_or(f64::INFINITY)
    }
}

/// Solves the transient DMFT equations starting from `Sigma = 0`.
pub fn scf_solve(
    params: &ModelParams,
    grid: &Arc<ContourGrid>,
    quad: &QuadratureGrid,
    opts: &ScfOptions,
) -> Result<TransientSolution> {
    scf_solve_from(params, grid, quad, opts, None, |_| {})
}

/// Solves the transient DMFT equations from an optional starting self-energy,
/// calling `observe` after every iteration.
pub fn scf_solve_from(
    params: &ModelParams,
    grid: &Arc<ContourGrid>,
    quad: &QuadratureGrid,
    opts: &ScfOptions,
    start: Option<ContourKernel>,
    mut observe: impl FnMut(&IterationState<'_>),
) -> Result<TransientSolution> {
    params.validate()?;
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {}", opts.tol)));
    }
    if !(opts.mixing > 0.0 && opts.mixing <= 1.0) {
        return Err(Error::InvalidParameter(format!("mixing must lie in (0, 1], got {}", opts.mixing)));
    }
    let ts = params.lattice_thermal();
    if (grid.beta() - ts.beta()).abs() > 1e-12 * grid.beta().max(1.0) {
        return Err(Error::InvalidParameter("grid beta differs from the model temperature".into()));
    }
    let quad = if params.field.is_on() { quad.clone() } else { quad.collapse_velocity() };
    let (u, w1) = (params.u, params.w1);

    let mut sigma = match start {
        Some(s) => {
            if s.grid() != grid.as_ref() {
                return Err(Error::GridMismatch);
            }
            s
        }
        None => ContourKernel::zeros(grid.clone()),
    };
    let mut mixing = opts.mixing;
    let mut history = Vec::new();

    for iteration in 1..=opts.max_iter {
        let ls = lattice_sum(&sigma, &quad, &params.field, &ts, opts.parallelism)?;
        let weiss = dyson(&ls.g_loc, &sigma.scale(C64::new(-1.0, 0.0)))?;
        let new_sigma = impurity_self_energy(&weiss, u, w1)?;
        let residual = new_sigma.max_abs_diff(&sigma)?;
        history.push(residual);
        info!("scf iteration {iteration}: residual {residual:.3e} (mixing {mixing})");

        if residual < opts.tol {
            let g0_eff = shift_level(&weiss, -u * w1)?;
            let g_imp = impurity_green(&g0_eff, u, w1)?;
            observe(&IterationState { iteration, residual, mixing, sigma: &sigma });
            return Ok(TransientSolution {
                params: *params,
                grid: grid.clone(),
                sigma,
                g_loc: ls.g_loc,
                weiss,
                g0_eff,
                g_imp,
                iterations: iteration,
                residual_history: history,
                current: ls.current,
                kinetic: ls.kinetic,
                density: ls.density,
            });
        }
        if history.len() >= 2 && residual > history[history.len() - 2] && mixing > 0.5 {
            mixing = 0.5;
            debug!("residual increased; mixing reduced to {mixing}");
        }
        sigma = sigma.scale(C64::new(1.0 - mixing, 0.0)).add_scaled(C64::new(mixing, 0.0), &new_sigma)?;
        observe(&IterationState { iteration, residual, mixing, sigma: &sigma });
    }
    let last = history.last().copied().unwrap_or(f64::NAN);
    Err(Error::NotConverged { iterations: opts.max_iter, last, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contour::build_contour;

    #[test]
    fn rejects_bad_options() {
        let g = Arc::new(build_contour(0.0, 1.0, 10.0, 0.5, 4).unwrap());
        let p = ModelParams::half_filling(1.0, 0.1, FieldProtocol::off()).unwrap();
        let q = QuadratureGrid::single(0.0, 0.0);
        let bad = ScfOptions { mixing: 0.0, ..Default::default() };
        assert!(scf_solve(&p, &g, &q, &bad).is_err());
        let bad = ScfOptions { tol: -1.0, ..Default::default() };
        assert!(scf_solve(&p, &g, &q, &bad).is_err());
    }
}
