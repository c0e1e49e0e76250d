//! Long-time extension of a transient run.
//!
//! The inverse effective temperature of the transient is fitted by a
//! monotone decay. The retarded self-energy, which is stationary right after
//! the switch-on, is averaged over late Wigner slices. The lesser self-energy
//! beyond the patch time is then rebuilt slice by slice from
//! `Sigma^<(omega) = -2i f_T(omega) Im Sigma^R(omega)` at the fitted
//! temperature, a contour self-energy is assembled on a longer grid, and the
//! lattice Dyson equation is solved once more on that grid.

use std::sync::Arc;

use faer::Mat;
use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{DMatrix, DVector, Dyn, Owned};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::contour::{assemble_kernel, build_contour, extract_components, Branch, ComponentSet, ContourGrid, ContourKernel};
use crate::dmft::{lattice_sum, TransientSolution};
use crate::equilibrium::CalibrationTable;
use crate::error::{Error, Result};
use crate::exec::{map_ordered, Parallelism};
use crate::lattice::{FieldProtocol, QuadratureGrid};
use crate::observables::{effective_temperature, total_energy, Trajectory};
use crate::propagators::{fermi_beta, ThermalState};
use crate::wigner::{inverse_on_steps, sample_span, slice_spectrum, FdtDeviation, Sidedness, Spectrum, SpectrumSpec, WignerField, WignerSlice};

/// Largest relative RMS residual a fit may have.
pub const FIT_RESIDUAL_LIMIT: f64 = 0.05;
/// Largest slice-to-slice spread of the retarded proxy.
pub const SPREAD_LIMIT: f64 = 5e-2;
/// Largest mixed-block magnitude at the patch time.
pub const MIXED_LIMIT: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitFamily {
    Single,
    Double,
    /// Single exponential, double exponential if the single one is rejected.
    #[default]
    Auto,
}

/// `beta(t) = beta0 exp(-gamma (t - t_ref)) [+ a2 exp(-gamma2 (t - t_ref))]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaFit {
    pub beta0: f64,
    pub gamma: f64,
    pub second: Option<(f64, f64)>,
    pub t_ref: f64,
    pub window: (f64, f64),
    /// Root mean square of the relative residuals.
    pub rms_rel: f64,
    pub samples: usize,
}

impl BetaFit {
    pub fn beta(&self, t: f64) -> f64 {
        let x = t - self.t_ref;
        let mut b = self.beta0 * (-self.gamma * x).exp();
        if let Some((a, g)) = self.second {
            b += a * (-g * x).exp();
        }
        b.max(0.0)
    }

    pub fn family(&self) -> FitFamily {
        if self.second.is_some() {
            FitFamily::Double
        } else {
            FitFamily::Single
        }
    }
}

struct ExpProblem<'a> {
    x: &'a [f64],
    y: &'a [f64],
    p: DVector<f64>,
}

impl ExpProblem<'_> {
    fn model(&self, x: f64) -> (f64, Vec<f64>) {
        let p = &self.p;
        let mut v = 0.0;
        let mut grad = Vec::with_capacity(p.len());
        for k in (0..p.len()).step_by(2) {
            let e = (-p[k + 1] * x).exp();
            v += p[k] * e;
            grad.push(e);
            grad.push(-p[k] * x * e);
        }
        (v, grad)
    }
}

impl LeastSquaresProblem<f64, Dyn, Dyn> for ExpProblem<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, p: &DVector<f64>) {
        self.p.copy_from(p);
    }

    fn params(&self) -> DVector<f64> {
        self.p.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        Some(DVector::from_iterator(self.x.len(), self.x.iter().zip(self.y).map(|(&x, &y)| (self.model(x).0 - y) / y)))
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let mut j = DMatrix::zeros(self.x.len(), self.p.len());
        for (r, (&x, &y)) in self.x.iter().zip(self.y).enumerate() {
            for (c, g) in self.model(x).1.into_iter().enumerate() {
                j[(r, c)] = g / y;
            }
        }
        Some(j)
    }
}

fn refine(x: &[f64], y: &[f64], start: Vec<f64>) -> (Vec<f64>, f64) {
    let problem = ExpProblem { x, y, p: DVector::from_vec(start) };
    let (done, _) = LevenbergMarquardt::new().with_patience(200).minimize(problem);
    let rms = done.residuals().map_or(f64::INFINITY, |r| (r.norm_squared() / x.len() as f64).sqrt());
    (done.p.iter().copied().collect(), rms)
}

/// Fits the monotone decay family to `beta_traj` on `t >= t_fit_start`.
pub fn fit_beta(beta_traj: &Trajectory, t_fit_start: f64, family: FitFamily) -> Result<BetaFit> {
    let (t, b) = beta_traj.since(t_fit_start);
    if t.len() < 10 {
        return Err(Error::Fit(format!("only {} samples after t = {t_fit_start}; at least 10 needed", t.len())));
    }
    if let Some(k) = b.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Fit(format!("beta = {} at t = {} is not positive; move the fit window earlier", b[k], t[k])));
    }
    if let Some(k) = b.windows(2).position(|w| w[1] > w[0] * (1.0 + 1e-9)) {
        return Err(Error::Fit(format!(
            "beta increases between t = {} and t = {}; choose a later fit start",
            t[k],
            t[k + 1]
        )));
    }
    let t_ref = t[0];
    let x: Vec<f64> = t.iter().map(|v| v - t_ref).collect();
    let span = x[x.len() - 1];

    // log-linear least squares start
    let ly: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&ly).map(|(a, c)| (a - mx) * (c - my)).sum();
    let g0 = -sxy / sxx;
    let b0 = (my + g0 * mx).exp();
    if !(g0 * span > 1e-6) {
        return Err(Error::Fit(format!("decay rate {g0:.3e} is not positive; the run is not thermalizing")));
    }

    let single = {
        let (p, rms) = refine(&x, &b, vec![b0, g0]);
        BetaFit { beta0: p[0], gamma: p[1], second: None, t_ref, window: (t_ref, t[t.len() - 1]), rms_rel: rms, samples: t.len() }
    };
    let double = || {
        let (p, rms) = refine(&x, &b, vec![0.7 * b0, 0.5 * g0, 0.3 * b0, 2.0 * g0]);
        BetaFit {
            beta0: p[0],
            gamma: p[1],
            second: Some((p[2], p[3])),
            t_ref,
            window: (t_ref, t[t.len() - 1]),
            rms_rel: rms,
            samples: t.len(),
        }
    };
    let valid = |f: &BetaFit| {
        f.beta0 > 0.0 && f.gamma * span > 1e-6 && f.rms_rel.is_finite() && f.second.is_none_or(|(a, g)| a >= 0.0 && g > 0.0)
    };
    let chosen = match family {
        FitFamily::Single => single,
        FitFamily::Double => double(),
        FitFamily::Auto => {
            if valid(&single) && single.rms_rel <= FIT_RESIDUAL_LIMIT {
                single
            } else {
                let d = double();
                if valid(&d) && d.rms_rel < single.rms_rel {
                    d
                } else {
                    single
                }
            }
        }
    };
    if !valid(&chosen) {
        return Err(Error::Fit(format!("fit left the monotone decay family: {chosen:?}")));
    }
    if chosen.rms_rel > FIT_RESIDUAL_LIMIT {
        return Err(Error::Fit(format!(
            "relative RMS residual {:.3} exceeds {FIT_RESIDUAL_LIMIT}; choose a later fit start",
            chosen.rms_rel
        )));
    }
    Ok(chosen)
}

/// Late-time average of the retarded self-energy.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyRetarded {
    pub spectrum: Spectrum,
    /// Largest slice-to-slice deviation from the mean spectrum.
    pub spread: f64,
    /// Average times of the slices entering the mean.
    pub t_aves: Vec<f64>,
    /// Common truncation of `|t_rel|`.
    pub max_rel: f64,
    /// Below this `|t_rel|` the taper is one.
    pub taper_start: f64,
    pub dt: f64,
    /// `Sigma^R(r dt)` for `r = 0, 1, ...` up to `max_rel`, averaged over slices of matching parity.
    pub time_values: Vec<C64>,
}

impl SteadyRetarded {
    /// `Sigma^R(r dt)`, zero for negative `r` and beyond the truncation.
    pub fn at_step(&self, r: i64) -> C64 {
        if r < 0 {
            return C64::new(0.0, 0.0);
        }
        self.time_values.get(r as usize).copied().unwrap_or(C64::new(0.0, 0.0))
    }
}

/// Largest `t_rel >= 0` such that every sample of the slice in `[0, t_rel]` is unmasked.
pub fn clean_extent(sl: &WignerSlice, dt: f64) -> f64 {
    let mut last = None;
    for k in 0..sl.values.len() {
        let r = sl.rel_index(k);
        if r < 0 {
            continue;
        }
        if sl.mask[k] {
            break;
        }
        last = Some(r);
    }
    last.map_or(-1.0, |r| r as f64 * dt)
}

/// Averages the retarded slices with `t_ave` in `window` (inclusive).
///
/// `horizon` is the largest `|t_rel|` the spectrum will later be transformed
/// back to; the padding is raised so the frequency grid resolves it.
/// Errors when the slice spread exceeds `spread_limit`.
pub fn steady_retarded_sigma(
    field: &WignerField,
    window: (f64, f64),
    spec: &SpectrumSpec,
    horizon: f64,
    spread_limit: f64,
) -> Result<SteadyRetarded> {
    let dt = field.dt;
    let chosen: Vec<&WignerSlice> = field
        .slices
        .iter()
        .filter(|sl| sl.t_ave >= window.0 - 0.25 * dt && sl.t_ave <= window.1 + 0.25 * dt)
        .collect();
    if chosen.is_empty() {
        return Err(Error::InvalidParameter(format!("no Wigner slices in [{}, {}]", window.0, window.1)));
    }
    let mut max_rel = chosen.iter().map(|sl| clean_extent(sl, dt)).fold(f64::INFINITY, f64::min);
    if let Some(m) = spec.max_rel {
        max_rel = max_rel.min(m);
    }
    if !(max_rel >= 4.0 * dt) {
        return Err(Error::InvalidParameter(format!(
            "slices in [{}, {}] have less than four clean relative-time steps; move the window later or raise t_max",
            window.0, window.1
        )));
    }
    let span = sample_span(max_rel, dt);
    let needed = (horizon / dt).ceil() as usize + 1;
    let pad = spec.pad.max(needed.div_ceil(span) + 1);
    let spec = SpectrumSpec { max_rel: Some(max_rel), pad, ..*spec };

    let spectra = chosen.iter().map(|sl| slice_spectrum(sl, dt, Sidedness::Retarded, &spec)).collect::<Result<Vec<_>>>()?;
    let m = spectra.len() as f64;
    let omega = spectra[0].omega.clone();
    let mean: Vec<C64> = (0..omega.len()).map(|k| spectra.iter().map(|s| s.values[k]).sum::<C64>() / m).collect();
    let spread = spectra
        .iter()
        .flat_map(|s| s.values.iter().zip(&mean).map(|(a, b)| (a - b).norm()))
        .fold(0.0, f64::max);
    if spread > spread_limit {
        return Err(Error::Patch(format!(
            "retarded self-energy spread {spread:.3e} over [{}, {}] exceeds {spread_limit}; the retarded part is not yet stationary, raise t_max",
            window.0, window.1
        )));
    }
    let spectrum = Spectrum { omega, values: mean };

    // time-domain proxy from the slices themselves, parity by parity
    let r_max = (max_rel / dt + 1e-9).floor() as usize;
    let fallback = if chosen.iter().map(|sl| sl.s % 2).collect::<std::collections::BTreeSet<_>>().len() < 2 {
        Some(inverse_on_steps(&spectrum, dt, r_max + 1)?)
    } else {
        None
    };
    let time_values = (0..=r_max)
        .map(|r| {
            let w = spec.window.factor(r as f64 * dt, max_rel);
            let (mut acc, mut count) = (C64::new(0.0, 0.0), 0usize);
            for sl in chosen.iter().filter(|sl| sl.s % 2 == r % 2) {
                let k = ((r as i64 - sl.r0) / 2) as usize;
                acc += sl.values[k];
                count += 1;
            }
            if count > 0 {
                w * acc / count as f64
            } else {
                // band-limited interpolation; the spectrum carries a half-weight
                // jump at t_rel = 0, so only r > 0 lands here
                fallback.as_ref().map_or(C64::new(0.0, 0.0), |f| f[r_max + r])
            }
        })
        .collect();
    let taper_start = (0..=r_max).rev().map(|r| r as f64 * dt).find(|&t| spec.window.factor(t, max_rel) == 1.0).unwrap_or(0.0);
    Ok(SteadyRetarded {
        spectrum,
        spread,
        t_aves: chosen.iter().map(|sl| sl.t_ave).collect(),
        max_rel,
        taper_start,
        dt,
        time_values,
    })
}

/// Latest slice whose clean relative-time extent reaches `min_extent`.
pub fn latest_clean_slice(field: &WignerField, min_extent: f64) -> Result<&WignerSlice> {
    field
        .slices
        .iter()
        .rev()
        .find(|sl| clean_extent(sl, field.dt) >= min_extent - 1e-9 * field.dt)
        .ok_or_else(|| Error::InvalidParameter(format!("no slice has {min_extent} of clean relative time; raise t_max")))
}

/// Relative L2 deviation of `Im Sigma^<(t_rel)` of a transient slice from
/// `-(1/2) Im` of the stationary retarded proxy, over clean `t_rel > 0` up to
/// the start of the proxy's taper.
pub fn half_relation_vs_steady(lesser: &WignerSlice, sr: &SteadyRetarded) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..lesser.values.len() {
        let r = lesser.rel_index(k);
        if r <= 0 {
            continue;
        }
        if lesser.mask[k] || r as f64 * sr.dt > sr.taper_start + 1e-9 * sr.dt {
            break;
        }
        let want = -0.5 * sr.at_step(r).im;
        num += (lesser.values[k].im - want).powi(2);
        den += want * want;
    }
    if den == 0.0 {
        return Err(Error::InvalidParameter(format!("slice at t_ave = {} has no clean positive relative times", lesser.t_ave)));
    }
    Ok((num / den).sqrt())
}

/// Transient lesser spectrum of one slice against the fluctuation-dissipation
/// construction from the stationary retarded proxy at inverse temperature `beta`.
///
/// The construction is taken back to relative time, sampled like the
/// transient slice, and both are transformed with the same truncation (the
/// slice's clean extent) and window. Weights and scale come from the proxy
/// retarded function under that same truncation.
pub fn fdt_fan_deviation(lesser: &WignerSlice, sr: &SteadyRetarded, beta: f64, spec: &SpectrumSpec, limit: f64) -> Result<FdtDeviation> {
    let fan = fdt_fan(lesser, sr, beta, spec)?;
    weighted_deviation(&fan.transient, &fan.construction, &fan.retarded, limit)
}

/// Spectra entering [`fdt_fan_deviation`], plus the infinite-temperature construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FdtFan {
    pub t_ave: f64,
    pub beta: f64,
    pub transient: Spectrum,
    pub construction: Spectrum,
    pub infinite: Spectrum,
    pub retarded: Spectrum,
}

/// See [`fdt_fan_deviation`].
pub fn fdt_fan(lesser: &WignerSlice, sr: &SteadyRetarded, beta: f64, spec: &SpectrumSpec) -> Result<FdtFan> {
    let dt = sr.dt;
    let extent = clean_extent(lesser, dt);
    if !(extent >= 4.0 * dt) {
        return Err(Error::InvalidParameter(format!("slice at t_ave = {} has too little clean relative time", lesser.t_ave)));
    }
    let half = (-lesser.r0) as usize;
    let count = half + 1;
    if count > sr.spectrum.omega.len() {
        return Err(Error::InvalidParameter("retarded proxy grid is too coarse for this slice; raise the padding".into()));
    }
    let spec = SpectrumSpec { max_rel: Some(spec.max_rel.map_or(extent, |m| m.min(extent))), ..*spec };
    let resample = |b: f64| -> Result<Spectrum> {
        let full = inverse_on_steps(&fdt_lesser_spectrum(&sr.spectrum, b), dt, count)?;
        let built = WignerSlice {
            values: (0..lesser.values.len()).map(|k| full[(half as i64 + lesser.rel_index(k)) as usize]).collect(),
            ..lesser.clone()
        };
        slice_spectrum(&built, dt, Sidedness::TwoSided, &spec)
    };
    let retarded = WignerSlice {
        values: (0..lesser.values.len()).map(|k| sr.at_step(lesser.rel_index(k))).collect(),
        ..lesser.clone()
    };
    Ok(FdtFan {
        t_ave: lesser.t_ave,
        beta,
        transient: slice_spectrum(lesser, dt, Sidedness::TwoSided, &spec)?,
        construction: resample(beta)?,
        infinite: resample(0.0)?,
        retarded: slice_spectrum(&retarded, dt, Sidedness::Retarded, &spec)?,
    })
}

/// `|a - b|` weighted by `|Im r| / max |Im r|` and scaled by `max |Im r|` over `|omega| <= limit`.
pub fn weighted_deviation(a: &Spectrum, b: &Spectrum, r: &Spectrum, limit: f64) -> Result<FdtDeviation> {
    if a.omega.len() != b.omega.len() || a.omega.len() != r.omega.len() {
        return Err(Error::InvalidParameter("spectra live on different frequency grids".into()));
    }
    let band: Vec<usize> = r.band(limit).collect();
    let scale = band.iter().map(|&k| r.values[k].im.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::InvalidParameter("retarded spectrum has no weight in the band".into()));
    }
    let (mut linf, mut num, mut den) = (0.0f64, 0.0, 0.0);
    for &k in &band {
        let d = (a.values[k] - b.values[k]).norm();
        let w = r.values[k].im.abs() / scale;
        linf = linf.max(w * d);
        num += w * d * d;
        den += w;
    }
    Ok(FdtDeviation { linf: linf / scale, l2: (num / den).sqrt() / scale })
}

/// `Sigma^<(omega) = -2i f_beta(omega) Im Sigma^R(omega)`.
pub fn fdt_lesser_spectrum(sr: &Spectrum, beta: f64) -> Spectrum {
    let values = sr.omega.iter().zip(&sr.values).map(|(&w, v)| C64::new(0.0, -2.0 * fermi_beta(w, beta) * v.im)).collect();
    Spectrum { omega: sr.omega.clone(), values }
}

/// Lesser self-energy rebuilt on Wigner slices of a longer grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LesserExtension {
    pub t_min: f64,
    pub dt: f64,
    pub n_t: usize,
    /// First slice index present.
    pub s_start: usize,
    pub slices: Vec<WignerSlice>,
    /// Fitted inverse temperature per slice.
    pub betas: Vec<f64>,
}

impl LesserExtension {
    pub fn value(&self, s: usize, r: i64) -> Option<C64> {
        let sl = self.slices.get(s.checked_sub(self.s_start)?)?;
        let k = (r - sl.r0).checked_div(2)?;
        if (r - sl.r0) % 2 != 0 || k < 0 {
            return None;
        }
        sl.values.get(k as usize).copied()
    }
}

/// Rebuilds `Sigma^<(t_ave, t_rel)` for every slice of the grid
/// `[t_min, t_max_new]` with `t_ave >= t_start`.
pub fn extend_sigma_lesser(
    sr: &SteadyRetarded,
    fit: &BetaFit,
    t_start: f64,
    t_min: f64,
    t_max_new: f64,
    policy: Parallelism,
) -> Result<LesserExtension> {
    if !(fit.gamma > 0.0) {
        return Err(Error::Fit(format!("decay rate {} is not positive", fit.gamma)));
    }
    let dt = sr.dt;
    let n_t = crate::contour::commensurate_steps(t_max_new - t_min, dt)
        .ok_or_else(|| Error::Incommensurate(format!("t_max_new - t_min = {} is not a multiple of dt = {dt}", t_max_new - t_min)))?
        + 1;
    let s_last = 2 * (n_t - 1);
    let s_start = (((t_start - t_min) * 2.0 / dt) - 1e-9).ceil().max(0.0) as usize;
    let ss: Vec<usize> = (s_start..=s_last).collect();
    let count = n_t;
    let built = map_ordered(policy, &ss, |&s| -> Result<(WignerSlice, f64)> {
        let t_ave = t_min + 0.5 * s as f64 * dt;
        let beta = fit.beta(t_ave);
        let full = inverse_on_steps(&fdt_lesser_spectrum(&sr.spectrum, beta), dt, count)?;
        let half = s.min(s_last - s) as i64;
        let values = (0..=half as usize).map(|k| full[(count as i64 - 1 - half + 2 * k as i64) as usize]).collect::<Vec<_>>();
        let mask = vec![false; values.len()];
        Ok((WignerSlice { s, t_ave, r0: -half, values, mask }, beta))
    });
    let mut slices = Vec::with_capacity(built.len());
    let mut betas = Vec::with_capacity(built.len());
    for b in built {
        let (sl, beta) = b?;
        slices.push(sl);
        betas.push(beta);
    }
    Ok(LesserExtension { t_min, dt, n_t, s_start, slices, betas })
}

/// How transient and extension values are joined at the patch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Blend {
    #[default]
    Hard,
    /// Raised-cosine cross-fade over `[t_patch - width, t_patch]` in `t_ave`.
    CrossFade { width: f64 },
}

impl Blend {
    /// Weight of the transient value at average time `t_ave`.
    fn transient_weight(&self, t_ave: f64, t_patch: f64, tol: f64) -> f64 {
        match *self {
            Blend::CrossFade { width } if width > 0.0 => {
                if t_ave <= t_patch - width {
                    1.0
                } else if t_ave > t_patch + tol {
                    0.0
                } else {
                    let x = ((t_patch - t_ave) / width).clamp(0.0, 1.0);
                    0.5 * (1.0 - (std::f64::consts::PI * x).cos())
                }
            }
            _ => {
                if t_ave <= t_patch + tol {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Contour self-energy on the extended grid with its patch record.
#[derive(Debug, Clone)]
pub struct ExtendedSigma {
    pub kernel: ContourKernel,
    pub extension: LesserExtension,
    pub retarded: SteadyRetarded,
    pub t_patch: f64,
    pub t_max_new: f64,
    pub blend: Blend,
    /// Largest mixed-block magnitude at the patch time.
    pub mixed_at_patch: f64,
    /// Relative L2 mismatch of extension and transient lesser values with
    /// `t_ave` in `[t_patch, t_max]` (reported, not enforced).
    pub overlap_mismatch: f64,
}

/// Builds the extended contour self-energy.
pub fn assemble_extended(
    solution: &TransientSolution,
    sr: &SteadyRetarded,
    extension: &LesserExtension,
    t_patch: f64,
    t_max_new: f64,
    blend: Blend,
    mixed_limit: f64,
) -> Result<ExtendedSigma> {
    let old = solution.grid.as_ref();
    let dt = old.dt();
    if (sr.dt - dt).abs() > 1e-12 * dt || (extension.dt - dt).abs() > 1e-12 * dt || (extension.t_min - old.t_min()).abs() > 1e-12 {
        return Err(Error::GridMismatch);
    }
    if !(t_patch > old.t_min() && t_patch <= old.t_max() + 1e-9 * dt) {
        return Err(Error::Patch(format!("t_patch = {t_patch} must lie inside the transient window ({}, {}]", old.t_min(), old.t_max())));
    }
    if !(t_max_new >= old.t_max() - 1e-9 * dt) {
        return Err(Error::Patch(format!("t_max_new = {t_max_new} is shorter than the transient run ({})", old.t_max())));
    }
    let grid = Arc::new(build_contour(old.t_min(), t_max_new, old.beta(), dt, old.n_tau())?);
    let nt = grid.n_t();
    if extension.n_t != nt {
        return Err(Error::GridMismatch);
    }
    let n_old = old.n_t();
    let i_patch = ((t_patch - old.t_min()) / dt + 1e-9).floor() as usize;
    let tol = 1e-9 * dt;
    let width = match blend {
        Blend::CrossFade { width } => width.max(0.0),
        Blend::Hard => 0.0,
    };
    let s_need = extension_start_index(old, nt, t_patch, width);
    if s_need <= 2 * (nt - 1) && extension.s_start > s_need {
        return Err(Error::Patch("the lesser extension does not reach back to the patch strip".into()));
    }

    let old_c = extract_components(&solution.sigma);
    let mixed_at_patch = mixed_at(&old_c, i_patch);
    if mixed_at_patch > mixed_limit {
        return Err(Error::Patch(format!(
            "mixed self-energy at t_patch = {t_patch} is {mixed_at_patch:.3e} > {mixed_limit}; patch later"
        )));
    }

    let ext_lesser = |i: usize, j: usize| -> C64 {
        extension.value(i + j, i as i64 - j as i64).unwrap_or(C64::new(0.0, 0.0))
    };
    let lesser = Mat::from_fn(nt, nt, |i, j| ext_lesser(i, j));
    let greater = Mat::from_fn(nt, nt, |i, j| {
        let r = i as i64 - j as i64;
        if r >= 0 {
            lesser[(i, j)] + sr.at_step(r)
        } else {
            lesser[(i, j)] - sr.at_step(-r).conj()
        }
    });
    let retarded = Mat::from_fn(nt, nt, |i, j| if i >= j { greater[(i, j)] - lesser[(i, j)] } else { C64::new(0.0, 0.0) });
    let advanced = Mat::from_fn(nt, nt, |i, j| if i <= j { lesser[(i, j)] - greater[(i, j)] } else { C64::new(0.0, 0.0) });
    let comps = ComponentSet {
        lesser,
        greater,
        retarded,
        advanced,
        matsubara: old_c.matsubara.clone(),
        right_mixed: Mat::zeros(nt, old.n_tau()),
        left_mixed: Mat::zeros(old.n_tau(), nt),
    };
    let ext_kernel = assemble_kernel(&grid, &comps);

    // overwrite with transient values where they are kept
    let pts = grid.points();
    let old_index = |p: usize| -> Option<usize> {
        let pt = pts[p];
        match pt.branch {
            Branch::Forward if pt.step < n_old => Some(old.fwd(pt.step)),
            Branch::Backward if pt.step < n_old => Some(old.bwd(pt.step)),
            Branch::Spur => Some(old.spur(pt.step)),
            _ => None,
        }
    };
    let ov = solution.sigma.values();
    let ev = ext_kernel.values();
    let n = grid.len();
    let values = Mat::from_fn(n, n, |p, q| {
        let (a, b) = (pts[p], pts[q]);
        let (Some(op), Some(oq)) = (old_index(p), old_index(q)) else {
            return ev[(p, q)];
        };
        match (a.branch == Branch::Spur, b.branch == Branch::Spur) {
            (true, true) => ov[(op, oq)],
            (false, true) => if a.step <= i_patch { ov[(op, oq)] } else { C64::new(0.0, 0.0) },
            (true, false) => if b.step <= i_patch { ov[(op, oq)] } else { C64::new(0.0, 0.0) },
            (false, false) => {
                let t_ave = old.t_min() + 0.5 * (a.step + b.step) as f64 * dt;
                let w = blend.transient_weight(t_ave, t_patch, tol);
                if w == 1.0 {
                    ov[(op, oq)]
                } else if w == 0.0 {
                    ev[(p, q)]
                } else {
                    w * ov[(op, oq)] + (1.0 - w) * ev[(p, q)]
                }
            }
        }
    });
    let kernel = ContourKernel::new(grid.clone(), values)?;

    // continuity audit on the overlap strip
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n_old {
        for j in 0..n_old {
            let t_ave = old.t_min() + 0.5 * (i + j) as f64 * dt;
            if t_ave >= t_patch - tol && i != j {
                let e = ext_lesser(i, j);
                num += (e - old_c.lesser[(i, j)]).norm_sqr();
                den += old_c.lesser[(i, j)].norm_sqr();
            }
        }
    }
    let overlap_mismatch = if den > 0.0 { (num / den).sqrt() } else { 0.0 };

    Ok(ExtendedSigma {
        kernel,
        extension: extension.clone(),
        retarded: sr.clone(),
        t_patch,
        t_max_new,
        blend,
        mixed_at_patch,
        overlap_mismatch,
    })
}

fn mixed_at(c: &ComponentSet, i: usize) -> f64 {
    (0..c.matsubara.nrows())
        .map(|m| c.right_mixed[(i, m)].norm().max(c.left_mixed[(m, i)].norm()))
        .fold(0.0, f64::max)
}

/// `max_tau |Sigma^mixed(t, tau)|` for every real time step.
pub fn mixed_profile(sigma: &ContourKernel) -> Vec<f64> {
    let c = extract_components(sigma);
    (0..sigma.grid().n_t()).map(|i| mixed_at(&c, i)).collect()
}

/// Earliest grid time `t >= t_from` whose mixed self-energy stays below `limit`.
pub fn auto_patch_time(solution: &TransientSolution, t_from: f64, limit: f64) -> Result<f64> {
    let g = solution.grid.as_ref();
    let prof = mixed_profile(&solution.sigma);
    (0..g.n_t())
        .filter(|&i| g.time(i) >= t_from - 1e-9 * g.dt())
        .find(|&i| prof[i] <= limit)
        .map(|i| g.time(i))
        .ok_or_else(|| {
            Error::Patch(format!(
                "no time after {t_from} has a mixed self-energy below {limit:.1e} (smallest {:.3e}); raise t_max",
                prof.last().copied().unwrap_or(f64::NAN)
            ))
        })
}

/// Observables of the lattice re-solved with the extended self-energy.
#[derive(Debug, Clone)]
pub struct ExtendedObservables {
    pub current: Trajectory,
    pub density: Trajectory,
    pub kinetic: Trajectory,
    pub energy: Option<Trajectory>,
    pub beta: Option<Trajectory>,
}

/// One lattice Dyson solve on the extended grid. With a calibration table and
/// initial energy the Joule-heating energy and `beta_eff` are added.
pub fn extended_observables(
    ext: &ExtendedSigma,
    quad: &QuadratureGrid,
    fp: &FieldProtocol,
    ts: &ThermalState,
    calibration: Option<(&CalibrationTable, f64)>,
    policy: Parallelism,
) -> Result<ExtendedObservables> {
    let ls = lattice_sum(&ext.kernel, quad, fp, ts, policy)?;
    let times = ext.kernel.grid().real_times();
    let tag = format!("extended t_patch={} t_max_new={}", ext.t_patch, ext.t_max_new);
    let current = Trajectory::new(times.clone(), ls.current, tag.clone())?;
    let density = Trajectory::new(times.clone(), ls.density, tag.clone())?;
    let kinetic = Trajectory::new(times, ls.kinetic, tag)?;
    let (energy, beta) = match calibration {
        Some((table, e0)) => {
            let e = total_energy(&current, fp, e0)?;
            let b = effective_temperature(&e, table)?;
            (Some(e), Some(b))
        }
        None => (None, None),
    };
    Ok(ExtendedObservables { current, density, kinetic, energy, beta })
}

/// First slice index whose lesser values come (at least partly) from the
/// extension: the cross-fade strip, and pairs with one time past the old grid.
fn extension_start_index(old: &ContourGrid, nt_new: usize, t_patch: f64, width: f64) -> usize {
    let dt = old.dt();
    let s_fade = (((t_patch - width - old.t_min()) * 2.0 / dt) - 1e-9).floor().max(-1.0) + 1.0;
    let s_fade = if width > 0.0 { s_fade as usize } else { (((t_patch - old.t_min()) * 2.0 / dt) + 1e-9).floor() as usize + 1 };
    if nt_new > old.n_t() {
        s_fade.min(old.n_t())
    } else {
        s_fade
    }
}

/// Average time from which [`extend_sigma_lesser`] must start for a given patch.
pub fn extension_start(solution: &TransientSolution, t_patch: f64, t_max_new: f64, blend: Blend) -> Result<f64> {
    let old = solution.grid.as_ref();
    let nt_new = crate::contour::commensurate_steps(t_max_new - old.t_min(), old.dt())
        .ok_or_else(|| Error::Incommensurate(format!("t_max_new = {t_max_new} is not on the time grid")))?
        + 1;
    let width = match blend {
        Blend::CrossFade { width } => width.max(0.0),
        Blend::Hard => 0.0,
    };
    let s = extension_start_index(old, nt_new, t_patch, width);
    Ok(old.t_min() + 0.5 * s as f64 * old.dt())
}

/// Grid of an extended kernel, for callers that only need the layout.
pub fn extended_grid(solution: &TransientSolution, t_max_new: f64) -> Result<ContourGrid> {
    let g = solution.grid.as_ref();
    build_contour(g.t_min(), t_max_new, g.beta(), g.dt(), g.n_tau())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_exponential() {
        let t: Vec<f64> = (0..40).map(|k| 2.0 + 0.5 * k as f64).collect();
        let b: Vec<f64> = t.iter().map(|x| 10.0 * (-0.1 * x).exp()).collect();
        let tr = Trajectory::new(t, b, "synthetic").unwrap();
        let f = fit_beta(&tr, 2.0, FitFamily::Auto).unwrap();
        assert!((f.gamma - 0.1).abs() < 1e-8);
        assert!((f.beta(0.0) - 10.0).abs() < 1e-7);
        assert!(f.second.is_none());
    }

    #[test]
    fn constant_beta_is_not_thermalizing() {
        let t: Vec<f64> = (0..20).map(|k| k as f64).collect();
        let tr = Trajectory::new(t, vec![3.0; 20], "flat").unwrap();
        assert!(matches!(fit_beta(&tr, 0.0, FitFamily::Auto), Err(Error::Fit(_))));
    }

    #[test]
    fn hard_and_zero_width_fade_agree() {
        for t in [1.0, 2.0, 2.05, 3.0] {
            assert_eq!(Blend::Hard.transient_weight(t, 2.0, 1e-9), Blend::CrossFade { width: 0.0 }.transient_weight(t, 2.0, 1e-9));
        }
    }
}
