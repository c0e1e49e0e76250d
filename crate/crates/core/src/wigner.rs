//! Wigner coordinates `t_ave = (t + t')/2`, `t_rel = t - t'` for real-time
//! tables, per-average-time spectra, and the particle-hole and
//! fluctuation-dissipation checks.
//!
//! Time index pairs `(i, j)` map to `s = i + j` (so `t_ave = t_min + s dt/2`) and
//! `r = i - j` (`t_rel = r dt`). At fixed `s` the relative index moves in steps
//! of two, so each slice is sampled at `2 dt`.

use faer::{Mat, MatRef};
use num_complex::Complex64 as C64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::FieldProtocol;
use crate::propagators::fermi_beta;

#[derive(Debug, Clone, PartialEq)]
pub struct WignerSlice {
    /// `s = i + j`.
    pub s: usize,
    pub t_ave: f64,
    /// Most negative relative index; samples run over `r0, r0 + 2, ..., -r0`.
    pub r0: i64,
    pub values: Vec<C64>,
    /// True where exactly one of `t`, `t'` lies before the field switch-on.
    pub mask: Vec<bool>,
}

impl WignerSlice {
    pub fn rel_index(&self, k: usize) -> i64 {
        self.r0 + 2 * k as i64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WignerField {
    pub t_min: f64,
    pub dt: f64,
    pub n_t: usize,
    pub slices: Vec<WignerSlice>,
}

/// Re-indexes a real-time table by average and relative time.
pub fn to_wigner(table: MatRef<'_, C64>, t_min: f64, dt: f64, fp: &FieldProtocol) -> WignerField {
    let n = table.nrows();
    let off = |i: usize| fp.is_on() && t_min + i as f64 * dt < fp.t_on - 1e-9 * dt;
    let slices = (0..2 * n - 1)
        .map(|s| {
            let half = s.min(2 * (n - 1) - s) as i64;
            let count = half as usize + 1;
            let mut values = Vec::with_capacity(count);
            let mut mask = Vec::with_capacity(count);
            for k in 0..count {
                let r = -half + 2 * k as i64;
                let i = ((s as i64 + r) / 2) as usize;
                let j = ((s as i64 - r) / 2) as usize;
                values.push(table[(i, j)]);
                mask.push(off(i) != off(j));
            }
            WignerSlice { s, t_ave: t_min + 0.5 * s as f64 * dt, r0: -half, values, mask }
        })
        .collect();
    WignerField { t_min, dt, n_t: n, slices }
}

impl WignerField {
    /// Slice whose average time is closest to `t_ave`, if within half a step.
    pub fn slice_at(&self, t_ave: f64) -> Result<&WignerSlice> {
        let s = ((t_ave - self.t_min) * 2.0 / self.dt).round();
        if s < 0.0 || s as usize >= self.slices.len() || (self.t_min + 0.5 * s * self.dt - t_ave).abs() > 0.25 * self.dt {
            return Err(Error::InvalidParameter(format!("t_ave = {t_ave} is not on the Wigner sweep")));
        }
        Ok(&self.slices[s as usize])
    }

    /// Inverse of [`to_wigner`].
    pub fn to_table(&self) -> Mat<C64> {
        let mut m = Mat::zeros(self.n_t, self.n_t);
        for sl in &self.slices {
            for (k, &v) in sl.values.iter().enumerate() {
                let r = sl.rel_index(k);
                let i = ((sl.s as i64 + r) / 2) as usize;
                let j = ((sl.s as i64 - r) / 2) as usize;
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// Taper applied to a slice before transforming.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Window {
    None,
    /// Raised-cosine roll-off over the outer `fraction` of the `|t_rel|` range.
    CosineTaper { fraction: f64 },
}

impl Default for Window {
    fn default() -> Self {
        Window::CosineTaper { fraction: 0.1 }
    }
}

impl Window {
    pub fn factor(&self, t_rel: f64, t_len: f64) -> f64 {
        match *self {
            Window::None => 1.0,
            Window::CosineTaper { fraction } => {
                if t_len <= 0.0 || fraction <= 0.0 {
                    return 1.0;
                }
                let start = (1.0 - fraction) * t_len;
                let x = t_rel.abs();
                if x <= start {
                    1.0
                } else if x >= t_len {
                    0.0
                } else {
                    0.5 * (1.0 + (std::f64::consts::PI * (x - start) / (fraction * t_len)).cos())
                }
            }
        }
    }
}

/// One-sided (`t_rel >= 0`, for retarded functions) or two-sided transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    Retarded,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSpec {
    pub window: Window,
    /// Zero padding factor relative to the sampled length.
    pub pad: usize,
    /// Largest `|t_rel|` used; slices are truncated to it.
    pub max_rel: Option<f64>,
}

impl Default for SpectrumSpec {
    fn default() -> Self {
        Self { window: Window::default(), pad: 8, max_rel: None }
    }
}

/// Complex spectrum on an ascending uniform frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub omega: Vec<f64>,
    pub values: Vec<C64>,
}

impl Spectrum {
    pub fn step(&self) -> f64 {
        self.omega[1] - self.omega[0]
    }

    /// Indices with `|omega| <= limit`.
    pub fn band(&self, limit: f64) -> impl Iterator<Item = usize> + '_ {
        (0..self.omega.len()).filter(move |&k| self.omega[k].abs() <= limit + 1e-12)
    }
}

/// `F(omega) = int d t_rel e^{i omega t_rel} F(t_rel)` of one slice.
pub fn wigner_to_frequency(field: &WignerField, t_ave: f64, side: Sidedness, spec: &SpectrumSpec) -> Result<Spectrum> {
    let sl = field.slice_at(t_ave)?;
    slice_spectrum(sl, field.dt, side, spec)
}

/// Number of `2 dt` samples of a two-sided slice truncated at `t_len`. One-
/// and two-sided transforms both pad from this count, so spectra of equal
/// truncation and padding share one frequency grid.
pub fn sample_span(t_len: f64, dt: f64) -> usize {
    2 * (t_len / (2.0 * dt) + 1e-9).floor() as usize + 2
}

/// Transform of a single slice; see [`wigner_to_frequency`].
pub fn slice_spectrum(sl: &WignerSlice, dt: f64, side: Sidedness, spec: &SpectrumSpec) -> Result<Spectrum> {
    if spec.pad == 0 {
        return Err(Error::InvalidParameter("zero padding factor must be positive".into()));
    }
    let full = -sl.r0 as f64 * dt;
    let t_len = spec.max_rel.map_or(full, |m| m.min(full));
    let samples: Vec<(f64, C64)> = sl
        .values
        .iter()
        .enumerate()
        .map(|(k, &v)| (sl.rel_index(k) as f64 * dt, v))
        .filter(|(t, _)| t.abs() <= t_len + 1e-9 * dt && (side == Sidedness::TwoSided || *t >= -1e-9 * dt))
        .collect();
    if samples.is_empty() {
        return Err(Error::InvalidParameter(format!("slice at t_ave = {} has no samples in range", sl.t_ave)));
    }
    let delta = 2.0 * dt;
    let p = (spec.pad * sample_span(t_len, dt)).next_power_of_two();
    let t_first = samples[0].0;
    let mut buf = vec![C64::new(0.0, 0.0); p];
    for (n, &(t, v)) in samples.iter().enumerate() {
        let mut w = spec.window.factor(t, t_len);
        if side == Sidedness::Retarded && t.abs() < 1e-9 * dt {
            w *= 0.5;
        }
        buf[n] = v * w;
    }
    // inverse FFT computes sum_n x_n e^{+2 pi i k n / p}
    FftPlanner::new().plan_fft_inverse(p).process(&mut buf);
    let mut pairs: Vec<(f64, C64)> = (0..p)
        .map(|k| {
            let kk = if k < p / 2 { k as f64 } else { k as f64 - p as f64 };
            let w = 2.0 * std::f64::consts::PI * kk / (p as f64 * delta);
            (w, delta * C64::from_polar(1.0, w * t_first) * buf[k])
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(Spectrum { omega: pairs.iter().map(|p| p.0).collect(), values: pairs.iter().map(|p| p.1).collect() })
}

/// Band-limited inverse transform `F(t) = (1/2 pi) int d omega e^{-i omega t} F(omega)`
/// at `t = m dt` for `m = -(count-1) ..= count-1`.
///
/// The spectrum must live on a grid produced by [`slice_spectrum`] with the
/// same `dt`, where `omega_k = 2 pi k / (2 p dt)`; the sum over `k` is then a
/// discrete Fourier transform of length `2 p`.
pub fn inverse_on_steps(spec: &Spectrum, dt: f64, count: usize) -> Result<Vec<C64>> {
    let p = spec.omega.len();
    let dw = spec.step();
    let q = 2 * p;
    if ((dw * q as f64 * dt) / (2.0 * std::f64::consts::PI) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter("spectrum grid does not match the time step".into()));
    }
    if count == 0 || count > p {
        return Err(Error::InvalidParameter(format!(
            "{count} time steps exceed the period of the frequency grid; raise the padding"
        )));
    }
    let mut buf = vec![C64::new(0.0, 0.0); q];
    for (w, v) in spec.omega.iter().zip(&spec.values) {
        let k = (w / dw).round() as i64;
        buf[k.rem_euclid(q as i64) as usize] = *v;
    }
    // forward FFT computes sum_k x_k e^{-2 pi i k m / q}
    FftPlanner::new().plan_fft_forward(q).process(&mut buf);
    let norm = dw / (2.0 * std::f64::consts::PI);
    Ok((-(count as i64 - 1)..=(count as i64 - 1)).map(|m| norm * buf[m.rem_euclid(q as i64) as usize]).collect())
}

/// `max |G^R - theta (conj(G^<) - G^<)|`, the particle-hole relation between
/// local retarded and lesser functions.
pub fn check_ph_relation(gr: MatRef<'_, C64>, gl: MatRef<'_, C64>) -> f64 {
    let n = gr.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            let want = if i >= j { gl[(i, j)].conj() - gl[(i, j)] } else { C64::new(0.0, 0.0) };
            worst = worst.max((gr[(i, j)] - want).norm());
        }
    }
    worst
}

/// Deviation from the fluctuation-dissipation relation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdtDeviation {
    /// `max_k w_k |L_k - ref_k|` over the scale `max |Im R|`.
    pub linf: f64,
    /// Weighted root mean square of `|L_k - ref_k|` over the same scale.
    pub l2: f64,
}

/// Compares `spectrum_l` with `-2i f(omega) Im spectrum_r`, weights proportional
/// to `|Im spectrum_r|`. `beta = 0` is the infinite-temperature limit.
/// Only frequencies with `|omega| <= limit` enter.
pub fn check_fdt(r: &Spectrum, l: &Spectrum, beta: f64, limit: f64) -> Result<FdtDeviation> {
    if r.omega.len() != l.omega.len() || r.omega.iter().zip(&l.omega).any(|(a, b)| (a - b).abs() > 1e-9 * a.abs().max(1.0)) {
        return Err(Error::InvalidParameter("spectra live on different frequency grids".into()));
    }
    if !(beta >= 0.0) {
        return Err(Error::InvalidParameter(format!("beta must be non-negative, got {beta}")));
    }
    let band: Vec<usize> = r.band(limit).collect();
    let scale = band.iter().map(|&k| r.values[k].im.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::InvalidParameter("retarded spectrum has no weight in the band".into()));
    }
    let (mut linf, mut num, mut den) = (0.0f64, 0.0, 0.0);
    for &k in &band {
        let f = fermi_beta(r.omega[k], beta);
        let reference = C64::new(0.0, -2.0 * f * r.values[k].im);
        let d = (l.values[k] - reference).norm();
        let w = r.values[k].im.abs() / scale;
        linf = linf.max(w * d);
        num += w * d * d;
        den += w;
    }
    Ok(FdtDeviation { linf: linf / scale, l2: (num / den).sqrt() / scale })
}

/// Relative L2 deviation of `Im L(t_rel)` from `-(1/2) Im R(t_rel)` over
/// `t_rel > 0` samples outside the field-mix mask: the infinite-temperature
/// relation between lesser and retarded functions.
pub fn half_relation_deviation(lesser: &WignerSlice, retarded: &WignerSlice) -> Result<f64> {
    if lesser.s != retarded.s || lesser.values.len() != retarded.values.len() {
        return Err(Error::InvalidParameter("slices differ in average time".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..lesser.values.len() {
        if lesser.rel_index(k) <= 0 || lesser.mask[k] {
            continue;
        }
        let want = -0.5 * retarded.values[k].im;
        num += (lesser.values[k].im - want).powi(2);
        den += want * want;
    }
    if den == 0.0 {
        return Err(Error::InvalidParameter("no unmasked positive relative times".into()));
    }
    Ok((num / den).sqrt())
}
