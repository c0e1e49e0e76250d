//! Run configuration, read from and written to TOML.
//!
//! Every field has a default, so an empty file is a valid configuration.
//! [`RunConfig::reference_toml`] prints the full set.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bridge::{Blend, FitFamily, MIXED_LIMIT, SPREAD_LIMIT};
use crate::contour::commensurate_steps;
use crate::dmft::{ModelParams, ScfOptions};
use crate::equilibrium::{EqOptions, EqParams};
use crate::error::{Error, Result};
use crate::exec::Parallelism;
use crate::lattice::{FieldProtocol, QuadratureSpec};
use crate::propagators::ThermalState;
use crate::wigner::SpectrumSpec;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MuPolicy {
    /// `mu = U w1` (particle-hole symmetric for `w1 = 1/2`).
    #[default]
    HalfFilling,
    Fixed { mu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub u: f64,
    pub w1: f64,
    pub mu: MuPolicy,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { u: 1.5, w1: 0.5, mu: MuPolicy::HalfFilling }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermalSection {
    pub temperature: f64,
}

impl Default for ThermalSection {
    fn default() -> Self {
        Self { temperature: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldSection {
    pub e: f64,
    pub t_on: f64,
}

impl Default for FieldSection {
    fn default() -> Self {
        Self { e: 0.5, t_on: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContourSection {
    pub t_min: f64,
    pub t_max: f64,
    /// Steps of the extrapolation triple, coarsest first. A single entry
    /// runs without extrapolation.
    pub dt: Vec<f64>,
    pub n_tau: usize,
}

impl Default for ContourSection {
    fn default() -> Self {
        Self { t_min: 0.0, t_max: 20.0, dt: vec![0.1, 0.05, 0.025], n_tau: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquilibriumSection {
    /// Interaction strengths for the equilibrium panels.
    pub u_list: Vec<f64>,
    pub solver: EqOptions,
    /// Calibration temperatures: geometric from `t_lo` to `t_hi`.
    pub t_lo: f64,
    pub t_hi: f64,
    pub n_temperatures: usize,
}

impl Default for EquilibriumSection {
    fn default() -> Self {
        Self { u_list: vec![0.5, 1.0, 1.5, 2.0], solver: EqOptions::default(), t_lo: 0.02, t_hi: 50.0, n_temperatures: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub spectrum: SpectrumSpec,
    /// Frequency band of the fluctuation-dissipation comparison.
    pub fdt_limit: f64,
    /// Average time analysed by the late-time checks; `None` takes the latest
    /// slice with at least `min_extent` of clean relative time.
    pub t_ave: Option<f64>,
    pub min_extent: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self { spectrum: SpectrumSpec::default(), fdt_limit: 4.0, t_ave: None, min_extent: 5.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeSection {
    pub t_fit_start: f64,
    pub family: FitFamily,
    /// Patch time; `None` picks the earliest time passing the spread and mixed-block checks.
    pub t_patch: Option<f64>,
    pub t_max_new: f64,
    pub blend: Blend,
    /// Centre of the window of average times whose retarded slices are
    /// averaged; `None` takes `(t_max + t_on) / 2` (`t_min` in place of `t_on`
    /// without a field), where the clean relative-time range is longest.
    pub retarded_center: Option<f64>,
    /// Half width of that window.
    pub retarded_window: f64,
    pub spread_limit: f64,
    pub mixed_limit: f64,
    /// Half width of the window around `t_patch` left out of the overlap audit.
    pub ripple: f64,
}

impl Default for BridgeSection {
    fn default() -> Self {
        Self {
            t_fit_start: 8.0,
            family: FitFamily::Auto,
            t_patch: Some(12.0),
            t_max_new: 60.0,
            blend: Blend::Hard,
            retarded_center: None,
            retarded_window: 0.5,
            spread_limit: SPREAD_LIMIT,
            mixed_limit: MIXED_LIMIT,
            ripple: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Save the self-energy every this many SCF iterations (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), checkpoint_every: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub thermal: ThermalSection,
    pub field: FieldSection,
    pub contour: ContourSection,
    pub quadrature: QuadratureSpec,
    pub scf: ScfOptions,
    pub equilibrium: EquilibriumSection,
    pub analysis: AnalysisSection,
    pub bridge: BridgeSection,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The defaults, spelled out.
    pub fn reference_toml() -> String {
        RunConfig::default().to_toml().expect("default configuration serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let text = self.to_toml().unwrap_or_default();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let finite = [
            self.model.u,
            self.model.w1,
            self.thermal.temperature,
            self.field.e,
            self.field.t_on,
            self.contour.t_min,
            self.contour.t_max,
            self.bridge.t_fit_start,
            self.bridge.t_max_new,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return bad("physical parameters must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.model.w1) {
            return bad(format!("model.w1 = {} must lie in [0, 1]", self.model.w1));
        }
        if !(self.thermal.temperature > 0.0) {
            return bad("thermal.temperature must be positive".into());
        }
        if !(self.contour.t_max > self.contour.t_min) || self.contour.n_tau < 2 {
            return bad("contour needs t_max > t_min and n_tau >= 2".into());
        }
        let dts = &self.contour.dt;
        if dts.is_empty() || dts.len() == 2 || dts.len() > 3 {
            return bad(format!("contour.dt needs one step or a triple, got {dts:?}"));
        }
        if dts.windows(2).any(|w| !(w[1] < w[0])) || dts.iter().any(|&d| !(d > 0.0)) {
            return bad(format!("contour.dt must be positive and strictly decreasing, got {dts:?}"));
        }
        for &d in dts {
            if commensurate_steps(self.contour.t_max - self.contour.t_min, d).is_none() {
                return bad(format!("t_max - t_min is not a multiple of dt = {d}"));
            }
        }
        if commensurate_steps(self.bridge.t_max_new - self.contour.t_min, dts[0]).is_none() {
            return bad(format!("bridge.t_max_new = {} is not on the time grid", self.bridge.t_max_new));
        }
        if let Some(tp) = self.bridge.t_patch {
            if !(tp > self.contour.t_min && tp <= self.contour.t_max) {
                return bad(format!("bridge.t_patch = {tp} must lie inside the transient window"));
            }
        }
        if self.equilibrium.u_list.iter().any(|u| !u.is_finite()) {
            return bad("equilibrium.u_list must be finite".into());
        }
        if !(self.equilibrium.t_lo > 0.0 && self.equilibrium.t_hi > self.equilibrium.t_lo && self.equilibrium.n_temperatures >= 2) {
            return bad("calibration temperatures need 0 < t_lo < t_hi and at least two points".into());
        }
        Ok(())
    }

    pub fn mu(&self) -> f64 {
        match self.model.mu {
            MuPolicy::HalfFilling => self.model.u * self.model.w1,
            MuPolicy::Fixed { mu } => mu,
        }
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        Ok(ModelParams {
            u: self.model.u,
            w1: self.model.w1,
            thermal: ThermalState::new(self.thermal.temperature, self.mu())?,
            field: FieldProtocol { e: self.field.e, t_on: self.field.t_on },
        })
    }

    pub fn eq_params(&self, u: f64) -> EqParams {
        let mu = match self.model.mu {
            MuPolicy::HalfFilling => u * self.model.w1,
            MuPolicy::Fixed { mu } => mu,
        };
        EqParams { u, w1: self.model.w1, mu, band_scale: 1.0 }
    }

    pub fn parallelism(&self) -> Parallelism {
        self.scf.parallelism
    }
}
