//! Command pipelines behind the CLI: equilibrium panels and calibration,
//! transient runs with checkpoints, the long-time bridge, and the analysis and
//! verification passes over stored kernels.
//!
//! Every CSV starts with the header block of [`crate::output`]. Currents are
//! per direction and per site.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::bridge::{
    assemble_extended, auto_patch_time, extend_sigma_lesser, extended_observables, extension_start, fdt_fan, fit_beta,
    half_relation_vs_steady, latest_clean_slice, mixed_profile, steady_retarded_sigma, weighted_deviation, BetaFit,
    ExtendedObservables, ExtendedSigma, SteadyRetarded,
};
use crate::config::RunConfig;
use crate::contour::{build_contour, causality_violation, extract_components, skew_hermitian_violation, ContourKernel};
use crate::dmft::{scf_solve_from, IterationState, TransientSolution};
use crate::equilibrium::{eq_scf, energy_vs_temperature, geometric_temperatures, CalibrationTable, EqSolution};
use crate::error::{Error, Result};
use crate::extrapolate::{extrapolate_dt, Extrapolated};
use crate::langreth::lesser_dyson_residual;
use crate::observables::{current, effective_temperature, total_energy, Trajectory};
use crate::output::{read_table, write_table, Provenance};
use crate::snapshot::{load_checkpoint, load_kernel, save_progress, save_solution, write_kernel};
use crate::wigner::{check_ph_relation, half_relation_deviation, slice_spectrum, to_wigner, Sidedness, WignerField, WignerSlice};

/// Average-time spacing of the slices written to the Wigner CSVs.
const WIGNER_STRIDE: f64 = 1.0;

/// Creates the output directory; failure is a configuration error.
pub fn output_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.output.dir.clone();
    let probe = dir.join(".fkneq-write-test");
    std::fs::create_dir_all(&dir)
        .and_then(|_| std::fs::write(&probe, b""))
        .and_then(|_| std::fs::remove_file(&probe))
        .map_err(|e| Error::Config(format!("output directory {} is not writable: {e}", dir.display())))?;
    Ok(dir)
}

fn provenance(cfg: &RunConfig, tag: &str) -> Provenance {
    Provenance::new(cfg.hash()).tag(tag)
}

/// File stem of the run with step `dt`.
pub fn run_stem(dt: f64) -> String {
    format!("transient_dt{dt}")
}

/// Manifest of the stored run with step `dt`.
pub fn manifest_path(cfg: &RunConfig, dt: f64) -> PathBuf {
    cfg.output.dir.join(format!("{}.json", run_stem(dt)))
}

pub fn observables_path(cfg: &RunConfig, dt: f64) -> PathBuf {
    cfg.output.dir.join(format!("observables_dt{dt}.csv"))
}

fn finest_dt(cfg: &RunConfig) -> f64 {
    *cfg.contour.dt.last().expect("validated configuration has a step")
}

// ---------------------------------------------------------------- equilibrium

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EqPanel {
    pub u: f64,
    pub dos_at_zero: f64,
    pub spectral_weight: f64,
    /// Violations of `Re Sigma` odd and `Im Sigma` even.
    pub parity: (f64, f64),
    pub sweeps: usize,
    pub sigma_csv: PathBuf,
    pub calibration_csv: PathBuf,
}

/// Equilibrium solution and calibration table for one interaction strength.
pub fn calibrate(cfg: &RunConfig, u: f64) -> Result<(EqSolution, CalibrationTable)> {
    let eq = &cfg.equilibrium;
    let sol = eq_scf(&cfg.eq_params(u), &eq.solver)?;
    let table = energy_vs_temperature(&sol, &geometric_temperatures(eq.t_lo, eq.t_hi, eq.n_temperatures))?;
    Ok((sol, table))
}

/// Solves the equilibrium model for every `U` in the list and writes
/// `eq_sigma_u{U}.csv` (omega, re_sigma, im_sigma, dos) and
/// `calibration_u{U}.csv` (temperature, beta, energy). An empty list does nothing.
pub fn cmd_equilibrium(cfg: &RunConfig) -> Result<Vec<EqPanel>> {
    if cfg.equilibrium.u_list.is_empty() {
        return Ok(Vec::new());
    }
    let dir = output_dir(cfg)?;
    let mut panels = Vec::new();
    for &u in &cfg.equilibrium.u_list {
        let (sol, table) = calibrate(cfg, u).map_err(|e| annotate(e, &format!("equilibrium panel U = {u}")))?;
        let prov = provenance(cfg, "equilibrium").note(format!("U = {u}, w1 = {}, mu = {}", sol.params.w1, sol.params.mu));
        let sigma_csv = dir.join(format!("eq_sigma_u{u}.csv"));
        let rows: Vec<Vec<f64>> =
            (0..sol.omega.len()).map(|k| vec![sol.omega[k], sol.sigma_r[k].re, sol.sigma_r[k].im, sol.dos[k]]).collect();
        write_table(&sigma_csv, &prov, &["omega", "re_sigma", "im_sigma", "dos"], &rows)?;
        let calibration_csv = dir.join(format!("calibration_u{u}.csv"));
        let rows: Vec<Vec<f64>> =
            table.temperatures.iter().zip(&table.energies).map(|(&t, &e)| vec![t, 1.0 / t, e]).collect();
        let prov = prov.note(format!("ground {} plateau {}", table.ground, table.plateau));
        write_table(&calibration_csv, &prov, &["temperature", "beta", "energy"], &rows)?;
        panels.push(EqPanel {
            u,
            dos_at_zero: sol.dos_near(0.0),
            spectral_weight: sol.spectral_weight(),
            parity: sol.sigma_parity_violation(),
            sweeps: sol.max_sweeps,
            sigma_csv,
            calibration_csv,
        });
    }
    Ok(panels)
}

fn annotate(e: Error, what: &str) -> Error {
    match e {
        Error::InvalidParameter(m) => Error::InvalidParameter(format!("{what}: {m}")),
        Error::Calibration(m) => Error::Calibration(format!("{what}: {m}")),
        other => other,
    }
}

// ------------------------------------------------------------------ transient

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub dt: f64,
    pub iterations: usize,
    pub residual: f64,
    pub seconds: f64,
    /// Started from a stored self-energy.
    pub resumed: bool,
    pub manifest: PathBuf,
    pub observables: PathBuf,
}

#[derive(Debug)]
pub struct TransientOutcome {
    pub records: Vec<RunRecord>,
    pub solutions: Vec<TransientSolution>,
    /// `dt -> 0` extrapolation when a step triple converged.
    pub extrapolated: Option<Extrapolated>,
    /// Steps whose run failed, with the error text.
    pub failures: Vec<(f64, String)>,
}

/// Energy calibration at the model's `U` and the initial energy `E(T)`.
pub fn transient_calibration(cfg: &RunConfig) -> Result<(CalibrationTable, f64)> {
    let (_, table) = calibrate(cfg, cfg.model.u)?;
    let e0 = table.energy_at(cfg.thermal.temperature);
    Ok((table, e0))
}

/// `j`, `E_tot` and `beta_eff` of a converged run.
pub fn run_observables(sol: &TransientSolution, table: &CalibrationTable, e0: f64) -> Result<(Trajectory, Trajectory, Trajectory)> {
    let j = current(sol)?;
    let e = total_energy(&j, &sol.params.field, e0)?;
    let b = effective_temperature(&e, table)?;
    Ok((j, e, b))
}

/// Runs every step of the configuration. A stored self-energy with a matching
/// grid is used as the starting point. Successful runs are kept when another
/// fails; the first failure is returned after all runs were attempted.
pub fn cmd_transient(cfg: &RunConfig, mut progress: impl FnMut(f64, &IterationState<'_>)) -> Result<TransientOutcome> {
    let dir = output_dir(cfg)?;
    let params = cfg.model_params()?;
    let quad = cfg.quadrature.build()?;
    let (table, e0) = transient_calibration(cfg)?;
    let mut out = TransientOutcome { records: Vec::new(), solutions: Vec::new(), extrapolated: None, failures: Vec::new() };
    let mut first_err = None;
    for &dt in &cfg.contour.dt {
        let res = (|| -> Result<(RunRecord, TransientSolution)> {
            let grid = Arc::new(build_contour(cfg.contour.t_min, cfg.contour.t_max, params.lattice_thermal().beta(), dt, cfg.contour.n_tau)?);
            let stem = run_stem(dt);
            let start = stored_start(&manifest_path(cfg, dt), &params, &grid);
            let resumed = start.is_some();
            let timer = Instant::now();
            let mut history = Vec::new();
            let mut save_err = None;
            let sol = scf_solve_from(&params, &grid, &quad, &cfg.scf, start, |st| {
                history.push(st.residual);
                let every = cfg.output.checkpoint_every;
                if every > 0 && st.iteration % every == 0 && st.residual > cfg.scf.tol {
                    if let Err(e) = save_progress(&dir, &stem, &params, st.sigma, cfg.scf.tol, &history) {
                        save_err.get_or_insert(e);
                    }
                }
                progress(dt, st);
            })?;
            if let Some(e) = save_err {
                return Err(e);
            }
            let seconds = timer.elapsed().as_secs_f64();
            let manifest = save_solution(&dir, &stem, &sol, cfg.scf.tol)?;
            let observables = observables_path(cfg, dt);
            write_observables(cfg, &sol, &table, e0, &observables)?;
            write_wigner_tables(cfg, &sol, &dir)?;
            let record = RunRecord {
                dt,
                iterations: sol.iterations,
                residual: sol.residual_history.last().copied().unwrap_or(0.0),
                seconds,
                resumed,
                manifest,
                observables,
            };
            Ok((record, sol))
        })();
        match res {
            Ok((r, s)) => {
                log::info!("dt = {dt}: {} iterations in {:.1} s", r.iterations, r.seconds);
                out.records.push(r);
                out.solutions.push(s);
            }
            Err(e) => {
                log::error!("dt = {dt}: {e}");
                out.failures.push((dt, e.to_string()));
                first_err.get_or_insert(e);
            }
        }
    }
    if out.solutions.len() == 3 {
        let ex = extrapolate_dt([&out.solutions[0], &out.solutions[1], &out.solutions[2]])?;
        write_extrapolated(cfg, &ex, &dir.join("extrapolated.csv"))?;
        out.extrapolated = Some(ex);
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Stored self-energy to start from, if one exists for this grid and model.
fn stored_start(manifest: &Path, params: &crate::dmft::ModelParams, grid: &crate::contour::ContourGrid) -> Option<ContourKernel> {
    if !manifest.exists() {
        return None;
    }
    let c = load_checkpoint(manifest).ok()?;
    if c.params != *params {
        log::warn!("{}: stored run has different model parameters, starting fresh", manifest.display());
        return None;
    }
    let s = load_kernel(manifest, &c, "sigma").ok()?;
    if s.grid() != grid {
        log::warn!("{}: stored run has a different grid, starting fresh", manifest.display());
        return None;
    }
    Some(s)
}

/// Columns: t, j, e_tot, t_eff, beta_eff, n, kinetic.
pub fn write_observables(cfg: &RunConfig, sol: &TransientSolution, table: &CalibrationTable, e0: f64, path: &Path) -> Result<()> {
    let (j, e, b) = run_observables(sol, table, e0)?;
    let prov = provenance(cfg, &format!("transient dt={}", sol.grid.dt()))
        .note("current per direction, per site")
        .note(format!("E_eq0 {e0} from the calibration at T = {}", cfg.thermal.temperature));
    let rows: Vec<Vec<f64>> = (0..j.len())
        .map(|k| {
            let beta = b.values[k];
            let t_eff = if beta > 0.0 { 1.0 / beta } else { f64::INFINITY };
            vec![j.times[k], j.values[k], e.values[k], t_eff, beta, sol.density[k], sol.kinetic[k]]
        })
        .collect();
    write_table(path, &prov, &["t", "j", "e_tot", "t_eff", "beta_eff", "n", "kinetic"], &rows)
}

/// Columns: t, j, n, kinetic, then the per-run currents `j_dt{h}`.
fn write_extrapolated(cfg: &RunConfig, ex: &Extrapolated, path: &Path) -> Result<()> {
    let names: Vec<String> = ex.steps.iter().map(|h| format!("j_dt{h}")).collect();
    let mut cols = vec!["t", "j", "n", "kinetic"];
    cols.extend(names.iter().map(String::as_str));
    let rows: Vec<Vec<f64>> = (0..ex.times.len())
        .map(|k| {
            vec![ex.times[k], ex.current[k], ex.density[k], ex.kinetic[k], ex.run_current[0][k], ex.run_current[1][k], ex.run_current[2][k]]
        })
        .collect();
    let prov = provenance(cfg, "extrapolated").note(format!("quadratic dt -> 0 from steps {:?}", ex.steps)).note("current per direction, per site");
    write_table(path, &prov, &cols, &rows)
}

fn stride_slices(field: &WignerField) -> impl Iterator<Item = &WignerSlice> {
    let every = ((2.0 * WIGNER_STRIDE / field.dt).round() as usize).max(1);
    field.slices.iter().filter(move |sl| sl.s % every == 0)
}

/// Wigner tables (t_ave, t_rel, re, im, masked) and spectra (t_ave, omega, re, im)
/// of `Sigma^<` and `Sigma^R`.
pub fn write_wigner_tables(cfg: &RunConfig, sol: &TransientSolution, dir: &Path) -> Result<()> {
    let g = sol.grid.as_ref();
    let dt = g.dt();
    let fp = sol.params.field;
    let c = extract_components(&sol.sigma);
    let spec = cfg.analysis.spectrum;
    for (name, table, side) in [("lesser", &c.lesser, Sidedness::TwoSided), ("retarded", &c.retarded, Sidedness::Retarded)] {
        let field = to_wigner(table.as_ref(), g.t_min(), dt, &fp);
        let prov = provenance(cfg, &format!("transient dt={dt}")).note(format!("Sigma {name}, slices every {WIGNER_STRIDE} in t_ave"));
        let mut rows = Vec::new();
        let mut spectra = Vec::new();
        for sl in stride_slices(&field) {
            for (k, v) in sl.values.iter().enumerate() {
                let t_rel = sl.rel_index(k) as f64 * dt;
                rows.push(vec![sl.t_ave, t_rel, v.re, v.im, f64::from(u8::from(sl.mask[k]))]);
            }
            if sl.values.len() < 2 {
                continue;
            }
            if let Ok(s) = slice_spectrum(sl, dt, side, &spec) {
                for k in s.band(cfg.analysis.fdt_limit) {
                    spectra.push(vec![sl.t_ave, s.omega[k], s.values[k].re, s.values[k].im]);
                }
            }
        }
        write_table(&dir.join(format!("wigner_sigma_{name}_dt{dt}.csv")), &prov, &["t_ave", "t_rel", "re", "im", "masked"], &rows)?;
        write_table(&dir.join(format!("spectrum_sigma_{name}_dt{dt}.csv")), &prov, &["t_ave", "omega", "re", "im"], &spectra)?;
    }
    Ok(())
}

/// Loads the converged run with step `dt` and repeats one self-consistency
/// iteration, which restores the derived fields without storing them.
pub fn load_run(cfg: &RunConfig, dt: f64) -> Result<TransientSolution> {
    let manifest = manifest_path(cfg, dt);
    if !manifest.exists() {
        return Err(Error::Config(format!("no stored run at {}; run `transient` first", manifest.display())));
    }
    let c = load_checkpoint(&manifest)?;
    if !c.converged {
        return Err(Error::Config(format!("{} holds an unconverged checkpoint; finish `transient` first", manifest.display())));
    }
    let sigma = load_kernel(&manifest, &c, "sigma")?;
    let grid = sigma.grid_arc().clone();
    scf_solve_from(&c.params, &grid, &cfg.quadrature.build()?, &cfg.scf, Some(sigma), |_| {})
}

// --------------------------------------------------------------------- bridge

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BridgeReport {
    pub dt: f64,
    pub fit: BetaFit,
    pub t_patch: f64,
    pub t_max_new: f64,
    pub retarded_window: (f64, f64),
    pub retarded_spread: f64,
    pub mixed_at_patch: f64,
    /// Relative L2 mismatch of the lesser extension against the transient on the overlap strip.
    pub overlap_mismatch: f64,
    /// Largest `|j_extended - j_transient|` on `[t_patch, t_max]` outside the ripple window.
    pub overlap_current: f64,
    pub seconds: f64,
    pub bridge_csv: PathBuf,
    pub snapshot: PathBuf,
}

#[derive(Debug)]
pub struct BridgeOutcome {
    pub report: BridgeReport,
    pub extended: ExtendedSigma,
    pub observables: ExtendedObservables,
}

/// Window of average times whose retarded slices are averaged. The default
/// center is midway between the switch-on (or `t_min` without a field) and `t_max`.
pub fn retarded_window(cfg: &RunConfig) -> (f64, f64) {
    let start = if cfg.field.e != 0.0 { cfg.field.t_on.max(cfg.contour.t_min) } else { cfg.contour.t_min };
    let c = cfg.bridge.retarded_center.unwrap_or(0.5 * (cfg.contour.t_max + start));
    (c - cfg.bridge.retarded_window, c + cfg.bridge.retarded_window)
}

/// Steady retarded self-energy of a run, resolved up to `horizon` in relative time.
pub fn steady_retarded(cfg: &RunConfig, sol: &TransientSolution, horizon: f64) -> Result<SteadyRetarded> {
    let g = sol.grid.as_ref();
    let c = extract_components(&sol.sigma);
    let wr = to_wigner(c.retarded.as_ref(), g.t_min(), g.dt(), &sol.params.field);
    steady_retarded_sigma(&wr, retarded_window(cfg), &cfg.analysis.spectrum, horizon, cfg.bridge.spread_limit)
}

/// Bridge on the stored finest run.
pub fn cmd_bridge(cfg: &RunConfig) -> Result<BridgeOutcome> {
    output_dir(cfg)?;
    let sol = load_run(cfg, finest_dt(cfg))?;
    let (table, e0) = transient_calibration(cfg)?;
    bridge_run(cfg, &sol, &table, e0)
}

/// Fit, extension, assembly and the extended lattice solve for a converged run.
/// Writes `bridge.csv`, `bridge_sigma.bin` and `bridge.json`.
pub fn bridge_run(cfg: &RunConfig, sol: &TransientSolution, table: &CalibrationTable, e0: f64) -> Result<BridgeOutcome> {
    let dir = output_dir(cfg)?;
    let timer = Instant::now();
    let b = &cfg.bridge;
    let g = sol.grid.as_ref();
    let (j, _, beta) = run_observables(sol, table, e0)?;
    let fit = fit_beta(&beta, b.t_fit_start, b.family)
        .map_err(|e| hint(e, "move bridge.t_fit_start later or raise contour.t_max"))?;
    let sr = steady_retarded(cfg, sol, b.t_max_new - g.t_min()).map_err(|e| hint(e, "raise contour.t_max or move the retarded window"))?;
    let t_patch = match b.t_patch {
        Some(t) => t,
        None => auto_patch_time(sol, b.t_fit_start.max(sol.params.field.t_on), b.mixed_limit)?,
    };
    let ts = extension_start(sol, t_patch, b.t_max_new, b.blend)?;
    let ext = extend_sigma_lesser(&sr, &fit, ts, g.t_min(), b.t_max_new, cfg.parallelism())?;
    let es = assemble_extended(sol, &sr, &ext, t_patch, b.t_max_new, b.blend, b.mixed_limit)
        .map_err(|e| hint(e, "move bridge.t_patch later"))?;
    let quad = cfg.quadrature.build()?;
    let obs = extended_observables(&es, &quad, &sol.params.field, &sol.params.lattice_thermal(), Some((table, e0)), cfg.parallelism())?;
    let seconds = timer.elapsed().as_secs_f64();

    let overlap_current = obs
        .current
        .times
        .iter()
        .zip(&obs.current.values)
        .filter(|(t, _)| **t >= t_patch - 1e-9 && **t <= g.t_max() + 1e-9 && (**t - t_patch).abs() > b.ripple)
        .filter_map(|(t, v)| j.at(*t).map(|jt| (v - jt).abs()))
        .fold(0.0, f64::max);

    let bridge_csv = dir.join("bridge.csv");
    let prov = provenance(cfg, "bridge")
        .note("current per direction, per site")
        .note(format!("t_patch {t_patch} t_max_new {} blend {:?}", b.t_max_new, b.blend))
        .note(format!("fit {:?} beta0 {} gamma {} second {:?} t_ref {} rms_rel {}", fit.family(), fit.beta0, fit.gamma, fit.second, fit.t_ref, fit.rms_rel))
        .note(format!("retarded window {:?} spread {} mixed_at_patch {}", retarded_window(cfg), sr.spread, es.mixed_at_patch))
        .note("extended = 1 marks times after t_patch");
    let e_ext = obs.energy.as_ref();
    let b_ext = obs.beta.as_ref();
    let rows: Vec<Vec<f64>> = (0..obs.current.len())
        .map(|k| {
            let t = obs.current.times[k];
            vec![
                t,
                obs.current.values[k],
                j.at(t).filter(|_| t <= g.t_max() + 1e-9).unwrap_or(f64::NAN),
                e_ext.map_or(f64::NAN, |e| e.values[k]),
                b_ext.map_or(f64::NAN, |b| b.values[k]),
                fit.beta(t),
                f64::from(u8::from(t > t_patch + 1e-9)),
            ]
        })
        .collect();
    write_table(&bridge_csv, &prov, &["t", "j_extended", "j_transient", "e_tot", "beta_eff", "beta_fit", "extended"], &rows)?;

    let snapshot = dir.join("bridge_sigma.bin");
    write_kernel(&snapshot, &es.kernel)?;
    let report = BridgeReport {
        dt: g.dt(),
        fit,
        t_patch,
        t_max_new: b.t_max_new,
        retarded_window: retarded_window(cfg),
        retarded_spread: sr.spread,
        mixed_at_patch: es.mixed_at_patch,
        overlap_mismatch: es.overlap_mismatch,
        overlap_current,
        seconds,
        bridge_csv,
        snapshot,
    };
    std::fs::write(dir.join("bridge.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(BridgeOutcome { report, extended: es, observables: obs })
}

fn hint(e: Error, remedy: &str) -> Error {
    match e {
        Error::Fit(m) => Error::Fit(format!("{m}; {remedy}")),
        Error::Patch(m) => Error::Patch(format!("{m}; {remedy}")),
        other => other,
    }
}

// ------------------------------------------------------------------- analysis

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub dt: f64,
    /// `G^R`/`G^<` particle-hole relation.
    pub ph_relation: f64,
    /// Average time of the late-time checks.
    pub t_ave: f64,
    /// Same-slice `Im Sigma^< = -Im Sigma^R / 2`.
    pub half_relation_slice: f64,
    /// `Im Sigma^<(t_ave)` against the steady retarded self-energy.
    pub half_relation_steady: f64,
    pub fit: BetaFit,
    pub beta_monotone_after: f64,
    pub beta_strictly_decreasing: bool,
    pub fdt_beta: f64,
    pub fdt_deviation: f64,
    pub fdt_l2: f64,
    pub fdt_csv: PathBuf,
}

/// Late-time checks on a converged run: particle-hole relation, half relation,
/// monotone `beta_eff` with its fit, and the fluctuation-dissipation fan.
/// `beta` is the `beta_eff` trajectory of the run. Writes `fdt_fan_dt{dt}.csv`.
pub fn analyze_run(cfg: &RunConfig, sol: &TransientSolution, beta: &Trajectory) -> Result<AnalysisReport> {
    let dir = output_dir(cfg)?;
    let g = sol.grid.as_ref();
    let dt = g.dt();
    let sc = extract_components(&sol.sigma);
    let gc = extract_components(&sol.g_loc);
    let ph_relation = check_ph_relation(gc.retarded.as_ref(), gc.lesser.as_ref());
    let fp = sol.params.field;
    let wl = to_wigner(sc.lesser.as_ref(), g.t_min(), dt, &fp);
    let wr = to_wigner(sc.retarded.as_ref(), g.t_min(), dt, &fp);
    let sl = match cfg.analysis.t_ave {
        Some(t) => wl.slice_at(t)?,
        None => latest_clean_slice(&wl, cfg.analysis.min_extent)?,
    };
    let half_relation_slice = half_relation_deviation(sl, wr.slice_at(sl.t_ave)?)?;
    let sr = steady_retarded(cfg, sol, g.t_max() - g.t_min())?;
    let half_relation_steady = half_relation_vs_steady(sl, &sr)?;

    let b = &cfg.bridge;
    let fit = fit_beta(beta, b.t_fit_start, b.family)?;
    let (_, bv) = beta.since(b.t_fit_start);
    let beta_strictly_decreasing = bv.windows(2).all(|w| w[1] < w[0]);

    let fdt_beta = fit.beta(sl.t_ave);
    let spec = cfg.analysis.spectrum;
    let fan = fdt_fan(sl, &sr, fdt_beta, &spec)?;
    let dev = weighted_deviation(&fan.transient, &fan.construction, &fan.retarded, cfg.analysis.fdt_limit)?;
    let fdt_csv = dir.join(format!("fdt_fan_dt{dt}.csv"));
    let prov = provenance(cfg, &format!("analysis dt={dt}"))
        .note(format!("t_ave {} beta_fit {fdt_beta}", sl.t_ave))
        .note("im_* are Im Sigma^<(omega); im_retarded is Im of the steady retarded proxy");
    let rows: Vec<Vec<f64>> = fan
        .transient
        .band(cfg.analysis.fdt_limit)
        .map(|k| vec![fan.transient.omega[k], fan.transient.values[k].im, fan.construction.values[k].im, fan.infinite.values[k].im, fan.retarded.values[k].im])
        .collect();
    write_table(&fdt_csv, &prov, &["omega", "im_transient", "im_fdt", "im_infinite", "im_retarded"], &rows)?;

    Ok(AnalysisReport {
        dt,
        ph_relation,
        t_ave: sl.t_ave,
        half_relation_slice,
        half_relation_steady,
        fit,
        beta_monotone_after: b.t_fit_start,
        beta_strictly_decreasing,
        fdt_beta,
        fdt_deviation: dev.linf,
        fdt_l2: dev.l2,
        fdt_csv,
    })
}

/// [`analyze_run`] on every stored run, reading `beta_eff` from its observables CSV.
pub fn cmd_analyze(cfg: &RunConfig) -> Result<Vec<AnalysisReport>> {
    let mut out = Vec::new();
    for &dt in &cfg.contour.dt {
        let sol = load_run(cfg, dt)?;
        let t = read_table(&observables_path(cfg, dt))?;
        let col = |n: &str| t.column(n).ok_or_else(|| Error::Format(format!("observables table lacks '{n}'")));
        let beta = Trajectory::new(col("t")?, col("beta_eff")?, format!("dt={dt}"))?;
        out.push(analyze_run(cfg, &sol, &beta)?);
    }
    Ok(out)
}

// --------------------------------------------------------------- verification

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
}

impl Check {
    pub fn pass(&self) -> bool {
        self.value.is_finite() && self.value <= self.limit
    }
}

/// Invariants of a converged run, computed from its kernels only.
pub fn verify_run(sol: &TransientSolution, tol: f64) -> Result<Vec<Check>> {
    verify_kernels(&sol.sigma, &sol.g_loc, &sol.weiss, &sol.g_imp, &sol.params.field, &sol.current, tol)
}

fn verify_kernels(
    sigma: &ContourKernel,
    g_loc: &ContourKernel,
    weiss: &ContourKernel,
    g_imp: &ContourKernel,
    fp: &crate::lattice::FieldProtocol,
    current: &[f64],
    tol: f64,
) -> Result<Vec<Check>> {
    let sc = extract_components(sigma);
    let gc = extract_components(g_loc);
    let g = g_loc.grid();
    let i = C64::new(0.0, 1.0);
    let n: Vec<f64> = (0..g.n_t()).map(|k| (-i * gc.lesser[(k, k)]).re).collect();
    let drift = n.iter().map(|x| (x - n[0]).abs()).fold(0.0, f64::max);
    let pre = (0..g.n_t()).filter(|&k| !fp.is_on() || g.time(k) < fp.t_on - 1e-9 * g.dt()).map(|k| current[k].abs()).fold(0.0, f64::max);
    let c = |name: &str, value: f64, limit: f64| Check { name: name.into(), value, limit };
    Ok(vec![
        c("causality_sigma", causality_violation(sc.retarded.as_ref()), 1e-12),
        c("causality_g_loc", causality_violation(gc.retarded.as_ref()), 1e-12),
        c("skew_hermitian_sigma_lesser", skew_hermitian_violation(sc.lesser.as_ref()), 1e-10),
        c("skew_hermitian_g_lesser", skew_hermitian_violation(gc.lesser.as_ref()), 1e-10),
        c("particle_hole_relation", check_ph_relation(gc.retarded.as_ref(), gc.lesser.as_ref()), 1e-6),
        c("langreth_lesser", lesser_dyson_residual(weiss, sigma, g_imp)?, 10.0 * tol),
        c("impurity_lattice_mismatch", g_imp.max_abs_diff(g_loc)?, 10.0 * tol),
        c("density_drift", drift, 1e-3),
        c("current_before_field", pre, 1e-8),
    ])
}

/// Invariant suite over every stored run; no self-consistency is repeated.
pub fn cmd_verify(cfg: &RunConfig) -> Result<Vec<(f64, Vec<Check>)>> {
    let mut out = Vec::new();
    for &dt in &cfg.contour.dt {
        let manifest = manifest_path(cfg, dt);
        if !manifest.exists() {
            return Err(Error::Config(format!("no stored run at {}; run `transient` first", manifest.display())));
        }
        let c = load_checkpoint(&manifest)?;
        let k = |name: &str| load_kernel(&manifest, &c, name);
        let t = read_table(&observables_path(cfg, dt))?;
        let j = t.column("j").ok_or_else(|| Error::Format("observables table lacks 'j'".into()))?;
        let checks = verify_kernels(&k("sigma")?, &k("g_loc")?, &k("weiss")?, &k("g_imp")?, &c.params.field, &j, c.tol)?;
        out.push((dt, checks));
    }
    Ok(out)
}

/// Mixed self-energy magnitude per time, for choosing a patch time by hand.
pub fn mixed_table(cfg: &RunConfig, sol: &TransientSolution, path: &Path) -> Result<()> {
    let prof = mixed_profile(&sol.sigma);
    let rows: Vec<Vec<f64>> = prof.iter().enumerate().map(|(k, &m)| vec![sol.grid.time(k), m]).collect();
    write_table(path, &provenance(cfg, "mixed"), &["t", "mixed_max"], &rows)
}
