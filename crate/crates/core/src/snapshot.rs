//! Kernel snapshots and run checkpoints.
//!
//! Snapshot layout (all little endian):
//!
//! ```text
//! offset  size   field
//! 0       8      magic "FKNQSNAP"
//! 8       4      u32 format version (1)
//! 12      8      f64 t_min
//! 20      8      f64 t_max
//! 28      8      f64 dt
//! 36      8      f64 beta
//! 44      8      u64 n_tau
//! 52      8      u64 n (matrix dimension, 2 n_t + n_tau)
//! 60      16 n^2 row-major entries, each f64 re then f64 im
//! ```
//!
//! A checkpoint is a JSON manifest next to one snapshot per stored kernel.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use faer::Mat;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::contour::{build_contour, ContourKernel};
use crate::dmft::{ModelParams, TransientSolution};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FKNQSNAP";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 60;
/// Kernels stored for a converged run.
pub const KERNELS: [&str; 4] = ["sigma", "g_loc", "weiss", "g_imp"];

pub fn write_kernel(path: &Path, k: &ContourKernel) -> Result<()> {
    let g = k.grid();
    let n = k.len();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for x in [g.t_min(), g.t_max(), g.dt(), g.beta()] {
        w.write_all(&x.to_le_bytes())?;
    }
    w.write_all(&(g.n_tau() as u64).to_le_bytes())?;
    w.write_all(&(n as u64).to_le_bytes())?;
    let v = k.values();
    for i in 0..n {
        for j in 0..n {
            let z = v[(i, j)];
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn f64_at(b: &[u8], off: usize) -> f64 {
    f64::from_le_bytes(b[off..off + 8].try_into().unwrap())
}

fn u64_at(b: &[u8], off: usize) -> u64 {
    u64::from_le_bytes(b[off..off + 8].try_into().unwrap())
}

pub fn read_kernel(path: &Path) -> Result<ContourKernel> {
    let mut r = BufReader::new(File::open(path)?);
    let mut head = [0u8; HEADER_LEN];
    r.read_exact(&mut head).map_err(|_| Error::Format(format!("{}: truncated header", path.display())))?;
    if &head[..8] != MAGIC {
        return Err(Error::Format(format!("{}: not a kernel snapshot", path.display())));
    }
    let version = u32::from_le_bytes(head[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("{}: unsupported version {version}", path.display())));
    }
    let (t_min, t_max, dt, beta) = (f64_at(&head, 12), f64_at(&head, 20), f64_at(&head, 28), f64_at(&head, 36));
    let (n_tau, n) = (u64_at(&head, 44) as usize, u64_at(&head, 52) as usize);
    let grid = Arc::new(build_contour(t_min, t_max, beta, dt, n_tau)?);
    if grid.len() != n {
        return Err(Error::Format(format!("{}: dimension {n} does not match the grid ({})", path.display(), grid.len())));
    }
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != 16 * n * n {
        return Err(Error::Format(format!("{}: expected {} data bytes, found {}", path.display(), 16 * n * n, body.len())));
    }
    let values = Mat::from_fn(n, n, |i, j| {
        let off = 16 * (i * n + j);
        C64::new(f64_at(&body, off), f64_at(&body, off + 8))
    });
    ContourKernel::new(grid, values)
}

/// Manifest of a checkpointed transient run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub params: ModelParams,
    pub t_min: f64,
    pub t_max: f64,
    pub dt: f64,
    pub n_tau: usize,
    pub tol: f64,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    /// Whether the stored self-energy is converged (false for mid-run saves).
    pub converged: bool,
    /// Kernel name to snapshot file, relative to the manifest.
    pub kernels: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn kernel_path(&self, manifest: &Path, name: &str) -> Result<PathBuf> {
        let file = self
            .kernels
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, f)| f)
            .ok_or_else(|| Error::Format(format!("checkpoint has no kernel '{name}'")))?;
        Ok(manifest.parent().unwrap_or(Path::new(".")).join(file))
    }
}

fn save(dir: &Path, stem: &str, manifest: Checkpoint, kernels: &[(&str, &ContourKernel)]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    for (name, k) in kernels {
        write_kernel(&dir.join(format!("{stem}.{name}.bin")), k)?;
    }
    let path = dir.join(format!("{stem}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

/// Writes `Sigma`, `G_loc`, the Weiss field and `G_imp` of a converged run.
/// Returns the manifest path.
pub fn save_solution(dir: &Path, stem: &str, sol: &TransientSolution, tol: f64) -> Result<PathBuf> {
    let g = sol.grid.as_ref();
    let manifest = Checkpoint {
        format_version: VERSION,
        params: sol.params,
        t_min: g.t_min(),
        t_max: g.t_max(),
        dt: g.dt(),
        n_tau: g.n_tau(),
        tol,
        iterations: sol.iterations,
        residual_history: sol.residual_history.clone(),
        converged: true,
        kernels: KERNELS.iter().map(|n| (n.to_string(), format!("{stem}.{n}.bin"))).collect(),
    };
    save(dir, stem, manifest, &[("sigma", &sol.sigma), ("g_loc", &sol.g_loc), ("weiss", &sol.weiss), ("g_imp", &sol.g_imp)])
}

/// Writes an unconverged self-energy so a run can resume from it.
pub fn save_progress(dir: &Path, stem: &str, params: &ModelParams, sigma: &ContourKernel, tol: f64, history: &[f64]) -> Result<PathBuf> {
    let g = sigma.grid();
    let manifest = Checkpoint {
        format_version: VERSION,
        params: *params,
        t_min: g.t_min(),
        t_max: g.t_max(),
        dt: g.dt(),
        n_tau: g.n_tau(),
        tol,
        iterations: history.len(),
        residual_history: history.to_vec(),
        converged: false,
        kernels: vec![("sigma".into(), format!("{stem}.sigma.bin"))],
    };
    save(dir, stem, manifest, &[("sigma", sigma)])
}

pub fn load_checkpoint(manifest: &Path) -> Result<Checkpoint> {
    let c: Checkpoint = serde_json::from_str(&std::fs::read_to_string(manifest)?)?;
    if c.format_version != VERSION {
        return Err(Error::Format(format!("{}: unsupported checkpoint version {}", manifest.display(), c.format_version)));
    }
    Ok(c)
}

/// Loads one kernel of a checkpoint and checks it against the manifest's grid.
pub fn load_kernel(manifest: &Path, c: &Checkpoint, name: &str) -> Result<ContourKernel> {
    let k = read_kernel(&c.kernel_path(manifest, name)?)?;
    let g = k.grid();
    if (g.dt() - c.dt).abs() > 0.0 || (g.t_max() - c.t_max).abs() > 0.0 || g.n_tau() != c.n_tau {
        return Err(Error::Format(format!("kernel '{name}' does not match the manifest grid")));
    }
    Ok(k)
}
