//! Post-check of the lesser Dyson equation `G^< = G0^< + [G0 * S * G]^<`
//! in Keldysh branch-block form.
//!
//! The lesser part of a contour product is
//!
//! ```text
//! [A B]^< = A^T W B^< - A^< W B^Tbar + A^rmix W_tau B^lmix
//! ```
//!
//! with `A^T` the time-ordered (forward-forward) block and `A^Tbar` the
//! anti-time-ordered (backward-backward) block. Blocks are read from the
//! kernels as stored, including their equal-time entries. The identity then
//! holds exactly for the discrete scheme, so the residual measures
//! self-consistency rather than discretization error.

use faer::Mat;
use num_complex::Complex64 as C64;

use crate::contour::ContourKernel;
use crate::error::{Error, Result};

/// The nine branch blocks of a contour kernel, indexed by time step or spur slot.
#[derive(Debug, Clone)]
pub struct KeldyshBlocks {
    /// forward-forward (time ordered)
    pub ff: Mat<C64>,
    /// forward-backward (lesser)
    pub fb: Mat<C64>,
    /// backward-forward (greater)
    pub bf: Mat<C64>,
    /// backward-backward (anti-time ordered)
    pub bb: Mat<C64>,
    pub fs: Mat<C64>,
    pub bs: Mat<C64>,
    pub sf: Mat<C64>,
    pub sb: Mat<C64>,
    pub ss: Mat<C64>,
}

impl KeldyshBlocks {
    pub fn of(k: &ContourKernel) -> Self {
        let g = k.grid();
        let (nt, ns) = (g.n_t(), g.n_tau());
        let v = k.values();
        let blk = |r: usize, c: usize, rf: &dyn Fn(usize) -> usize, cf: &dyn Fn(usize) -> usize| {
            Mat::from_fn(r, c, |i, j| v[(rf(i), cf(j))])
        };
        let f = |i| g.fwd(i);
        let b = |i| g.bwd(i);
        let s = |m| g.spur(m);
        Self {
            ff: blk(nt, nt, &f, &f),
            fb: blk(nt, nt, &f, &b),
            bf: blk(nt, nt, &b, &f),
            bb: blk(nt, nt, &b, &b),
            fs: blk(nt, ns, &f, &s),
            bs: blk(nt, ns, &b, &s),
            sf: blk(ns, nt, &s, &f),
            sb: blk(ns, nt, &s, &b),
            ss: blk(ns, ns, &s, &s),
        }
    }
}

/// Column of branch blocks `X(., backward)` for the three row branches.
struct BackwardColumn {
    f: Mat<C64>,
    b: Mat<C64>,
    s: Mat<C64>,
}

fn scale_rows(m: &Mat<C64>, w: &[C64]) -> Mat<C64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| w[i] * m[(i, j)])
}

struct BranchWeights {
    f: Vec<C64>,
    b: Vec<C64>,
    s: Vec<C64>,
}

/// `[A * B](., backward)` given the backward column of `B`.
fn product_backward(a: &KeldyshBlocks, col: &BackwardColumn, w: &BranchWeights) -> BackwardColumn {
    let cf = scale_rows(&col.f, &w.f);
    let cb = scale_rows(&col.b, &w.b);
    let cs = scale_rows(&col.s, &w.s);
    BackwardColumn {
        f: &a.ff * &cf + &a.fb * &cb + &a.fs * &cs,
        b: &a.bf * &cf + &a.bb * &cb + &a.bs * &cs,
        s: &a.sf * &cf + &a.sb * &cb + &a.ss * &cs,
    }
}

/// Residual of `G^< = G0^< + [G0 * S * G]^<`, maximal modulus over all `(t, t')`.
pub fn lesser_dyson_residual(g0: &ContourKernel, s: &ContourKernel, g: &ContourKernel) -> Result<f64> {
    if g0.grid() != s.grid() || g0.grid() != g.grid() {
        return Err(Error::GridMismatch);
    }
    let grid = g.grid();
    let nt = grid.n_t();
    let w = grid.weights();
    let bw = BranchWeights {
        f: (0..nt).map(|i| w[grid.fwd(i)]).collect(),
        b: (0..nt).map(|i| w[grid.bwd(i)]).collect(),
        s: (0..grid.n_tau()).map(|m| w[grid.spur(m)]).collect(),
    };
    let (a, sb, gb) = (KeldyshBlocks::of(g0), KeldyshBlocks::of(s), KeldyshBlocks::of(g));
    let col = BackwardColumn { f: gb.fb.clone(), b: gb.bb.clone(), s: gb.sb.clone() };
    let inner = product_backward(&sb, &col, &bw);
    let outer = product_backward(&a, &inner, &bw);
    let mut worst = 0.0f64;
    for j in 0..nt {
        for i in 0..nt {
            let r = gb.fb[(i, j)] - a.fb[(i, j)] - outer.f[(i, j)];
            worst = worst.max(r.norm());
        }
    }
    Ok(worst)
}
