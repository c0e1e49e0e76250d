//! Infinite-dimensional hypercubic lattice: quadrature over the joint Gaussian
//! density of band energy and band velocity, and the Peierls-shifted dispersion.

use std::num::NonZeroUsize;

use gauss_quad::hermite::GaussHermite;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Single-particle density of states `exp(-e^2)/sqrt(pi)`.
pub fn gaussian_dos(e: f64) -> f64 {
    (-e * e).exp() / std::f64::consts::PI.sqrt()
}

/// Quadrature nodes `(eps, eps_bar)` with normalized positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    nodes: Vec<(f64, f64)>,
    weights: Vec<f64>,
    label: String,
}

/// How to build the momentum quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuadratureSpec {
    /// Tensor-product Gauss-Hermite rule with `order` points per dimension.
    GaussHermite { order: usize },
    /// Density-weighted midpoint rule in `eps` on `[-eps_max, eps_max]`
    /// times a Gauss-Hermite rule of order `order_bar` in `eps_bar`.
    Midpoint { n_eps: usize, eps_max: f64, order_bar: usize },
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec::Midpoint { n_eps: 40, eps_max: 5.0, order_bar: 12 }
    }
}

impl QuadratureSpec {
    pub fn build(&self) -> Result<QuadratureGrid> {
        match *self {
            QuadratureSpec::GaussHermite { order } => gauss_hermite_joint(order),
            QuadratureSpec::Midpoint { n_eps, eps_max, order_bar } => {
                let e = midpoint_1d(n_eps, eps_max)?;
                let b = gauss_hermite_1d(order_bar)?;
                Ok(QuadratureGrid::tensor(&e, &b, format!("midpoint({n_eps},{eps_max})xgh({order_bar})")))
            }
        }
    }
}

/// Gauss-Hermite nodes and weights for the normalized density `exp(-x^2)/sqrt(pi)`.
pub fn gauss_hermite_1d(order: usize) -> Result<Vec<(f64, f64)>> {
    let deg = NonZeroUsize::new(order)
        .filter(|_| order >= 2)
        .ok_or_else(|| Error::InvalidParameter(format!("quadrature order must be at least 2, got {order}")))?;
    let rule = GaussHermite::new(deg);
    let mut pairs: Vec<(f64, f64)> = rule.as_node_weight_pairs().to_vec();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // symmetrize against eigenvalue roundoff so odd moments vanish exactly
    let n = pairs.len();
    let mut out = vec![(0.0, 0.0); n];
    for k in 0..n {
        let (a, b) = (pairs[k], pairs[n - 1 - k]);
        out[k] = (0.5 * (a.0 - b.0), 0.5 * (a.1 + b.1));
    }
    let total: f64 = out.iter().map(|p| p.1).sum();
    for p in &mut out {
        p.1 /= total;
    }
    Ok(out)
}

/// Midpoint rule for the Gaussian density on a symmetric window.
pub fn midpoint_1d(n: usize, eps_max: f64) -> Result<Vec<(f64, f64)>> {
    if n < 2 || !(eps_max > 0.0) {
        return Err(Error::InvalidParameter(format!("midpoint rule needs n >= 2 and eps_max > 0, got {n}, {eps_max}")));
    }
    let h = 2.0 * eps_max / n as f64;
    let mut out: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            let e = -eps_max + (j as f64 + 0.5) * h;
            (e, gaussian_dos(e) * h)
        })
        .collect();
    for k in 0..n / 2 {
        let (a, b) = (out[k], out[n - 1 - k]);
        out[k].0 = 0.5 * (a.0 - b.0);
        out[n - 1 - k].0 = -out[k].0;
        let w = 0.5 * (a.1 + b.1);
        out[k].1 = w;
        out[n - 1 - k].1 = w;
    }
    let total: f64 = out.iter().map(|p| p.1).sum();
    for p in &mut out {
        p.1 /= total;
    }
    Ok(out)
}

/// Tensor-product Gauss-Hermite grid over `(eps, eps_bar)`.
pub fn gauss_hermite_joint(order: usize) -> Result<QuadratureGrid> {
    let r = gauss_hermite_1d(order)?;
    Ok(QuadratureGrid::tensor(&r, &r, format!("gh({order})x{order}")))
}

impl QuadratureGrid {
    pub fn tensor(eps: &[(f64, f64)], bar: &[(f64, f64)], label: String) -> Self {
        let mut nodes = Vec::with_capacity(eps.len() * bar.len());
        let mut weights = Vec::with_capacity(eps.len() * bar.len());
        for &(e, we) in eps {
            for &(b, wb) in bar {
                nodes.push((e, b));
                weights.push(we * wb);
            }
        }
        Self { nodes, weights, label }
    }

    /// Arbitrary nodes; weights are normalized to sum 1.
    pub fn from_nodes(nodes: Vec<(f64, f64)>, weights: Vec<f64>) -> Result<Self> {
        if nodes.len() != weights.len() || nodes.is_empty() {
            return Err(Error::InvalidParameter("quadrature nodes and weights differ in length".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidParameter("quadrature weights must be non-negative with positive sum".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { nodes, weights, label: "custom".into() })
    }

    pub fn single(eps: f64, eps_bar: f64) -> Self {
        Self { nodes: vec![(eps, eps_bar)], weights: vec![1.0], label: format!("single({eps},{eps_bar})") }
    }

    /// Merges nodes sharing the same `eps` and drops the velocity.
    ///
    /// Exact for any calculation without a field, where `eps_bar` never enters.
    pub fn collapse_velocity(&self) -> Self {
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (&(e, _), &w) in self.nodes.iter().zip(&self.weights) {
            match merged.iter_mut().find(|m| m.0 == e) {
                Some(m) => m.1 += w,
                None => merged.push((e, w)),
            }
        }
        Self {
            nodes: merged.iter().map(|m| (m.0, 0.0)).collect(),
            weights: merged.iter().map(|m| m.1).collect(),
            label: format!("{}|eps", self.label),
        }
    }

    pub fn nodes(&self) -> &[(f64, f64)] {
        &self.nodes
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    pub fn label(&self) -> &str {
        &self.label
    }

    /// `sum_k w_k eps_k^p eps_bar_k^q`.
    pub fn moment(&self, p: i32, q: i32) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&(e, b), &w)| w * e.powi(p) * b.powi(q)).sum()
    }
}

/// Step turn-on of a DC field along the lattice diagonal in the vector-potential gauge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldProtocol {
    /// Field amplitude per component.
    pub e: f64,
    pub t_on: f64,
}

impl FieldProtocol {
    pub fn off() -> Self {
        Self { e: 0.0, t_on: 0.0 }
    }

    /// Vector potential `A(t) = -E (t - t_on)` after the switch-on, zero before.
    pub fn vector_potential(&self, t: f64) -> f64 {
        if t > self.t_on {
            -self.e * (t - self.t_on)
        } else {
            0.0
        }
    }

    pub fn is_on(&self) -> bool {
        self.e != 0.0
    }
}

/// `eps cos(E s) - eps_bar sin(E s)` with `s = t - t_on`, or `eps` before the field.
pub fn instantaneous_dispersion(eps: f64, eps_bar: f64, t: f64, fp: &FieldProtocol) -> f64 {
    if t < fp.t_on {
        return eps;
    }
    let (s, c) = (fp.e * (t - fp.t_on)).sin_cos();
    eps * c - eps_bar * s
}

/// Band velocity `-d eps_k(t)/dt / E = eps_bar cos(E s) + eps sin(E s)`.
pub fn band_velocity(eps: f64, eps_bar: f64, t: f64, fp: &FieldProtocol) -> f64 {
    if t < fp.t_on {
        return eps_bar;
    }
    let (s, c) = (fp.e * (t - fp.t_on)).sin_cos();
    eps_bar * c + eps * s
}

/// Antiderivative of the dispersion, anchored at `t_on`.
fn dispersion_antiderivative(eps: f64, eps_bar: f64, t: f64, fp: &FieldProtocol) -> f64 {
    let s = t - fp.t_on;
    if s <= 0.0 || fp.e == 0.0 {
        return eps * s;
    }
    let x = fp.e * s;
    let half = (0.5 * x).sin();
    (eps * x.sin() - 2.0 * eps_bar * half * half) / fp.e
}

/// `int_{t'}^{t} eps_k(tbar) dtbar` in closed form.
pub fn phase_integral(eps: f64, eps_bar: f64, t: f64, t_prime: f64, fp: &FieldProtocol) -> f64 {
    dispersion_antiderivative(eps, eps_bar, t, fp) - dispersion_antiderivative(eps, eps_bar, t_prime, fp)
}
