//! Transient nonequilibrium DMFT for the Falicov-Kimball model driven by a DC
//! field, solved on a discretized Kadanoff-Baym-Keldysh contour, with an
//! extension to long times that rebuilds the lesser self-energy from the
//! fluctuation-dissipation theorem at a fitted effective temperature.

pub mod bridge;
pub mod config;
pub mod contour;
pub mod dmft;
pub mod equilibrium;
pub mod error;
pub mod exec;
pub mod extrapolate;
pub mod langreth;
pub mod lattice;
pub mod observables;
pub mod output;
pub mod pipeline;
pub mod propagators;
pub mod snapshot;
pub mod wigner;

pub use error::{Error, Result};
