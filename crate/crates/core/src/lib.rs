//! Discrete quasistatic evolutions of critical points for time-dependent
//! energies, with pluggable transition rules, energy-balance diagnostics and
//! action functionals.

// `!(x > 0.0)` style checks deliberately reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action;
pub mod balance;
pub mod energy;
pub mod error;
pub mod evolution;
pub mod rod;
pub mod solver;
pub mod transition;

pub use energy::{BoxBounds, EnergyModel, Point};
pub use error::{Error, Result};
pub use evolution::{run_evolution, DiscreteEvolution};
pub use transition::{apply_transition, Scheme, TransitionRule};
