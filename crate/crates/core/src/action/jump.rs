//! Checks that the dominant jump of a sweep dissipates the action between
//! its one-sided limits.

use serde::{Deserialize, Serialize};

use super::{bdf2_envelope, dp_oracle_1d, mms_envelope, ChainPath, ChainScheme, Grid, Method};
use crate::balance::{compute_mu, jump_threshold};
use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::evolution::DiscreteEvolution;
use crate::solver::SolverParams;
use crate::transition::{Scheme, TransitionRule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JumpOptions {
    /// Oracle grid size for one-dimensional models.
    pub grid_points: usize,
    /// Relative agreement required between the atom and the action.
    pub tolerance: f64,
    /// Smallest fraction of the total mass the dominant atom must carry.
    pub dominance: f64,
    pub prox: SolverParams,
}

impl Default for JumpOptions {
    fn default() -> Self {
        JumpOptions {
            grid_points: 301,
            tolerance: 0.05,
            dominance: 0.5,
            prox: SolverParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpStatus {
    /// No atom above the jump threshold.
    NoJump,
    /// Atoms exist but none dominates.
    Inconclusive,
    Checked,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpReport {
    pub status: JumpStatus,
    pub delta: f64,
    pub node: Option<usize>,
    pub time: Option<f64>,
    pub mass: Option<f64>,
    /// `|μ({t*}) − (E(η^−) − E(η^+))|`.
    pub identity_error: Option<f64>,
    /// Oracle value, or the upper end of the bracket.
    pub action: Option<f64>,
    /// `[lower, upper]` bracket from the a-priori bound and the transition
    /// chain.
    pub bracket: Option<(f64, f64)>,
    pub method: Option<Method>,
    /// Largest relative deviation of the action estimates from the mass.
    pub relative_error: Option<f64>,
    pub passed: bool,
}

impl JumpReport {
    fn empty(status: JumpStatus, delta: f64) -> Self {
        JumpReport {
            status,
            delta,
            node: None,
            time: None,
            mass: None,
            identity_error: None,
            action: None,
            bracket: None,
            method: None,
            relative_error: None,
            passed: false,
        }
    }
}

/// Compares the dominant atom of the finest evolution with the action of
/// the rule's scheme between `η^−(t*) = w_{i−1}` and `η^+(t*) = w_i`.
///
/// One-dimensional models use the grid oracle; otherwise the action is
/// bracketed between `E(η^−) − E^M(η^+)` (or `E(η^−) − E^B(η^+, η^+)`) and
/// the action sum of the transition's own iterates.
pub fn verify_jump_characterization(
    sweep: &[DiscreteEvolution],
    model: &dyn EnergyModel,
    rule: &TransitionRule,
    options: &JumpOptions,
) -> Result<JumpReport> {
    let finest = sweep
        .iter()
        .min_by(|a, b| a.delta.total_cmp(&b.delta))
        .ok_or_else(|| Error::Config("empty sweep".into()))?;
    let (scheme, tau) = match rule.scheme {
        Scheme::Mms { tau } => (ChainScheme::Mms, tau),
        Scheme::Bdf2 { tau } => (ChainScheme::Bdf2, tau),
        Scheme::GradientFlow { .. } => {
            return Err(Error::Precondition("jump check needs an MMS or BDF2 rule".into()))
        }
    };
    let mu = compute_mu(finest, model);
    let total = mu.total();
    let atom = match mu.dominant() {
        Some(a) if a.mass >= jump_threshold(total) => a,
        _ => return Ok(JumpReport::empty(JumpStatus::NoJump, finest.delta)),
    };
    if atom.mass < options.dominance * total {
        return Ok(JumpReport::empty(JumpStatus::Inconclusive, finest.delta));
    }
    let t = atom.time;
    let before = &finest.states[atom.node - 1];
    let after = &finest.states[atom.node];
    let drop = model.energy(t, before) - model.energy(t, after);
    let identity_error = (atom.mass - drop).abs();

    let rel = |v: f64| (v - atom.mass).abs() / atom.mass;
    let (action, bracket, method, relative_error) = if model.dimension() == 1 {
        let b = model.bounds();
        let grid = Grid::new(b.lower[0], b.upper[0], options.grid_points)?;
        let r = dp_oracle_1d(model, t, grid, before[0], after[0], tau, scheme, None)?;
        (r.value, None, Method::DpOracle, rel(r.value))
    } else {
        let lower = match scheme {
            ChainScheme::Mms => model.energy(t, before) - mms_envelope(model, t, after, tau, &options.prox)?.value,
            ChainScheme::Bdf2 => {
                model.energy(t, before) - bdf2_envelope(model, t, after, after, tau, &options.prox)?.value
            }
        };
        let mut states = finest.logs[atom.node - 1].iterates.clone();
        if states.last() != Some(after) {
            states.push(after.clone());
        }
        let upper = ChainPath { states, scheme, tau }.cost(model, t, &options.prox)?;
        (upper, Some((lower, upper)), Method::ChainOpt, rel(lower).max(rel(upper)))
    };
    Ok(JumpReport {
        status: JumpStatus::Checked,
        delta: finest.delta,
        node: Some(atom.node),
        time: Some(t),
        mass: Some(atom.mass),
        identity_error: Some(identity_error),
        action: Some(action),
        bracket,
        method: Some(method),
        relative_error: Some(relative_error),
        passed: identity_error <= 1e-10 * (1.0 + atom.mass) && relative_error <= options.tolerance,
    })
}
