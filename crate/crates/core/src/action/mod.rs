//! Prox values, instantaneous costs and the three action functionals.
//!
//! * gradient flow: `c^F(x1, x2) = inf ∫ |∂E_t|(φ) |φ'|` over curves;
//! * minimizing movement: `c^M = inf Σ_{s=a}^{b} L^M(u_s, u_{s+1})` over
//!   chains from `x1` to `x2`, with `u_{b+1} = u_b`;
//! * BDF2: `c^B = inf Σ_{s=a}^{b+1} ℓ(u_{s−1}, u_s, u_{s+1})` with ghosts
//!   `u_{a−1} = x1` and `u_{b+1} = u_{b+2} = x2`.

mod chain;
mod inequalities;
mod jump;
mod oracle;
mod path;

pub use chain::{action_bdf2, action_mms, ChainOptions};
pub use inequalities::{verify_inequalities, InequalityOptions, InequalityReport, InequalityCheck};
pub use jump::{verify_jump_characterization, JumpOptions, JumpReport, JumpStatus};
pub use oracle::{dp_oracle_1d, exact_gf_action_1d, DpResult, DpTables, Grid};
pub use path::{action_gf, polyline_action, PathOptions};

use serde::Serialize;

use crate::energy::{check_point, check_time, dist_sq, EnergyModel, Point};
use crate::error::{Error, Result};
use crate::solver::SolverParams;
use crate::transition::{bdf2_step, prox_step_mms};

/// Tolerance on the a-priori bound `c ≥ E(x1) − E(x2)`.
pub const APRIORI_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainScheme {
    Mms,
    Bdf2,
}

/// Minimizer and value of a prox problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub value: f64,
    pub minimizer: Point,
}

fn solver_fallback(err: Error) -> Result<(Point, f64)> {
    match err {
        Error::Solver { best, best_value, .. } => Ok((Point(best), best_value)),
        other => Err(other),
    }
}

/// `E^M_{t,τ}(x) = inf_y E_t(y) + |x − y|² / 2τ`, by local descent from `x`.
pub fn mms_envelope(
    model: &dyn EnergyModel,
    t: f64,
    x: &[f64],
    tau: f64,
    solver: &SolverParams,
) -> Result<Envelope> {
    let (minimizer, value) = match prox_step_mms(model, t, x, tau, solver) {
        Ok((y, v, _)) => (y, v),
        Err(e) => {
            let (y, v) = solver_fallback(e)?;
            log::warn!("prox solve did not converge; using best value {v}");
            (y, v)
        }
    };
    Ok(Envelope { value, minimizer })
}

/// `E^B_{t,τ}(x, x') = inf_y E_t(y) + |y − x|² / τ − |y − x'|² / 4τ`.
pub fn bdf2_envelope(
    model: &dyn EnergyModel,
    t: f64,
    x: &[f64],
    x_prev: &[f64],
    tau: f64,
    solver: &SolverParams,
) -> Result<Envelope> {
    let (minimizer, value) = match bdf2_step(model, t, x, x_prev, tau, solver) {
        Ok((y, v, _)) => (y, v),
        Err(e) => {
            let (y, v) = solver_fallback(e)?;
            log::warn!("BDF2 prox solve did not converge; using best value {v}");
            (y, v)
        }
    };
    Ok(Envelope { value, minimizer })
}

pub fn prox_value_mms(
    model: &dyn EnergyModel,
    t: f64,
    x: &[f64],
    tau: f64,
    solver: &SolverParams,
) -> Result<f64> {
    Ok(mms_envelope(model, t, x, tau, solver)?.value)
}

pub fn prox_value_bdf2(
    model: &dyn EnergyModel,
    t: f64,
    x: &[f64],
    x_prev: &[f64],
    tau: f64,
    solver: &SolverParams,
) -> Result<f64> {
    Ok(bdf2_envelope(model, t, x, x_prev, tau, solver)?.value)
}

/// `L^F((x, v)) = ½|∂E_t|²(x) + ½v²`.
pub fn cost_gf(model: &dyn EnergyModel, t: f64, x: &[f64], speed: f64) -> Result<f64> {
    let s = crate::energy::slope(model, t, x)?;
    Ok(0.5 * s * s + 0.5 * speed * speed)
}

/// `L^M((x0, x1)) = E_t(x0) − E^M_{t,τ}(x0) + |x0 − x1|² / 2τ`.
pub fn cost_mms(
    model: &dyn EnergyModel,
    t: f64,
    x0: &[f64],
    x1: &[f64],
    tau: f64,
    solver: &SolverParams,
) -> Result<f64> {
    check_point(model, x1)?;
    let gap = model.energy(t, x0) - prox_value_mms(model, t, x0, tau, solver)?;
    Ok(gap.max(0.0) + 0.5 / tau * dist_sq(x0, x1))
}

/// `ℓ(x_{−1}, x0, x1) = E_t(x0) − E^B(x0, x_{−1}) + (|x0 − x1|² + |x_{−1} − x0|²) / 2τ
/// − |x_{−1} − x1|² / 4τ`.
pub fn cost_bdf2(
    model: &dyn EnergyModel,
    t: f64,
    x_m1: &[f64],
    x0: &[f64],
    x1: &[f64],
    tau: f64,
    solver: &SolverParams,
) -> Result<f64> {
    check_point(model, x1)?;
    let gap = model.energy(t, x0) - prox_value_bdf2(model, t, x0, x_m1, tau, solver)?;
    Ok(bdf2_cost_terms(gap, x_m1, x0, x1, tau))
}

fn bdf2_cost_terms(gap: f64, a: &[f64], b: &[f64], c: &[f64], tau: f64) -> f64 {
    gap + 0.5 / tau * (dist_sq(b, c) + dist_sq(a, b)) - 0.25 / tau * dist_sq(a, c)
}

/// A discrete chain `u_a, …, u_b` certifying an upper bound on `c^M` or `c^B`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainPath {
    pub states: Vec<Point>,
    pub scheme: ChainScheme,
    pub tau: f64,
}

impl ChainPath {
    /// Action sum of the chain with the boundary conventions of its scheme,
    /// using local prox values.
    pub fn cost(&self, model: &dyn EnergyModel, t: f64, solver: &SolverParams) -> Result<f64> {
        if self.states.is_empty() {
            return Err(Error::Precondition("empty chain".into()));
        }
        check_time(model, t)?;
        for s in &self.states {
            check_point(model, s)?;
        }
        let tau = self.tau;
        let u = &self.states;
        let last = u.len() - 1;
        match self.scheme {
            ChainScheme::Mms => {
                let mut total = 0.0;
                for s in 0..=last {
                    let next = &u[(s + 1).min(last)];
                    total += cost_mms(model, t, &u[s], next, tau, solver)?;
                }
                Ok(total)
            }
            ChainScheme::Bdf2 => {
                let at = |s: isize| -> &Point { &u[s.clamp(0, last as isize) as usize] };
                let mut total = 0.0;
                for s in 0..=(last as isize + 1) {
                    total += cost_bdf2(model, t, at(s - 1), at(s), at(s + 1), tau, solver)?;
                }
                Ok(total)
            }
        }
    }
}

/// Polyline `q_0, …, q_N` certifying an upper bound on `c^F`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolylinePath {
    pub nodes: Vec<Point>,
    pub segment_lengths: Vec<f64>,
}

impl PolylinePath {
    pub fn new(nodes: Vec<Point>) -> Self {
        let segment_lengths = nodes.windows(2).map(|w| dist_sq(&w[0], &w[1]).sqrt()).collect();
        PolylinePath { nodes, segment_lengths }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Certificate {
    Chain(ChainPath),
    Polyline(PolylinePath),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ChainOpt,
    PathOpt,
    DpOracle,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionEstimate {
    pub value: f64,
    pub certificate: Option<Certificate>,
    pub method: Method,
    /// Best lower bound known for the action.
    pub lower_bound: f64,
    /// `value − lower_bound`, or the discretization gap of an oracle value.
    pub gap: f64,
    /// False when the optimizer or the chain budget did not settle.
    pub converged: bool,
}
