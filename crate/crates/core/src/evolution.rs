//! Discrete quasistatic evolutions on a uniform time grid.
//!
//! The energy clock advances by `δ`, then the state relaxes to equilibrium of
//! the frozen energy through the transition rule. The resulting trajectory is
//! piecewise constant and right-continuous.

use serde::Serialize;

use crate::energy::{check_point, check_time, EnergyModel, Point};
use crate::error::{Error, Result};
use crate::transition::{apply_transition, TransitionLog, TransitionRule};

/// Slope tolerance for the initial state.
pub const INIT_TOL: f64 = 1e-6;

/// Number of transitions `M` for step `δ` on `[0, T]`: `⌊T/δ⌋`, or `T/δ − 1`
/// when `T/δ` is an integer (up to a relative tolerance of 1e−9).
pub fn transition_count(delta: f64, horizon: f64) -> usize {
    let ratio = horizon / delta;
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= 1e-9 * ratio.max(1.0) {
        (nearest as usize).saturating_sub(1)
    } else {
        ratio.floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteEvolution {
    pub delta: f64,
    pub horizon: f64,
    /// `w_0, …, w_M`.
    pub states: Vec<Point>,
    /// `logs[i − 1]` records the transition producing `w_i`.
    pub logs: Vec<TransitionLog>,
    pub rule: TransitionRule,
    pub model: String,
}

impl DiscreteEvolution {
    pub fn transitions(&self) -> usize {
        self.states.len() - 1
    }

    pub fn node_time(&self, i: usize) -> f64 {
        i as f64 * self.delta
    }

    /// `J^δ = {iδ : i = 1..M}`.
    pub fn jump_set(&self) -> Vec<f64> {
        (1..self.states.len()).map(|i| self.node_time(i)).collect()
    }

    /// Index of the constant piece containing `t`, with the last piece
    /// `[Mδ, T]` closed on the right.
    pub fn interval_index(&self, t: f64) -> Result<usize> {
        let slack = 1e-12 * self.horizon.max(1.0);
        if !(t >= -slack && t <= self.horizon + slack) {
            return Err(Error::Domain { t, horizon: self.horizon });
        }
        let last = self.transitions();
        let mut i = (t.max(0.0) / self.delta).floor() as usize;
        if i > last {
            return Ok(last);
        }
        if i < last && self.node_time(i + 1) <= t {
            i += 1;
        } else if i > 0 && self.node_time(i) > t {
            i -= 1;
        }
        Ok(i)
    }

    /// `η^δ(t)`.
    pub fn trajectory_at(&self, t: f64) -> Result<&Point> {
        Ok(&self.states[self.interval_index(t)?])
    }

    /// `(start, end)` of constant piece `i`.
    pub fn piece(&self, i: usize) -> (f64, f64) {
        let end = if i == self.transitions() { self.horizon } else { self.node_time(i + 1) };
        (self.node_time(i), end)
    }

    /// `E_{iδ}(w_i)` for every node.
    pub fn node_energies(&self, model: &dyn EnergyModel) -> Vec<f64> {
        self.states
            .iter()
            .enumerate()
            .map(|(i, w)| model.energy(self.node_time(i), w))
            .collect()
    }

    pub fn all_stationary(&self) -> bool {
        self.logs.iter().all(|l| l.is_stationary())
    }
}

/// Runs the evolution `w_0 = x0`, `w_i = ω̄_{iδ}(w_{i−1})`.
pub fn run_evolution(
    model: &dyn EnergyModel,
    rule: &TransitionRule,
    x0: &[f64],
    delta: f64,
) -> Result<DiscreteEvolution> {
    run_evolution_with_tol(model, rule, x0, delta, INIT_TOL)
}

pub fn run_evolution_with_tol(
    model: &dyn EnergyModel,
    rule: &TransitionRule,
    x0: &[f64],
    delta: f64,
    init_tol: f64,
) -> Result<DiscreteEvolution> {
    rule.validate(Some(model))?;
    let horizon = model.horizon();
    if !(delta > 0.0) || delta > horizon * (1.0 + 1e-12) {
        return Err(Error::Config(format!("delta must lie in (0, T], got {delta}")));
    }
    check_time(model, 0.0)?;
    check_point(model, x0)?;
    let slope0 = model.slope_unchecked(0.0, x0);
    if slope0 > init_tol {
        return Err(Error::Precondition(format!(
            "initial state is not stationary: slope {slope0:e} > {init_tol:e}"
        )));
    }
    let m = transition_count(delta, horizon);
    let mut evo = DiscreteEvolution {
        delta,
        horizon,
        states: Vec::with_capacity(m + 1),
        logs: Vec::with_capacity(m),
        rule: *rule,
        model: model.name().to_string(),
    };
    evo.states.push(Point::from(x0));
    for i in 1..=m {
        let t = (i as f64 * delta).min(horizon);
        match apply_transition(rule, model, t, &evo.states[i - 1]) {
            Ok(tr) => {
                evo.states.push(tr.output);
                evo.logs.push(tr.log);
            }
            Err(source) => {
                return Err(Error::Evolution {
                    node: i,
                    partial: Box::new(evo),
                    source: Box::new(source),
                })
            }
        }
    }
    Ok(evo)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GronwallCheck {
    pub sup_energy: f64,
    pub bound: f64,
    pub holds: bool,
}

/// `E0·e^{C1(T+1)} + C2(e^{C1(T+1)} − 1)/C1`, with the `C1 → 0` limit
/// `E0 + C2(T+1)`.
pub fn gronwall_bound(c1: f64, c2: f64, horizon: f64, e0: f64) -> f64 {
    let span = horizon + 1.0;
    if c1 == 0.0 {
        return e0 + c2 * span;
    }
    let growth = (c1 * span).exp();
    e0 * growth + c2 * (growth - 1.0) / c1
}

/// Compares `sup_t E_t(η^δ(t))` over the grid nodes and the final time with
/// the bound; `None` when the model declares no positive `C1`.
pub fn check_gronwall(evo: &DiscreteEvolution, model: &dyn EnergyModel) -> Option<GronwallCheck> {
    let c = model.growth_constants()?;
    if !(c.c1 > 0.0) {
        return None;
    }
    let e0 = model.energy(0.0, &evo.states[0]);
    let last = evo.states.last().expect("evolution has at least one state");
    let sup_energy = evo
        .node_energies(model)
        .into_iter()
        .chain(std::iter::once(model.energy(evo.horizon, last)))
        .fold(f64::NEG_INFINITY, f64::max);
    let bound = gronwall_bound(c.c1, c.c2, evo.horizon, e0);
    Some(GronwallCheck { sup_energy, bound, holds: sup_energy <= bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{DoubleWell, QuadraticTracking};

    #[test]
    fn grid_cardinality() {
        assert_eq!(transition_count(0.25, 1.0), 3);
        assert_eq!(transition_count(0.3, 1.0), 3);
        assert_eq!(transition_count(1.0 / 15.0, 1.5), 22);
        assert_eq!(transition_count(1.0 / 240.0, 1.5), 359);
        assert_eq!(transition_count(0.1, 1.0), 9);
        assert_eq!(transition_count(1.0, 1.0), 0);
        assert_eq!(transition_count(0.4, 1.0), 2);
    }

    #[test]
    fn static_energy_keeps_the_minimizer() {
        let dw = DoubleWell::static_well(1.5, 1.0).unwrap();
        let evo = run_evolution(&dw, &TransitionRule::mms(0.02), &[-1.0], 0.1).unwrap();
        assert_eq!(evo.states.len(), 10);
        assert!(evo.states.iter().all(|w| w[0] == -1.0));
    }

    #[test]
    fn tracking_follows_the_target() {
        let m = QuadraticTracking::unit_speed_1d(1.0);
        let evo = run_evolution(&m, &TransitionRule::mms(0.1), &[0.0], 0.25).unwrap();
        assert_eq!(evo.states.len(), 4);
        for (i, w) in evo.states.iter().enumerate() {
            assert!((w[0] - 0.25 * i as f64).abs() <= 1e-4, "node {i}: {}", w[0]);
        }
    }

    #[test]
    fn trajectory_is_right_continuous() {
        let m = QuadraticTracking::unit_speed_1d(1.0);
        let evo = run_evolution(&m, &TransitionRule::mms(0.1), &[0.0], 0.25).unwrap();
        assert_eq!(evo.trajectory_at(0.0).unwrap(), &evo.states[0]);
        assert_eq!(evo.trajectory_at(0.25 - 1e-12).unwrap(), &evo.states[0]);
        assert_eq!(evo.trajectory_at(0.25).unwrap(), &evo.states[1]);
        assert_eq!(evo.trajectory_at(1.0).unwrap(), &evo.states[3]);
        assert_eq!(evo.trajectory_at(0.8).unwrap(), &evo.states[3]);
        assert!(matches!(evo.trajectory_at(1.1), Err(Error::Domain { .. })));
        assert!(matches!(evo.trajectory_at(-0.1), Err(Error::Domain { .. })));
    }

    #[test]
    fn non_stationary_start_is_rejected() {
        let m = QuadraticTracking::unit_speed_1d(1.0);
        let err = run_evolution(&m, &TransitionRule::mms(0.1), &[0.5], 0.25).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
        let err = run_evolution(&m, &TransitionRule::mms(0.1), &[0.0], 2.0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn failed_transition_keeps_the_partial_trajectory() {
        let m = QuadraticTracking::unit_speed_1d(1.0);
        let mut rule = TransitionRule::mms(0.1);
        rule.solver.max_iterations = 1;
        match run_evolution(&m, &rule, &[0.0], 0.25).unwrap_err() {
            Error::Evolution { node, partial, .. } => {
                assert_eq!(node, 1);
                assert_eq!(partial.states.len(), 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gronwall_limits() {
        assert_eq!(gronwall_bound(0.0, 2.0, 1.0, 1.0), 5.0);
        let b = gronwall_bound(1e-9, 2.0, 1.0, 1.0);
        assert!((b - 5.0).abs() < 1e-6);
        let b = gronwall_bound(1.0, 0.0, 1.0, 1.0);
        assert!((b - 2f64.exp()).abs() < 1e-12);
    }
}

#[cfg(test)]
mod properties {
    use super::*;
    use crate::energy::{DoubleWell, QuadraticTracking};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn grid_nodes_stay_strictly_inside_the_horizon(delta in 0.01..1.0f64, horizon in 0.1..5.0f64) {
            let m = transition_count(delta, horizon);
            prop_assert!((m as f64) * delta < horizon * (1.0 - 1e-10));
            prop_assert!((m + 1) as f64 * delta >= horizon * (1.0 - 1e-9));
        }

        #[test]
        fn integer_ratios_drop_the_final_node(n in 1usize..500, horizon in 0.1..5.0f64) {
            prop_assert_eq!(transition_count(horizon / n as f64, horizon), n - 1);
        }

        #[test]
        fn trajectory_is_right_continuous(delta in 0.05..0.5f64, frac in 0.0..1.0f64) {
            let m = QuadraticTracking::unit_speed_1d(1.0);
            let evo = run_evolution(&m, &TransitionRule::mms(0.05), &[0.0], delta).unwrap();
            let i = ((evo.transitions() as f64 * frac) as usize).min(evo.transitions());
            let t = evo.node_time(i);
            prop_assert_eq!(evo.trajectory_at(t).unwrap(), &evo.states[i]);
            let (a, b) = evo.piece(i);
            let inside = a + 0.5 * (b - a);
            prop_assert_eq!(evo.trajectory_at(inside).unwrap(), &evo.states[i]);
            if i >= 1 {
                let before = t - 1e-3 * delta;
                prop_assert_eq!(evo.trajectory_at(before).unwrap(), &evo.states[i - 1]);
            }
        }

        #[test]
        fn energy_stays_below_the_gronwall_bound(delta in 0.02..0.3f64, left in any::<bool>()) {
            let dw = DoubleWell::tilted_normalized(1.5, 2.0).unwrap();
            let x0 = if left { -1.0 } else { 1.0 };
            let evo = run_evolution(&dw, &TransitionRule::mms(0.1), &[x0], delta).unwrap();
            let g = check_gronwall(&evo, &dw).unwrap();
            prop_assert!(g.holds, "{g:?}");
        }
    }
}
