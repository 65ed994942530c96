//! Jump measure, power term and energy-balance diagnostics of a discrete
//! evolution.
//!
//! Along `η^δ` the evolving energy `t ↦ E_t(η^δ(t))` is smooth on every
//! constant piece and drops by the dissipated energy at each grid node:
//!
//! ```text
//! E^+_{t2} − E^−_{t1} = ∫_{t1}^{t2} ∂_t E_s(η^δ(s)) ds − μ^δ([t1, t2])
//! ```

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::evolution::DiscreteEvolution;

/// Negative transition dissipation beyond this is reported when clipped.
pub const CLIP_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Atom {
    /// Grid node index `i ≥ 1`.
    pub node: usize,
    pub time: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct JumpMeasure {
    /// Atoms with positive mass, sorted by time.
    pub atoms: Vec<Atom>,
    /// Grid nodes whose raw mass was below `−CLIP_SLACK`, with that raw mass.
    pub clipped: Vec<(usize, f64)>,
}

impl JumpMeasure {
    pub fn total(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn at_node(&self, node: usize) -> f64 {
        self.atoms
            .binary_search_by_key(&node, |a| a.node)
            .map(|k| self.atoms[k].mass)
            .unwrap_or(0.0)
    }

    /// Mass of the interval with endpoints `t1 ≤ t2`, each either included
    /// or excluded.
    pub fn mass_in(&self, t1: f64, t2: f64, include_left: bool, include_right: bool) -> f64 {
        self.atoms
            .iter()
            .filter(|a| {
                let after = if include_left { a.time >= t1 } else { a.time > t1 };
                let before = if include_right { a.time <= t2 } else { a.time < t2 };
                after && before
            })
            .map(|a| a.mass)
            .sum()
    }

    pub fn dominant(&self) -> Option<Atom> {
        self.atoms
            .iter()
            .copied()
            .fold(None, |best: Option<Atom>, a| match best {
                Some(b) if b.mass >= a.mass => Some(b),
                _ => Some(a),
            })
    }
}

/// Atom at `iδ` with mass `E_{iδ}(w_{i−1}) − E_{iδ}(w_i)`.
pub fn compute_mu(evo: &DiscreteEvolution, model: &dyn EnergyModel) -> JumpMeasure {
    let mut mu = JumpMeasure::default();
    for i in 1..evo.states.len() {
        let t = evo.node_time(i);
        let mass = model.energy(t, &evo.states[i - 1]) - model.energy(t, &evo.states[i]);
        if mass < -CLIP_SLACK {
            warn!("negative dissipation {mass:e} at node {i} clipped to zero");
            mu.clipped.push((i, mass));
        }
        if mass > 0.0 {
            mu.atoms.push(Atom { node: i, time: t, mass });
        }
    }
    mu
}

/// `D^δ(t) = ∂_t E_t(η^δ(t))`.
pub fn compute_d(evo: &DiscreteEvolution, model: &dyn EnergyModel, t: f64) -> Result<f64> {
    let w = evo.trajectory_at(t)?;
    Ok(model.power(t, w))
}

/// Which one-sided limit of the evolving energy is taken at an endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Limit {
    Left,
    Right,
}

/// `E^−_t` is the value before the transition at `t` (if `t` is a grid
/// node), `E^+_t` the value after it. At `t = 0` both coincide with `E_0`.
pub fn evolving_energy(
    evo: &DiscreteEvolution,
    model: &dyn EnergyModel,
    t: f64,
    limit: Limit,
) -> Result<f64> {
    let i = evo.interval_index(t)?;
    let state = match limit {
        Limit::Left if i >= 1 && evo.node_time(i) == t => &evo.states[i - 1],
        _ => &evo.states[i],
    };
    Ok(model.energy(t, state))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quadrature {
    /// Even number of Simpson subintervals per constant piece.
    pub subintervals: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Quadrature { subintervals: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Integral {
    pub value: f64,
    /// Richardson estimate plus a roundoff floor.
    pub error: f64,
    /// Sum of absolute contributions, used for roundoff scaling.
    pub magnitude: f64,
}

impl Integral {
    fn add(&mut self, other: Integral) {
        self.value += other.value;
        self.error += other.error;
        self.magnitude += other.magnitude;
    }
}

fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> Integral {
    let n = n.max(2) + n % 2;
    let h = (b - a) / n as f64;
    let values: Vec<f64> = (0..=n)
        .map(|k| f(if k == n { b } else { a + k as f64 * h }))
        .collect();
    let fine = simpson_sum(&values, h);
    let coarse_values: Vec<f64> = values.iter().step_by(2).copied().collect();
    let coarse = if coarse_values.len() >= 3 && (coarse_values.len() - 1).is_multiple_of(2) {
        simpson_sum(&coarse_values, 2.0 * h)
    } else {
        // n/2 odd: fall back to the trapezoid rule on the coarse grid
        0.5 * 2.0 * h * coarse_values.windows(2).map(|w| w[0] + w[1]).sum::<f64>()
    };
    let magnitude = h * values.iter().map(|v| v.abs()).sum::<f64>();
    Integral {
        value: fine,
        error: (fine - coarse).abs() / 15.0 + 64.0 * f64::EPSILON * magnitude,
        magnitude,
    }
}

fn simpson_sum(values: &[f64], h: f64) -> f64 {
    let n = values.len() - 1;
    let mut s = values[0] + values[n];
    for (k, v) in values.iter().enumerate().take(n).skip(1) {
        s += if k % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    s * h / 3.0
}

/// Pieces `(state index, a, b)` covering `[t1, t2]`, split at grid nodes.
fn pieces(evo: &DiscreteEvolution, t1: f64, t2: f64) -> Result<Vec<(usize, f64, f64)>> {
    let i1 = evo.interval_index(t1)?;
    let i2 = evo.interval_index(t2)?;
    Ok((i1..=i2)
        .filter_map(|i| {
            let (a, b) = evo.piece(i);
            let (a, b) = (a.max(t1), b.min(t2));
            (b > a).then_some((i, a, b))
        })
        .collect())
}

/// `∫_{t1}^{t2} D^δ(s) ds` piecewise by composite Simpson.
pub fn integrate_power(
    evo: &DiscreteEvolution,
    model: &dyn EnergyModel,
    t1: f64,
    t2: f64,
    quadrature: &Quadrature,
) -> Result<Integral> {
    let mut total = Integral::default();
    for (i, a, b) in pieces(evo, t1, t2)? {
        let w = &evo.states[i];
        total.add(simpson(|s| model.power(s, w), a, b, quadrature.subintervals));
    }
    Ok(total)
}

/// `∫_{t1}^{t2} |D^δ(s)| ds`, splitting at sign changes located by bisection.
pub fn integrate_abs_power(
    evo: &DiscreteEvolution,
    model: &dyn EnergyModel,
    t1: f64,
    t2: f64,
    quadrature: &Quadrature,
) -> Result<Integral> {
    let mut total = Integral::default();
    let n = quadrature.subintervals.max(2);
    for (i, a, b) in pieces(evo, t1, t2)? {
        let w = &evo.states[i];
        let d = |s: f64| model.power(s, w);
        let mut cuts = vec![a];
        let h = (b - a) / n as f64;
        let mut prev = (a, d(a));
        for k in 1..=n {
            let s = if k == n { b } else { a + k as f64 * h };
            let v = d(s);
            if prev.1 * v < 0.0 {
                let (mut lo, mut hi, flo) = (prev.0, s, prev.1);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if d(mid) * flo > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                cuts.push(0.5 * (lo + hi));
            }
            prev = (s, v);
        }
        cuts.push(b);
        for c in cuts.windows(2) {
            if c[1] > c[0] {
                total.add(simpson(|s| d(s).abs(), c[0], c[1], n));
            }
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BalanceReport {
    pub t1: f64,
    pub t2: f64,
    pub left: Limit,
    pub right: Limit,
    pub energy_left: f64,
    pub energy_right: f64,
    pub integral_term: f64,
    pub mu_mass: f64,
    /// `energy_right − energy_left − integral_term + mu_mass`.
    pub residual: f64,
    pub quadrature_error: f64,
}

/// Energy balance between `t1 ≤ t2` for the given one-sided limits.
///
/// The measured interval contains `t1` iff the left energy is the limit
/// before the jump there, and contains `t2` iff the right energy is the
/// limit after the jump there.
pub fn verify_balance(
    evo: &DiscreteEvolution,
    model: &dyn EnergyModel,
    t1: f64,
    t2: f64,
    left: Limit,
    right: Limit,
    quadrature: &Quadrature,
) -> Result<BalanceReport> {
    if !(t1 <= t2) {
        return Err(Error::Domain { t: t1, horizon: t2 });
    }
    if t1 == t2 && left == Limit::Right && right == Limit::Left {
        return Err(Error::Config("the open interval (t1, t2) needs t1 < t2".into()));
    }
    let energy_left = evolving_energy(evo, model, t1, left)?;
    let energy_right = evolving_energy(evo, model, t2, right)?;
    let integral = integrate_power(evo, model, t1, t2, quadrature)?;
    let mu = compute_mu(evo, model);
    let mu_mass = mu.mass_in(t1, t2, left == Limit::Left, right == Limit::Right);
    let residual = energy_right - energy_left - integral.value + mu_mass;
    let roundoff = 64.0 * f64::EPSILON * (energy_left.abs() + energy_right.abs() + mu_mass);
    Ok(BalanceReport {
        t1,
        t2,
        left,
        right,
        energy_left,
        energy_right,
        integral_term: integral.value,
        mu_mass,
        residual,
        quadrature_error: integral.error + roundoff,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BalanceSuite {
    pub pairs: usize,
    pub max_abs_residual: f64,
    /// Largest `|residual| / quadrature_error` (0 when both vanish).
    pub max_error_ratio: f64,
}

/// Balance reports on `pairs` random `(t1, t2)` in `[0, T]`, cycling
/// through the four limit conventions.
pub fn balance_suite(
    evo: &DiscreteEvolution,
    model: &dyn EnergyModel,
    pairs: usize,
    seed: u64,
    quadrature: &Quadrature,
) -> Result<BalanceSuite> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conventions = [
        (Limit::Left, Limit::Right),
        (Limit::Right, Limit::Right),
        (Limit::Left, Limit::Left),
        (Limit::Right, Limit::Left),
    ];
    let mut suite = BalanceSuite { pairs, max_abs_residual: 0.0, max_error_ratio: 0.0 };
    for k in 0..pairs {
        let a = evo.horizon * rng.random::<f64>();
        let b = evo.horizon * rng.random::<f64>();
        let (left, right) = conventions[k % 4];
        let r = verify_balance(evo, model, a.min(b), a.max(b), left, right, quadrature)?;
        suite.max_abs_residual = suite.max_abs_residual.max(r.residual.abs());
        if r.residual != 0.0 {
            suite.max_error_ratio = suite.max_error_ratio.max(r.residual.abs() / r.quadrature_error);
        }
    }
    Ok(suite)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VariationReport {
    pub total_variation: f64,
    pub abs_power_integral: f64,
    pub mu_total: f64,
    /// `abs_power_integral + mu_total + 1e−8`.
    pub bound: f64,
    pub holds: bool,
}

/// Variation of `t ↦ E_t(η^δ(t))` over the partition refining every constant
/// piece into `refinement` equal parts, together with the node jumps.
pub fn total_variation(
    evo: &DiscreteEvolution,
    model: &dyn EnergyModel,
    refinement: usize,
) -> VariationReport {
    let r = refinement.max(1);
    let mut tv = 0.0;
    for i in 0..evo.states.len() {
        let (a, b) = evo.piece(i);
        let w = &evo.states[i];
        let mut prev = model.energy(a, w);
        for k in 1..=r {
            let s = if k == r { b } else { a + (b - a) * k as f64 / r as f64 };
            let v = model.energy(s, w);
            tv += (v - prev).abs();
            prev = v;
        }
        if i + 1 < evo.states.len() {
            tv += (prev - model.energy(b, &evo.states[i + 1])).abs();
        }
    }
    let abs_power = integrate_abs_power(evo, model, 0.0, evo.horizon, &Quadrature::default())
        .expect("full horizon is in range")
        .value;
    let mu_total = compute_mu(evo, model).total();
    let bound = abs_power + mu_total + 1e-8;
    VariationReport {
        total_variation: tv,
        abs_power_integral: abs_power,
        mu_total,
        bound,
        holds: tv <= bound,
    }
}

/// Uniform sample times `kT/(count − 1)`.
pub fn sample_times(horizon: f64, count: usize) -> Vec<f64> {
    let n = count.max(2) - 1;
    (0..=n)
        .map(|k| if k == n { horizon } else { horizon * k as f64 / n as f64 })
        .collect()
}

/// `∫_0^s D^δ` at each of the sorted `times`.
pub fn cumulative_power(
    evo: &DiscreteEvolution,
    model: &dyn EnergyModel,
    times: &[f64],
    quadrature: &Quadrature,
) -> Result<Vec<f64>> {
    let mut acc = 0.0;
    let mut last = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &s in times {
        if s > last {
            acc += integrate_power(evo, model, last, s, quadrature)?.value;
            last = s;
        }
        out.push(acc);
    }
    Ok(out)
}

/// One row of the paired energy series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergySum {
    pub t: f64,
    /// `E_t(η^δ(t))`
    pub energy: f64,
    /// `∫_0^t D^δ`
    pub power_integral: f64,
    /// `μ^δ([0, t])`
    pub dissipated: f64,
    /// `E_0 + ∫_0^t D^δ − μ^δ([0, t])`
    pub reconstructed: f64,
}

pub fn energy_sums(
    evo: &DiscreteEvolution,
    model: &dyn EnergyModel,
    times: &[f64],
    quadrature: &Quadrature,
) -> Result<Vec<EnergySum>> {
    let mu = compute_mu(evo, model);
    let power = cumulative_power(evo, model, times, quadrature)?;
    let e0 = model.energy(0.0, &evo.states[0]);
    times
        .iter()
        .zip(power)
        .map(|(&t, p)| {
            let dissipated = mu.mass_in(0.0, t, true, true);
            Ok(EnergySum {
                t,
                energy: evolving_energy(evo, model, t, Limit::Right)?,
                power_integral: p,
                dissipated,
                reconstructed: e0 + p - dissipated,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaSummary {
    pub delta: f64,
    pub transitions: usize,
    pub mu_total: f64,
    pub dominant: Option<Atom>,
    pub dominant_fraction: f64,
    /// Atoms with mass at least the jump threshold.
    pub jump_set: Vec<Atom>,
    pub total_variation: f64,
    pub variation_bound: f64,
    /// Largest `|E_t(η) − (E_0 + ∫_0^t D − μ([0, t]))|` over the sample times.
    pub max_balance_residual: f64,
    pub clipped: usize,
    /// `∫_{t*}^T |D^δ|` past the finest dominant atom.
    pub post_jump_abs_power: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepDiagnostics {
    pub sample_count: usize,
    pub summaries: Vec<DeltaSummary>,
    /// `|t*_{δ_{n+1}} − t*_{δ_n}|` for consecutive δ (None without atoms).
    pub jump_time_gaps: Vec<Option<f64>>,
    /// Sup over sample times of the difference of `∫_0^t D` between
    /// consecutive δ.
    pub power_sup_gaps: Vec<f64>,
    /// Same for the cumulative distributions `μ^δ([0, t])`.
    pub mu_sup_gaps: Vec<f64>,
}

pub fn jump_threshold(total_mass: f64) -> f64 {
    (0.01 * total_mass).max(1e-4)
}

/// Per-δ summaries and cross-δ stability gaps; evolutions are ordered as
/// given (normally by decreasing δ).
pub fn sweep_diagnostics(
    evolutions: &[DiscreteEvolution],
    model: &dyn EnergyModel,
    sample_count: usize,
) -> Result<SweepDiagnostics> {
    if evolutions.len() < 2 {
        return Err(Error::Config("a sweep needs at least two evolutions".into()));
    }
    let first = &evolutions[0];
    for e in evolutions {
        if e.rule != first.rule
            || e.model != first.model
            || e.states[0] != first.states[0]
            || e.horizon != first.horizon
        {
            return Err(Error::Config(
                "sweep evolutions must share model, rule, horizon and initial state".into(),
            ));
        }
    }
    let times = sample_times(first.horizon, sample_count);
    let quadrature = Quadrature::default();
    let measures: Vec<JumpMeasure> = evolutions.iter().map(|e| compute_mu(e, model)).collect();
    let finest_jump = measures.last().and_then(|m| m.dominant()).map(|a| a.time);

    let per_delta: Vec<(DeltaSummary, Vec<f64>, Vec<f64>)> = evolutions
        .par_iter()
        .zip(measures.par_iter())
        .map(|(evo, mu)| -> Result<_> {
            let sums = energy_sums(evo, model, &times, &quadrature)?;
            let max_balance_residual = sums
                .iter()
                .map(|s| (s.energy - s.reconstructed).abs())
                .fold(0.0, f64::max);
            let variation = total_variation(evo, model, 8);
            let total = mu.total();
            let threshold = jump_threshold(total);
            let dominant = mu.dominant();
            let post_jump_abs_power = match finest_jump {
                Some(t) => Some(integrate_abs_power(evo, model, t, evo.horizon, &quadrature)?.value),
                None => None,
            };
            let summary = DeltaSummary {
                delta: evo.delta,
                transitions: evo.transitions(),
                mu_total: total,
                dominant,
                dominant_fraction: dominant.map_or(0.0, |a| a.mass / total),
                jump_set: mu.atoms.iter().copied().filter(|a| a.mass >= threshold).collect(),
                total_variation: variation.total_variation,
                variation_bound: variation.bound,
                max_balance_residual,
                clipped: mu.clipped.len(),
                post_jump_abs_power,
            };
            let power: Vec<f64> = sums.iter().map(|s| s.power_integral).collect();
            let dissipated: Vec<f64> = sums.iter().map(|s| s.dissipated).collect();
            Ok((summary, power, dissipated))
        })
        .collect::<Result<_>>()?;

    let sup_gap = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let mut jump_time_gaps = Vec::new();
    let mut power_sup_gaps = Vec::new();
    let mut mu_sup_gaps = Vec::new();
    for w in per_delta.windows(2) {
        let gap = match (w[0].0.dominant, w[1].0.dominant) {
            (Some(a), Some(b)) => Some((b.time - a.time).abs()),
            _ => None,
        };
        jump_time_gaps.push(gap);
        power_sup_gaps.push(sup_gap(&w[0].1, &w[1].1));
        mu_sup_gaps.push(sup_gap(&w[0].2, &w[1].2));
    }
    Ok(SweepDiagnostics {
        sample_count: times.len(),
        summaries: per_delta.into_iter().map(|(s, _, _)| s).collect(),
        jump_time_gaps,
        power_sup_gaps,
        mu_sup_gaps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{DoubleWell, QuadraticTracking};
    use crate::evolution::run_evolution;
    use crate::transition::TransitionRule;

    #[test]
    fn static_energy_has_empty_measure_and_zero_terms() {
        let dw = DoubleWell::static_well(1.5, 1.0).unwrap();
        let evo = run_evolution(&dw, &TransitionRule::mms(0.02), &[1.0], 0.1).unwrap();
        assert!(compute_mu(&evo, &dw).is_empty());
        assert_eq!(compute_d(&evo, &dw, 0.37).unwrap(), 0.0);
        let r = verify_balance(&evo, &dw, 0.0, 1.0, Limit::Left, Limit::Right, &Quadrature::default())
            .unwrap();
        assert_eq!((r.energy_left, r.energy_right, r.integral_term, r.mu_mass, r.residual), (0.0, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(total_variation(&evo, &dw, 8).total_variation, 0.0);
    }

    #[test]
    fn smooth_tracking_dissipates_little() {
        let m = QuadraticTracking::unit_speed_1d(1.0);
        let evo = run_evolution(&m, &TransitionRule::mms(0.01), &[0.0], 0.01).unwrap();
        let mu = compute_mu(&evo, &m);
        // each transition moves the state by δ onto the target: mass ½δ²
        assert_eq!(mu.atoms.len(), evo.transitions());
        for a in &mu.atoms {
            assert!((a.mass - 0.5e-4).abs() <= 1e-7, "{a:?}");
        }
        assert!(mu.clipped.is_empty());
    }

    #[test]
    fn power_examples() {
        let dw = DoubleWell::tilted_normalized(1.5, 2.0).unwrap();
        let evo = run_evolution(&dw, &TransitionRule::mms(0.02), &[1.0], 0.5).unwrap();
        let w = evo.states[1][0];
        assert_eq!(compute_d(&evo, &dw, 0.5).unwrap(), w);
        assert_eq!(compute_d(&evo, &dw, 0.9).unwrap(), w);

        let m = QuadraticTracking::unit_speed_1d(1.0);
        let evo = run_evolution(&m, &TransitionRule::mms(0.1), &[0.0], 0.25).unwrap();
        let x = evo.states[2][0];
        assert!((compute_d(&evo, &m, 0.6).unwrap() + (x - 0.6)).abs() < 1e-15);
        assert!(compute_d(&evo, &m, 1.2).is_err());
    }

    #[test]
    fn single_piece_is_the_fundamental_theorem() {
        let m = QuadraticTracking::unit_speed_1d(1.0);
        let evo = run_evolution(&m, &TransitionRule::mms(0.1), &[0.0], 0.25).unwrap();
        let r = verify_balance(&evo, &m, 0.3, 0.45, Limit::Right, Limit::Right, &Quadrature::default())
            .unwrap();
        assert_eq!(r.mu_mass, 0.0);
        assert!(r.residual.abs() <= 1e-10);
    }

    #[test]
    fn conventions_differ_by_endpoint_atoms() {
        let dw = DoubleWell::tilted_normalized(1.5, 2.0).unwrap();
        let evo = run_evolution(&dw, &TransitionRule::mms(0.1), &[1.0], 0.1).unwrap();
        let mu = compute_mu(&evo, &dw);
        let q = Quadrature::default();
        let (t1, t2) = (evo.node_time(5), evo.node_time(17));
        let closed = verify_balance(&evo, &dw, t1, t2, Limit::Left, Limit::Right, &q).unwrap();
        let open_left = verify_balance(&evo, &dw, t1, t2, Limit::Right, Limit::Right, &q).unwrap();
        let open_right = verify_balance(&evo, &dw, t1, t2, Limit::Left, Limit::Left, &q).unwrap();
        let open = verify_balance(&evo, &dw, t1, t2, Limit::Right, Limit::Left, &q).unwrap();
        let (m1, m2) = (mu.at_node(5), mu.at_node(17));
        assert!((closed.mu_mass - open_left.mu_mass - m1).abs() <= 1e-12);
        assert!((closed.mu_mass - open_right.mu_mass - m2).abs() <= 1e-12);
        assert!((closed.mu_mass - open.mu_mass - m1 - m2).abs() <= 1e-12);
        assert!((open_left.energy_left - closed.energy_left + m1).abs() <= 1e-12);
        for r in [closed, open_left, open_right, open] {
            assert!(r.residual.abs() <= 10.0 * r.quadrature_error, "{r:?}");
        }
        assert!(matches!(
            verify_balance(&evo, &dw, 1.0, 0.5, Limit::Left, Limit::Right, &q),
            Err(Error::Domain { .. })
        ));
        assert!(matches!(
            verify_balance(&evo, &dw, t1, t1, Limit::Right, Limit::Left, &q),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn monotone_evolving_energy_variation_is_the_drop() {
        // static energy for two pieces, one transition dissipates everything
        let dw = DoubleWell::static_well(1.5, 1.0).unwrap();
        let mut evo = run_evolution(&dw, &TransitionRule::mms(0.02), &[1.0], 0.5).unwrap();
        evo.states[0] = vec![0.0].into();
        let tv = total_variation(&evo, &dw, 4);
        assert!((tv.total_variation - 1.0).abs() < 1e-15);
        assert!(tv.holds);
    }

    #[test]
    fn simpson_is_exact_on_cubics() {
        let i = simpson(|s| s * s * s - 2.0 * s, 0.0, 2.0, 32);
        assert!((i.value - 0.0).abs() < 1e-14);
        let i = simpson(|s| s.exp(), 0.0, 1.0, 32);
        assert!((i.value - (1f64.exp() - 1.0)).abs() <= 10.0 * i.error);
    }
}
