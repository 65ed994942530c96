//! Chain optimization for the minimizing-movement and BDF2 actions.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use super::{
    bdf2_envelope, mms_envelope, ActionEstimate, Certificate, ChainPath, ChainScheme, Method,
};
use crate::energy::{check_point, check_time, dist_sq, BoxBounds, EnergyModel, Point};
use crate::error::{Error, Result};
use crate::solver::{minimize, SolverParams};

/// Point, value and gradient of the last objective evaluation.
type Evaluation = (Vec<f64>, f64, Vec<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainOptions {
    /// Largest number of chain states, endpoints included. Sizes are tried
    /// on a geometric schedule up to it.
    pub budget: usize,
    /// Inner prox solver.
    pub prox: SolverParams,
    /// Descent over the interior chain states.
    pub optimizer: SolverParams,
}

impl Default for ChainOptions {
    fn default() -> Self {
        ChainOptions {
            budget: 16,
            prox: SolverParams::default(),
            optimizer: SolverParams {
                grad_tol: 1e-7,
                max_iterations: 2000,
                ..SolverParams::default()
            },
        }
    }
}

/// Action sum of a full chain and its gradient with respect to every state.
///
/// The prox values enter through their envelope gradients:
/// `∇E^M(u) = (u − p)/τ`, `∂_x E^B(x, x') = 2(x − y)/τ` and
/// `∂_{x'} E^B(x, x') = (y − x')/2τ`, with `p`, `y` the prox minimizers.
fn chain_terms(
    model: &dyn EnergyModel,
    t: f64,
    u: &[Point],
    scheme: ChainScheme,
    tau: f64,
    prox: &SolverParams,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let inv = 1.0 / tau;
    let d = u[0].len();
    let last = u.len() - 1;
    let mut grad = vec![vec![0.0; d]; u.len()];
    let mut total = 0.0;
    match scheme {
        ChainScheme::Mms => {
            for s in 0..=last {
                let env = mms_envelope(model, t, &u[s], tau, prox)?;
                total += (model.energy(t, &u[s]) - env.value).max(0.0);
                let g = model.gradient_vec(t, &u[s]);
                for j in 0..d {
                    grad[s][j] += g[j] - inv * (u[s][j] - env.minimizer[j]);
                }
                if s < last {
                    total += 0.5 * inv * dist_sq(&u[s], &u[s + 1]);
                    for j in 0..d {
                        let diff = inv * (u[s][j] - u[s + 1][j]);
                        grad[s][j] += diff;
                        grad[s + 1][j] -= diff;
                    }
                }
            }
        }
        ChainScheme::Bdf2 => {
            let idx = |s: isize| s.clamp(0, last as isize) as usize;
            for s in 0..=(last as isize + 1) {
                let (ia, ib, ic) = (idx(s - 1), idx(s), idx(s + 1));
                let (a, b, c) = (&u[ia], &u[ib], &u[ic]);
                let env = bdf2_envelope(model, t, b, a, tau, prox)?;
                let y = &env.minimizer;
                total += (model.energy(t, b) - env.value).max(0.0)
                    + 0.5 * inv * (dist_sq(b, c) + dist_sq(a, b))
                    - 0.25 * inv * dist_sq(a, c);
                let g = model.gradient_vec(t, b);
                for j in 0..d {
                    grad[ia][j] += -0.5 * inv * (y[j] - a[j]) + inv * (a[j] - b[j]) - 0.5 * inv * (a[j] - c[j]);
                    grad[ib][j] += g[j] - 2.0 * inv * (b[j] - y[j]) + inv * (b[j] - c[j]) + inv * (b[j] - a[j]);
                    grad[ic][j] += inv * (c[j] - b[j]) - 0.5 * inv * (c[j] - a[j]);
                }
            }
        }
    }
    Ok((total, grad))
}

/// Optimizes the interior of `chain` in place; returns its action sum.
#[allow(clippy::too_many_arguments)]
fn optimize_interior(
    model: &dyn EnergyModel,
    t: f64,
    chain: &mut [Point],
    scheme: ChainScheme,
    tau: f64,
    options: &ChainOptions,
) -> Result<f64> {
    let d = chain[0].len();
    let inner = chain.len().saturating_sub(2);
    if inner == 0 {
        return Ok(chain_terms(model, t, chain, scheme, tau, &options.prox)?.0);
    }
    let first = chain[0].clone();
    let last = chain[chain.len() - 1].clone();
    let rebuild = |z: &[f64]| -> Vec<Point> {
        let mut u = Vec::with_capacity(inner + 2);
        u.push(first.clone());
        u.extend(z.chunks(d).map(Point::from));
        u.push(last.clone());
        u
    };
    let cache: RefCell<Option<Evaluation>> = RefCell::new(None);
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let eval = |z: &[f64]| -> (f64, Vec<f64>) {
        if let Some((cz, v, g)) = cache.borrow().as_ref() {
            if cz.as_slice() == z {
                return (*v, g.clone());
            }
        }
        let u = rebuild(z);
        let (v, g) = match chain_terms(model, t, &u, scheme, tau, &options.prox) {
            Ok(r) => r,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                return (f64::INFINITY, vec![0.0; z.len()]);
            }
        };
        let flat: Vec<f64> = g[1..=inner].iter().flatten().copied().collect();
        *cache.borrow_mut() = Some((z.to_vec(), v, flat.clone()));
        (v, flat)
    };
    let mut bounds = BoxBounds::unbounded(inner * d);
    let mb = model.bounds();
    for k in 0..inner {
        for j in 0..d {
            bounds.lower[k * d + j] = mb.lower[j];
            bounds.upper[k * d + j] = mb.upper[j];
        }
    }
    let start: Vec<f64> = chain[1..=inner].iter().flat_map(|p| p.iter().copied()).collect();
    let (z, value) = match minimize(
        |z| eval(z).0,
        |z, out| out.copy_from_slice(&eval(z).1),
        &bounds,
        &start,
        1.0 / tau,
        &options.optimizer,
    ) {
        Ok(m) => (m.point, m.value),
        Err(Error::Solver { best, best_value, .. }) => (best, best_value),
        Err(e) => return Err(e),
    };
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    for (k, p) in z.chunks(d).enumerate() {
        chain[k + 1] = Point::from(p);
    }
    Ok(value)
}

fn interpolate(x1: &[f64], x2: &[f64], moves: usize) -> Vec<Point> {
    (0..=moves)
        .map(|k| {
            let s = k as f64 / moves as f64;
            Point(x1.iter().zip(x2).map(|(a, b)| a + s * (b - a)).collect())
        })
        .collect()
}

/// Inserts midpoints of the longest steps until the chain has `states` states.
fn refine(chain: &[Point], states: usize) -> Vec<Point> {
    let mut out = chain.to_vec();
    while out.len() < states {
        let k = (0..out.len() - 1)
            .max_by(|&a, &b| dist_sq(&out[a], &out[a + 1]).total_cmp(&dist_sq(&out[b], &out[b + 1])))
            .unwrap_or(0);
        let mid: Vec<f64> = out[k].iter().zip(out[k + 1].iter()).map(|(a, b)| 0.5 * (a + b)).collect();
        out.insert(k + 1, Point(mid));
    }
    out
}

/// Chain sizes tried: 2, 3, 4, 6, 8, 12, … up to `budget`, always including
/// `budget / 2` and `budget`.
fn length_schedule(budget: usize) -> Vec<usize> {
    let mut sizes = vec![budget, (budget / 2).max(2)];
    let mut p = 2;
    while p < budget {
        sizes.push(p);
        if p + p / 2 < budget && p >= 2 {
            sizes.push(p + p / 2);
        }
        p *= 2;
    }
    sizes.sort_unstable();
    sizes.dedup();
    sizes
}

#[allow(clippy::too_many_arguments)]
fn action_chain(
    model: &dyn EnergyModel,
    t: f64,
    x1: &[f64],
    x2: &[f64],
    tau: f64,
    scheme: ChainScheme,
    options: &ChainOptions,
) -> Result<ActionEstimate> {
    check_time(model, t)?;
    check_point(model, x1)?;
    check_point(model, x2)?;
    if !(tau > 0.0) {
        return Err(Error::Config("tau must be positive".into()));
    }
    if options.budget < 2 {
        return Err(Error::Config("chain budget must allow at least two states".into()));
    }
    let same = x1 == x2;
    let mut best: Option<(f64, Vec<Point>)> = None;
    let mut best_at_half = f64::INFINITY;
    let mut previous: Option<Vec<Point>> = None;
    let consider = |best: &mut Option<(f64, Vec<Point>)>, v: f64, chain: Vec<Point>| {
        let better = match best {
            None => true,
            Some((b, _)) => v < *b - 1e-12 * (1.0 + b.abs()),
        };
        if better {
            *best = Some((v, chain));
        }
    };
    if same {
        let single = vec![Point::from(x1)];
        let v = chain_terms(model, t, &single, scheme, tau, &options.prox)?.0;
        consider(&mut best, v, single);
    }
    for size in length_schedule(options.budget) {
        let moves = size - 1;
        let mut seeds = vec![interpolate(x1, x2, moves)];
        if let Some(prev) = &previous {
            seeds.push(refine(prev, size));
        }
        let mut round: Option<(f64, Vec<Point>)> = None;
        for mut seed in seeds {
            let v = optimize_interior(model, t, &mut seed, scheme, tau, options)?;
            if round.as_ref().is_none_or(|(b, _)| v < *b) {
                round = Some((v, seed));
            }
        }
        let (v, chain) = round.expect("at least one seed");
        previous = Some(chain.clone());
        consider(&mut best, v, chain);
        if size <= options.budget / 2 {
            best_at_half = best.as_ref().map_or(f64::INFINITY, |b| b.0);
        }
    }
    let (value, states) = best.expect("at least one chain length");
    let lower_bound = match scheme {
        ChainScheme::Mms => model.energy(t, x1) - mms_envelope(model, t, x2, tau, &options.prox)?.value,
        ChainScheme::Bdf2 => {
            model.energy(t, x1) - bdf2_envelope(model, t, x2, x2, tau, &options.prox)?.value
        }
    }
    .max(0.0);
    let converged = (best_at_half - value).abs() <= 0.01 * value.abs() || (best_at_half - value).abs() <= 1e-10;
    Ok(ActionEstimate {
        value,
        certificate: Some(Certificate::Chain(ChainPath { states, scheme, tau })),
        method: Method::ChainOpt,
        lower_bound,
        gap: (value - lower_bound).max(0.0),
        converged,
    })
}

/// `c^M_{t,τ}(x1, x2)` by optimizing chains of up to `options.budget` states.
pub fn action_mms(
    model: &dyn EnergyModel,
    t: f64,
    x1: &[f64],
    x2: &[f64],
    tau: f64,
    options: &ChainOptions,
) -> Result<ActionEstimate> {
    action_chain(model, t, x1, x2, tau, ChainScheme::Mms, options)
}

/// `c^B_{t,τ}(x1, x2)` by optimizing chains of up to `options.budget` states.
pub fn action_bdf2(
    model: &dyn EnergyModel,
    t: f64,
    x1: &[f64],
    x2: &[f64],
    tau: f64,
    options: &ChainOptions,
) -> Result<ActionEstimate> {
    action_chain(model, t, x1, x2, tau, ChainScheme::Bdf2, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{DoubleWell, QuadraticTracking};

    fn fd_check(scheme: ChainScheme) {
        let dw = DoubleWell::tilted_normalized(1.5, 1.0).unwrap();
        let prox = SolverParams { grad_tol: 1e-12, ..SolverParams::default() };
        let u: Vec<Point> = [-1.0, -0.6, -0.1, 0.35, 0.8].iter().map(|&x| Point(vec![x])).collect();
        let (_, g) = chain_terms(&dw, 0.4, &u, scheme, 0.1, &prox).unwrap();
        let h = 1e-6;
        for s in 1..4 {
            let mut up = u.clone();
            up[s][0] += h;
            let mut down = u.clone();
            down[s][0] -= h;
            let fd = (chain_terms(&dw, 0.4, &up, scheme, 0.1, &prox).unwrap().0
                - chain_terms(&dw, 0.4, &down, scheme, 0.1, &prox).unwrap().0)
                / (2.0 * h);
            assert!((fd - g[s][0]).abs() < 1e-5 * (1.0 + fd.abs()), "{scheme:?} s={s}: {fd} vs {}", g[s][0]);
        }
    }

    #[test]
    fn envelope_gradients_match_finite_differences() {
        fd_check(ChainScheme::Mms);
        fd_check(ChainScheme::Bdf2);
    }

    #[test]
    fn schedule_is_geometric() {
        assert_eq!(length_schedule(16), vec![2, 3, 4, 6, 8, 12, 16]);
        assert_eq!(length_schedule(20), vec![2, 3, 4, 6, 8, 10, 12, 16, 20]);
        assert_eq!(length_schedule(2), vec![2]);
    }

    #[test]
    fn critical_diagonal_is_free() {
        let dw = DoubleWell::static_well(1.5, 1.0).unwrap();
        let opts = ChainOptions { budget: 4, ..ChainOptions::default() };
        for est in [
            action_mms(&dw, 0.0, &[1.0], &[1.0], 0.1, &opts).unwrap(),
            action_bdf2(&dw, 0.0, &[1.0], &[1.0], 0.1, &opts).unwrap(),
        ] {
            assert!(est.value.abs() <= 1e-8);
            match est.certificate {
                Some(Certificate::Chain(c)) => assert_eq!(c.states.len(), 1),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn lower_bounds_hold() {
        let m = QuadraticTracking::static_quadratic(1, 1.0, 1.0).unwrap();
        let opts = ChainOptions { budget: 8, ..ChainOptions::default() };
        for (a, b) in [(2.0, 0.5), (0.0, 1.0), (-1.0, 1.0)] {
            let est = action_mms(&m, 0.0, &[a], &[b], 0.2, &opts).unwrap();
            assert!(est.value >= est.lower_bound - 1e-10);
            assert!(est.value >= m.energy(0.0, &[a]) - m.energy(0.0, &[b]) - 1e-8);
            let est = action_bdf2(&m, 0.0, &[a], &[b], 0.2, &opts).unwrap();
            assert!(est.value >= est.lower_bound - 1e-10);
        }
    }
}
