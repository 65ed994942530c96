//! Box-constrained projected gradient descent for the inner argmin problems.

use serde::{Deserialize, Serialize};

use crate::energy::BoxBounds;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    /// Stop once the projected gradient norm drops to this value.
    pub grad_tol: f64,
    pub max_iterations: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Backtracking factor.
    pub shrink: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            grad_tol: 1e-8,
            max_iterations: 10_000,
            armijo: 1e-4,
            shrink: 0.5,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0)
            || self.max_iterations == 0
            || !(self.armijo > 0.0 && self.armijo < 1.0)
            || !(self.shrink > 0.0 && self.shrink < 1.0)
        {
            return Err(Error::Config(format!("invalid solver parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub point: Vec<f64>,
    pub value: f64,
    pub residual: f64,
    pub iterations: usize,
}

fn masked_norm(bounds: &BoxBounds, y: &[f64], g: &[f64], scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend_from_slice(g);
    bounds.mask_blocked(y, scratch);
    scratch.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Minimizes `value` over `bounds`, warm-started at the projection of `start`.
///
/// `curvature` is a lower bound for the step denominator: trial steps are
/// `1 / max(secant curvature, curvature)`. The iterates never increase the
/// objective beyond floating-point noise, so the returned value is at most
/// the value at the (projected) start.
pub fn minimize<F, G>(
    value: F,
    gradient: G,
    bounds: &BoxBounds,
    start: &[f64],
    curvature: f64,
    params: &SolverParams,
) -> Result<Minimum>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
{
    let dim = start.len();
    let mut y = start.to_vec();
    bounds.project(&mut y);
    let mut f = value(&y);
    let mut g = vec![0.0; dim];
    gradient(&y, &mut g);
    let mut scratch = Vec::with_capacity(dim);
    let mut residual = masked_norm(bounds, &y, &g, &mut scratch);

    let floor = curvature.max(f64::MIN_POSITIVE);
    let mut alpha = 1.0 / floor;
    let mut trial = vec![0.0; dim];
    let mut g_trial = vec![0.0; dim];

    for iteration in 0..params.max_iterations {
        if residual <= params.grad_tol {
            return Ok(Minimum { point: y, value: f, residual, iterations: iteration });
        }
        let mut step = alpha;
        let mut accepted = false;
        while step >= alpha * 1e-20 {
            for j in 0..dim {
                trial[j] = y[j] - step * g[j];
            }
            bounds.project(&mut trial);
            let decrease: f64 = (0..dim).map(|j| g[j] * (y[j] - trial[j])).sum();
            let f_trial = value(&trial);
            let sufficient = f_trial <= f - params.armijo * decrease;
            // At roundoff level the decrease test is meaningless; accept the
            // step when the projected gradient still shrinks.
            let noise = !sufficient && (f_trial - f).abs() <= 16.0 * f64::EPSILON * (1.0 + f.abs());
            if sufficient || noise {
                gradient(&trial, &mut g_trial);
                if sufficient || masked_norm(bounds, &trial, &g_trial, &mut scratch) < residual {
                    finish_step(&mut y, &mut g, &trial, &g_trial, &mut alpha, floor);
                    f = f_trial;
                    residual = masked_norm(bounds, &y, &g, &mut scratch);
                    accepted = true;
                    break;
                }
            }
            step *= params.shrink;
        }
        if !accepted {
            return Err(Error::Solver {
                best: y,
                best_value: f,
                residual,
                iterations: iteration,
            });
        }
    }
    if residual <= params.grad_tol {
        return Ok(Minimum { point: y, value: f, residual, iterations: params.max_iterations });
    }
    Err(Error::Solver {
        best: y,
        best_value: f,
        residual,
        iterations: params.max_iterations,
    })
}

fn finish_step(
    y: &mut [f64],
    g: &mut [f64],
    trial: &[f64],
    g_trial: &[f64],
    alpha: &mut f64,
    floor: f64,
) {
    let mut ss = 0.0;
    let mut sy = 0.0;
    for j in 0..y.len() {
        let s = trial[j] - y[j];
        ss += s * s;
        sy += s * (g_trial[j] - g[j]);
    }
    if ss > 0.0 {
        *alpha = 1.0 / (sy / ss).max(floor);
    }
    y.copy_from_slice(trial);
    g.copy_from_slice(g_trial);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl_converges() {
        let bounds = BoxBounds::unbounded(2);
        let m = minimize(
            |y| 0.5 * (y[0] - 1.0).powi(2) + 2.0 * (y[1] + 3.0).powi(2),
            |y, g| {
                g[0] = y[0] - 1.0;
                g[1] = 4.0 * (y[1] + 3.0);
            },
            &bounds,
            &[10.0, 10.0],
            1.0,
            &SolverParams::default(),
        )
        .unwrap();
        assert!((m.point[0] - 1.0).abs() < 1e-8);
        assert!((m.point[1] + 3.0).abs() < 1e-8);
        assert!(m.residual <= 1e-8);
    }

    #[test]
    fn active_face_is_respected() {
        let bounds = BoxBounds::uniform(1, 0.0, 1.0);
        let m = minimize(
            |y| (y[0] - 2.0).powi(2),
            |y, g| g[0] = 2.0 * (y[0] - 2.0),
            &bounds,
            &[0.2],
            2.0,
            &SolverParams::default(),
        )
        .unwrap();
        assert_eq!(m.point, vec![1.0]);
        assert_eq!(m.residual, 0.0);
    }

    #[test]
    fn iteration_cap_reports_best_iterate() {
        let bounds = BoxBounds::unbounded(1);
        let params = SolverParams { max_iterations: 2, ..SolverParams::default() };
        let err = minimize(
            |y| y[0].powi(4),
            |y, g| g[0] = 4.0 * y[0].powi(3),
            &bounds,
            &[1.0],
            1e-3,
            &params,
        )
        .unwrap_err();
        match err {
            Error::Solver { best, best_value, iterations, .. } => {
                assert_eq!(iterations, 2);
                assert!(best_value < 1.0);
                assert_eq!(best.len(), 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn never_increases_the_objective() {
        let bounds = BoxBounds::uniform(1, -2.0, 2.0);
        for start in [-1.9, -0.3, 0.0, 0.05, 1.7] {
            let f = |y: &[f64]| (y[0] * y[0] - 1.0).powi(2) + 5.0 * (y[0] - start).powi(2);
            let m = minimize(
                f,
                |y, g| g[0] = 4.0 * y[0] * (y[0] * y[0] - 1.0) + 10.0 * (y[0] - start),
                &bounds,
                &[start],
                10.0,
                &SolverParams::default(),
            )
            .unwrap();
            assert!(m.value <= f(&[start]));
        }
    }
}
