//! Polyline optimization for the gradient-flow action.

use std::cell::RefCell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{exact_gf_action_1d, ActionEstimate, Certificate, Method, PolylinePath};
use crate::energy::{check_point, check_time, distance, BoxBounds, EnergyModel, Point};
use crate::error::{Error, Result};
use crate::solver::{minimize, SolverParams};

/// Point, value and gradient of the last objective evaluation.
type Evaluation = (Vec<f64>, f64, Vec<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathOptions {
    pub segments: usize,
    /// Perturbed starts tried besides the straight segment.
    pub starts: usize,
    /// Node perturbation, relative to the endpoint distance.
    pub perturbation: f64,
    pub seed: u64,
    /// Midpoint samples per segment in the optimized objective.
    pub samples: usize,
    /// Midpoint samples per segment when reporting the value.
    pub report_samples: usize,
    pub fd_step: f64,
    pub optimizer: SolverParams,
}

impl Default for PathOptions {
    fn default() -> Self {
        PathOptions {
            segments: 64,
            starts: 3,
            perturbation: 0.1,
            seed: 0,
            samples: 2,
            report_samples: 32,
            fd_step: 1e-6,
            optimizer: SolverParams { grad_tol: 1e-8, max_iterations: 3000, ..SolverParams::default() },
        }
    }
}

fn slope_at(model: &dyn EnergyModel, t: f64, x: &[f64]) -> f64 {
    model.slope_unchecked(t, x)
}

/// `∫ |∂E_t| ds` along the polyline, by the composite midpoint rule with
/// `samples` points per segment.
pub fn polyline_action(model: &dyn EnergyModel, t: f64, nodes: &[Point], samples: usize) -> f64 {
    let m = samples.max(1);
    let mut buf = vec![0.0; nodes.first().map_or(0, |p| p.len())];
    nodes
        .windows(2)
        .map(|w| {
            let len = distance(&w[0], &w[1]);
            if len == 0.0 {
                return 0.0;
            }
            let mut acc = 0.0;
            for k in 0..m {
                let s = (k as f64 + 0.5) / m as f64;
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = w[0][j] + s * (w[1][j] - w[0][j]);
                }
                acc += slope_at(model, t, &buf);
            }
            acc * len / m as f64
        })
        .sum()
}

/// Objective and gradient of the sampled action for a full node list.
fn objective(
    model: &dyn EnergyModel,
    t: f64,
    nodes: &[Point],
    samples: usize,
    fd_step: f64,
) -> (f64, Vec<Vec<f64>>) {
    let d = nodes[0].len();
    let m = samples.max(1);
    let mut grad = vec![vec![0.0; d]; nodes.len()];
    let mut total = 0.0;
    let mut x = vec![0.0; d];
    let mut ds = vec![0.0; d];
    for k in 0..nodes.len() - 1 {
        let (a, b) = (&nodes[k], &nodes[k + 1]);
        let len = distance(a, b);
        for i in 0..m {
            let s = (i as f64 + 0.5) / m as f64;
            for j in 0..d {
                x[j] = a[j] + s * (b[j] - a[j]);
            }
            let value = slope_at(model, t, &x);
            for j in 0..d {
                let orig = x[j];
                x[j] = orig + fd_step;
                let up = slope_at(model, t, &x);
                x[j] = orig - fd_step;
                let down = slope_at(model, t, &x);
                x[j] = orig;
                ds[j] = (up - down) / (2.0 * fd_step);
            }
            let w = len / m as f64;
            total += value * w;
            for j in 0..d {
                grad[k][j] += (1.0 - s) * ds[j] * w;
                grad[k + 1][j] += s * ds[j] * w;
                if len > 0.0 {
                    let dir = (b[j] - a[j]) / len;
                    grad[k][j] -= value * dir / m as f64;
                    grad[k + 1][j] += value * dir / m as f64;
                }
            }
        }
    }
    (total, grad)
}

fn optimize_path(
    model: &dyn EnergyModel,
    t: f64,
    nodes: &mut [Point],
    options: &PathOptions,
) -> (f64, bool) {
    let d = nodes[0].len();
    let inner = nodes.len() - 2;
    let first = nodes[0].clone();
    let last = nodes[nodes.len() - 1].clone();
    let rebuild = |z: &[f64]| -> Vec<Point> {
        let mut u = Vec::with_capacity(inner + 2);
        u.push(first.clone());
        u.extend(z.chunks(d).map(Point::from));
        u.push(last.clone());
        u
    };
    let cache: RefCell<Option<Evaluation>> = RefCell::new(None);
    let eval = |z: &[f64]| -> (f64, Vec<f64>) {
        if let Some((cz, v, g)) = cache.borrow().as_ref() {
            if cz.as_slice() == z {
                return (*v, g.clone());
            }
        }
        let (v, g) = objective(model, t, &rebuild(z), options.samples, options.fd_step);
        let flat: Vec<f64> = g[1..=inner].iter().flatten().copied().collect();
        *cache.borrow_mut() = Some((z.to_vec(), v, flat.clone()));
        (v, flat)
    };
    let mb = model.bounds();
    let mut bounds = BoxBounds::unbounded(inner * d);
    for k in 0..inner {
        for j in 0..d {
            bounds.lower[k * d + j] = mb.lower[j];
            bounds.upper[k * d + j] = mb.upper[j];
        }
    }
    let start: Vec<f64> = nodes[1..=inner].iter().flat_map(|p| p.iter().copied()).collect();
    let (z, ok) = match minimize(
        |z| eval(z).0,
        |z, out| out.copy_from_slice(&eval(z).1),
        &bounds,
        &start,
        1e-3,
        &options.optimizer,
    ) {
        Ok(m) => (m.point, true),
        Err(Error::Solver { best, .. }) => (best, false),
        Err(_) => (start, false),
    };
    for (k, p) in z.chunks(d).enumerate() {
        nodes[k + 1] = Point::from(p);
    }
    (polyline_action(model, t, nodes, options.report_samples), ok)
}

/// `c^F_t(x1, x2)` by optimizing the interior nodes of a polyline.
///
/// The straight segment and `options.starts` Gaussian perturbations of it are
/// optimized; the best re-evaluated polyline is the certificate.
pub fn action_gf(
    model: &dyn EnergyModel,
    t: f64,
    x1: &[f64],
    x2: &[f64],
    options: &PathOptions,
) -> Result<ActionEstimate> {
    check_time(model, t)?;
    check_point(model, x1)?;
    check_point(model, x2)?;
    if options.segments < 1 {
        return Err(Error::Config("a polyline needs at least one segment".into()));
    }
    let lower = (model.energy(t, x1) - model.energy(t, x2)).max(0.0);
    let span = distance(x1, x2);
    if span == 0.0 {
        return Ok(ActionEstimate {
            value: 0.0,
            certificate: Some(Certificate::Polyline(PolylinePath::new(vec![Point::from(x1)]))),
            method: Method::PathOpt,
            lower_bound: 0.0,
            gap: 0.0,
            converged: true,
        });
    }
    let n = options.segments;
    let straight: Vec<Point> = (0..=n)
        .map(|k| {
            let s = k as f64 / n as f64;
            Point(x1.iter().zip(x2).map(|(a, b)| a + s * (b - a)).collect())
        })
        .collect();
    let noise = Normal::new(0.0, options.perturbation * span)
        .map_err(|e| Error::Config(format!("perturbation: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let bounds = model.bounds();
    let mut best: Option<(f64, Vec<Point>, bool)> = None;
    for start in 0..=options.starts {
        let mut nodes = straight.clone();
        if start > 0 && n > 1 {
            for p in nodes[1..n].iter_mut() {
                for v in p.0.iter_mut() {
                    *v += noise.sample(&mut rng);
                }
                bounds.project(&mut p.0);
            }
        }
        let (value, ok) = if n > 1 {
            optimize_path(model, t, &mut nodes, options)
        } else {
            (polyline_action(model, t, &nodes, options.report_samples), true)
        };
        if best.as_ref().is_none_or(|b| value < b.0) {
            best = Some((value, nodes, ok));
        }
    }
    let (value, nodes, ok) = best.expect("at least the straight start");
    // In one dimension the exact value is available for the gap.
    let (lower_bound, gap) = match model.dimension() {
        1 => {
            let exact = exact_gf_action_1d(model, t, x1[0], x2[0])?;
            (exact, (value - exact).abs())
        }
        _ => (lower, (value - lower).max(0.0)),
    };
    Ok(ActionEstimate {
        value,
        certificate: Some(Certificate::Polyline(PolylinePath::new(nodes))),
        method: Method::PathOpt,
        lower_bound,
        gap,
        converged: ok,
    })
}
