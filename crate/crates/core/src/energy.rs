//! Time-dependent energies on box-constrained subsets of ℝ^d.
//!
//! An [`EnergyModel`] exposes raw evaluators for the energy, its partial time
//! derivative (the power), and the spatial gradient. The checked entry points
//! [`evaluate`], [`slope`] and [`time_derivative`] validate the time against
//! the horizon and the point against the model's box before evaluating.
//!
//! The slope is the norm of the projected gradient: a gradient component is
//! dropped when the point sits on a box face and descent along that
//! coordinate would leave the box.

use std::ops::{Deref, DerefMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A state in ℝ^d.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(pub Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point(coords)
    }

    pub fn zeros(dim: usize) -> Self {
        Point(vec![0.0; dim])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Point {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Point {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Point {
    fn from(v: Vec<f64>) -> Self {
        Point(v)
    }
}

impl From<&[f64]> for Point {
    fn from(v: &[f64]) -> Self {
        Point(v.to_vec())
    }
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    dist_sq(a, b).sqrt()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-coordinate box `lower_j ≤ x_j ≤ upper_j`; infinite entries mean no bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn unbounded(dim: usize) -> Self {
        BoxBounds {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Self {
        BoxBounds {
            lower: vec![lower; dim],
            upper: vec![upper; dim],
        }
    }

    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.lower.len()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    pub fn project(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.iter().chain(&self.upper).all(|v| v.is_finite())
    }

    /// Zeroes the components of `g` whose descent direction `-g_j` points
    /// out of the box at `x`.
    pub fn mask_blocked(&self, x: &[f64], g: &mut [f64]) {
        for j in 0..g.len() {
            if (x[j] <= self.lower[j] && g[j] > 0.0) || (x[j] >= self.upper[j] && g[j] < 0.0) {
                g[j] = 0.0;
            }
        }
    }

    /// Draws a point uniformly from the box; every bound must be finite.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Point {
        Point(
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
                .collect(),
        )
    }
}

/// Constants of the growth condition `|∂_t E_t(x)| ≤ c1·E_t(x) + c2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthConstants {
    pub c1: f64,
    pub c2: f64,
}

/// A time-varying energy `E: [0, T] × X → ℝ` on a box `X ⊆ ℝ^d`.
///
/// The raw evaluators perform no validation; use the free functions of this
/// module for checked access.
pub trait EnergyModel: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    fn horizon(&self) -> f64;
    fn bounds(&self) -> &BoxBounds;

    fn energy(&self, t: f64, x: &[f64]) -> f64;
    /// Partial derivative `∂_t E_t(x)`.
    fn power(&self, t: f64, x: &[f64]) -> f64;
    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]);

    fn growth_constants(&self) -> Option<GrowthConstants> {
        None
    }

    /// Lipschitz constant of `x ↦ |∂E_t|(x)`, uniform in `t`.
    fn slope_lipschitz(&self) -> Option<f64> {
        None
    }

    fn gradient_vec(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.gradient(t, x, &mut g);
        g
    }

    /// Projected-gradient norm, without validation.
    fn slope_unchecked(&self, t: f64, x: &[f64]) -> f64 {
        let mut g = self.gradient_vec(t, x);
        self.bounds().mask_blocked(x, &mut g);
        norm(&g)
    }
}

const HORIZON_SLACK: f64 = 1e-12;

pub fn check_time(model: &dyn EnergyModel, t: f64) -> Result<()> {
    let horizon = model.horizon();
    let slack = HORIZON_SLACK * horizon.max(1.0);
    if !(t >= -slack && t <= horizon + slack) {
        return Err(Error::Domain { t, horizon });
    }
    Ok(())
}

pub fn check_point(model: &dyn EnergyModel, x: &[f64]) -> Result<()> {
    if x.len() != model.dimension() {
        return Err(Error::Infeasible(format!(
            "expected {} coordinates, got {}",
            model.dimension(),
            x.len()
        )));
    }
    if let Some(j) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Infeasible(format!("coordinate {j} is not finite")));
    }
    if !model.bounds().contains(x) {
        return Err(Error::Infeasible(format!(
            "point outside the box of model `{}`",
            model.name()
        )));
    }
    Ok(())
}

fn check(model: &dyn EnergyModel, t: f64, x: &[f64]) -> Result<()> {
    check_time(model, t)?;
    check_point(model, x)
}

pub fn evaluate(model: &dyn EnergyModel, t: f64, x: &[f64]) -> Result<f64> {
    check(model, t, x)?;
    Ok(model.energy(t, x))
}

pub fn slope(model: &dyn EnergyModel, t: f64, x: &[f64]) -> Result<f64> {
    check(model, t, x)?;
    Ok(model.slope_unchecked(t, x))
}

pub fn time_derivative(model: &dyn EnergyModel, t: f64, x: &[f64]) -> Result<f64> {
    check(model, t, x)?;
    Ok(model.power(t, x))
}

pub fn gradient(model: &dyn EnergyModel, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    check(model, t, x)?;
    Ok(model.gradient_vec(t, x))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthViolation {
    pub t: f64,
    pub x: Point,
    pub power: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthReport {
    pub constants: GrowthConstants,
    pub samples: usize,
    /// Largest observed `|∂_t E| / (c1·E + c2)`.
    pub max_ratio: f64,
    pub violations: Vec<GrowthViolation>,
}

/// Samples `(t, x)` uniformly from `[0, T] × sampling_box` and reports every
/// point violating the declared growth condition.
pub fn check_growth_bound(
    model: &dyn EnergyModel,
    sample_count: usize,
    sampling_box: &BoxBounds,
    seed: u64,
) -> Result<GrowthReport> {
    let constants = model.growth_constants().ok_or_else(|| {
        Error::Precondition(format!("model `{}` declares no growth constants", model.name()))
    })?;
    check_growth_bound_with(model, constants, sample_count, sampling_box, seed)
}

pub fn check_growth_bound_with(
    model: &dyn EnergyModel,
    constants: GrowthConstants,
    sample_count: usize,
    sampling_box: &BoxBounds,
    seed: u64,
) -> Result<GrowthReport> {
    if !sampling_box.is_bounded() || sampling_box.dimension() != model.dimension() {
        return Err(Error::Config(
            "growth check needs a bounded sampling box of the model dimension".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_ratio: f64 = 0.0;
    let mut violations = Vec::new();
    for _ in 0..sample_count {
        let t = model.horizon() * rng.random::<f64>();
        let x = sampling_box.sample(&mut rng);
        let power = model.power(t, &x).abs();
        let bound = constants.c1 * model.energy(t, &x) + constants.c2;
        if bound > 0.0 {
            max_ratio = max_ratio.max(power / bound);
        } else if power > 0.0 {
            max_ratio = f64::INFINITY;
        }
        if power > bound + 1e-12 * (1.0 + bound.abs()) {
            violations.push(GrowthViolation { t, x, power, bound });
        }
    }
    Ok(GrowthReport {
        constants,
        samples: sample_count,
        max_ratio,
        violations,
    })
}

/// Affine target path `p(t) = origin + velocity·t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPath {
    pub origin: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl LinearPath {
    pub fn at(&self, t: f64) -> Vec<f64> {
        self.origin
            .iter()
            .zip(&self.velocity)
            .map(|(a, b)| a + b * t)
            .collect()
    }
}

/// `E_t(x) = ½·k·‖x − p(t)‖²` with an affine target path.
#[derive(Debug, Clone)]
pub struct QuadraticTracking {
    path: LinearPath,
    stiffness: f64,
    horizon: f64,
    bounds: BoxBounds,
}

impl QuadraticTracking {
    pub fn new(path: LinearPath, stiffness: f64, horizon: f64) -> Result<Self> {
        let dim = path.origin.len();
        Self::with_bounds(path, stiffness, horizon, BoxBounds::unbounded(dim))
    }

    pub fn with_bounds(
        path: LinearPath,
        stiffness: f64,
        horizon: f64,
        bounds: BoxBounds,
    ) -> Result<Self> {
        let dim = path.origin.len();
        if dim == 0 || path.velocity.len() != dim || bounds.dimension() != dim {
            return Err(Error::Config("tracking path and box must share a positive dimension".into()));
        }
        if !(stiffness > 0.0) || !(horizon > 0.0) {
            return Err(Error::Config("stiffness and horizon must be positive".into()));
        }
        Ok(QuadraticTracking {
            path,
            stiffness,
            horizon,
            bounds,
        })
    }

    /// One-dimensional target moving as `p(t) = t`.
    pub fn unit_speed_1d(horizon: f64) -> Self {
        Self::new(
            LinearPath {
                origin: vec![0.0],
                velocity: vec![1.0],
            },
            1.0,
            horizon,
        )
        .expect("valid tracking parameters")
    }

    /// Time-independent `½·k·‖x‖²`.
    pub fn static_quadratic(dim: usize, stiffness: f64, horizon: f64) -> Result<Self> {
        Self::new(
            LinearPath {
                origin: vec![0.0; dim],
                velocity: vec![0.0; dim],
            },
            stiffness,
            horizon,
        )
    }

    pub fn target(&self, t: f64) -> Vec<f64> {
        self.path.at(t)
    }
}

impl EnergyModel for QuadraticTracking {
    fn name(&self) -> &str {
        "quadratic_tracking"
    }
    fn dimension(&self) -> usize {
        self.path.origin.len()
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn bounds(&self) -> &BoxBounds {
        &self.bounds
    }

    fn energy(&self, t: f64, x: &[f64]) -> f64 {
        0.5 * self.stiffness * dist_sq(x, &self.path.at(t))
    }

    fn power(&self, t: f64, x: &[f64]) -> f64 {
        let p = self.path.at(t);
        -self.stiffness
            * x.iter()
                .zip(&p)
                .zip(&self.path.velocity)
                .map(|((xi, pi), vi)| (xi - pi) * vi)
                .sum::<f64>()
    }

    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let p = self.path.at(t);
        for ((o, xi), pi) in out.iter_mut().zip(x).zip(&p) {
            *o = self.stiffness * (xi - pi);
        }
    }

    fn growth_constants(&self) -> Option<GrowthConstants> {
        // k·r·|v| ≤ k·r² + k·|v|²/4
        let speed_sq: f64 = self.path.velocity.iter().map(|v| v * v).sum();
        Some(GrowthConstants {
            c1: 2.0,
            c2: 0.25 * self.stiffness * speed_sq,
        })
    }

    fn slope_lipschitz(&self) -> Option<f64> {
        Some(self.stiffness)
    }
}

/// One-dimensional double well `E_t(x) = (x² − 1)² + a·t·x + c` on `[−R, R]`.
///
/// `a = 0` gives the static double well, `a = 1` the tilted one. The offset
/// `c` only shifts energies; [`DoubleWell::tilted_normalized`] uses
/// `c = |a|·T·R`, which makes the energy nonnegative on the whole box.
#[derive(Debug, Clone)]
pub struct DoubleWell {
    name: &'static str,
    tilt: f64,
    offset: f64,
    radius: f64,
    horizon: f64,
    bounds: BoxBounds,
}

impl DoubleWell {
    fn build(name: &'static str, tilt: f64, offset: f64, radius: f64, horizon: f64) -> Result<Self> {
        if !(radius > 0.0) || !(horizon > 0.0) {
            return Err(Error::Config("double well needs positive radius and horizon".into()));
        }
        Ok(DoubleWell {
            name,
            tilt,
            offset,
            radius,
            horizon,
            bounds: BoxBounds::uniform(1, -radius, radius),
        })
    }

    pub fn static_well(radius: f64, horizon: f64) -> Result<Self> {
        Self::build("static_double_well", 0.0, 0.0, radius, horizon)
    }

    pub fn tilted(radius: f64, horizon: f64) -> Result<Self> {
        Self::build("tilted_double_well", 1.0, 0.0, radius, horizon)
    }

    pub fn tilted_normalized(radius: f64, horizon: f64) -> Result<Self> {
        Self::build("tilted_double_well", 1.0, horizon * radius, radius, horizon)
    }

    pub fn with_tilt(tilt: f64, offset: f64, radius: f64, horizon: f64) -> Result<Self> {
        let name = if tilt == 0.0 {
            "static_double_well"
        } else {
            "tilted_double_well"
        };
        Self::build(name, tilt, offset, radius, horizon)
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn tilt(&self) -> f64 {
        self.tilt
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Earliest time at which the right well (x > 0) disappears,
    /// `8 / (3√3·a)` for `a > 0`.
    pub fn barrier_flattening_time(&self) -> Option<f64> {
        (self.tilt > 0.0).then(|| 8.0 / (3.0 * 3f64.sqrt() * self.tilt))
    }
}

impl EnergyModel for DoubleWell {
    fn name(&self) -> &str {
        self.name
    }
    fn dimension(&self) -> usize {
        1
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn bounds(&self) -> &BoxBounds {
        &self.bounds
    }

    fn energy(&self, t: f64, x: &[f64]) -> f64 {
        let w = x[0] * x[0] - 1.0;
        w * w + self.tilt * t * x[0] + self.offset
    }

    fn power(&self, _t: f64, x: &[f64]) -> f64 {
        self.tilt * x[0]
    }

    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]) {
        out[0] = 4.0 * x[0] * (x[0] * x[0] - 1.0) + self.tilt * t;
    }

    fn growth_constants(&self) -> Option<GrowthConstants> {
        if self.tilt == 0.0 {
            Some(GrowthConstants { c1: 0.0, c2: 0.0 })
        } else {
            Some(GrowthConstants {
                c1: 1.0,
                c2: self.tilt.abs() * self.radius,
            })
        }
    }

    fn slope_lipschitz(&self) -> Option<f64> {
        // sup |E''| = sup |12x² − 4| on [−R, R]
        Some((12.0 * self.radius * self.radius - 4.0).max(4.0))
    }
}
