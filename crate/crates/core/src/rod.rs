//! Elastic rod fracture model.
//!
//! A chain of `n` particles joined by `n − 1` springs. Spring `i` carries a
//! fracture variable `z_i ∈ [0, 1]` and contributes
//! `z_i σ_i + (1 − z_i) · ½k(|x_{i+1} − x_i| − l̄)²`. The two end particles
//! are pulled apart vertically: `x_1(t) = (0, −t·h)`, `x_n(t) = (1, t·h)`.
//!
//! The state vector stores the inner positions `x_2 … x_{n−1}` (each with
//! `dim` coordinates) followed by `z_1 … z_{n−1}`.

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::energy::{BoxBounds, EnergyModel, GrowthConstants, Point};
use crate::error::{Error, Result};
use crate::evolution::INIT_TOL;
use crate::transition::gradient_flow_relax;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RodConfig {
    pub particles: usize,
    pub stiffness: f64,
    pub rest_length: f64,
    pub sigma_bar: f64,
    /// Standard deviation of the surface-energy noise.
    pub sigma_noise: f64,
    pub pull_rate: f64,
    pub seed: u64,
    pub horizon: f64,
    pub dim: usize,
}

impl Default for RodConfig {
    fn default() -> Self {
        RodConfig {
            particles: 10,
            stiffness: 100.0,
            rest_length: 1.0 / 9.0,
            sigma_bar: 0.5,
            sigma_noise: 0.01,
            pull_rate: 1.0,
            seed: 0,
            horizon: 1.5,
            dim: 2,
        }
    }
}

impl RodConfig {
    pub fn validate(&self) -> Result<()> {
        let problems = [
            (self.particles < 3, "at least 3 particles are required"),
            (!(self.stiffness > 0.0), "stiffness must be positive"),
            (!(self.rest_length > 0.0), "rest length must be positive"),
            (!(self.sigma_bar > 0.0), "sigma_bar must be positive"),
            (!(self.sigma_noise >= 0.0), "sigma_noise must be nonnegative"),
            (!(self.pull_rate > 0.0), "pull rate must be positive"),
            (!(self.horizon > 0.0), "horizon must be positive"),
            (self.dim < 2, "rod positions need at least 2 coordinates"),
        ];
        if let Some((_, msg)) = problems.iter().find(|(bad, _)| *bad) {
            return Err(Error::Config((*msg).into()));
        }
        if self.sigma_noise >= self.sigma_bar {
            warn!("sigma_noise >= sigma_bar; surface energies are clipped at zero");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Rod {
    config: RodConfig,
    sigma: Vec<f64>,
    bounds: BoxBounds,
}

impl Rod {
    pub fn new(config: RodConfig) -> Result<Self> {
        config.validate()?;
        let springs = config.particles - 1;
        let sigma = if config.sigma_noise == 0.0 {
            vec![config.sigma_bar; springs]
        } else {
            let normal = Normal::new(config.sigma_bar, config.sigma_noise)
                .map_err(|e| Error::Config(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let lo = (config.sigma_bar - 3.0 * config.sigma_noise).max(0.0);
            let hi = config.sigma_bar + 3.0 * config.sigma_noise;
            (0..springs).map(|_| normal.sample(&mut rng).clamp(lo, hi)).collect()
        };
        Ok(Self::assemble(config, sigma))
    }

    /// Rod with explicitly prescribed surface energies.
    pub fn with_surface_energies(config: RodConfig, sigma: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if sigma.len() != config.particles - 1 || sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config("one nonnegative surface energy per spring expected".into()));
        }
        Ok(Self::assemble(config, sigma))
    }

    fn assemble(config: RodConfig, sigma: Vec<f64>) -> Self {
        let npos = (config.particles - 2) * config.dim;
        let nz = config.particles - 1;
        let mut bounds = BoxBounds::unbounded(npos + nz);
        for j in npos..npos + nz {
            bounds.lower[j] = 0.0;
            bounds.upper[j] = 1.0;
        }
        Rod { config, sigma, bounds }
    }

    pub fn config(&self) -> &RodConfig {
        &self.config
    }

    pub fn surface_energies(&self) -> &[f64] {
        &self.sigma
    }

    pub fn springs(&self) -> usize {
        self.config.particles - 1
    }

    fn position_len(&self) -> usize {
        (self.config.particles - 2) * self.config.dim
    }

    pub fn fracture<'a>(&self, state: &'a [f64]) -> &'a [f64] {
        &state[self.position_len()..]
    }

    fn endpoint(&self, t: f64, last: bool) -> Vec<f64> {
        let mut p = vec![0.0; self.config.dim];
        let lift = t * self.config.pull_rate;
        if last {
            p[0] = 1.0;
            p[1] = lift;
        } else {
            p[1] = -lift;
        }
        p
    }

    /// All `n` particle positions, endpoints included.
    pub fn particles(&self, t: f64, state: &[f64]) -> Vec<Vec<f64>> {
        let d = self.config.dim;
        let mut out = Vec::with_capacity(self.config.particles);
        out.push(self.endpoint(t, false));
        out.extend(state[..self.position_len()].chunks(d).map(|c| c.to_vec()));
        out.push(self.endpoint(t, true));
        out
    }

    /// Spring vectors `x_{i+1} − x_i` and their lengths.
    fn springs_at(&self, t: f64, state: &[f64]) -> Vec<(Vec<f64>, f64)> {
        let p = self.particles(t, state);
        p.windows(2)
            .map(|w| {
                let v: Vec<f64> = w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect();
                let len = v.iter().map(|c| c * c).sum::<f64>().sqrt();
                (v, len)
            })
            .collect()
    }

    pub fn spring_lengths(&self, t: f64, state: &[f64]) -> Vec<f64> {
        self.springs_at(t, state).into_iter().map(|(_, l)| l).collect()
    }

    /// Elastic potentials `½k(ℓ_i − l̄)²` of the intact springs.
    pub fn spring_potentials(&self, t: f64, state: &[f64]) -> Vec<f64> {
        self.spring_lengths(t, state)
            .into_iter()
            .map(|l| self.potential(l))
            .collect()
    }

    fn potential(&self, length: f64) -> f64 {
        let s = length - self.config.rest_length;
        0.5 * self.config.stiffness * s * s
    }

    /// `(1 − z_i) k (ℓ_i − l̄) u_i` with `u_i` the unit spring direction.
    fn tensions(&self, t: f64, state: &[f64]) -> Vec<Vec<f64>> {
        let z = self.fracture(state);
        self.springs_at(t, state)
            .into_iter()
            .enumerate()
            .map(|(i, (v, len))| {
                if len == 0.0 {
                    warn!("coincident particles on spring {i}; spring direction set to zero");
                    return vec![0.0; v.len()];
                }
                let c = (1.0 - z[i]) * self.config.stiffness * (len - self.config.rest_length) / len;
                v.into_iter().map(|c_j| c * c_j).collect()
            })
            .collect()
    }

    /// Indices of springs with `z_i ≥ 1 − tol`.
    pub fn broken_springs(&self, state: &[f64], tol: f64) -> Vec<usize> {
        self.fracture(state)
            .iter()
            .enumerate()
            .filter(|(_, z)| **z >= 1.0 - tol)
            .map(|(i, _)| i)
            .collect()
    }

    /// Equidistant intact configuration between the endpoints at `t`.
    pub fn straight_state(&self, t: f64) -> Point {
        let n = self.config.particles;
        let a = self.endpoint(t, false);
        let b = self.endpoint(t, true);
        let mut x = Vec::with_capacity(self.bounds.dimension());
        for j in 1..n - 1 {
            let s = j as f64 / (n - 1) as f64;
            x.extend(a.iter().zip(&b).map(|(p, q)| p + s * (q - p)));
        }
        x.extend(std::iter::repeat_n(0.0, n - 1));
        Point(x)
    }

    /// Equidistant intact rod at `t = 0`, relaxed by gradient flow until its
    /// slope is at most the evolution's initial tolerance.
    pub fn initial_state(&self) -> Result<Point> {
        let x = self.straight_state(0.0);
        let step = 0.5 / self.config.stiffness;
        let (y, _) = gradient_flow_relax(self, 0.0, &x, step, INIT_TOL * 0.5, 1_000_000)?;
        Ok(y)
    }
}

impl EnergyModel for Rod {
    fn name(&self) -> &str {
        "rod"
    }
    fn dimension(&self) -> usize {
        self.bounds.dimension()
    }
    fn horizon(&self) -> f64 {
        self.config.horizon
    }
    fn bounds(&self) -> &BoxBounds {
        &self.bounds
    }

    fn energy(&self, t: f64, x: &[f64]) -> f64 {
        let z = self.fracture(x);
        self.spring_lengths(t, x)
            .into_iter()
            .enumerate()
            .map(|(i, l)| z[i] * self.sigma[i] + (1.0 - z[i]) * self.potential(l))
            .sum()
    }

    fn power(&self, t: f64, x: &[f64]) -> f64 {
        let f = self.tensions(t, x);
        let h = self.config.pull_rate;
        // ∂E/∂x_1 = −f_1 moving with (0, −h); ∂E/∂x_n = f_{n−1} moving with (0, h)
        h * (f[0][1] + f[f.len() - 1][1])
    }

    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.config.dim;
        let npos = self.position_len();
        out.iter_mut().for_each(|g| *g = 0.0);
        for (i, f) in self.tensions(t, x).iter().enumerate() {
            // spring i joins particle i (0-based) and i + 1; inner particle
            // j ≥ 1 occupies slots (j − 1)·d ..
            if i >= 1 {
                let base = (i - 1) * d;
                for c in 0..d {
                    out[base + c] -= f[c];
                }
            }
            if i < self.config.particles - 2 {
                let base = i * d;
                for c in 0..d {
                    out[base + c] += f[c];
                }
            }
        }
        for (i, p) in self.spring_potentials(t, x).into_iter().enumerate() {
            out[npos + i] = self.sigma[i] - p;
        }
    }

    fn growth_constants(&self) -> Option<GrowthConstants> {
        // |(1−z)k(ℓ−l̄)h| ≤ (1−z)½k(ℓ−l̄)² + ½kh² for each moving end spring
        let k = self.config.stiffness;
        let h = self.config.pull_rate;
        Some(GrowthConstants { c1: 1.0, c2: k * h * h })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn quiet(n: usize) -> RodConfig {
        RodConfig {
            particles: n,
            rest_length: 1.0 / (n - 1) as f64,
            sigma_noise: 0.0,
            ..RodConfig::default()
        }
    }

    fn random_state<R: Rng>(rod: &Rod, rng: &mut R) -> Point {
        let mut x = rod.straight_state(0.7).into_inner();
        let npos = rod.position_len();
        for v in x.iter_mut().take(npos) {
            *v += 0.05 * (rng.random::<f64>() - 0.5);
        }
        for v in x.iter_mut().skip(npos) {
            *v = rng.random::<f64>();
        }
        Point(x)
    }

    #[test]
    fn energy_examples() {
        let rod = Rod::new(RodConfig::default()).unwrap();
        let mut x = rod.straight_state(0.0).into_inner();
        assert!(rod.energy(0.0, &x).abs() < 1e-24);
        let npos = rod.position_len();
        x[npos..].iter_mut().for_each(|z| *z = 1.0);
        let total: f64 = rod.surface_energies().iter().sum();
        assert!((rod.energy(0.6, &x) - total).abs() < 1e-14);

        let small = Rod::new(RodConfig {
            particles: 3,
            stiffness: 1.0,
            rest_length: 0.5,
            ..quiet(3)
        })
        .unwrap();
        assert_eq!(small.energy(0.0, &[0.5, 0.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn surface_noise_is_seeded_and_clipped() {
        let a = Rod::new(RodConfig { seed: 7, ..RodConfig::default() }).unwrap();
        let b = Rod::new(RodConfig { seed: 7, ..RodConfig::default() }).unwrap();
        let c = Rod::new(RodConfig { seed: 8, ..RodConfig::default() }).unwrap();
        assert_eq!(a.surface_energies(), b.surface_energies());
        assert_ne!(a.surface_energies(), c.surface_energies());
        for s in a.surface_energies() {
            assert!((0.47..=0.53).contains(s));
        }
    }

    #[test]
    fn rest_configuration_has_zero_gradient_and_power() {
        let rod = Rod::new(quiet(6)).unwrap();
        let x = rod.straight_state(0.0);
        let g = rod.gradient_vec(0.0, &x);
        let npos = rod.position_len();
        assert!(g[..npos].iter().all(|v| v.abs() < 1e-12));
        assert!(g[npos..].iter().all(|v| (*v - 0.5).abs() < 1e-12));
        assert_eq!(rod.slope_unchecked(0.0, &x), g[..npos].iter().map(|v| v * v).sum::<f64>().sqrt());
        assert!(rod.power(0.0, &x).abs() < 1e-12);
    }

    #[test]
    fn fully_broken_rod_has_no_power() {
        let rod = Rod::new(RodConfig::default()).unwrap();
        let mut x = rod.straight_state(0.9).into_inner();
        let npos = rod.position_len();
        x[npos..].iter_mut().for_each(|z| *z = 1.0);
        assert_eq!(rod.power(0.9, &x), 0.0);
    }

    #[test]
    fn derivatives_match_central_differences() {
        let rod = Rod::new(RodConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-5;
        for _ in 0..100 {
            let t = 0.1 + 1.3 * rng.random::<f64>();
            let x = random_state(&rod, &mut rng);
            let g = rod.gradient_vec(t, &x);
            let mut probe = x.clone().into_inner();
            let mut err = 0.0;
            for j in 0..x.len() {
                probe[j] = x[j] + h;
                let up = rod.energy(t, &probe);
                probe[j] = x[j] - h;
                let down = rod.energy(t, &probe);
                probe[j] = x[j];
                err += ((up - down) / (2.0 * h) - g[j]).powi(2);
            }
            let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(err.sqrt() / (1.0 + gn) <= 1e-6, "{}", err.sqrt());
            let p = rod.power(t, &x);
            let fd = (rod.energy(t + h, &x) - rod.energy(t - h, &x)) / (2.0 * h);
            assert!((p - fd).abs() / (1.0 + p.abs()) <= 1e-6);
        }
    }

    #[test]
    fn initial_state_is_stationary_and_intact() {
        let rod = Rod::new(RodConfig::default()).unwrap();
        let x = rod.initial_state().unwrap();
        assert!(rod.slope_unchecked(0.0, &x) <= INIT_TOL);
        assert!(rod.broken_springs(&x, 1e-6).is_empty());

        // pre-compressed chain stays intact
        let rod = Rod::new(RodConfig { rest_length: 0.12, ..RodConfig::default() }).unwrap();
        let x = rod.initial_state().unwrap();
        assert!(rod.slope_unchecked(0.0, &x) <= INIT_TOL);
        assert!(rod.fracture(&x).iter().all(|z| *z == 0.0));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(Rod::new(RodConfig { particles: 2, ..RodConfig::default() }).is_err());
        assert!(Rod::new(RodConfig { stiffness: 0.0, ..RodConfig::default() }).is_err());
        assert!(Rod::new(RodConfig { dim: 1, ..RodConfig::default() }).is_err());
        assert!(Rod::with_surface_energies(RodConfig::default(), vec![0.5; 3]).is_err());
    }
}

#[cfg(test)]
mod properties {
    use super::*;
    use crate::transition::{apply_transition, TransitionRule};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn fracture_variables_end_binary(t in 0.3..1.5f64, seed in 0u64..1000, bdf2 in any::<bool>()) {
            let rod = Rod::new(RodConfig { seed, ..RodConfig::default() }).unwrap();
            let x = rod.initial_state().unwrap();
            let rule = if bdf2 { TransitionRule::bdf2(0.1) } else { TransitionRule::mms(0.1) };
            let y = apply_transition(&rule, &rod, t, &x).unwrap().output;
            for z in rod.fracture(&y) {
                prop_assert!(z.abs() <= 1e-9 || (1.0 - z).abs() <= 1e-9, "z = {z}");
            }
        }

        #[test]
        fn surface_energies_follow_the_seed(seed in any::<u64>()) {
            let a = Rod::new(RodConfig { seed, ..RodConfig::default() }).unwrap();
            let b = Rod::new(RodConfig { seed, ..RodConfig::default() }).unwrap();
            prop_assert_eq!(a.surface_energies(), b.surface_energies());
        }

        #[test]
        fn broken_rest_rod_stores_only_surface_energy(mask in prop::collection::vec(any::<bool>(), 9), seed in 0u64..100) {
            let rod = Rod::new(RodConfig { seed, ..RodConfig::default() }).unwrap();
            let mut x = rod.straight_state(0.0).into_inner();
            let npos = rod.position_len();
            for (z, broken) in x[npos..].iter_mut().zip(&mask) {
                *z = if *broken { 1.0 } else { 0.0 };
            }
            let expected: f64 = rod.surface_energies().iter().zip(&mask).filter(|(_, b)| **b).map(|(s, _)| s).sum();
            prop_assert!((rod.energy(0.0, &x) - expected).abs() <= 1e-12);
        }
    }
}
