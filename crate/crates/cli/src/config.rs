//! Run configuration: one JSON file, with every default materialized into
//! the effective config written next to the artifacts.

use std::path::{Path, PathBuf};

use log::warn;
use qse_core::action::{ChainOptions, InequalityOptions, JumpOptions, PathOptions};
use qse_core::energy::{BoxBounds, DoubleWell, EnergyModel, LinearPath, QuadraticTracking};
use qse_core::rod::{Rod, RodConfig};
use qse_core::{Error, Result, TransitionRule};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// `(x² − 1)² + tilt·t·x + offset` on `[−radius, radius]`; the offset
    /// defaults to `|tilt|·horizon·radius`.
    DoubleWell {
        radius: f64,
        horizon: f64,
        #[serde(default)]
        tilt: f64,
        #[serde(default)]
        offset: Option<f64>,
    },
    QuadraticTracking {
        stiffness: f64,
        horizon: f64,
        origin: Vec<f64>,
        velocity: Vec<f64>,
        #[serde(default)]
        lower: Option<Vec<f64>>,
        #[serde(default)]
        upper: Option<Vec<f64>>,
    },
    Rod(RodConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActionConfig {
    pub t: f64,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    /// Step of the chain actions; the rule's τ when absent.
    pub tau: Option<f64>,
    pub chain: ChainOptions,
    pub path: PathOptions,
    /// Oracle grid size for one-dimensional models.
    pub grid_points: usize,
}

impl Default for ActionConfig {
    fn default() -> Self {
        ActionConfig {
            t: 0.0,
            x1: vec![-1.0],
            x2: vec![1.0],
            tau: None,
            chain: ChainOptions::default(),
            path: PathOptions::default(),
            grid_points: 301,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Frozen time of the inequality suite.
    pub t: f64,
    /// Step of the inequality suite; the rule's τ when absent.
    pub tau: Option<f64>,
    pub inequalities: InequalityOptions,
    pub balance_pairs: usize,
    pub jump: JumpOptions,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            t: 0.0,
            tau: Some(0.02),
            inequalities: InequalityOptions::default(),
            balance_pairs: 50,
            jump: JumpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub rule: TransitionRule,
    /// Energy-clock steps, sorted descending once normalized.
    pub deltas: Vec<f64>,
    /// Initial state; the model's default stationary state when absent.
    pub x0: Option<Vec<f64>>,
    pub output: PathBuf,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    /// Sample times of the power and energy-sum series.
    pub samples: usize,
    pub action: ActionConfig,
    pub verify: VerifyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelSpec::DoubleWell { radius: 1.5, horizon: 2.0, tilt: 1.0, offset: None },
            rule: TransitionRule::mms(0.1),
            deltas: vec![0.1, 0.05, 0.025],
            x0: None,
            output: PathBuf::from("out"),
            seed: 0,
            jobs: 0,
            samples: 1000,
            action: ActionConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

/// Built energy, keeping the concrete rod for its geometry.
pub enum Model {
    Generic(Box<dyn EnergyModel>),
    Rod(Rod),
}

impl Model {
    pub fn as_dyn(&self) -> &dyn EnergyModel {
        match self {
            Model::Generic(m) => m.as_ref(),
            Model::Rod(r) => r,
        }
    }

    pub fn rod(&self) -> Option<&Rod> {
        match self {
            Model::Rod(r) => Some(r),
            Model::Generic(_) => None,
        }
    }
}

/// The rod reproduction: BDF2 with `τ = 0.1`, the plain energy stop
/// `ε_stop = 1e-5` and `δ ∈ {1/15, …, 1/240}`.
pub fn rod_preset() -> RunConfig {
    RunConfig {
        model: ModelSpec::Rod(RodConfig::default()),
        rule: TransitionRule::bdf2(0.1).with_energy_stop(1e-5),
        deltas: [15.0, 30.0, 60.0, 120.0, 240.0].iter().map(|n| 1.0 / n).collect(),
        x0: None,
        output: PathBuf::from("out"),
        seed: 0,
        jobs: 0,
        samples: 1000,
        action: ActionConfig::default(),
        verify: VerifyConfig { tau: None, ..VerifyConfig::default() },
    }
}

/// Parses a δ list such as `1/15,1/30,0.01`.
pub fn parse_deltas(list: &str) -> Result<Vec<f64>> {
    list.split(',')
        .map(|item| {
            let item = item.trim();
            let value = match item.split_once('/') {
                Some((a, b)) => {
                    let (a, b): (f64, f64) = (parse_number(a)?, parse_number(b)?);
                    a / b
                }
                None => parse_number(item)?,
            };
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!("delta `{item}` must be positive")));
            }
            Ok(value)
        })
        .collect()
}

fn parse_number(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Config(format!("`{s}` is not a number")))
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The rod seed follows the run seed.
    fn apply_seed(&mut self) {
        if let ModelSpec::Rod(rod) = &mut self.model {
            rod.seed = self.seed;
        }
        self.verify.inequalities.seed = self.seed;
        self.action.path.seed = self.seed;
    }

    pub fn build_model(&self) -> Result<Model> {
        Ok(match &self.model {
            &ModelSpec::DoubleWell { radius, horizon, tilt, offset } => {
                let offset = offset.unwrap_or(tilt.abs() * horizon * radius);
                Model::Generic(Box::new(DoubleWell::with_tilt(tilt, offset, radius, horizon)?))
            }
            ModelSpec::QuadraticTracking { stiffness, horizon, origin, velocity, lower, upper } => {
                let dim = origin.len();
                let mut bounds = BoxBounds::unbounded(dim);
                if let Some(l) = lower {
                    bounds.lower = l.clone();
                }
                if let Some(u) = upper {
                    bounds.upper = u.clone();
                }
                if bounds.lower.len() != dim || bounds.upper.len() != dim {
                    return Err(Error::Config("tracking bounds must match the dimension".into()));
                }
                let path = LinearPath { origin: origin.clone(), velocity: velocity.clone() };
                Model::Generic(Box::new(QuadraticTracking::with_bounds(path, *stiffness, *horizon, bounds)?))
            }
            ModelSpec::Rod(config) => Model::Rod(Rod::new(config.clone())?),
        })
    }

    /// Validates, applies the seed, sorts the δ list and materializes `x0`.
    pub fn normalize(&mut self) -> Result<Model> {
        self.apply_seed();
        if self.deltas.is_empty() {
            return Err(Error::Config("at least one delta is required".into()));
        }
        if let Some(bad) = self.deltas.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(Error::Config(format!("delta {bad} must be positive")));
        }
        if self.deltas.windows(2).any(|w| w[0] < w[1]) {
            warn!("delta list reordered to descending");
        }
        self.deltas.sort_by(|a, b| b.total_cmp(a));
        self.deltas.dedup();
        if self.samples < 2 {
            return Err(Error::Config("samples must be at least 2".into()));
        }
        let model = self.build_model()?;
        self.rule.validate(Some(model.as_dyn()))?;
        if self.x0.is_none() {
            self.x0 = Some(match &model {
                Model::Rod(rod) => rod.initial_state()?.into_inner(),
                Model::Generic(m) => match &self.model {
                    ModelSpec::DoubleWell { .. } => vec![1.0],
                    ModelSpec::QuadraticTracking { origin, .. } => origin.clone(),
                    ModelSpec::Rod(_) => unreachable!(),
                }
                .into_iter()
                .take(m.dimension())
                .collect(),
            });
        }
        Ok(model)
    }

    pub fn x0(&self) -> &[f64] {
        self.x0.as_deref().unwrap_or(&[])
    }

    pub fn action_tau(&self) -> f64 {
        self.action.tau.or(self.rule.scheme.tau()).unwrap_or(0.1)
    }

    pub fn verify_tau(&self) -> f64 {
        self.verify.tau.or(self.rule.scheme.tau()).unwrap_or(0.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractions_parse() {
        let d = parse_deltas("1/15, 0.5,1/240").unwrap();
        assert_eq!(d, vec![1.0 / 15.0, 0.5, 1.0 / 240.0]);
        assert!(parse_deltas("0").is_err());
        assert!(parse_deltas("a/b").is_err());
    }

    #[test]
    fn defaults_materialize_and_round_trip() {
        let mut c = RunConfig { deltas: vec![0.05, 0.1], ..RunConfig::default() };
        c.normalize().unwrap();
        assert_eq!(c.deltas, vec![0.1, 0.05]);
        assert_eq!(c.x0, Some(vec![1.0]));
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn unknown_fields_are_config_errors() {
        assert!(matches!(RunConfig::from_json(r#"{"delta": [0.1]}"#), Err(Error::Config(_))));
        let c = RunConfig::from_json(r#"{"model": {"kind": "double_well", "radius": 1.5, "horizon": 1.0}}"#).unwrap();
        assert_eq!(c.rule, TransitionRule::mms(0.1));
    }
}
