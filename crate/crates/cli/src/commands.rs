//! Subcommand drivers. δ values run on the worker pool; every artifact is
//! written afterwards by the calling thread.

use std::path::{Path, PathBuf};

use log::{info, warn};
use qse_core::action::{
    action_bdf2, action_gf, action_mms, dp_oracle_1d, exact_gf_action_1d, verify_inequalities,
    verify_jump_characterization, ActionEstimate, ChainScheme, DpResult, Grid, InequalityReport,
    JumpReport, JumpStatus,
};
use qse_core::balance::{
    balance_suite, compute_d, compute_mu, energy_sums, sample_times, sweep_diagnostics,
    total_variation, BalanceSuite, Quadrature, SweepDiagnostics, VariationReport,
};
use qse_core::evolution::{check_gronwall, GronwallCheck};
use qse_core::{run_evolution, DiscreteEvolution, EnergyModel, Error, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Model, RunConfig};
use crate::export::{self, KeyFrame};

/// Largest residual accepted by the balance suite.
pub const BALANCE_ABS_TOL: f64 = 1e-6;
/// Largest residual, in units of the quadrature error estimate.
pub const BALANCE_ERROR_RATIO: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Evolve,
    Sweep,
    Action,
    Verify,
    Rod,
}

/// Result of a command that completed; `passed` is false when a checked
/// property failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeltaBalance {
    pub delta: f64,
    pub transitions: usize,
    pub all_stationary: bool,
    pub mu_total: f64,
    pub atoms: usize,
    pub clipped: usize,
    pub balance: BalanceSuite,
    pub balance_passed: bool,
    /// Largest gap between the paired series `E_t(η)` and
    /// `E_0 + ∫D − μ([0, t])` over the sample times.
    pub max_energy_sum_residual: f64,
    pub gronwall: Option<GronwallCheck>,
    pub variation: VariationReport,
}

impl DeltaBalance {
    fn passed(&self) -> bool {
        self.balance_passed && self.variation.holds && self.gronwall.is_none_or(|g| g.holds)
    }
}

fn delta_dir(out: &Path, index: usize) -> PathBuf {
    out.join(format!("delta_{index:02}"))
}

fn run_deltas(config: &RunConfig, model: &dyn EnergyModel) -> Vec<Result<DiscreteEvolution>> {
    config
        .deltas
        .par_iter()
        .map(|&delta| {
            info!("running delta = {delta}");
            run_evolution(model, &config.rule, config.x0(), delta)
        })
        .collect()
}

/// Balance report and the `(file name, contents)` artifacts of one run.
type Analysis = (DeltaBalance, Vec<(String, String)>);

fn analyze(
    evo: &DiscreteEvolution,
    model: &dyn EnergyModel,
    config: &RunConfig,
    index: usize,
) -> Result<Analysis> {
    let quadrature = Quadrature::default();
    let times = sample_times(evo.horizon, config.samples);
    let mu = compute_mu(evo, model);
    let power = times.iter().map(|&t| compute_d(evo, model, t)).collect::<Result<Vec<_>>>()?;
    let sums = energy_sums(evo, model, &times, &quadrature)?;
    let balance = balance_suite(evo, model, config.verify.balance_pairs, config.seed.wrapping_add(index as u64), &quadrature)?;
    let report = DeltaBalance {
        delta: evo.delta,
        transitions: evo.transitions(),
        all_stationary: evo.all_stationary(),
        mu_total: mu.total(),
        atoms: mu.atoms.len(),
        clipped: mu.clipped.len(),
        balance_passed: balance.max_abs_residual <= BALANCE_ABS_TOL
            && balance.max_error_ratio <= BALANCE_ERROR_RATIO,
        balance,
        max_energy_sum_residual: sums.iter().map(|s| (s.energy - s.reconstructed).abs()).fold(0.0, f64::max),
        gronwall: check_gronwall(evo, model),
        variation: total_variation(evo, model, 8),
    };
    let files = vec![
        ("trajectory.csv".to_string(), export::trajectory_csv(evo, model)),
        ("mu.csv".to_string(), export::mu_csv(&mu)),
        ("power.csv".to_string(), export::power_csv(&times, &power)),
        ("energy_sums.csv".to_string(), export::energy_sums_csv(&sums)),
    ];
    Ok((report, files))
}

/// Runs every δ, writes the per-δ artifacts and returns the completed
/// evolutions with their balance reports. A failed run still leaves its
/// partial trajectory and μ on disk.
fn evolve_all(
    config: &RunConfig,
    model: &dyn EnergyModel,
) -> Result<(Vec<DiscreteEvolution>, Vec<DeltaBalance>)> {
    let runs = run_deltas(config, model);
    let analyses: Vec<Option<Result<Analysis>>> = runs
        .par_iter()
        .enumerate()
        .map(|(i, r)| r.as_ref().ok().map(|evo| analyze(evo, model, config, i)))
        .collect();
    let mut evolutions = Vec::new();
    let mut reports = Vec::new();
    let mut failure = None;
    for (i, (run, analysis)) in runs.into_iter().zip(analyses).enumerate() {
        let dir = delta_dir(&config.output, i);
        match (run, analysis) {
            (Ok(evo), Some(analysis)) => {
                let (report, files) = analysis?;
                for (name, text) in files {
                    export::write_text(&dir.join(name), &text)?;
                }
                export::write_json(&dir.join("balance.json"), &report)?;
                evolutions.push(evo);
                reports.push(report);
            }
            (Err(Error::Evolution { node, partial, source }), _) => {
                warn!("delta {} failed at node {node}: {source}", config.deltas[i]);
                export::write_text(&dir.join("trajectory.csv"), &export::trajectory_csv(&partial, model))?;
                export::write_text(&dir.join("mu.csv"), &export::mu_csv(&compute_mu(&partial, model)))?;
                failure.get_or_insert(Error::Evolution { node, partial, source });
            }
            (Err(e), _) => {
                failure.get_or_insert(e);
            }
            (Ok(_), None) => unreachable!("every completed run is analyzed"),
        }
    }
    match failure {
        Some(e) => Err(e),
        None => Ok((evolutions, reports)),
    }
}

pub fn evolve(config: &RunConfig, model: &Model) -> Result<Outcome> {
    evolve_all(config, model.as_dyn())?;
    Ok(Outcome { passed: true })
}

fn sweep_report(
    config: &RunConfig,
    model: &dyn EnergyModel,
) -> Result<(Vec<DiscreteEvolution>, Vec<DeltaBalance>, SweepDiagnostics)> {
    if config.deltas.len() < 2 {
        return Err(Error::Config("a sweep needs at least two deltas".into()));
    }
    let (evolutions, reports) = evolve_all(config, model)?;
    let diagnostics = sweep_diagnostics(&evolutions, model, config.samples)?;
    export::write_json(&config.output.join("sweep.json"), &diagnostics)?;
    Ok((evolutions, reports, diagnostics))
}

pub fn sweep(config: &RunConfig, model: &Model) -> Result<Outcome> {
    sweep_report(config, model.as_dyn())?;
    Ok(Outcome { passed: true })
}

#[derive(Debug, Serialize)]
struct OracleValues {
    grid_points: usize,
    mms: DpResult,
    bdf2: DpResult,
    gradient_flow_exact: f64,
}

#[derive(Debug, Serialize)]
struct ActionArtifact {
    t: f64,
    tau: f64,
    x1: Vec<f64>,
    x2: Vec<f64>,
    gradient_flow: ActionEstimate,
    mms: ActionEstimate,
    bdf2: ActionEstimate,
    oracle: Option<OracleValues>,
}

pub fn action(config: &RunConfig, model: &Model) -> Result<Outcome> {
    let m = model.as_dyn();
    let a = &config.action;
    if a.x1.len() != m.dimension() || a.x2.len() != m.dimension() {
        return Err(Error::Config(format!("action endpoints must have dimension {}", m.dimension())));
    }
    let tau = config.action_tau();
    let (gf, (mms, bdf2)) = rayon::join(
        || action_gf(m, a.t, &a.x1, &a.x2, &a.path),
        || {
            rayon::join(
                || action_mms(m, a.t, &a.x1, &a.x2, tau, &a.chain),
                || action_bdf2(m, a.t, &a.x1, &a.x2, tau, &a.chain),
            )
        },
    );
    let oracle = if m.dimension() == 1 {
        let b = m.bounds();
        let grid = Grid::new(b.lower[0], b.upper[0], a.grid_points)?;
        Some(OracleValues {
            grid_points: a.grid_points,
            mms: dp_oracle_1d(m, a.t, grid, a.x1[0], a.x2[0], tau, ChainScheme::Mms, None)?,
            bdf2: dp_oracle_1d(m, a.t, grid, a.x1[0], a.x2[0], tau, ChainScheme::Bdf2, None)?,
            gradient_flow_exact: exact_gf_action_1d(m, a.t, a.x1[0], a.x2[0])?,
        })
    } else {
        None
    };
    let artifact = ActionArtifact {
        t: a.t,
        tau,
        x1: a.x1.clone(),
        x2: a.x2.clone(),
        gradient_flow: gf?,
        mms: mms?,
        bdf2: bdf2?,
        oracle,
    };
    export::write_json(&config.output.join("action.json"), &artifact)?;
    Ok(Outcome { passed: true })
}

#[derive(Debug, Serialize)]
struct VerifyArtifact {
    passed: bool,
    inequalities: Option<InequalityReport>,
    inequality_note: Option<String>,
    runs: Vec<DeltaBalance>,
    jump: Option<JumpReport>,
}

pub fn verify(config: &RunConfig, model: &Model) -> Result<Outcome> {
    let m = model.as_dyn();
    let mut note = None;
    let inequalities = if m.dimension() == 1 && m.slope_lipschitz().is_some() {
        let r = verify_inequalities(m, config.verify.t, config.verify_tau(), &config.verify.inequalities)?;
        if let Some(reason) = &r.skipped {
            note = Some(reason.clone());
        }
        Some(r)
    } else {
        note = Some("inequality suite needs a one-dimensional model with a declared Lipschitz constant".into());
        None
    };
    let (evolutions, runs) = evolve_all(config, m)?;
    let jump = match config.rule.scheme.tau() {
        Some(_) => Some(verify_jump_characterization(&evolutions, m, &config.rule, &config.verify.jump)?),
        None => None,
    };
    let inequalities_ok = inequalities.as_ref().is_none_or(|r| r.skipped.is_some() || r.passed());
    let jump_ok = jump.as_ref().is_none_or(|j| j.status != JumpStatus::Checked || j.passed);
    let runs_ok = runs.iter().all(|r| r.passed());
    let passed = inequalities_ok && jump_ok && runs_ok;
    export::write_json(
        &config.output.join("verify.json"),
        &VerifyArtifact { passed, inequalities, inequality_note: note, runs, jump },
    )?;
    Ok(Outcome { passed })
}

#[derive(Debug, Serialize)]
struct RodDelta {
    delta: f64,
    jump_time: Option<f64>,
    jump_mass: Option<f64>,
    broken_springs: Vec<usize>,
    /// `(node, spring)` where a fully broken spring later healed.
    healing: Vec<(usize, usize)>,
}

#[derive(Debug, Serialize)]
struct RodArtifact {
    surface_energies: Vec<f64>,
    runs: Vec<RodDelta>,
}

pub fn rod(config: &RunConfig, model: &Model) -> Result<Outcome> {
    let rod = model
        .rod()
        .ok_or_else(|| Error::Config("the rod command needs a rod model".into()))?;
    let (evolutions, _, diagnostics) = sweep_report(config, rod)?;
    let mut runs = Vec::new();
    for (i, (evo, summary)) in evolutions.iter().zip(&diagnostics.summaries).enumerate() {
        let last = evo.transitions();
        let mut frames = vec![KeyFrame { label: "start", time: 0.0, state: &evo.states[0] }];
        if let Some(atom) = summary.dominant {
            frames.push(KeyFrame { label: "pre_jump", time: atom.time, state: &evo.states[atom.node - 1] });
            frames.push(KeyFrame { label: "post_jump", time: atom.time, state: &evo.states[atom.node] });
        }
        frames.push(KeyFrame { label: "end", time: evo.horizon, state: &evo.states[last] });
        let (particles, springs) = export::keyframes_csv(rod, &frames);
        let dir = delta_dir(&config.output, i);
        export::write_text(&dir.join("keyframes.csv"), &particles)?;
        export::write_text(&dir.join("keyframe_springs.csv"), &springs)?;

        let mut healing = Vec::new();
        for node in 1..=last {
            let (before, after) = (rod.fracture(&evo.states[node - 1]), rod.fracture(&evo.states[node]));
            for s in 0..rod.springs() {
                if before[s] >= 1.0 - 1e-6 && after[s] < 1.0 - 1e-6 {
                    healing.push((node, s));
                }
            }
        }
        if !healing.is_empty() {
            warn!("delta {}: {} healing events", evo.delta, healing.len());
        }
        runs.push(RodDelta {
            delta: evo.delta,
            jump_time: summary.dominant.map(|a| a.time),
            jump_mass: summary.dominant.map(|a| a.mass),
            broken_springs: rod.broken_springs(&evo.states[last], 1e-6),
            healing,
        });
    }
    export::write_json(
        &config.output.join("rod.json"),
        &RodArtifact { surface_energies: rod.surface_energies().to_vec(), runs },
    )?;
    Ok(Outcome { passed: true })
}

pub fn run(command: Command, config: &RunConfig, model: &Model) -> Result<Outcome> {
    match command {
        Command::Evolve => evolve(config, model),
        Command::Sweep => sweep(config, model),
        Command::Action => action(config, model),
        Command::Verify => verify(config, model),
        Command::Rod => rod(config, model),
    }
}
