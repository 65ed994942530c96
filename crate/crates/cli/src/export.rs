//! CSV and JSON artifacts.
//!
//! CSV rows are newline-delimited, comma-separated, with every real printed
//! as `{:.16e}` (17 significant digits). Schemas:
//!
//! | file | columns |
//! |------|---------|
//! | `trajectory.csv` | `node,time,energy,x0,…` (`w_i` and `E_{iδ}(w_i)`) |
//! | `mu.csv` | `node,time,mass` (atoms of `μ^δ`) |
//! | `power.csv` | `t,power` (`D^δ(t)` at the sample times) |
//! | `energy_sums.csv` | `t,energy,power_integral,dissipated,reconstructed` |
//! | `keyframes.csv` | `frame,label,time,particle,coord0,…` |
//! | `keyframe_springs.csv` | `frame,label,time,spring,z,length,potential` |

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use qse_core::balance::{EnergySum, JumpMeasure};
use qse_core::energy::EnergyModel;
use qse_core::rod::Rod;
use qse_core::{DiscreteEvolution, Error, Point, Result};
use serde::Serialize;

pub fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Config(format!("cannot write {}: {e}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_text(path, &text)
}

pub fn trajectory_csv(evo: &DiscreteEvolution, model: &dyn EnergyModel) -> String {
    let dim = evo.states[0].len();
    let mut out = String::from("node,time,energy");
    for j in 0..dim {
        let _ = write!(out, ",x{j}");
    }
    out.push('\n');
    for (i, (w, e)) in evo.states.iter().zip(evo.node_energies(model)).enumerate() {
        let _ = write!(out, "{i},{},{}", real(evo.node_time(i)), real(e));
        for v in w.iter() {
            let _ = write!(out, ",{}", real(*v));
        }
        out.push('\n');
    }
    out
}

pub fn mu_csv(mu: &JumpMeasure) -> String {
    let mut out = String::from("node,time,mass\n");
    for a in &mu.atoms {
        let _ = writeln!(out, "{},{},{}", a.node, real(a.time), real(a.mass));
    }
    out
}

pub fn power_csv(times: &[f64], power: &[f64]) -> String {
    let mut out = String::from("t,power\n");
    for (t, p) in times.iter().zip(power) {
        let _ = writeln!(out, "{},{}", real(*t), real(*p));
    }
    out
}

pub fn energy_sums_csv(sums: &[EnergySum]) -> String {
    let mut out = String::from("t,energy,power_integral,dissipated,reconstructed\n");
    for s in sums {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            real(s.t),
            real(s.energy),
            real(s.power_integral),
            real(s.dissipated),
            real(s.reconstructed)
        );
    }
    out
}

/// A labelled rod configuration at a given time.
pub struct KeyFrame<'a> {
    pub label: &'static str,
    pub time: f64,
    pub state: &'a Point,
}

pub fn keyframes_csv(rod: &Rod, frames: &[KeyFrame]) -> (String, String) {
    let dim = rod.config().dim;
    let mut particles = String::from("frame,label,time,particle");
    for j in 0..dim {
        let _ = write!(particles, ",coord{j}");
    }
    particles.push('\n');
    let mut springs = String::from("frame,label,time,spring,z,length,potential\n");
    for (f, frame) in frames.iter().enumerate() {
        for (p, pos) in rod.particles(frame.time, frame.state).iter().enumerate() {
            let _ = write!(particles, "{f},{},{},{p}", frame.label, real(frame.time));
            for v in pos {
                let _ = write!(particles, ",{}", real(*v));
            }
            particles.push('\n');
        }
        let z = rod.fracture(frame.state);
        let lengths = rod.spring_lengths(frame.time, frame.state);
        let potentials = rod.spring_potentials(frame.time, frame.state);
        for s in 0..rod.springs() {
            let _ = writeln!(
                springs,
                "{f},{},{},{s},{},{},{}",
                frame.label,
                real(frame.time),
                real(z[s]),
                real(lengths[s]),
                real(potentials[s])
            );
        }
    }
    (particles, springs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals_have_seventeen_digits() {
        assert_eq!(real(0.1), "1.0000000000000001e-1");
        assert_eq!(real(-2.0), "-2.0000000000000000e0");
        assert_eq!(real(0.1).parse::<f64>().unwrap(), 0.1);
    }
}
