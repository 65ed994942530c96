//! Brute-force reference values on uniform one-dimensional grids.
//!
//! Prox values are exhaustive grid minima, and chain actions are shortest
//! paths: over grid states for minimizing movement and over pairs
//! `(previous, current)` for BDF2. Every edge weight is nonnegative, so
//! Dijkstra's algorithm is exact.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use log::warn;
use serde::Serialize;

use super::ChainScheme;
use crate::energy::{check_time, EnergyModel};
use crate::error::{Error, Result};

/// Largest grid accepted for the pair-state BDF2 tables.
pub const MAX_BDF2_POINTS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

impl Grid {
    pub fn new(lower: f64, upper: f64, points: usize) -> Result<Self> {
        if points < 2 || !(upper > lower) {
            return Err(Error::Config("grid needs at least two points and upper > lower".into()));
        }
        Ok(Grid { lower, upper, points })
    }

    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / (self.points - 1) as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        if j + 1 == self.points {
            self.upper
        } else {
            self.lower + j as f64 * self.spacing()
        }
    }

    /// Index of the nearest node, clamped to the grid.
    pub fn nearest(&self, x: f64) -> usize {
        let r = ((x - self.lower) / self.spacing()).round();
        r.clamp(0.0, (self.points - 1) as f64) as usize
    }

    /// Nearest node index, warning when `x` is not (numerically) on it.
    pub fn snap(&self, x: f64) -> usize {
        let j = self.nearest(x);
        if (self.node(j) - x).abs() > 1e-12 * (1.0 + x.abs()) {
            warn!("endpoint {x} snapped to grid node {}", self.node(j));
        }
        j
    }
}

/// Energies and exhaustive grid prox values at fixed `t` and `τ`.
#[derive(Debug, Clone)]
pub struct DpTables {
    pub grid: Grid,
    pub tau: f64,
    nodes: Vec<f64>,
    pub energy: Vec<f64>,
    /// `E^M` on the grid.
    pub mms_envelope: Vec<f64>,
    /// `E^B(x_b, x_a)` stored at `b·n + a`, when built.
    bdf2_envelope: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DpResult {
    pub value: f64,
    /// Chain `u_a..u_b` in grid coordinates.
    pub chain: Vec<f64>,
    pub scheme: ChainScheme,
}

#[derive(Clone, Copy, PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl DpTables {
    pub fn build(
        model: &dyn EnergyModel,
        t: f64,
        grid: Grid,
        tau: f64,
        with_bdf2: bool,
    ) -> Result<Self> {
        if model.dimension() != 1 {
            return Err(Error::Precondition("grid oracle needs a one-dimensional model".into()));
        }
        if !(tau > 0.0) {
            return Err(Error::Config("tau must be positive".into()));
        }
        check_time(model, t)?;
        let b = model.bounds();
        if grid.lower < b.lower[0] || grid.upper > b.upper[0] {
            return Err(Error::Infeasible("grid leaves the model box".into()));
        }
        if with_bdf2 && grid.points > MAX_BDF2_POINTS {
            return Err(Error::Config(format!(
                "BDF2 oracle grid limited to {MAX_BDF2_POINTS} points"
            )));
        }
        let n = grid.points;
        let nodes: Vec<f64> = (0..n).map(|j| grid.node(j)).collect();
        let energy: Vec<f64> = nodes.iter().map(|&x| model.energy(t, &[x])).collect();
        let inv = 1.0 / tau;
        let mms_envelope = (0..n)
            .map(|j| {
                (0..n)
                    .map(|k| energy[k] + 0.5 * inv * (nodes[k] - nodes[j]).powi(2))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let bdf2_envelope = with_bdf2.then(|| {
            let mut table = vec![0.0; n * n];
            for bi in 0..n {
                for ai in 0..n {
                    let (xb, xa) = (nodes[bi], nodes[ai]);
                    table[bi * n + ai] = (0..n)
                        .map(|k| {
                            energy[k] + inv * (nodes[k] - xb).powi(2)
                                - 0.25 * inv * (nodes[k] - xa).powi(2)
                        })
                        .fold(f64::INFINITY, f64::min);
                }
            }
            table
        });
        Ok(DpTables { grid, tau, nodes, energy, mms_envelope, bdf2_envelope })
    }

    pub fn node(&self, j: usize) -> f64 {
        self.nodes[j]
    }

    /// `E(x_j) − E^M(x_j)`, i.e. `L^M(i(x_j))` on the grid.
    pub fn mms_gap(&self, j: usize) -> f64 {
        (self.energy[j] - self.mms_envelope[j]).max(0.0)
    }

    /// `E^B(x_b, x_a)` on the grid.
    pub fn bdf2_envelope(&self, b: usize, a: usize) -> f64 {
        self.bdf2_envelope.as_ref().expect("BDF2 tables were built")[b * self.grid.points + a]
    }

    fn mms_weight(&self, j: usize, k: usize) -> f64 {
        self.mms_gap(j) + 0.5 / self.tau * (self.nodes[j] - self.nodes[k]).powi(2)
    }

    /// `ℓ(x_a, x_b, x_c)` on the grid.
    pub fn bdf2_weight(&self, a: usize, b: usize, c: usize) -> f64 {
        let inv = 1.0 / self.tau;
        let (xa, xb, xc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        let gap = (self.energy[b] - self.bdf2_envelope(b, a)).max(0.0);
        (gap + 0.5 * inv * ((xb - xc).powi(2) + (xa - xb).powi(2)) - 0.25 * inv * (xa - xc).powi(2))
            .max(0.0)
    }

    fn bdf2_terminal(&self, a: usize, x2: usize) -> f64 {
        self.bdf2_weight(a, x2, x2) + self.bdf2_weight(x2, x2, x2)
    }

    /// Minimizing-movement action between grid nodes.
    pub fn mms_action(&self, x1: usize, x2: usize, max_steps: Option<usize>) -> DpResult {
        let chain = match max_steps {
            None => self.mms_dijkstra(x1, x2),
            Some(steps) => self.mms_layered(x1, x2, steps),
        };
        let value = chain.windows(2).map(|w| self.mms_weight(w[0], w[1])).sum::<f64>()
            + self.mms_gap(x2);
        DpResult {
            value,
            chain: chain.into_iter().map(|j| self.nodes[j]).collect(),
            scheme: ChainScheme::Mms,
        }
    }

    fn mms_dijkstra(&self, x1: usize, x2: usize) -> Vec<usize> {
        let n = self.grid.points;
        let mut dist = vec![f64::INFINITY; n];
        let mut pred = vec![usize::MAX; n];
        let mut done = vec![false; n];
        dist[x1] = 0.0;
        while let Some(j) = (0..n)
            .filter(|&j| !done[j] && dist[j].is_finite())
            .min_by(|&a, &b| dist[a].total_cmp(&dist[b]))
        {
            done[j] = true;
            if j == x2 {
                break;
            }
            for k in 0..n {
                let d = dist[j] + self.mms_weight(j, k);
                if !done[k] && d < dist[k] {
                    dist[k] = d;
                    pred[k] = j;
                }
            }
        }
        let mut chain = vec![x2];
        let mut cur = x2;
        while cur != x1 {
            cur = pred[cur];
            chain.push(cur);
        }
        chain.reverse();
        chain
    }

    /// Bellman recursion over at most `steps` moves; the shortest optimal
    /// chain wins ties.
    fn mms_layered(&self, x1: usize, x2: usize, steps: usize) -> Vec<usize> {
        let n = self.grid.points;
        let mut layers = vec![vec![f64::INFINITY; n]];
        layers[0][x1] = 0.0;
        let mut preds = vec![vec![usize::MAX; n]];
        for _ in 0..steps {
            let prev = layers.last().expect("nonempty");
            let mut next = vec![f64::INFINITY; n];
            let mut pred = vec![usize::MAX; n];
            for j in (0..n).filter(|&j| prev[j].is_finite()) {
                for k in 0..n {
                    let d = prev[j] + self.mms_weight(j, k);
                    if d < next[k] {
                        next[k] = d;
                        pred[k] = j;
                    }
                }
            }
            layers.push(next);
            preds.push(pred);
        }
        let mut best = 0;
        for k in 1..layers.len() {
            if layers[k][x2] < layers[best][x2] {
                best = k;
            }
        }
        let mut chain = vec![x2];
        let mut cur = x2;
        for k in (1..=best).rev() {
            cur = preds[k][cur];
            chain.push(cur);
        }
        chain.reverse();
        chain
    }

    /// BDF2 action between grid nodes by Dijkstra over `(previous, current)`.
    pub fn bdf2_action(&self, x1: usize, x2: usize, max_steps: Option<usize>) -> DpResult {
        self.bdf2_actions_from(x1, &[x2], max_steps).pop().expect("one target")
    }

    /// BDF2 actions from `x1` to each target, sharing one search.
    pub fn bdf2_actions_from(
        &self,
        x1: usize,
        targets: &[usize],
        max_steps: Option<usize>,
    ) -> Vec<DpResult> {
        let n = self.grid.points;
        let start = x1 * n + x1;
        let mut dist = vec![f64::INFINITY; n * n];
        let mut pred = vec![u32::MAX; n * n];
        dist[start] = 0.0;
        match max_steps {
            None => {
                let mut heap = BinaryHeap::new();
                heap.push(Entry(0.0, start));
                let mut done = vec![false; n * n];
                // stop once every target's best terminal value is settled
                let mut best: Vec<f64> = vec![f64::INFINITY; targets.len()];
                while let Some(Entry(d, s)) = heap.pop() {
                    if done[s] {
                        continue;
                    }
                    if best.iter().all(|b| d >= *b) {
                        break;
                    }
                    done[s] = true;
                    let (a, b) = (s / n, s % n);
                    for (k, &x2) in targets.iter().enumerate() {
                        if b == x2 {
                            best[k] = best[k].min(d + self.bdf2_terminal(a, x2));
                        }
                    }
                    for c in 0..n {
                        let next = b * n + c;
                        if done[next] {
                            continue;
                        }
                        let nd = d + self.bdf2_weight(a, b, c);
                        if nd < dist[next] {
                            dist[next] = nd;
                            pred[next] = s as u32;
                            heap.push(Entry(nd, next));
                        }
                    }
                }
            }
            Some(limit) => {
                // layered relaxation keeping the best value over ≤ limit steps
                let mut frontier = vec![(start, 0.0)];
                for _ in 0..limit {
                    let mut layer: Vec<f64> = vec![f64::INFINITY; n * n];
                    let mut layer_pred = vec![u32::MAX; n * n];
                    for &(s, d) in &frontier {
                        let (a, b) = (s / n, s % n);
                        for c in 0..n {
                            let next = b * n + c;
                            let nd = d + self.bdf2_weight(a, b, c);
                            if nd < layer[next] {
                                layer[next] = nd;
                                layer_pred[next] = s as u32;
                            }
                        }
                    }
                    frontier.clear();
                    for s in 0..n * n {
                        if layer[s].is_finite() {
                            frontier.push((s, layer[s]));
                            if layer[s] < dist[s] {
                                dist[s] = layer[s];
                                pred[s] = layer_pred[s];
                            }
                        }
                    }
                }
            }
        }
        targets
            .iter()
            .map(|&x2| {
                let (value, end) = (0..n)
                    .map(|a| (dist[a * n + x2] + self.bdf2_terminal(a, x2), a * n + x2))
                    .filter(|(v, _)| v.is_finite())
                    .fold((f64::INFINITY, usize::MAX), |acc, (v, s)| if v < acc.0 { (v, s) } else { acc });
                let mut chain = Vec::new();
                let mut cur = end;
                let mut guard = 0;
                while cur != start && cur != usize::MAX && guard < n * n {
                    chain.push(cur % n);
                    cur = match pred[cur] {
                        u32::MAX => usize::MAX,
                        p => p as usize,
                    };
                    guard += 1;
                }
                chain.push(x1);
                chain.reverse();
                DpResult {
                    value,
                    chain: chain.into_iter().map(|j| self.nodes[j]).collect(),
                    scheme: ChainScheme::Bdf2,
                }
            })
            .collect()
    }
}

/// Exact minimum over grid chains of the selected action between `x1` and
/// `x2` (snapped to the grid), optionally limited to `max_steps` moves.
#[allow(clippy::too_many_arguments)]
pub fn dp_oracle_1d(
    model: &dyn EnergyModel,
    t: f64,
    grid: Grid,
    x1: f64,
    x2: f64,
    tau: f64,
    scheme: ChainScheme,
    max_steps: Option<usize>,
) -> Result<DpResult> {
    let tables = DpTables::build(model, t, grid, tau, scheme == ChainScheme::Bdf2)?;
    let (i1, i2) = (grid.snap(x1), grid.snap(x2));
    Ok(match scheme {
        ChainScheme::Mms => tables.mms_action(i1, i2, max_steps),
        ChainScheme::Bdf2 => tables.bdf2_action(i1, i2, max_steps),
    })
}

/// `∫_{x1}^{x2} |E_t'|` for a one-dimensional model, which equals the
/// gradient-flow action there: monotone paths are optimal and the integral
/// splits into `|E(b) − E(a)|` over the monotone pieces of `E_t`.
pub fn exact_gf_action_1d(model: &dyn EnergyModel, t: f64, x1: f64, x2: f64) -> Result<f64> {
    if model.dimension() != 1 {
        return Err(Error::Precondition("exact action needs a one-dimensional model".into()));
    }
    crate::energy::check_point(model, &[x1])?;
    crate::energy::check_point(model, &[x2])?;
    check_time(model, t)?;
    let (lo, hi) = if x1 <= x2 { (x1, x2) } else { (x2, x1) };
    if lo == hi {
        return Ok(0.0);
    }
    let deriv = |x: f64| {
        let mut g = [0.0];
        model.gradient(t, &[x], &mut g);
        g[0]
    };
    let samples = 4096;
    let h = (hi - lo) / samples as f64;
    let mut cuts = vec![lo];
    let mut prev = (lo, deriv(lo));
    for k in 1..=samples {
        let x = if k == samples { hi } else { lo + k as f64 * h };
        let v = deriv(x);
        if v == 0.0 && k < samples {
            cuts.push(x);
        } else if prev.1 * v < 0.0 {
            let (mut a, mut b, fa) = (prev.0, x, prev.1);
            for _ in 0..100 {
                let m = 0.5 * (a + b);
                if deriv(m) * fa > 0.0 {
                    a = m;
                } else {
                    b = m;
                }
            }
            cuts.push(0.5 * (a + b));
        }
        prev = (x, v);
    }
    cuts.push(hi);
    Ok(cuts
        .windows(2)
        .map(|w| (model.energy(t, &[w[1]]) - model.energy(t, &[w[0]])).abs())
        .sum())
}
