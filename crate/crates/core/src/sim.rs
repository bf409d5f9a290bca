//! Implicit-Euler time stepping: linear cooperative systems, the comparison
//! principle, and local stability of the disease-free state.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::banded::{BandError, BandMatrix};
use crate::dfe::DfeState;
use crate::grid::Grid;
use crate::model::{CompartmentModel, DfeRule, ModelError};
use crate::r0::assemble_banded;
use crate::spectral::COOPERATIVITY_TOL;

/// Ordering slack for [`comparison_test`].
pub const COMPARISON_SLACK: f64 = 1e-12;

/// Default perturbation size relative to the disease-free scale.
pub const DEFAULT_AMPLITUDE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Band(#[from] BandError),
    #[error("time step must be positive and no larger than the horizon (dt = {dt}, T = {t_end})")]
    Step { dt: f64, t_end: f64 },
    #[error("initial data has {got} entries, expected {expected}")]
    Length { expected: usize, got: usize },
    #[error("initial data is negative at index {index} ({value})")]
    NegativeInitial { index: usize, value: f64 },
    #[error("{which} is not cooperative at node {node}: entry ({row},{col}) = {value}")]
    NotCooperative {
        which: &'static str,
        node: usize,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("P1 < P2 at node {node}, entry ({row},{col}): {p1} < {p2}")]
    NotOrdered {
        node: usize,
        row: usize,
        col: usize,
        p1: f64,
        p2: f64,
    },
    #[error("expected {expected} coefficient blocks of size {size}, got {got}")]
    Blocks { expected: usize, size: usize, got: usize },
    #[error("Newton failed at t = {t} (scaled residual {residual})")]
    Newton { t: f64, residual: f64 },
    #[error("solution blew up at t = {t}")]
    BlowUp { t: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Node-major states, one per stored time.
    pub states: Vec<Vec<f64>>,
    pub dt: f64,
    pub steps: usize,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least the initial state")
    }

    /// Smallest entry over all stored states.
    pub fn min_entry(&self) -> f64 {
        self.states
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, v| m.min(*v))
    }
}

fn steps_for(t_end: f64, dt: f64) -> Result<(usize, f64), SimError> {
    if !(dt > 0.0 && t_end > 0.0 && dt <= t_end) {
        return Err(SimError::Step { dt, t_end });
    }
    let steps = (t_end / dt).round().max(1.0) as usize;
    Ok((steps, t_end / steps as f64))
}

/// `(I - dt A) u_{k+1} = u_k` up to `t_end`, storing every `stride`-th state
/// and the last one.
pub fn evolve_linear(
    a: &BandMatrix,
    phi0: &[f64],
    t_end: f64,
    dt: f64,
    stride: usize,
) -> Result<Trajectory, SimError> {
    if phi0.len() != a.dim() {
        return Err(SimError::Length {
            expected: a.dim(),
            got: phi0.len(),
        });
    }
    if let Some((index, &value)) = phi0.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(SimError::NegativeInitial { index, value });
    }
    let (steps, h) = steps_for(t_end, dt)?;
    let mut m = a.clone();
    m.scale(-h);
    m.add_diagonal(1.0);
    let lu = m.factor()?;
    let stride = stride.max(1);
    let mut u = phi0.to_vec();
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![u.clone()],
        dt: h,
        steps,
    };
    for k in 1..=steps {
        lu.solve_in_place(&mut u);
        if k % stride == 0 || k == steps {
            traj.times.push(k as f64 * h);
            traj.states.push(u.clone());
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonViolation {
    pub time: f64,
    pub index: usize,
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    /// `min (T1(t)φ - T2(t)φ)` over stored times and entries.
    pub min_slack: f64,
    pub first_violation: Option<ComparisonViolation>,
    pub passed: bool,
    pub times: usize,
}

fn check_blocks(which: &'static str, p: &[DMatrix<f64>], nodes: usize, m: usize) -> Result<(), SimError> {
    if p.len() != nodes || p.iter().any(|b| b.nrows() != m || b.ncols() != m) {
        return Err(SimError::Blocks {
            expected: nodes,
            size: m,
            got: p.len(),
        });
    }
    for (node, b) in p.iter().enumerate() {
        for row in 0..m {
            for col in 0..m {
                if row != col && b[(row, col)] < -COOPERATIVITY_TOL {
                    return Err(SimError::NotCooperative {
                        which,
                        node,
                        row,
                        col,
                        value: b[(row, col)],
                    });
                }
            }
        }
    }
    Ok(())
}

/// Evolve `φ_t = d Δφ + P_i(x) φ` for `i = 1, 2` from the same data and check
/// `T1(t)φ >= T2(t)φ` at every step.
pub fn comparison_test(
    p1: &[DMatrix<f64>],
    p2: &[DMatrix<f64>],
    grid: &Grid,
    diffusion: &[f64],
    phi0: &[f64],
    t_end: f64,
    dt: f64,
) -> Result<ComparisonReport, SimError> {
    let m = diffusion.len();
    check_blocks("P1", p1, grid.len(), m)?;
    check_blocks("P2", p2, grid.len(), m)?;
    for (node, (a, b)) in p1.iter().zip(p2).enumerate() {
        for row in 0..m {
            for col in 0..m {
                if a[(row, col)] < b[(row, col)] {
                    return Err(SimError::NotOrdered {
                        node,
                        row,
                        col,
                        p1: a[(row, col)],
                        p2: b[(row, col)],
                    });
                }
            }
        }
    }
    let t1 = evolve_linear(&assemble_banded(grid, diffusion, p1), phi0, t_end, dt, 1)?;
    let t2 = evolve_linear(&assemble_banded(grid, diffusion, p2), phi0, t_end, dt, 1)?;
    let mut min_slack = f64::INFINITY;
    let mut first_violation = None;
    for ((t, a), b) in t1.times.iter().zip(&t1.states).zip(&t2.states) {
        for (index, (x, y)) in a.iter().zip(b).enumerate() {
            let diff = x - y;
            min_slack = min_slack.min(diff);
            if diff < -COMPARISON_SLACK && first_violation.is_none() {
                first_violation = Some(ComparisonViolation {
                    time: *t,
                    index,
                    difference: diff,
                });
            }
        }
    }
    Ok(ComparisonReport {
        min_slack,
        passed: first_violation.is_none(),
        first_violation,
        times: t1.times.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StabilityMode {
    /// Expect the perturbation to die out.
    Decay,
    /// Expect the infected compartments to grow.
    Growth,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub mode: StabilityMode,
    pub amplitude: f64,
    pub times: Vec<f64>,
    /// Sup-norm distance to the reference disease-free state.
    pub distance: Vec<f64>,
    /// Sup-norm of the infected compartments.
    pub infected: Vec<f64>,
    pub initial_distance: f64,
    pub final_distance: f64,
    /// Monotone over the last half of the run (decreasing distance in decay
    /// mode, increasing infected norm in growth mode).
    pub monotone_last_half: bool,
    pub passed: bool,
    /// Final state, node-major over all compartments.
    #[serde(skip)]
    pub final_state: Vec<f64>,
}

impl StabilityReport {
    /// `final / initial` distance; 0 when both vanish.
    pub fn decay_ratio(&self) -> f64 {
        if self.initial_distance == 0.0 {
            0.0
        } else {
            self.final_distance / self.initial_distance
        }
    }
}

struct Stepper<'a> {
    model: &'a CompartmentModel,
    grid: &'a Grid,
    diffusion: Vec<f64>,
    scale: Vec<f64>,
}

impl Stepper<'_> {
    /// `d Δz + f(x, z)`, node-major.
    fn rhs(&self, z: &[f64]) -> Result<Vec<f64>, ModelError> {
        let n = self.model.n();
        let nodes = self.grid.len();
        let mut r = vec![0.0; z.len()];
        for (i, &d) in self.diffusion.iter().enumerate() {
            let ui: Vec<f64> = (0..nodes).map(|k| z[k * n + i]).collect();
            for (k, v) in self.grid.laplacian(d).apply(&ui).into_iter().enumerate() {
                r[k * n + i] = v;
            }
        }
        for k in 0..nodes {
            let f = self.model.reaction(self.grid.node(k), &z[k * n..(k + 1) * n])?;
            for i in 0..n {
                r[k * n + i] += f[i];
            }
        }
        Ok(r)
    }

    fn jacobian(&self, z: &[f64]) -> Result<BandMatrix, ModelError> {
        let n = self.model.n();
        let blocks = (0..self.grid.len())
            .map(|k| self.model.reaction_jacobian(self.grid.node(k), &z[k * n..(k + 1) * n]))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(assemble_banded(self.grid, &self.diffusion, &blocks))
    }

    fn residual(&self, z: &[f64], prev: &[f64], dt: f64) -> Option<(Vec<f64>, f64)> {
        let f = self.rhs(z).ok()?;
        let n = self.model.n();
        let g: Vec<f64> = (0..z.len()).map(|j| z[j] - prev[j] - dt * f[j]).collect();
        let norm = g
            .iter()
            .enumerate()
            .map(|(j, v)| v.abs() * self.scale[j % n])
            .fold(0.0, f64::max);
        norm.is_finite().then_some((g, norm))
    }

    /// One implicit Euler step by damped Newton.
    fn step(&self, prev: &[f64], dt: f64, t: f64) -> Result<Vec<f64>, SimError> {
        let tol = 1e-13 * (1.0 + prev.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        let mut z = prev.to_vec();
        let (mut g, mut norm) = self
            .residual(&z, prev, dt)
            .ok_or(SimError::BlowUp { t })?;
        for _ in 0..40 {
            if norm <= tol {
                return Ok(z);
            }
            let mut j = self.jacobian(&z)?;
            j.scale(-dt);
            j.add_diagonal(1.0);
            let dz = j.factor()?.solve(&g);
            let mut s = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let trial: Vec<f64> = z.iter().zip(&dz).map(|(a, b)| a - s * b).collect();
                if let Some((g2, n2)) = self.residual(&trial, prev, dt) {
                    if n2 < norm {
                        z = trial;
                        g = g2;
                        norm = n2;
                        accepted = true;
                        break;
                    }
                }
                s *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if norm <= tol * 1e3 {
            Ok(z)
        } else {
            Err(SimError::Newton { t, residual: norm })
        }
    }
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Evolve the full nonlinear system from the disease-free state plus a
/// nonnegative bump of relative size `amplitude` in every compartment.
///
/// With a mass-conserving disease-free rule the reference state is the one
/// carrying the perturbed mass.
pub fn dfe_stability_test(
    model: &CompartmentModel,
    grid: &Grid,
    dfe: &DfeState,
    amplitude: f64,
    t_end: f64,
    dt: f64,
    mode: StabilityMode,
) -> Result<StabilityReport, SimError> {
    let (steps, h) = steps_for(t_end, dt)?;
    let (n, m) = (model.n(), model.m());
    let nodes = grid.len();
    let (a, b) = grid.interval();
    let scale = dfe.fields.iter().map(|f| f.sup_norm()).fold(0.0, f64::max).max(1e-300);
    let bump: Vec<f64> = grid
        .nodes()
        .map(|x| amplitude * scale * 0.5 * (1.0 + (std::f64::consts::PI * (x - a) / (b - a)).cos()))
        .collect();

    let mut z = vec![0.0; nodes * n];
    let mut reference = vec![0.0; nodes * n];
    for k in 0..nodes {
        for (i, f) in dfe.fields.iter().enumerate() {
            reference[k * n + m + i] = f[k];
        }
        for i in 0..n {
            z[k * n + i] = reference[k * n + i] + bump[k];
        }
    }
    if let DfeRule::UniformMass(_) = model.dfe_rule() {
        let total: f64 = (0..n)
            .map(|i| grid.integrate(&(0..nodes).map(|k| z[k * n + i]).collect::<Vec<_>>()))
            .sum();
        let s = (n - m) as f64;
        for k in 0..nodes {
            for i in m..n {
                reference[k * n + i] = total / (s * grid.measure());
            }
        }
    }

    let h2 = grid.spacing() * grid.spacing();
    let diffusion = model.diffusion();
    let stepper = Stepper {
        model,
        grid,
        scale: diffusion.iter().map(|d| 1.0 / (1.0 + 2.0 * h * d / h2)).collect(),
        diffusion,
    };
    let infected_norm = |z: &[f64]| {
        (0..nodes)
            .flat_map(|k| (0..m).map(move |i| k * n + i))
            .map(|j| z[j].abs())
            .fold(0.0, f64::max)
    };
    let blowup = 1e12 * (1.0 + z.iter().fold(0.0f64, |a, v| a.max(v.abs())));

    let mut times = vec![0.0];
    let mut distance = vec![sup_distance(&z, &reference)];
    let mut infected = vec![infected_norm(&z)];
    for k in 1..=steps {
        let t = k as f64 * h;
        z = stepper.step(&z, h, t)?;
        if z.iter().any(|v| !v.is_finite() || v.abs() > blowup) {
            return Err(SimError::BlowUp { t });
        }
        times.push(t);
        distance.push(sup_distance(&z, &reference));
        infected.push(infected_norm(&z));
    }

    let half = times.len() / 2;
    let initial_distance = distance[0];
    let final_distance = *distance.last().unwrap();
    let (monotone_last_half, passed) = match mode {
        StabilityMode::Decay => {
            let mono = distance[half..]
                .windows(2)
                .all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-15);
            (mono, mono && final_distance <= initial_distance)
        }
        StabilityMode::Growth => {
            let mono = infected[half..]
                .windows(2)
                .all(|w| w[1] >= w[0] * (1.0 - 1e-9) - 1e-15);
            (mono, mono && infected.last().unwrap() > &infected[0])
        }
    };
    Ok(StabilityReport {
        mode,
        amplitude,
        times,
        distance,
        infected,
        initial_distance,
        final_distance,
        monotone_last_half,
        passed,
        final_state: z,
    })
}
