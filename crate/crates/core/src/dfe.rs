//! Disease-free steady state `u0 = (0, u_S)` solving
//! `d_S Δu_S + f_S(x, (0, u_S)) = 0`, and its small- and large-diffusion
//! reference profiles.

use serde::Serialize;
use thiserror::Error;

use crate::banded::BandError;
use crate::grid::{Field, Grid};
use crate::model::{CompartmentModel, DfeRule, LargeValue, ModelError};
use crate::r0::assemble_banded;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DfeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(
        "steady-state solve did not converge: scaled residual {residual:e} \
         at node {node} (x = {x}, compartment '{compartment}')"
    )]
    NotConverged {
        residual: f64,
        node: usize,
        x: f64,
        compartment: String,
    },
    #[error("disease-free state of '{compartment}' is not positive at x = {x} (value {value})")]
    Positivity {
        compartment: String,
        x: f64,
        value: f64,
    },
    #[error("initial guess has {got} fields, expected {expected}")]
    GuessShape { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DfeMethod {
    /// Fixed by conservation of mass, no solve needed.
    Mass,
    /// Supplied by the caller.
    Prescribed,
    Newton,
    /// Newton after pseudo-time continuation.
    PseudoTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DfeState {
    /// One field per uninfected compartment.
    pub fields: Vec<Field>,
    /// Sup norm of the steady residual, row `k` of component `i` divided by
    /// `1 + 2 d_i / h^2`.
    pub residual: f64,
    /// Unscaled sup norm of the steady residual.
    pub raw_residual: f64,
    pub iterations: usize,
    pub method: DfeMethod,
}

impl DfeState {
    /// Uninfected values at node `k`.
    pub fn at(&self, k: usize) -> Vec<f64> {
        self.fields.iter().map(|f| f[k]).collect()
    }

    pub fn nodes(&self) -> usize {
        self.fields.first().map_or(0, |f| f.len())
    }

    /// Wrap given fields, recording their steady residual.
    pub fn prescribed(
        model: &CompartmentModel,
        grid: &Grid,
        fields: Vec<Field>,
    ) -> Result<Self, DfeError> {
        check_shape(model, &fields)?;
        let z = interleave(&fields);
        let (residual, raw_residual, _) = residual_norms(model, grid, &z)?;
        Ok(DfeState {
            fields,
            residual,
            raw_residual,
            iterations: 0,
            method: DfeMethod::Prescribed,
        })
    }

    /// Largest absolute nodal difference to `other` across compartments.
    pub fn distance(&self, other: &[Field]) -> f64 {
        self.fields
            .iter()
            .zip(other)
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DfeOptions {
    pub tol: f64,
    pub max_newton: usize,
    pub max_pseudo_steps: usize,
    /// Starting point; by default `c(x)` for `max d_S <= 1` and the
    /// large-diffusion constants otherwise (either one when only one exists).
    pub initial: Option<Vec<Field>>,
}

impl Default for DfeOptions {
    fn default() -> Self {
        DfeOptions {
            tol: 1e-10,
            max_newton: 50,
            max_pseudo_steps: 2000,
            initial: None,
        }
    }
}

fn check_shape(model: &CompartmentModel, fields: &[Field]) -> Result<(), DfeError> {
    let expected = model.n() - model.m();
    if fields.len() != expected {
        return Err(DfeError::GuessShape {
            expected,
            got: fields.len(),
        });
    }
    Ok(())
}

// node-major: z[k * s + i]
fn interleave(fields: &[Field]) -> Vec<f64> {
    let s = fields.len();
    let n = fields[0].len();
    let mut z = vec![0.0; n * s];
    for (i, f) in fields.iter().enumerate() {
        for k in 0..n {
            z[k * s + i] = f[k];
        }
    }
    z
}

fn split(z: &[f64], s: usize) -> Vec<Field> {
    (0..s)
        .map(|i| Field(z.iter().skip(i).step_by(s).copied().collect()))
        .collect()
}

/// Steady residual `d_S Δu + f_S`, node-major.
fn residual(model: &CompartmentModel, grid: &Grid, z: &[f64]) -> Result<Vec<f64>, ModelError> {
    let (m, s) = (model.m(), model.n() - model.m());
    let d = model.uninfected_diffusion();
    let nodes = grid.len();
    let mut r = vec![0.0; z.len()];
    for (i, &di) in d.iter().enumerate() {
        let ui: Vec<f64> = (0..nodes).map(|k| z[k * s + i]).collect();
        let lu = grid.laplacian(di).apply(&ui);
        for k in 0..nodes {
            r[k * s + i] = lu[k];
        }
    }
    let mut u = vec![0.0; model.n()];
    for k in 0..nodes {
        u[m..].copy_from_slice(&z[k * s..(k + 1) * s]);
        let f = model.reaction(grid.node(k), &u)?;
        for i in 0..s {
            r[k * s + i] += f[m + i];
        }
    }
    Ok(r)
}

fn row_scale(model: &CompartmentModel, grid: &Grid) -> Vec<f64> {
    let h2 = grid.spacing() * grid.spacing();
    model
        .uninfected_diffusion()
        .iter()
        .map(|d| 1.0 / (1.0 + 2.0 * d / h2))
        .collect()
}

/// (scaled norm, raw norm, worst row)
fn residual_norms(
    model: &CompartmentModel,
    grid: &Grid,
    z: &[f64],
) -> Result<(f64, f64, usize), ModelError> {
    let r = residual(model, grid, z)?;
    Ok(norms(&r, &row_scale(model, grid)))
}

fn norms(r: &[f64], scale: &[f64]) -> (f64, f64, usize) {
    let s = scale.len();
    let mut worst = (0.0, 0);
    let mut raw = 0.0f64;
    for (row, v) in r.iter().enumerate() {
        let scaled = v.abs() * scale[row % s];
        if scaled > worst.0 || !scaled.is_finite() {
            worst = (scaled, row);
        }
        raw = raw.max(v.abs());
    }
    (worst.0, raw, worst.1)
}

fn jacobian(
    model: &CompartmentModel,
    grid: &Grid,
    z: &[f64],
) -> Result<crate::banded::BandMatrix, ModelError> {
    let (m, s) = (model.m(), model.n() - model.m());
    let mut u = vec![0.0; model.n()];
    let blocks = (0..grid.len())
        .map(|k| {
            u[m..].copy_from_slice(&z[k * s..(k + 1) * s]);
            model.jacobians_at(grid.node(k), &u).map(|j| j.m_block)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble_banded(grid, &model.uninfected_diffusion(), &blocks))
}

struct Solver<'a> {
    model: &'a CompartmentModel,
    grid: &'a Grid,
    scale: Vec<f64>,
    iterations: usize,
}

impl Solver<'_> {
    /// Scaled residual norm, or `None` where the reaction cannot be evaluated.
    fn merit(&self, z: &[f64]) -> Option<(f64, Vec<f64>)> {
        let r = residual(self.model, self.grid, z).ok()?;
        let (n, _, _) = norms(&r, &self.scale);
        n.is_finite().then_some((n, r))
    }

    /// Damped Newton; returns the final iterate and whether it converged.
    fn newton(&mut self, mut z: Vec<f64>, tol: f64, max_iter: usize) -> (Vec<f64>, bool) {
        let Some((mut norm, mut r)) = self.merit(&z) else {
            return (z, false);
        };
        for _ in 0..max_iter {
            if norm <= tol {
                return (z, true);
            }
            self.iterations += 1;
            let step = match jacobian(self.model, self.grid, &z)
                .map_err(|_| ())
                .and_then(|j| j.factor().map_err(|_: BandError| ()))
            {
                Ok(lu) => lu.solve(&r),
                Err(()) => return (z, false),
            };
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..=30 {
                let trial: Vec<f64> = z.iter().zip(&step).map(|(a, b)| a - t * b).collect();
                if let Some((n2, r2)) = self.merit(&trial) {
                    if n2 < norm || n2 <= tol {
                        z = trial;
                        norm = n2;
                        r = r2;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                return (z, false);
            }
        }
        (z, norm <= tol)
    }

    /// Linearly implicit Euler in pseudo-time with step doubling, until the
    /// residual is small enough for Newton or the step budget runs out.
    fn pseudo_time(&mut self, mut z: Vec<f64>, target: f64, max_steps: usize) -> Vec<f64> {
        let Some((mut norm, mut r)) = self.merit(&z) else {
            return z;
        };
        let mut dt = 1e-3;
        for _ in 0..max_steps {
            if norm <= target {
                break;
            }
            self.iterations += 1;
            let Ok(mut a) = jacobian(self.model, self.grid, &z) else {
                return z;
            };
            a.scale(-dt);
            a.add_diagonal(1.0);
            let Ok(lu) = a.factor() else {
                dt *= 0.5;
                continue;
            };
            let rhs: Vec<f64> = r.iter().map(|v| dt * v).collect();
            let step = lu.solve(&rhs);
            let trial: Vec<f64> = z.iter().zip(&step).map(|(a, b)| a + b).collect();
            match self.merit(&trial) {
                Some((n2, r2)) if trial.iter().all(|v| *v > 0.0) => {
                    z = trial;
                    norm = n2;
                    r = r2;
                    dt = (dt * 2.0).min(1e12);
                }
                _ => {
                    dt *= 0.5;
                    if dt < 1e-14 {
                        break;
                    }
                }
            }
        }
        z
    }
}

/// Solve for the disease-free state with default options.
pub fn solve_dfe(model: &CompartmentModel, grid: &Grid) -> Result<DfeState, DfeError> {
    solve_dfe_with(model, grid, &DfeOptions::default())
}

pub fn solve_dfe_with(
    model: &CompartmentModel,
    grid: &Grid,
    opts: &DfeOptions,
) -> Result<DfeState, DfeError> {
    let s = model.n() - model.m();
    if let DfeRule::UniformMass(total) = model.dfe_rule() {
        let level = total / grid.measure();
        let fields = vec![Field::constant(grid.len(), level); s];
        let mut state = DfeState::prescribed(model, grid, fields)?;
        state.method = DfeMethod::Mass;
        check_positive(model, grid, &state.fields)?;
        return Ok(state);
    }
    let guess = match &opts.initial {
        Some(g) => {
            check_shape(model, g)?;
            g.clone()
        }
        None => default_guess(model, grid)?,
    };
    let mut solver = Solver {
        model,
        grid,
        scale: row_scale(model, grid),
        iterations: 0,
    };
    let z0 = interleave(&guess);
    let (mut z, mut ok) = solver.newton(z0.clone(), opts.tol, opts.max_newton);
    let mut method = DfeMethod::Newton;
    if !ok || z.iter().any(|v| *v <= 0.0) {
        method = DfeMethod::PseudoTime;
        let mut target = 1e-4;
        z = z0;
        for _ in 0..4 {
            z = solver.pseudo_time(z, target, opts.max_pseudo_steps);
            let (z2, ok2) = solver.newton(z.clone(), opts.tol, opts.max_newton);
            if ok2 && z2.iter().all(|v| *v > 0.0) {
                z = z2;
                ok = true;
                break;
            }
            target *= 1e-2;
        }
    }
    let (residual, raw_residual, worst) = residual_norms(model, grid, &z)?;
    if !ok {
        let k = worst / s;
        return Err(DfeError::NotConverged {
            residual,
            node: k,
            x: grid.node(k),
            compartment: model.compartments()[model.m() + worst % s].name.clone(),
        });
    }
    let fields = split(&z, s);
    check_positive(model, grid, &fields)?;
    Ok(DfeState {
        fields,
        residual,
        raw_residual,
        iterations: solver.iterations,
        method,
    })
}

fn default_guess(model: &CompartmentModel, grid: &Grid) -> Result<Vec<Field>, DfeError> {
    let dmax = model
        .uninfected_diffusion()
        .into_iter()
        .fold(0.0, f64::max);
    let large = || {
        dfe_large_limit(model, grid)
            .map(|u| u.into_iter().map(|v| Field::constant(grid.len(), v)).collect())
    };
    let first = if dmax > 1.0 {
        large()
    } else {
        dfe_small_limit(model, grid)
    };
    let second = || {
        if dmax > 1.0 {
            dfe_small_limit(model, grid)
        } else {
            large()
        }
    };
    match first.or_else(|_| second()) {
        Ok(g) => Ok(g),
        Err(ModelError::UnsupportedLimit { .. }) => {
            Ok(vec![Field::constant(grid.len(), 1.0); model.n() - model.m()])
        }
        Err(e) => Err(e.into()),
    }
}

fn check_positive(model: &CompartmentModel, grid: &Grid, fields: &[Field]) -> Result<(), DfeError> {
    for (i, f) in fields.iter().enumerate() {
        if let Some((k, &v)) = f.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(DfeError::Positivity {
                compartment: model.compartments()[model.m() + i].name.clone(),
                x: grid.node(k),
                value: v,
            });
        }
    }
    Ok(())
}

/// `c(x)`: the uninfected profile as all diffusion rates vanish.
pub fn dfe_small_limit(model: &CompartmentModel, grid: &Grid) -> Result<Vec<Field>, ModelError> {
    let m = model.m();
    let names = model.names();
    let fields = match (model.small_limit_exprs(), model.dfe_rule()) {
        (Some(exprs), _) => exprs
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let f = grid
                    .nodes()
                    .map(|x| {
                        e.eval(x, &[]).map_err(|source| ModelError::Eval {
                            what: format!("small-diffusion profile of '{}'", names[m + i]),
                            x,
                            source,
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Field(f))
            })
            .collect::<Result<Vec<_>, ModelError>>()?,
        (None, DfeRule::UniformMass(total)) => {
            vec![Field::constant(grid.len(), total / grid.measure()); model.n() - m]
        }
        (None, DfeRule::Steady) => return Err(ModelError::UnsupportedLimit { which: "small" }),
    };
    for (i, f) in fields.iter().enumerate() {
        if let Some((k, &v)) = f.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(ModelError::NonPositiveProfile {
                name: names[m + i].clone(),
                x: grid.node(k),
                value: v,
            });
        }
    }
    Ok(fields)
}

/// `ũ`: the spatially constant uninfected state as all diffusion rates grow.
pub fn dfe_large_limit(model: &CompartmentModel, grid: &Grid) -> Result<Vec<f64>, ModelError> {
    let m = model.m();
    let names = model.names();
    let sample = |e: &crate::expr::Expr, i: usize| -> Result<Vec<f64>, ModelError> {
        grid.nodes()
            .map(|x| {
                e.eval(x, &[]).map_err(|source| ModelError::Eval {
                    what: format!("large-diffusion value of '{}'", names[m + i]),
                    x,
                    source,
                })
            })
            .collect()
    };
    let values = match (model.large_limit_values(), model.dfe_rule()) {
        (Some(vals), _) => vals
            .iter()
            .enumerate()
            .map(|(i, v)| match v {
                LargeValue::Ratio(num, den) => {
                    Ok(grid.integrate(&sample(num, i)?) / grid.integrate(&sample(den, i)?))
                }
                LargeValue::Mean(e) => Ok(grid.integrate(&sample(e, i)?) / grid.measure()),
            })
            .collect::<Result<Vec<_>, ModelError>>()?,
        (None, DfeRule::UniformMass(total)) => vec![total / grid.measure(); model.n() - m],
        (None, DfeRule::Steady) => return Err(ModelError::UnsupportedLimit { which: "large" }),
    };
    for (i, &v) in values.iter().enumerate() {
        if !(v > 0.0 && v.is_finite()) {
            return Err(ModelError::NonPositiveProfile {
                name: names[m + i].clone(),
                x: f64::NAN,
                value: v,
            });
        }
    }
    Ok(values)
}
