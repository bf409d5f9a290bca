//! Spectral radius of nonnegative operators, spectral bound of cooperative
//! operators, irreducibility of sparsity patterns, and block solves.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::banded::{BandError, BandLu, BandMatrix};
use crate::r0::BlockOperator;

/// Off-diagonal entries above `-COOPERATIVITY_TOL` count as nonnegative.
pub const COOPERATIVITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectralError {
    #[error(
        "power iteration did not converge after {iterations} iterations \
         (last estimate {estimate}, residual {residual:e})"
    )]
    NotConverged {
        estimate: f64,
        residual: f64,
        iterations: usize,
    },
    #[error("operator is not cooperative: entry ({row}, {col}) = {value:e}")]
    NotCooperative { row: usize, col: usize, value: f64 },
    #[error("shift {shift} does not exceed the spectral bound")]
    ShiftTooSmall { shift: f64 },
    #[error(transparent)]
    Factorization(#[from] BandError),
}

/// A linear map on `R^n`.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply_into(&self, x: &[f64], y: &mut [f64]);

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply_into(x, &mut y);
        y
    }
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = (0..self.ncols()).map(|j| self[(i, j)] * x[j]).sum();
        }
    }
}

impl LinearOperator for BandMatrix {
    fn dim(&self) -> usize {
        BandMatrix::dim(self)
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        BandMatrix::apply_into(self, x, y)
    }
}

/// `x -> A^{-1} x` through a stored factorization.
pub struct Inverse<'a>(pub &'a BandLu);

impl LinearOperator for Inverse<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
        self.0.solve_in_place(y);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Each step multiplies by `A + c I` with `c = shift_ratio * estimate`,
    /// which breaks ties in modulus (e.g. `±r` for bipartite coupling)
    /// without changing the eigenvector.
    pub shift_ratio: f64,
}

impl Default for PowerOptions {
    fn default() -> Self {
        PowerOptions {
            tol: 1e-10,
            max_iter: 100_000,
            shift_ratio: 0.25,
        }
    }
}

impl PowerOptions {
    pub fn with_tol(tol: f64) -> Self {
        PowerOptions {
            tol,
            ..Default::default()
        }
    }
}

/// Dominant eigenpair of a nonnegative operator, or the spectral bound of a
/// cooperative one.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResult {
    pub value: f64,
    /// Nonnegative, sup-norm 1.
    pub vector: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// The iterates vanished: the spectral radius is zero.
    pub decayed: bool,
}

fn normalize(v: &mut [f64]) -> f64 {
    let m = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if m > 0.0 {
        v.iter_mut().for_each(|x| *x /= m);
    }
    m
}

fn power_iterate<A, C>(a: &A, opts: &PowerOptions, converged: C) -> Result<SpectralResult, SpectralError>
where
    A: LinearOperator + ?Sized,
    C: Fn(f64, f64) -> bool,
{
    let n = a.dim();
    let mut v = vec![1.0; n];
    let mut w = vec![0.0; n];
    let mut estimate = 0.0;
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        a.apply_into(&v, &mut w);
        let wmax = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if wmax < 1e-300 {
            return Ok(SpectralResult {
                value: 0.0,
                vector: v,
                iterations: it,
                residual: 0.0,
                decayed: true,
            });
        }
        let vv: f64 = v.iter().map(|x| x * x).sum();
        let vw: f64 = v.iter().zip(&w).map(|(x, y)| x * y).sum();
        estimate = vw / vv;
        residual = v
            .iter()
            .zip(&w)
            .fold(0.0f64, |m, (x, y)| m.max((y - estimate * x).abs()));
        if converged(estimate, residual) {
            // hand back the image, normalized: one more step toward the eigenvector
            let mut vector = w;
            normalize(&mut vector);
            return Ok(SpectralResult {
                value: estimate,
                vector,
                iterations: it,
                residual,
                decayed: false,
            });
        }
        let c = opts.shift_ratio * estimate.max(0.0);
        for (wi, vi) in w.iter_mut().zip(&v) {
            *wi += c * vi;
        }
        normalize(&mut w);
        std::mem::swap(&mut v, &mut w);
    }
    Err(SpectralError::NotConverged {
        estimate,
        residual,
        iterations: opts.max_iter,
    })
}

/// Spectral radius of an entrywise-nonnegative operator by power iteration
/// from the all-ones vector. Converged when `||A v - r v||_inf <= tol`.
pub fn spectral_radius_nonneg<A: LinearOperator + ?Sized>(
    a: &A,
    opts: &PowerOptions,
) -> Result<SpectralResult, SpectralError> {
    let tol = opts.tol;
    power_iterate(a, opts, |_, res| res <= tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoundOptions {
    pub power: PowerOptions,
    /// Resolvent shift; defaults to `1 + max row sum`, an upper bound of the
    /// spectral bound for any cooperative matrix.
    pub shift: Option<f64>,
}

/// Spectral bound `s(A)` of a cooperative band matrix.
///
/// For `sigma > s(A)` the resolvent `(sigma I - A)^{-1}` is nonnegative with
/// spectral radius `1 / (sigma - s(A))`, so `s(A)` follows from a power
/// iteration on the resolvent. The reported residual is in units of `s`.
pub fn spectral_bound_cooperative(
    a: &BandMatrix,
    opts: &BoundOptions,
) -> Result<SpectralResult, SpectralError> {
    check_cooperative(a)?;
    let sigma = opts.shift.unwrap_or(1.0 + a.max_row_sum());
    let mut shifted = a.clone();
    shifted.scale(-1.0);
    shifted.add_diagonal(sigma);
    if !shifted.is_nonsingular_m_matrix() {
        return Err(SpectralError::ShiftTooSmall { shift: sigma });
    }
    let lu = shifted.factor()?;
    let tol = opts.power.tol;
    let res = power_iterate(&Inverse(&lu), &opts.power, |rho, r| r <= tol * rho * rho)?;
    let rho = res.value;
    Ok(SpectralResult {
        value: sigma - 1.0 / rho,
        residual: res.residual / (rho * rho),
        ..res
    })
}

/// Exact sign test: `s(A) < 0` for cooperative `A` iff `-A` is a nonsingular
/// M-matrix.
pub fn spectral_bound_is_negative(a: &BandMatrix) -> Result<bool, SpectralError> {
    check_cooperative(a)?;
    let mut neg = a.clone();
    neg.scale(-1.0);
    Ok(neg.is_nonsingular_m_matrix())
}

pub fn check_cooperative(a: &BandMatrix) -> Result<(), SpectralError> {
    let (min, at) = a.min_off_diagonal();
    match at {
        Some((row, col)) if min < -COOPERATIVITY_TOL => Err(SpectralError::NotCooperative {
            row,
            col,
            value: min,
        }),
        _ => Ok(()),
    }
}

/// Largest real part over the full spectrum of a small dense matrix.
pub fn dense_spectral_bound(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// True iff the digraph with an edge `i -> j` for every `pattern[i][j]`
/// (`i != j`) is strongly connected.
pub fn is_irreducible(pattern: &[Vec<bool>]) -> bool {
    let n = pattern.len();
    assert!(pattern.iter().all(|r| r.len() == n), "pattern must be square");
    if n <= 1 {
        return true;
    }
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let edge = if forward { pattern[i][j] } else { pattern[j][i] };
                if i != j && edge && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Solve `B z = rhs` for a block operator (node-major layout).
pub fn solve_block_system(op: &BlockOperator, rhs: &[f64]) -> Result<Vec<f64>, SpectralError> {
    let lu = op.b_matrix().factor()?;
    Ok(lu.solve(rhs))
}
