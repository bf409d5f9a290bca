//! The next-generation operator `-F B⁻¹` with `B = d_I Δ - V(x, u0(x))`,
//! its spectral radius R0, and the threshold sign relation with `s(B + F)`.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::banded::{BandError, BandLu, BandMatrix};
use crate::dfe::DfeState;
use crate::grid::Grid;
use crate::model::{CompartmentModel, ModelError};
use crate::spectral::{
    spectral_bound_cooperative, spectral_bound_is_negative, spectral_radius_nonneg, BoundOptions,
    LinearOperator, PowerOptions, SpectralError, SpectralResult, COOPERATIVITY_TOL,
};

/// Magnitudes below this are treated as "at threshold" by [`sign_check`].
pub const THRESHOLD_BAND: f64 = 1e-12;

/// Largest grid for which [`BlockOperator::next_generation_dense`] will form
/// the operator explicitly.
pub const DENSE_NODE_LIMIT: usize = 64;

/// Most refinement sweeps per solve with `B`.
const REFINE_STEPS: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum R0Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("-V is not cooperative at node {node} (x = {x}): entry ({row}, {col}) = {value:e}")]
    NotCooperative {
        node: usize,
        x: f64,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("F has a negative entry at node {node} (x = {x}): ({row}, {col}) = {value:e}")]
    NegativeIncidence {
        node: usize,
        x: f64,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("s(d_I Δ - V) is not negative, so the next-generation operator is undefined")]
    BoundNotNegative,
    #[error("block sizes do not match: {0}")]
    Shape(String),
    #[error("dense next-generation matrix limited to {DENSE_NODE_LIMIT} nodes, grid has {0}")]
    TooLarge(usize),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Band(#[from] BandError),
}

/// `sum_i d_i Δ ⊗ e_i e_iᵀ + diag_k(blocks[k])` on the node-major layout
/// `index = k * m + i`.
pub fn assemble_banded(grid: &Grid, diffusion: &[f64], blocks: &[DMatrix<f64>]) -> BandMatrix {
    let m = diffusion.len();
    let n = grid.len();
    assert_eq!(blocks.len(), n, "one block per node");
    let mut a = BandMatrix::zeros(n * m, m, m);
    for (i, &d) in diffusion.iter().enumerate() {
        let lap = grid.laplacian(d);
        for k in 0..n {
            let r = k * m + i;
            a.add(r, r, lap.diag[k]);
            if k > 0 {
                a.add(r, r - m, lap.lower[k - 1]);
            }
            if k + 1 < n {
                a.add(r, r + m, lap.upper[k]);
            }
        }
    }
    for (k, blk) in blocks.iter().enumerate() {
        assert_eq!(blk.nrows(), m, "block size");
        for i in 0..m {
            for j in 0..m {
                if blk[(i, j)] != 0.0 {
                    a.add(k * m + i, k * m + j, blk[(i, j)]);
                }
            }
        }
    }
    a
}

/// Discretized `B = d_I Δ - V` and the multiplication operator `F`.
#[derive(Debug, Clone)]
pub struct BlockOperator {
    m: usize,
    grid: Grid,
    diffusion: Vec<f64>,
    neg_v: Vec<DMatrix<f64>>,
    b: BandMatrix,
    f: Vec<DMatrix<f64>>,
}

impl BlockOperator {
    /// Build at the disease-free state.
    pub fn assemble(
        model: &CompartmentModel,
        grid: &Grid,
        dfe: &DfeState,
    ) -> Result<Self, R0Error> {
        let mut v = Vec::with_capacity(grid.len());
        let mut f = Vec::with_capacity(grid.len());
        for (k, x) in grid.nodes().enumerate() {
            let j = model.jacobians_at(x, &model.disease_free_state(&dfe.at(k)))?;
            v.push(j.v);
            f.push(j.f);
        }
        BlockOperator::from_blocks(grid, &model.infected_diffusion(), &v, f)
    }

    /// Build from nodal `V` and `F` blocks.
    pub fn from_blocks(
        grid: &Grid,
        diffusion: &[f64],
        v: &[DMatrix<f64>],
        f: Vec<DMatrix<f64>>,
    ) -> Result<Self, R0Error> {
        let m = diffusion.len();
        if v.len() != grid.len() || f.len() != grid.len() {
            return Err(R0Error::Shape(format!(
                "{} nodes, {} V blocks, {} F blocks",
                grid.len(),
                v.len(),
                f.len()
            )));
        }
        for (k, (vk, fk)) in v.iter().zip(&f).enumerate() {
            if vk.shape() != (m, m) || fk.shape() != (m, m) {
                return Err(R0Error::Shape(format!("blocks at node {k} are not {m}x{m}")));
            }
            for i in 0..m {
                for j in 0..m {
                    if i != j && -vk[(i, j)] < -COOPERATIVITY_TOL {
                        return Err(R0Error::NotCooperative {
                            node: k,
                            x: grid.node(k),
                            row: i,
                            col: j,
                            value: -vk[(i, j)],
                        });
                    }
                    if fk[(i, j)] < -COOPERATIVITY_TOL {
                        return Err(R0Error::NegativeIncidence {
                            node: k,
                            x: grid.node(k),
                            row: i,
                            col: j,
                            value: fk[(i, j)],
                        });
                    }
                }
            }
        }
        let neg_v: Vec<DMatrix<f64>> = v.iter().map(|b| -b).collect();
        Ok(BlockOperator {
            m,
            grid: grid.clone(),
            diffusion: diffusion.to_vec(),
            b: assemble_banded(grid, diffusion, &neg_v),
            neg_v,
            f,
        })
    }

    pub fn blocks(&self) -> usize {
        self.m
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.m * self.grid.len()
    }

    pub fn b_matrix(&self) -> &BandMatrix {
        &self.b
    }

    pub fn f_blocks(&self) -> &[DMatrix<f64>] {
        &self.f
    }

    /// `y = F v`, node by node.
    pub fn apply_f_into(&self, v: &[f64], y: &mut [f64]) {
        let m = self.m;
        for (k, fk) in self.f.iter().enumerate() {
            for i in 0..m {
                let mut s = 0.0;
                for j in 0..m {
                    s += fk[(i, j)] * v[k * m + j];
                }
                y[k * m + i] = s;
            }
        }
    }

    /// `y = B v` with the diffusion part written as differences of
    /// neighbours, so nearly constant `v` loses no digits to `d / h²`.
    pub fn apply_b_into(&self, v: &[f64], y: &mut [f64]) {
        let m = self.m;
        let n = self.grid.len();
        let h = self.grid.spacing();
        for (i, &d) in self.diffusion.iter().enumerate() {
            let c = d / (h * h);
            for k in 0..n {
                let here = v[k * m + i];
                // ghost reflection at both ends
                let left = if k > 0 { v[(k - 1) * m + i] } else { v[(k + 1) * m + i] };
                let right = if k + 1 < n { v[(k + 1) * m + i] } else { v[(k - 1) * m + i] };
                y[k * m + i] = c * ((left - here) + (right - here));
            }
        }
        for (k, blk) in self.neg_v.iter().enumerate() {
            for i in 0..m {
                let mut s = 0.0;
                for j in 0..m {
                    s += blk[(i, j)] * v[k * m + j];
                }
                y[k * m + i] += s;
            }
        }
    }

    /// Solve `B z = rhs`, refining while the correction keeps shrinking.
    pub fn solve_b(&self, lu: &BandLu, rhs: &[f64]) -> Vec<f64> {
        let mut z = rhs.to_vec();
        lu.solve_in_place(&mut z);
        let mut r = vec![0.0; z.len()];
        let mut last = f64::INFINITY;
        for _ in 0..REFINE_STEPS {
            self.apply_b_into(&z, &mut r);
            r.iter_mut().zip(rhs).for_each(|(r, b)| *r = b - *r);
            lu.solve_in_place(&mut r);
            let size = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if size >= last {
                break;
            }
            z.iter_mut().zip(&r).for_each(|(z, dz)| *z += dz);
            let scale = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if size <= f64::EPSILON * scale {
                break;
            }
            last = size;
        }
        z
    }

    /// `B + F`, cooperative whenever `B` is and `F >= 0`.
    pub fn b_plus_f(&self) -> BandMatrix {
        let mut a = self.b.clone();
        let m = self.m;
        for (k, fk) in self.f.iter().enumerate() {
            for i in 0..m {
                for j in 0..m {
                    if fk[(i, j)] != 0.0 {
                        a.add(k * m + i, k * m + j, fk[(i, j)]);
                    }
                }
            }
        }
        a
    }

    /// Certify `s(B) < 0` and factor `B`.
    pub fn factor_b(&self) -> Result<BandLu, R0Error> {
        if !spectral_bound_is_negative(&self.b)? {
            return Err(R0Error::BoundNotNegative);
        }
        Ok(self.b.factor()?)
    }

    /// Explicit `-F B⁻¹`; only for grids of at most [`DENSE_NODE_LIMIT`] nodes.
    pub fn next_generation_dense(&self) -> Result<DMatrix<f64>, R0Error> {
        if self.grid.len() > DENSE_NODE_LIMIT {
            return Err(R0Error::TooLarge(self.grid.len()));
        }
        let lu = self.factor_b()?;
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for c in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[c] = -1.0;
            let z = self.solve_b(&lu, &e);
            self.apply_f_into(&z, &mut col);
            out.set_column(c, &nalgebra::DVector::from_column_slice(&col));
        }
        Ok(out)
    }
}

/// `v -> -F B⁻¹ v` through a cached factorization of `B`.
pub struct NextGeneration<'a> {
    op: &'a BlockOperator,
    lu: BandLu,
}

impl<'a> NextGeneration<'a> {
    pub fn new(op: &'a BlockOperator) -> Result<Self, R0Error> {
        Ok(NextGeneration {
            lu: op.factor_b()?,
            op,
        })
    }
}

impl LinearOperator for NextGeneration<'_> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let rhs: Vec<f64> = x.iter().map(|v| -v).collect();
        let z = self.op.solve_b(&self.lu, &rhs);
        self.op.apply_f_into(&z, y);
    }
}

/// R0 of an assembled operator.
pub fn r0_of(op: &BlockOperator, tol: f64) -> Result<SpectralResult, R0Error> {
    let ng = NextGeneration::new(op)?;
    Ok(spectral_radius_nonneg(&ng, &PowerOptions::with_tol(tol))?)
}

/// `R0 = r(-F B⁻¹)` at the disease-free state.
pub fn compute_r0(
    model: &CompartmentModel,
    grid: &Grid,
    dfe: &DfeState,
    tol: f64,
) -> Result<SpectralResult, R0Error> {
    r0_of(&BlockOperator::assemble(model, grid, dfe)?, tol)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignReport {
    pub r0: f64,
    /// `s(B + F)`.
    pub bound: f64,
    /// `sign(R0 - 1) == sign(s(B + F))`; also true inside the indeterminate band.
    pub agree: bool,
    /// One of the two quantities lies within [`THRESHOLD_BAND`] of its threshold.
    pub indeterminate: bool,
}

pub fn sign_report(r0: f64, bound: f64) -> SignReport {
    let indeterminate = (r0 - 1.0).abs() < THRESHOLD_BAND || bound.abs() < THRESHOLD_BAND;
    SignReport {
        r0,
        bound,
        agree: indeterminate || ((r0 - 1.0) > 0.0) == (bound > 0.0),
        indeterminate,
    }
}

/// `s(B + F)` of an assembled operator.
pub fn threshold_bound(op: &BlockOperator, tol: f64) -> Result<SpectralResult, R0Error> {
    let opts = BoundOptions {
        power: PowerOptions::with_tol(tol),
        shift: None,
    };
    Ok(spectral_bound_cooperative(&op.b_plus_f(), &opts)?)
}

/// Compare `R0 - 1` with `s(B + F)`.
pub fn sign_check(
    model: &CompartmentModel,
    grid: &Grid,
    dfe: &DfeState,
    tol: f64,
) -> Result<SignReport, R0Error> {
    let op = BlockOperator::assemble(model, grid, dfe)?;
    let r0 = r0_of(&op, tol)?.value;
    let s = threshold_bound(&op, tol)?.value;
    Ok(sign_report(r0, s))
}
