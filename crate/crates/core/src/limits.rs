//! Small- and large-diffusion limits of R0, envelope matrices and the bounds
//! they give, the auxiliary principal eigenvalue `λ(a)`, and diffusion sweeps.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::banded::BandMatrix;
use crate::dfe::{dfe_large_limit, dfe_small_limit, solve_dfe, DfeError};
use crate::grid::{Field, Grid};
use crate::model::{CompartmentModel, ModelError};
use crate::r0::{assemble_banded, r0_of, sign_report, threshold_bound, BlockOperator, R0Error, SignReport};
use crate::spectral::{
    spectral_bound_cooperative, spectral_radius_nonneg, BoundOptions, PowerOptions, SpectralError,
    SpectralResult,
};

/// Default half-width of the envelope box, relative to the smallest
/// reference value.
pub const DEFAULT_EPS_FRACTION: f64 = 0.05;

/// Largest infected dimension for which the averaged-limit hypothesis is
/// checked on the full spectrum.
pub const FULL_SPECTRUM_LIMIT: usize = 6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LimitsError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dfe(#[from] DfeError),
    #[error(transparent)]
    R0(#[from] R0Error),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("V is singular at node {node} (x = {x})")]
    SingularV { node: usize, x: f64 },
    #[error("integrated V matrix is singular")]
    SingularAveragedV,
    #[error("V is not a nonsingular M-matrix at node {node} (x = {x})")]
    LocalBound { node: usize, x: f64 },
    #[error("epsilon {eps} must be nonnegative and below the smallest reference value {min}")]
    Epsilon { eps: f64, min: f64 },
    #[error("envelope {which} is not a nonsingular M-matrix (need s(-{which}) < 0)")]
    EnvelopeHypothesis { which: &'static str },
    #[error("diffusion schedule is empty")]
    EmptySchedule,
    #[error("diffusion tuple has {got} entries, model has {expected} compartments")]
    TupleLength { expected: usize, got: usize },
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

fn power_tol(a: &DMatrix<f64>) -> PowerOptions {
    PowerOptions::with_tol(1e-14 * (1.0 + a.abs().max()))
}

fn is_m_matrix(v: &DMatrix<f64>) -> bool {
    let offdiag_ok = (0..v.nrows())
        .all(|i| (0..v.ncols()).all(|j| i == j || v[(i, j)] <= 0.0));
    offdiag_ok && BandMatrix::from_dense(v).is_nonsingular_m_matrix()
}

/// `r(V⁻¹ F)` for small dense blocks with `V` a nonsingular M-matrix.
pub fn local_reproduction(v: &DMatrix<f64>, f: &DMatrix<f64>) -> Option<f64> {
    let vi = v.clone().try_inverse()?;
    let k = vi * f;
    spectral_radius_nonneg(&k, &power_tol(&k)).ok().map(|r| r.value)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalProfile {
    pub values: Vec<f64>,
    pub max: f64,
    /// Node of the maximum; ties go to the lowest index.
    pub argmax: usize,
    pub x_max: f64,
}

/// Local reproduction number `r(V⁻¹F)` at `(x, c(x))` for every node.
pub fn local_r0_profile(model: &CompartmentModel, grid: &Grid) -> Result<LocalProfile, LimitsError> {
    let c = dfe_small_limit(model, grid)?;
    let mut values = Vec::with_capacity(grid.len());
    for (k, x) in grid.nodes().enumerate() {
        let u: Vec<f64> = c.iter().map(|f| f[k]).collect();
        let j = model.jacobians_at(x, &model.disease_free_state(&u))?;
        if !is_m_matrix(&j.v) {
            return Err(LimitsError::LocalBound { node: k, x });
        }
        let r = local_reproduction(&j.v, &j.f).ok_or(LimitsError::SingularV { node: k, x })?;
        values.push(r);
    }
    let (argmax, max) = values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    Ok(LocalProfile {
        values,
        max,
        argmax,
        x_max: grid.node(argmax),
    })
}

/// Status of the hypothesis that `r` is the only eigenvalue of the averaged
/// next-generation matrix with a nonnegative eigenvector.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", content = "detail", rename_all = "lowercase")]
pub enum Hypothesis {
    /// Certified by a strictly positive left eigenvector of the named product.
    Verified(String),
    Violated(String),
    Unverified(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AveragedLimit {
    pub value: f64,
    #[serde(skip)]
    pub v_check: DMatrix<f64>,
    #[serde(skip)]
    pub f_check: DMatrix<f64>,
    pub hypothesis: Hypothesis,
    /// Power iteration needed an unusually long run, a sign of a non-simple
    /// or nearly degenerate Perron eigenvalue.
    pub slow_convergence: bool,
}

/// Left eigenvector for `r`, when the eigenspace is one-dimensional.
fn left_vector(k: &DMatrix<f64>, r: f64) -> Option<Vec<f64>> {
    let m = k.nrows();
    let shifted = k.transpose() - DMatrix::identity(m, m) * r;
    let svd = shifted.svd(false, true);
    let vt = svd.v_t?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let scale = 1.0 + k.abs().max();
    if m > 1 && svd.singular_values[order[1]] < 1e-10 * scale {
        return None;
    }
    let row = vt.row(order[0]);
    let sign = if row.sum() < 0.0 { -1.0 } else { 1.0 };
    let v: Vec<f64> = row.iter().map(|x| sign * x).collect();
    let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Some(v.into_iter().map(|x| x / vmax).collect())
}

fn check_hypothesis(v_check: &DMatrix<f64>, f_check: &DMatrix<f64>, r: f64) -> Hypothesis {
    let m = v_check.nrows();
    if !(r > 0.0) {
        return Hypothesis::Violated("spectral radius is zero".into());
    }
    let Some(vi) = v_check.clone().try_inverse() else {
        return Hypothesis::Violated("integrated V is singular".into());
    };
    if m > FULL_SPECTRUM_LIMIT {
        return Hypothesis::Unverified(format!(
            "full-spectrum inspection limited to m <= {FULL_SPECTRUM_LIMIT}"
        ));
    }
    let products = [("V^-1 F", &vi * f_check), ("F V^-1", f_check * &vi)];
    // algebraic simplicity of r, on either product (same nonzero spectrum)
    let close = products[0]
        .1
        .complex_eigenvalues()
        .iter()
        .filter(|z| (z.re - r).abs() + z.im.abs() < 1e-8 * r)
        .count();
    if close != 1 {
        return Hypothesis::Violated(format!("eigenvalue {r} has multiplicity {close}"));
    }
    for (name, k) in &products {
        if let Some(y) = left_vector(k, r) {
            if y.iter().all(|&v| v > 1e-10) {
                return Hypothesis::Verified(format!(
                    "simple, with a strictly positive left eigenvector of {name}"
                ));
            }
        }
    }
    Hypothesis::Unverified("no strictly positive left eigenvector found".into())
}

/// `r(V̌⁻¹ F̌)` with `V̌`, `F̌` the integrals of `V`, `F` at the large-diffusion
/// state.
pub fn averaged_limit(model: &CompartmentModel, grid: &Grid) -> Result<AveragedLimit, LimitsError> {
    let ut = dfe_large_limit(model, grid)?;
    let u = model.disease_free_state(&ut);
    let m = model.m();
    let mut vs = vec![Vec::with_capacity(grid.len()); m * m];
    let mut fs = vec![Vec::with_capacity(grid.len()); m * m];
    for x in grid.nodes() {
        let j = model.jacobians_at(x, &u)?;
        for i in 0..m {
            for c in 0..m {
                vs[i * m + c].push(j.v[(i, c)]);
                fs[i * m + c].push(j.f[(i, c)]);
            }
        }
    }
    let v_check = DMatrix::from_fn(m, m, |i, c| grid.integrate(&vs[i * m + c]));
    let f_check = DMatrix::from_fn(m, m, |i, c| grid.integrate(&fs[i * m + c]));
    let vi = v_check
        .clone()
        .try_inverse()
        .ok_or(LimitsError::SingularAveragedV)?;
    let k = &vi * &f_check;
    let res = spectral_radius_nonneg(&k, &power_tol(&k))?;
    let hypothesis = check_hypothesis(&v_check, &f_check, res.value);
    Ok(AveragedLimit {
        value: res.value,
        v_check,
        f_check,
        hypothesis,
        slow_convergence: res.iterations > 10_000,
    })
}

/// Box centre for envelope matrices.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    /// `c(x)`.
    SmallLimit,
    /// `ũ`.
    LargeLimit,
    /// Given uninfected fields, e.g. a computed disease-free state.
    Profile(Vec<Field>),
}

impl Reference {
    fn fields(&self, model: &CompartmentModel, grid: &Grid) -> Result<Vec<Field>, LimitsError> {
        Ok(match self {
            Reference::SmallLimit => dfe_small_limit(model, grid)?,
            Reference::LargeLimit => dfe_large_limit(model, grid)?
                .into_iter()
                .map(|v| Field::constant(grid.len(), v))
                .collect(),
            Reference::Profile(f) => f.clone(),
        })
    }
}

/// Entrywise extremes of `V` and `F` at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalEnvelope {
    pub x: f64,
    pub v_low: DMatrix<f64>,
    pub v_high: DMatrix<f64>,
    pub f_low: DMatrix<f64>,
    pub f_high: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeMatrices {
    pub epsilon: f64,
    pub v_low: DMatrix<f64>,
    pub v_high: DMatrix<f64>,
    pub f_low: DMatrix<f64>,
    pub f_high: DMatrix<f64>,
    pub nodal: Vec<NodalEnvelope>,
}

impl EnvelopeMatrices {
    /// Every envelope of `self` lies inside the matching one of `wider`.
    pub fn nested_in(&self, wider: &EnvelopeMatrices, slack: f64) -> bool {
        let le = |a: &DMatrix<f64>, b: &DMatrix<f64>| a.iter().zip(b.iter()).all(|(x, y)| *x <= y + slack);
        le(&wider.v_low, &self.v_low)
            && le(&self.v_high, &wider.v_high)
            && le(&wider.f_low, &self.f_low)
            && le(&self.f_high, &wider.f_high)
    }

    /// Largest entrywise change between two envelope sets.
    pub fn distance(&self, other: &EnvelopeMatrices) -> f64 {
        [
            (&self.v_low, &other.v_low),
            (&self.v_high, &other.v_high),
            (&self.f_low, &other.f_low),
            (&self.f_high, &other.f_high),
        ]
        .iter()
        .map(|(a, b)| (*a - *b).abs().max())
        .fold(0.0, f64::max)
    }
}

fn minmax_into(lo: &mut DMatrix<f64>, hi: &mut DMatrix<f64>, a: &DMatrix<f64>) {
    for ((l, h), v) in lo.iter_mut().zip(hi.iter_mut()).zip(a.iter()) {
        *l = l.min(*v);
        *h = h.max(*v);
    }
}

/// Extremes of `V(x,u)`, `F(x,u)` over the nodes and over the box
/// `|u_S - ref(x)| <= eps`, sampled at its corners and centre.
pub fn envelopes(
    model: &CompartmentModel,
    grid: &Grid,
    reference: &Reference,
    eps: f64,
) -> Result<EnvelopeMatrices, LimitsError> {
    let refs = reference.fields(model, grid)?;
    let min = refs.iter().map(|f| f.min()).fold(f64::INFINITY, f64::min);
    if !(eps >= 0.0 && eps < min) {
        return Err(LimitsError::Epsilon { eps, min });
    }
    let (m, s) = (model.m(), refs.len());
    let big = || DMatrix::from_element(m, m, f64::INFINITY);
    let small = || DMatrix::from_element(m, m, f64::NEG_INFINITY);
    let (mut vl, mut vh, mut fl, mut fh) = (big(), small(), big(), small());
    let mut nodal = Vec::with_capacity(grid.len());
    let corners: Vec<Vec<f64>> = (0..1usize << s)
        .map(|mask| (0..s).map(|i| if mask >> i & 1 == 1 { eps } else { -eps }).collect())
        .chain(std::iter::once(vec![0.0; s]))
        .collect();
    for (k, x) in grid.nodes().enumerate() {
        let (mut nvl, mut nvh, mut nfl, mut nfh) = (big(), small(), big(), small());
        for offs in &corners {
            let us: Vec<f64> = (0..s).map(|i| refs[i][k] + offs[i]).collect();
            let j = model.jacobians_at(x, &model.disease_free_state(&us))?;
            minmax_into(&mut nvl, &mut nvh, &j.v);
            minmax_into(&mut nfl, &mut nfh, &j.f);
        }
        minmax_into(&mut vl, &mut vh, &nvl);
        minmax_into(&mut vl, &mut vh, &nvh);
        minmax_into(&mut fl, &mut fh, &nfl);
        minmax_into(&mut fl, &mut fh, &nfh);
        nodal.push(NodalEnvelope {
            x,
            v_low: nvl,
            v_high: nvh,
            f_low: nfl,
            f_high: nfh,
        });
    }
    Ok(EnvelopeMatrices {
        epsilon: eps,
        v_low: vl,
        v_high: vh,
        f_low: fl,
        f_high: fh,
        nodal,
    })
}

/// `[r(V̄⁻¹F̲), r(V̲⁻¹F̄)]`.
pub fn envelope_bounds(env: &EnvelopeMatrices) -> Result<(f64, f64), LimitsError> {
    for (which, v) in [("V_high", &env.v_high), ("V_low", &env.v_low)] {
        if !is_m_matrix(v) {
            return Err(LimitsError::EnvelopeHypothesis { which });
        }
    }
    let low = local_reproduction(&env.v_high, &env.f_low)
        .ok_or(LimitsError::EnvelopeHypothesis { which: "V_high" })?;
    let high = local_reproduction(&env.v_low, &env.f_high)
        .ok_or(LimitsError::EnvelopeHypothesis { which: "V_low" })?;
    Ok((low, high))
}

/// Principal eigenvalue of `d_I Δ - V̲_ε(x) + a F̄_ε(x)` built from the
/// nodewise envelopes.
pub fn auxiliary_lambda(
    model: &CompartmentModel,
    grid: &Grid,
    env: &EnvelopeMatrices,
    a: f64,
    tol: f64,
) -> Result<SpectralResult, LimitsError> {
    let blocks: Vec<DMatrix<f64>> = env
        .nodal
        .iter()
        .map(|n| -&n.v_low + &n.f_high * a)
        .collect();
    let op = assemble_banded(grid, &model.infected_diffusion(), &blocks);
    let opts = BoundOptions {
        power: PowerOptions::with_tol(tol),
        shift: None,
    };
    Ok(spectral_bound_cooperative(&op, &opts)?)
}

/// `max_x s(-V̲_ε(x) + a F̄_ε(x))`: the vanishing-diffusion value of
/// [`auxiliary_lambda`].
pub fn auxiliary_lambda_pointwise(env: &EnvelopeMatrices, a: f64) -> f64 {
    env.nodal
        .iter()
        .map(|n| crate::spectral::dense_spectral_bound(&(-&n.v_low + &n.f_high * a)))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Envelope change `|E(eps) - E(eps - gap)|` for `gap = eps / 2^k`,
/// `k = 1..=steps`; should shrink to zero.
pub fn envelope_continuity(
    model: &CompartmentModel,
    grid: &Grid,
    reference: &Reference,
    eps: f64,
    steps: usize,
) -> Result<Vec<(f64, f64)>, LimitsError> {
    let base = envelopes(model, grid, reference, eps)?;
    (1..=steps)
        .map(|k| {
            let gap = eps / f64::powi(2.0, k as i32);
            let e = envelopes(model, grid, reference, eps - gap)?;
            Ok((gap, base.distance(&e)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub tol: f64,
    /// Envelope half-width as a fraction of the smallest reference value.
    pub eps_fraction: f64,
    pub jobs: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            tol: 1e-10,
            eps_fraction: DEFAULT_EPS_FRACTION,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub diffusion: Vec<f64>,
    pub r0: Option<f64>,
    pub bound: Option<f64>,
    pub sign: Option<SignReport>,
    /// Bracket from envelopes around this point's own disease-free state.
    pub envelope: Option<(f64, f64)>,
    pub r0_iterations: Option<usize>,
    pub dfe_residual: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitReport {
    pub model: String,
    pub nodes: usize,
    pub rows: Vec<SweepRow>,
    pub small_limit: Option<f64>,
    pub large_limit: Option<f64>,
    pub local_profile: Option<LocalProfile>,
    pub averaged: Option<AveragedLimit>,
    /// Envelope brackets around `c(x)` and `ũ`.
    pub small_envelope: Option<(f64, f64)>,
    pub large_envelope: Option<(f64, f64)>,
    pub notes: Vec<String>,
}

impl LimitReport {
    /// Rows where R0 and `s(B+F)` disagree in sign outside the dead zone.
    pub fn sign_violations(&self, margin: f64) -> usize {
        self.rows
            .iter()
            .filter_map(|r| r.sign.as_ref())
            .filter(|s| (s.r0 - 1.0).abs() > margin && s.bound.abs() > margin)
            .filter(|s| !s.agree)
            .count()
    }
}

fn eps_for(fields: &[Field], fraction: f64) -> f64 {
    fraction * fields.iter().map(|f| f.min()).fold(f64::INFINITY, f64::min)
}

/// One point of a sweep.
pub fn sweep_point(
    model: &CompartmentModel,
    grid: &Grid,
    diffusion: &[f64],
    opts: &SweepOptions,
) -> SweepRow {
    let mut row = SweepRow {
        diffusion: diffusion.to_vec(),
        r0: None,
        bound: None,
        sign: None,
        envelope: None,
        r0_iterations: None,
        dfe_residual: None,
        error: None,
    };
    let run = |row: &mut SweepRow| -> Result<(), LimitsError> {
        let md = model.with_diffusion(diffusion)?;
        let dfe = solve_dfe(&md, grid)?;
        row.dfe_residual = Some(dfe.residual);
        let op = BlockOperator::assemble(&md, grid, &dfe)?;
        let r = r0_of(&op, opts.tol)?;
        row.r0 = Some(r.value);
        row.r0_iterations = Some(r.iterations);
        let s = threshold_bound(&op, opts.tol)?;
        row.bound = Some(s.value);
        row.sign = Some(sign_report(r.value, s.value));
        let eps = eps_for(&dfe.fields, opts.eps_fraction);
        let env = envelopes(&md, grid, &Reference::Profile(dfe.fields), eps)?;
        row.envelope = Some(envelope_bounds(&env)?);
        Ok(())
    };
    if let Err(e) = run(&mut row) {
        row.error = Some(e.to_string());
    }
    row
}

/// R0 along a diffusion schedule plus both limits and envelope brackets.
/// Points are independent and computed on `opts.jobs` threads; rows keep the
/// schedule order.
pub fn sweep(
    model: &CompartmentModel,
    grid: &Grid,
    schedule: &[Vec<f64>],
    opts: &SweepOptions,
) -> Result<LimitReport, LimitsError> {
    if schedule.is_empty() {
        return Err(LimitsError::EmptySchedule);
    }
    if let Some(t) = schedule.iter().find(|t| t.len() != model.n()) {
        return Err(LimitsError::TupleLength {
            expected: model.n(),
            got: t.len(),
        });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| LimitsError::Pool(e.to_string()))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        schedule
            .par_iter()
            .map(|d| sweep_point(model, grid, d, opts))
            .collect()
    });

    let mut notes = Vec::new();
    let local = local_r0_profile(model, grid)
        .map_err(|e| notes.push(format!("small-diffusion limit unavailable: {e}")))
        .ok();
    let averaged = averaged_limit(model, grid)
        .map_err(|e| notes.push(format!("large-diffusion limit unavailable: {e}")))
        .ok();
    let bracket = |r: Reference| -> Option<(f64, f64)> {
        let f = r.fields(model, grid).ok()?;
        let env = envelopes(model, grid, &r, eps_for(&f, opts.eps_fraction)).ok()?;
        envelope_bounds(&env).ok()
    };
    if let (Some(l), Some(a)) = (&local, &averaged) {
        if a.value > l.max * (1.0 + 1e-12) {
            notes.push(format!(
                "averaged limit {} exceeds the local maximum {}",
                a.value, l.max
            ));
        }
    }
    Ok(LimitReport {
        model: model.name().to_string(),
        nodes: grid.len(),
        rows,
        small_limit: local.as_ref().map(|l| l.max),
        large_limit: averaged.as_ref().map(|a| a.value),
        local_profile: local,
        averaged,
        small_envelope: bracket(Reference::SmallLimit),
        large_envelope: bracket(Reference::LargeLimit),
        notes,
    })
}

/// Log-spaced schedule `10^lo ..= 10^hi` with every compartment at the same rate.
pub fn log_schedule(n: usize, lo: f64, hi: f64, points: usize) -> Vec<Vec<f64>> {
    (0..points)
        .map(|i| {
            let t = if points == 1 { 0.0 } else { i as f64 / (points - 1) as f64 };
            vec![10f64.powf(lo + t * (hi - lo)); n]
        })
        .collect()
}
