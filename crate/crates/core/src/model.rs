//! Compartmental reaction-diffusion models `u_t = D Δu + F(x,u) - V⁻(x,u) + V⁺(x,u)`
//! with infected compartments listed first, and their Jacobian blocks.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::dfe::DfeState;
use crate::expr::{EvalError, Expr, Func};
use crate::grid::Grid;
use crate::r0::assemble_banded;
use crate::spectral::{dense_spectral_bound, is_irreducible, COOPERATIVITY_TOL};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("need 1 <= m < n infected compartments, got m = {m}, n = {n}")]
    InfectedCount { m: usize, n: usize },
    #[error("infected compartments must come first ('{name}' is infected but follows an uninfected one)")]
    InfectedOrder { name: String },
    #[error("diffusion rate of '{name}' must be positive and finite, got {value}")]
    Diffusion { name: String, value: f64 },
    #[error("new-infection term of uninfected compartment '{name}' must be identically zero")]
    UninfectedIncidence { name: String },
    #[error("expression refers to state u{} but the model has {n} compartments", .index + 1)]
    StateOutOfRange { index: usize, n: usize },
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("{what} at x = {x}: {source}")]
    Eval {
        what: String,
        x: f64,
        #[source]
        source: EvalError,
    },
    #[error("no {which}-diffusion reference profile is defined for this model")]
    UnsupportedLimit { which: &'static str },
    #[error("reference profile of '{name}' is not positive at x = {x} (value {value})")]
    NonPositiveProfile { name: String, x: f64, value: f64 },
}

/// How the uninfected steady state is determined.
#[derive(Debug, Clone, PartialEq)]
pub enum DfeRule {
    /// Solve `d_S Δu_S + f_S(x, (0, u_S)) = 0`.
    Steady,
    /// The uninfected dynamics vanish on the disease-free set and conserve
    /// mass: every uninfected compartment is the constant `total / |Ω|`.
    UniformMass(f64),
}

/// Spatially constant value of an uninfected compartment in the
/// large-diffusion regime.
#[derive(Debug, Clone, PartialEq)]
pub enum LargeValue {
    /// `∫num / ∫den`.
    Ratio(Expr, Expr),
    /// `∫e / |Ω|`; a constant expression gives itself.
    Mean(Expr),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Compartment {
    pub name: String,
    pub infected: bool,
    pub diffusion: f64,
    pub f: Expr,
    pub vplus: Expr,
    pub vminus: Expr,
}

impl Compartment {
    pub fn new(name: &str, infected: bool, diffusion: f64) -> Self {
        Compartment {
            name: name.to_string(),
            infected,
            diffusion,
            f: Expr::Const(0.0),
            vplus: Expr::Const(0.0),
            vminus: Expr::Const(0.0),
        }
    }

    pub fn f(mut self, e: Expr) -> Self {
        self.f = e;
        self
    }

    pub fn vplus(mut self, e: Expr) -> Self {
        self.vplus = e;
        self
    }

    pub fn vminus(mut self, e: Expr) -> Self {
        self.vminus = e;
        self
    }
}

#[derive(Debug, Clone)]
pub struct CompartmentModel {
    name: String,
    domain: (f64, f64),
    compartments: Vec<Compartment>,
    m: usize,
    dfe_rule: DfeRule,
    small: Option<Vec<Expr>>,
    large: Option<Vec<LargeValue>>,
    // dF_i/du_j and dV_i/du_j for infected i, j
    jf: Vec<Vec<Expr>>,
    jv: Vec<Vec<Expr>>,
    // d f_i / d u_j over all compartments
    jfull: Vec<Vec<Expr>>,
}

/// Jacobian blocks at one point: `f` and `v` are `m x m`, `m_block` is the
/// uninfected `(n-m) x (n-m)` block of the full Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianSample {
    pub x: f64,
    pub f: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub m_block: DMatrix<f64>,
}

fn eval_at(e: &Expr, what: impl FnOnce() -> String, x: f64, u: &[f64]) -> Result<f64, ModelError> {
    e.eval(x, u).map_err(|source| ModelError::Eval {
        what: what(),
        x,
        source,
    })
}

impl CompartmentModel {
    pub fn new(
        name: &str,
        domain: (f64, f64),
        compartments: Vec<Compartment>,
    ) -> Result<Self, ModelError> {
        let n = compartments.len();
        let m = compartments.iter().take_while(|c| c.infected).count();
        if let Some(c) = compartments[m..].iter().find(|c| c.infected) {
            return Err(ModelError::InfectedOrder {
                name: c.name.clone(),
            });
        }
        if m == 0 || m >= n {
            return Err(ModelError::InfectedCount { m, n });
        }
        for c in &compartments {
            if !(c.diffusion > 0.0 && c.diffusion.is_finite()) {
                return Err(ModelError::Diffusion {
                    name: c.name.clone(),
                    value: c.diffusion,
                });
            }
            for e in [&c.f, &c.vplus, &c.vminus] {
                if let Some(index) = e.max_state().filter(|&i| i >= n) {
                    return Err(ModelError::StateOutOfRange { index, n });
                }
            }
        }
        if let Some(c) = compartments[m..].iter().find(|c| !c.f.is_zero()) {
            return Err(ModelError::UninfectedIncidence {
                name: c.name.clone(),
            });
        }
        let net_v: Vec<Expr> = compartments
            .iter()
            .map(|c| c.vminus.clone() - c.vplus.clone())
            .collect();
        let jf = (0..m)
            .map(|i| (0..m).map(|j| compartments[i].f.d_state(j)).collect())
            .collect();
        let jv = (0..m)
            .map(|i| (0..m).map(|j| net_v[i].d_state(j)).collect())
            .collect();
        let jfull = (0..n)
            .map(|i| {
                let fi = compartments[i].f.clone() - net_v[i].clone();
                (0..n).map(|j| fi.d_state(j)).collect()
            })
            .collect();
        Ok(CompartmentModel {
            name: name.to_string(),
            domain,
            compartments,
            m,
            dfe_rule: DfeRule::Steady,
            small: None,
            large: None,
            jf,
            jv,
            jfull,
        })
    }

    pub fn with_dfe_rule(mut self, rule: DfeRule) -> Self {
        self.dfe_rule = rule;
        self
    }

    /// Pointwise small-diffusion profile `c(x)`, one expression in `x` per
    /// uninfected compartment.
    pub fn with_small_limit(mut self, c: Vec<Expr>) -> Result<Self, ModelError> {
        self.check_uninfected_len(c.len())?;
        self.small = Some(c);
        Ok(self)
    }

    pub fn with_large_limit(mut self, u: Vec<LargeValue>) -> Result<Self, ModelError> {
        self.check_uninfected_len(u.len())?;
        self.large = Some(u);
        Ok(self)
    }

    /// Same model with new diffusion rates.
    pub fn with_diffusion(&self, d: &[f64]) -> Result<Self, ModelError> {
        if d.len() != self.n() {
            return Err(ModelError::Length {
                expected: self.n(),
                got: d.len(),
            });
        }
        let mut out = self.clone();
        for (c, &v) in out.compartments.iter_mut().zip(d) {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError::Diffusion {
                    name: c.name.clone(),
                    value: v,
                });
            }
            c.diffusion = v;
        }
        Ok(out)
    }

    fn check_uninfected_len(&self, got: usize) -> Result<(), ModelError> {
        let expected = self.n() - self.m;
        if got != expected {
            return Err(ModelError::Length { expected, got });
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.compartments.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn compartments(&self) -> &[Compartment] {
        &self.compartments
    }

    pub fn names(&self) -> Vec<String> {
        self.compartments.iter().map(|c| c.name.clone()).collect()
    }

    pub fn diffusion(&self) -> Vec<f64> {
        self.compartments.iter().map(|c| c.diffusion).collect()
    }

    pub fn infected_diffusion(&self) -> Vec<f64> {
        self.diffusion()[..self.m].to_vec()
    }

    pub fn uninfected_diffusion(&self) -> Vec<f64> {
        self.diffusion()[self.m..].to_vec()
    }

    pub fn dfe_rule(&self) -> &DfeRule {
        &self.dfe_rule
    }

    pub fn small_limit_exprs(&self) -> Option<&[Expr]> {
        self.small.as_deref()
    }

    pub fn large_limit_values(&self) -> Option<&[LargeValue]> {
        self.large.as_deref()
    }

    /// Symbolic `dF_i/du_j`, infected `i, j`.
    pub fn f_jacobian(&self) -> &[Vec<Expr>] {
        &self.jf
    }

    /// Symbolic `dV_i/du_j` with `V = V⁻ - V⁺`, infected `i, j`.
    pub fn v_jacobian(&self) -> &[Vec<Expr>] {
        &self.jv
    }

    /// Symbolic Jacobian of the full reaction term.
    pub fn full_jacobian(&self) -> &[Vec<Expr>] {
        &self.jfull
    }

    /// Reaction term `F - V⁻ + V⁺` for every compartment.
    pub fn reaction(&self, x: f64, u: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.compartments
            .iter()
            .map(|c| {
                let f = eval_at(&c.f, || format!("F[{}]", c.name), x, u)?;
                let vm = eval_at(&c.vminus, || format!("Vminus[{}]", c.name), x, u)?;
                let vp = eval_at(&c.vplus, || format!("Vplus[{}]", c.name), x, u)?;
                Ok(f - vm + vp)
            })
            .collect()
    }

    /// Full `n x n` Jacobian of the reaction term.
    pub fn reaction_jacobian(&self, x: f64, u: &[f64]) -> Result<DMatrix<f64>, ModelError> {
        let n = self.n();
        let mut j = DMatrix::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                j[(r, c)] = eval_at(&self.jfull[r][c], || format!("J[{},{}]", r + 1, c + 1), x, u)?;
            }
        }
        Ok(j)
    }

    pub fn jacobians_at(&self, x: f64, u: &[f64]) -> Result<JacobianSample, ModelError> {
        let (n, m) = (self.n(), self.m);
        if u.len() != n {
            return Err(ModelError::Length {
                expected: n,
                got: u.len(),
            });
        }
        let mut f = DMatrix::zeros(m, m);
        let mut v = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                f[(i, j)] = eval_at(&self.jf[i][j], || format!("F[{},{}]", i + 1, j + 1), x, u)?;
                v[(i, j)] = eval_at(&self.jv[i][j], || format!("V[{},{}]", i + 1, j + 1), x, u)?;
            }
        }
        let k = n - m;
        let mut mb = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                mb[(i, j)] = eval_at(
                    &self.jfull[m + i][m + j],
                    || format!("M[{},{}]", i + 1, j + 1),
                    x,
                    u,
                )?;
            }
        }
        Ok(JacobianSample { x, f, v, m_block: mb })
    }

    /// Full state with zero infected part.
    pub fn disease_free_state(&self, uninfected: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.m];
        u.extend_from_slice(uninfected);
        u
    }

    /// True if some expression can be singular at nonnegative states
    /// (division by a state expression, negative powers, logarithms).
    pub fn has_state_singularities(&self) -> bool {
        fn walk(e: &Expr) -> bool {
            match e {
                Expr::Const(_) | Expr::X | Expr::State(_) => false,
                Expr::Neg(a) => walk(a),
                Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => walk(a) || walk(b),
                Expr::Div(a, b) => walk(a) || walk(b) || b.max_state().is_some(),
                Expr::Pow(a, c) => walk(a) || (*c < 0.0 && a.max_state().is_some()),
                Expr::Func(f, a) => {
                    walk(a) || (matches!(f, Func::Log | Func::Sqrt) && a.max_state().is_some())
                }
            }
        }
        self.compartments
            .iter()
            .any(|c| walk(&c.f) || walk(&c.vplus) || walk(&c.vminus))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

/// Worst sample for a check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub x: f64,
    pub node: Option<usize>,
    pub entry: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckItem {
    pub id: &'static str,
    pub description: &'static str,
    pub status: CheckStatus,
    pub detail: String,
    pub worst: Option<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub items: Vec<CheckItem>,
    pub notes: Vec<String>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.status != CheckStatus::Fail)
    }

    pub fn get(&self, id: &str) -> Option<&CheckItem> {
        self.items.iter().find(|i| i.id == id)
    }

    /// Failures that make the next-generation operator ill-defined.
    pub fn blocks_r0(&self) -> bool {
        ["A6", "V-spectral-bound"]
            .iter()
            .any(|id| self.get(id).is_some_and(|i| i.status == CheckStatus::Fail))
    }
}

/// Most negative sample of a quantity that should be nonnegative.
struct Worst {
    best: Option<Violation>,
    failed: bool,
    error: Option<String>,
}

impl Worst {
    fn new() -> Self {
        Worst {
            best: None,
            failed: false,
            error: None,
        }
    }

    /// Record `value`, failing if it drops below `-COOPERATIVITY_TOL`.
    fn nonneg(&mut self, value: f64, x: f64, node: Option<usize>, entry: impl FnOnce() -> String) {
        if value < -COOPERATIVITY_TOL {
            self.failed = true;
        }
        if self.best.as_ref().is_none_or(|b| value < b.value) {
            self.best = Some(Violation {
                x,
                node,
                entry: entry(),
                value,
            });
        }
    }

    fn eval_error(&mut self, e: ModelError) {
        self.failed = true;
        if self.error.is_none() {
            self.error = Some(e.to_string());
        }
    }

    fn item(self, id: &'static str, description: &'static str, ok_detail: &str) -> CheckItem {
        let detail = match (&self.error, &self.best) {
            (Some(e), _) => format!("evaluation failed: {e}"),
            (None, Some(v)) if self.failed => {
                format!("worst value {:e} ({}) at x = {}", v.value, v.entry, v.x)
            }
            (None, Some(v)) => format!("{ok_detail}; smallest value {:e}", v.value),
            (None, None) => ok_detail.to_string(),
        };
        CheckItem {
            id,
            description,
            status: if self.failed {
                CheckStatus::Fail
            } else {
                CheckStatus::Pass
            },
            detail,
            worst: if self.failed { self.best } else { None },
        }
    }
}

/// Check the structural hypotheses at the disease-free state `dfe`, plus
/// `samples` pseudo-random nonnegative states for the sign conditions.
pub fn check_assumptions(
    model: &CompartmentModel,
    grid: &Grid,
    dfe: &DfeState,
    samples: usize,
) -> AssumptionReport {
    let (n, m) = (model.n(), model.m());
    let mut items = Vec::new();
    let mut notes = Vec::new();
    let nodes: Vec<f64> = grid.nodes().collect();
    let u0: Vec<Vec<f64>> = (0..grid.len())
        .map(|k| model.disease_free_state(&dfe.at(k)))
        .collect();
    let scale = dfe
        .fields
        .iter()
        .map(|f| f.max())
        .fold(1.0f64, f64::max);

    // deterministic sample states, strictly positive so singular terms stay finite
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let random_states: Vec<(usize, Vec<f64>)> = (0..samples)
        .map(|_| {
            let k = rng.random_range(0..grid.len());
            let u = (0..n).map(|_| rng.random_range(1e-3..2.0) * scale).collect();
            (k, u)
        })
        .collect();

    // A1: F, V+, V- nonnegative
    let mut a1 = Worst::new();
    let dfe_states = u0.iter().cloned().enumerate();
    for (k, u) in random_states.iter().cloned().chain(dfe_states) {
        let x = nodes[k];
        for c in model.compartments() {
            for (label, e) in [("F", &c.f), ("Vplus", &c.vplus), ("Vminus", &c.vminus)] {
                match eval_at(e, || format!("{label}[{}]", c.name), x, &u) {
                    Ok(v) => a1.nonneg(v, x, Some(k), || format!("{label}[{}]", c.name)),
                    Err(e) => a1.eval_error(e),
                }
            }
        }
    }
    items.push(a1.item(
        "A1",
        "F, V+ and V- are nonnegative",
        &format!("{} sampled states plus the disease-free state", samples),
    ));

    // A2: V-_i vanishes when u_i = 0
    let mut a2 = Worst::new();
    for (k, u) in &random_states {
        let x = nodes[*k];
        for (i, c) in model.compartments().iter().enumerate() {
            let mut ui = u.clone();
            ui[i] = 0.0;
            match eval_at(&c.vminus, || format!("Vminus[{}]", c.name), x, &ui) {
                Ok(v) => a2.nonneg(-v.abs(), x, Some(*k), || format!("Vminus[{}] at {} = 0", c.name, c.name)),
                Err(e) => a2.eval_error(e),
            }
        }
    }
    items.push(a2.item("A2", "V-_i vanishes where u_i = 0", "sampled"));

    // A3 holds by construction
    items.push(CheckItem {
        id: "A3",
        description: "F_i is identically zero for uninfected i",
        status: CheckStatus::Pass,
        detail: "structural".into(),
        worst: None,
    });

    // A4: F_i = V+_i = 0 on the disease-free set
    let mut a4 = Worst::new();
    for (k, u) in &random_states {
        let x = nodes[*k];
        let mut us = u.clone();
        us[..m].iter_mut().for_each(|v| *v = 0.0);
        for c in &model.compartments()[..m] {
            for (label, e) in [("F", &c.f), ("Vplus", &c.vplus)] {
                match eval_at(e, || format!("{label}[{}]", c.name), x, &us) {
                    Ok(v) => a4.nonneg(-v.abs(), x, Some(*k), || format!("{label}[{}]", c.name)),
                    Err(e) => a4.eval_error(e),
                }
            }
        }
    }
    items.push(a4.item(
        "A4",
        "F_i and V+_i vanish on the disease-free set for infected i",
        "sampled",
    ));

    let jac: Vec<Result<JacobianSample, ModelError>> = nodes
        .iter()
        .zip(&u0)
        .map(|(&x, u)| model.jacobians_at(x, u))
        .collect();

    // A5: M cooperative and s(d_S Δ + M) < 0
    match model.dfe_rule() {
        DfeRule::UniformMass(_) => {
            items.push(CheckItem {
                id: "A5",
                description: "M(x,u0) cooperative and s(d_S Δ + M) < 0",
                status: CheckStatus::Skipped,
                detail: "uninfected dynamics conserve mass; the disease-free state is fixed by the total"
                    .into(),
                worst: None,
            });
        }
        DfeRule::Steady => {
            let mut a5 = Worst::new();
            let mut blocks = Vec::with_capacity(nodes.len());
            for (k, j) in jac.iter().enumerate() {
                match j {
                    Ok(j) => {
                        for r in 0..n - m {
                            for c in 0..n - m {
                                if r != c {
                                    a5.nonneg(j.m_block[(r, c)], nodes[k], Some(k), || {
                                        format!("M[{},{}]", r + 1, c + 1)
                                    });
                                }
                            }
                        }
                        blocks.push(j.m_block.clone());
                    }
                    Err(e) => a5.eval_error(e.clone()),
                }
            }
            let mut item = a5.item(
                "A5",
                "M(x,u0) cooperative and s(d_S Δ + M) < 0",
                "cooperative at every node",
            );
            if item.status == CheckStatus::Pass {
                let mut a = assemble_banded(grid, &model.uninfected_diffusion(), &blocks);
                a.scale(-1.0);
                if a.is_nonsingular_m_matrix() {
                    item.detail.push_str("; spectral bound negative");
                } else {
                    item.status = CheckStatus::Fail;
                    item.detail = "s(d_S Δ + M) >= 0".into();
                }
            }
            items.push(item);
        }
    }

    // A6: -V cooperative and s(B) < 0
    let mut a6 = Worst::new();
    let mut fpos = Worst::new();
    let mut vbound: Option<(f64, usize)> = None;
    let mut eval_failed = false;
    let mut irreducible = true;
    let mut first_reducible = None;
    let mut neg_v = Vec::with_capacity(nodes.len());
    for (k, j) in jac.iter().enumerate() {
        let j = match j {
            Ok(j) => j,
            Err(e) => {
                a6.eval_error(e.clone());
                fpos.eval_error(e.clone());
                eval_failed = true;
                continue;
            }
        };
        let x = nodes[k];
        let mut pattern = vec![vec![false; m]; m];
        for r in 0..m {
            for c in 0..m {
                fpos.nonneg(j.f[(r, c)], x, Some(k), || format!("F[{},{}]", r + 1, c + 1));
                if r != c {
                    a6.nonneg(-j.v[(r, c)], x, Some(k), || format!("-V[{},{}]", r + 1, c + 1));
                }
                pattern[r][c] = (r != c && -j.v[(r, c)] > COOPERATIVITY_TOL) || j.f[(r, c)] > COOPERATIVITY_TOL;
            }
        }
        let s = dense_spectral_bound(&(-&j.v));
        if vbound.is_none_or(|(w, _)| s > w) {
            vbound = Some((s, k));
        }
        if irreducible && !is_irreducible(&pattern) {
            irreducible = false;
            first_reducible = Some((k, x));
        }
        neg_v.push(-&j.v);
    }
    let mut a6_item = a6.item(
        "A6",
        "-V(x,u0) cooperative and s(d_I Δ - V) < 0",
        "cooperative at every node",
    );
    if a6_item.status == CheckStatus::Pass {
        let mut b = assemble_banded(grid, &model.infected_diffusion(), &neg_v);
        b.scale(-1.0);
        if b.is_nonsingular_m_matrix() {
            a6_item.detail.push_str("; spectral bound of B negative");
        } else {
            a6_item.status = CheckStatus::Fail;
            a6_item.detail = "s(d_I Δ - V) >= 0".into();
        }
    }
    items.push(a6_item);
    items.push(fpos.item("F-nonneg", "F(x,u0) is entrywise nonnegative", "every node"));
    let vb_fail = eval_failed || vbound.is_some_and(|(w, _)| w >= 0.0);
    let vb = CheckItem {
        id: "V-spectral-bound",
        description: "s(-V(x,u0)) < 0 at every node",
        status: if vb_fail {
            CheckStatus::Fail
        } else {
            CheckStatus::Pass
        },
        detail: match vbound {
            Some((w, _)) => format!("largest nodal bound {w:e}"),
            None => "no nodes evaluated".into(),
        },
        worst: vbound.filter(|_| vb_fail).map(|(w, k)| Violation {
            x: nodes[k],
            node: Some(k),
            entry: "s(-V)".into(),
            value: w,
        }),
    };
    items.push(vb);
    items.push(CheckItem {
        id: "irreducible",
        description: "pattern of off-diagonal -V plus F strongly connected at every node",
        status: if irreducible {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        detail: match first_reducible {
            None => "every node".into(),
            Some((k, x)) => format!("reducible at node {k} (x = {x})"),
        },
        worst: None,
    });

    if model.has_state_singularities() {
        notes.push(
            "some terms are singular where a state combination vanishes; \
             evaluation is restricted to states where they are finite (positive totals)"
                .into(),
        );
    }
    AssumptionReport { items, notes }
}
