//! Built-in models: SIS, Zika, vector-host and staged progression, each with
//! closed-form small- and large-diffusion limits of R0.

use indexmap::IndexMap;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expr::{parse_expression, pow, EvalError, Expr, ParseError};
use crate::grid::{Field, Grid};
use crate::model::{Compartment, CompartmentModel, DfeRule, LargeValue, ModelError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BuiltinError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("coefficient '{name}' must be positive, found {value} at x = {x}")]
    NonPositive { name: String, x: f64, value: f64 },
    #[error("coefficient '{name}' at x = {x}: {source}")]
    Eval {
        name: String,
        x: f64,
        #[source]
        source: EvalError,
    },
    #[error("unknown built-in model '{0}' (expected sis, zika, vector-host or staged)")]
    UnknownModel(String),
    #[error("model '{model}' has no parameter '{name}'")]
    UnknownParam { model: &'static str, name: String },
    #[error("parameter '{name}': {source}")]
    Parse {
        name: String,
        #[source]
        source: ParseError,
    },
    #[error("parameter '{name}' must be {expected}")]
    BadParam { name: String, expected: &'static str },
}

fn coef(text: &str) -> Expr {
    parse_expression(text, &["x"]).expect("built-in coefficient text is valid")
}

fn one() -> Expr {
    Expr::Const(1.0)
}

const POSITIVITY_SAMPLES: usize = 257;

fn sample_on(e: &Expr, name: &str, grid: &Grid) -> Result<Vec<f64>, BuiltinError> {
    grid.nodes()
        .map(|x| {
            e.eval(x, &[]).map_err(|source| BuiltinError::Eval {
                name: name.to_string(),
                x,
                source,
            })
        })
        .collect()
}

fn check_positive(named: &[(&str, &Expr)], domain: (f64, f64)) -> Result<(), BuiltinError> {
    let grid = Grid::new(domain.0, domain.1, POSITIVITY_SAMPLES).map_err(|_| {
        BuiltinError::BadParam {
            name: "domain".into(),
            expected: "a finite interval a < b",
        }
    })?;
    for (name, e) in named {
        let v = sample_on(e, name, &grid)?;
        if let Some((k, &value)) = v.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(BuiltinError::NonPositive {
                name: name.to_string(),
                x: grid.node(k),
                value,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SisParams {
    pub beta: Expr,
    pub gamma: Expr,
    /// Total population; the susceptible density is `total / |Ω|`.
    pub total: f64,
}

impl Default for SisParams {
    fn default() -> Self {
        SisParams {
            beta: coef("2 + cos(pi*x)"),
            gamma: one(),
            total: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZikaParams {
    pub lambda: Expr,
    pub sigma1: Expr,
    pub h_u: Expr,
    pub sigma2: Expr,
    pub mu: Expr,
    pub beta: Expr,
}

impl Default for ZikaParams {
    fn default() -> Self {
        ZikaParams {
            lambda: one(),
            sigma1: one(),
            h_u: Expr::Const(2.0),
            sigma2: one(),
            mu: one(),
            beta: one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorHostParams {
    pub lambda1: Expr,
    pub lambda2: Expr,
    pub b: Expr,
    pub c: Expr,
    pub gamma: Expr,
    pub beta_s: Expr,
    pub beta_m: Expr,
}

impl Default for VectorHostParams {
    fn default() -> Self {
        VectorHostParams {
            lambda1: one(),
            lambda2: one(),
            b: one(),
            c: one(),
            gamma: one(),
            beta_s: one(),
            beta_m: one(),
        }
    }
}

/// Stage `k` has infectivity `beta[k]`, progression `nu[k]` and removal
/// `gamma[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StagedParams {
    pub beta: Vec<Expr>,
    pub nu: Vec<Expr>,
    pub gamma: Vec<Expr>,
    pub lambda: Expr,
    pub b: Expr,
    /// Incidence `h(N) = N^(-alpha)`, `alpha` in `[0, 1]`.
    pub alpha: f64,
}

impl StagedParams {
    pub fn uniform(m: usize) -> Self {
        StagedParams {
            beta: vec![one(); m],
            nu: vec![one(); m],
            gamma: vec![one(); m],
            lambda: one(),
            b: one(),
            alpha: 0.0,
        }
    }

    pub fn stages(&self) -> usize {
        self.beta.len()
    }
}

impl Default for StagedParams {
    fn default() -> Self {
        StagedParams::uniform(3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BuiltinKind {
    Sis,
    Zika,
    VectorHost,
    Staged,
}

impl BuiltinKind {
    pub const ALL: [BuiltinKind; 4] = [
        BuiltinKind::Sis,
        BuiltinKind::Zika,
        BuiltinKind::VectorHost,
        BuiltinKind::Staged,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BuiltinKind::Sis => "sis",
            BuiltinKind::Zika => "zika",
            BuiltinKind::VectorHost => "vector-host",
            BuiltinKind::Staged => "staged",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, BuiltinError> {
        BuiltinKind::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| BuiltinError::UnknownModel(name.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BuiltinParams {
    Sis(SisParams),
    Zika(ZikaParams),
    VectorHost(VectorHostParams),
    Staged(StagedParams),
}

/// A built-in model together with its closed-form limits.
#[derive(Debug, Clone)]
pub struct BuiltinModel {
    pub model: CompartmentModel,
    pub params: BuiltinParams,
}

pub fn make_sis(p: SisParams, domain: (f64, f64)) -> Result<BuiltinModel, BuiltinError> {
    check_positive(&[("beta", &p.beta), ("gamma", &p.gamma)], domain)?;
    if !(p.total > 0.0 && p.total.is_finite()) {
        return Err(BuiltinError::BadParam {
            name: "N".into(),
            expected: "a positive constant",
        });
    }
    let (i, s) = (Expr::state(0), Expr::state(1));
    let incidence = &(&p.beta * &s) * &i;
    let recovery = &p.gamma * &i;
    let model = CompartmentModel::new(
        "sis",
        domain,
        vec![
            Compartment::new("I", true, 1.0)
                .f(incidence.clone())
                .vminus(recovery.clone()),
            Compartment::new("S", false, 1.0)
                .vplus(recovery)
                .vminus(incidence),
        ],
    )?
    .with_dfe_rule(DfeRule::UniformMass(p.total));
    Ok(BuiltinModel {
        model,
        params: BuiltinParams::Sis(p),
    })
}

/// States `(H_i, V_i, V_u)`.
pub fn make_zika(p: ZikaParams, domain: (f64, f64)) -> Result<BuiltinModel, BuiltinError> {
    check_positive(
        &[
            ("lambda", &p.lambda),
            ("sigma1", &p.sigma1),
            ("Hu", &p.h_u),
            ("sigma2", &p.sigma2),
            ("mu", &p.mu),
            ("beta", &p.beta),
        ],
        domain,
    )?;
    let (hi, vi, vu) = (Expr::state(0), Expr::state(1), Expr::state(2));
    let vectors = &vu + &vi;
    let bites = &(&p.sigma2 * &vu) * &hi;
    let model = CompartmentModel::new(
        "zika",
        domain,
        vec![
            Compartment::new("Hi", true, 1.0)
                .vminus(&p.lambda * &hi)
                .vplus(&(&p.sigma1 * &p.h_u) * &vi),
            Compartment::new("Vi", true, 1.0)
                .f(bites.clone())
                .vminus(&(&p.mu * &vectors) * &vi),
            Compartment::new("Vu", false, 1.0)
                .vplus(&p.beta * &vectors)
                .vminus(bites + &(&p.mu * &vectors) * &vu),
        ],
    )?
    .with_small_limit(vec![&p.beta / &p.mu])?
    .with_large_limit(vec![LargeValue::Ratio(p.beta.clone(), p.mu.clone())])?;
    Ok(BuiltinModel {
        model,
        params: BuiltinParams::Zika(p),
    })
}

/// States `(I, V, S, M)`: infected hosts and vectors, then susceptible hosts
/// and vectors.
pub fn make_vector_host(
    p: VectorHostParams,
    domain: (f64, f64),
) -> Result<BuiltinModel, BuiltinError> {
    check_positive(
        &[
            ("lambda1", &p.lambda1),
            ("lambda2", &p.lambda2),
            ("b", &p.b),
            ("c", &p.c),
            ("gamma", &p.gamma),
            ("beta_s", &p.beta_s),
            ("beta_m", &p.beta_m),
        ],
        domain,
    )?;
    let (i, v, s, m) = (Expr::state(0), Expr::state(1), Expr::state(2), Expr::state(3));
    let host_inc = &(&p.beta_s * &s) * &v;
    let vector_inc = &(&p.beta_m * &m) * &i;
    let model = CompartmentModel::new(
        "vector-host",
        domain,
        vec![
            Compartment::new("I", true, 1.0)
                .f(host_inc.clone())
                .vminus(&(&p.b + &p.gamma) * &i),
            Compartment::new("V", true, 1.0)
                .f(vector_inc.clone())
                .vminus(&p.c * &v),
            Compartment::new("S", false, 1.0)
                .vplus(p.lambda1.clone() + &p.gamma * &i)
                .vminus(&p.b * &s + host_inc),
            Compartment::new("M", false, 1.0)
                .vplus(p.lambda2.clone())
                .vminus(&p.c * &m + vector_inc),
        ],
    )?
    .with_small_limit(vec![&p.lambda1 / &p.b, &p.lambda2 / &p.c])?
    .with_large_limit(vec![
        LargeValue::Ratio(p.lambda1.clone(), p.b.clone()),
        LargeValue::Ratio(p.lambda2.clone(), p.c.clone()),
    ])?;
    Ok(BuiltinModel {
        model,
        params: BuiltinParams::VectorHost(p),
    })
}

/// States `(I_1, ..., I_m, S)`.
pub fn make_staged(p: StagedParams, domain: (f64, f64)) -> Result<BuiltinModel, BuiltinError> {
    let m = p.stages();
    if m == 0 || p.nu.len() != m || p.gamma.len() != m {
        return Err(BuiltinError::BadParam {
            name: "m".into(),
            expected: "at least 1, with one beta, nu and gamma per stage",
        });
    }
    if !(0.0..=1.0).contains(&p.alpha) {
        return Err(BuiltinError::BadParam {
            name: "alpha".into(),
            expected: "a constant in [0, 1]",
        });
    }
    let mut named: Vec<(String, &Expr)> = vec![("lambda".into(), &p.lambda), ("b".into(), &p.b)];
    for k in 0..m {
        named.push((format!("beta{}", k + 1), &p.beta[k]));
        named.push((format!("nu{}", k + 1), &p.nu[k]));
        named.push((format!("gamma{}", k + 1), &p.gamma[k]));
    }
    let refs: Vec<(&str, &Expr)> = named.iter().map(|(n, e)| (n.as_str(), *e)).collect();
    check_positive(&refs, domain)?;

    let s = Expr::state(m);
    let total = (0..m).fold(s.clone(), |acc, k| acc + Expr::state(k));
    let force = (0..m).fold(Expr::Const(0.0), |acc, k| acc + &p.beta[k] * &Expr::state(k));
    let incidence = pow(total, -p.alpha) * (&s * &force);
    let mut comps = Vec::with_capacity(m + 1);
    for k in 0..m {
        let ik = Expr::state(k);
        let mut c = Compartment::new(&format!("I{}", k + 1), true, 1.0)
            .vminus(&(&p.nu[k] + &p.gamma[k]) * &ik);
        if k == 0 {
            c = c.f(incidence.clone());
        } else {
            c = c.vplus(&p.nu[k - 1] * &Expr::state(k - 1));
        }
        comps.push(c);
    }
    comps.push(
        Compartment::new("S", false, 1.0)
            .vplus(p.lambda.clone())
            .vminus(&p.b * &s + incidence),
    );
    let model = CompartmentModel::new("staged", domain, comps)?
        .with_small_limit(vec![&p.lambda / &p.b])?
        .with_large_limit(vec![LargeValue::Ratio(p.lambda.clone(), p.b.clone())])?;
    Ok(BuiltinModel {
        model,
        params: BuiltinParams::Staged(p),
    })
}

/// Per-node values of the named coefficients, or their integrals.
struct Coefs<'a> {
    grid: &'a Grid,
}

impl Coefs<'_> {
    fn nodal(&self, e: &Expr, name: &str) -> Result<Vec<f64>, BuiltinError> {
        sample_on(e, name, self.grid)
    }

    fn integral(&self, e: &Expr, name: &str) -> Result<f64, BuiltinError> {
        Ok(self.grid.integrate(&self.nodal(e, name)?))
    }
}

fn staged_formula(beta: &[f64], nu: &[f64], gamma: &[f64], s: f64, alpha: f64) -> f64 {
    let mut sum = 0.0;
    let mut chain = 1.0;
    for j in 0..beta.len() {
        chain /= nu[j] + gamma[j];
        sum += beta[j] * chain;
        chain *= nu[j];
    }
    sum * s * s.powf(-alpha)
}

impl BuiltinModel {
    pub fn kind(&self) -> BuiltinKind {
        match self.params {
            BuiltinParams::Sis(_) => BuiltinKind::Sis,
            BuiltinParams::Zika(_) => BuiltinKind::Zika,
            BuiltinParams::VectorHost(_) => BuiltinKind::VectorHost,
            BuiltinParams::Staged(_) => BuiltinKind::Staged,
        }
    }

    /// Closed-form local reproduction number at every node.
    pub fn local_oracle(&self, grid: &Grid) -> Result<Field, BuiltinError> {
        let c = Coefs { grid };
        let n = grid.len();
        let values: Vec<f64> = match &self.params {
            BuiltinParams::Sis(p) => {
                let level = p.total / grid.measure();
                let (b, g) = (c.nodal(&p.beta, "beta")?, c.nodal(&p.gamma, "gamma")?);
                (0..n).map(|k| b[k] / g[k] * level).collect()
            }
            BuiltinParams::Zika(p) => {
                let s1 = c.nodal(&p.sigma1, "sigma1")?;
                let s2 = c.nodal(&p.sigma2, "sigma2")?;
                let hu = c.nodal(&p.h_u, "Hu")?;
                let l = c.nodal(&p.lambda, "lambda")?;
                let mu = c.nodal(&p.mu, "mu")?;
                (0..n).map(|k| s1[k] * s2[k] * hu[k] / (l[k] * mu[k])).collect()
            }
            BuiltinParams::VectorHost(p) => {
                let l1 = c.nodal(&p.lambda1, "lambda1")?;
                let l2 = c.nodal(&p.lambda2, "lambda2")?;
                let bs = c.nodal(&p.beta_s, "beta_s")?;
                let bm = c.nodal(&p.beta_m, "beta_m")?;
                let b = c.nodal(&p.b, "b")?;
                let cc = c.nodal(&p.c, "c")?;
                let g = c.nodal(&p.gamma, "gamma")?;
                (0..n)
                    .map(|k| {
                        (l1[k] * l2[k] * bs[k] * bm[k] / (b[k] * cc[k] * cc[k] * (b[k] + g[k])))
                            .sqrt()
                    })
                    .collect()
            }
            BuiltinParams::Staged(p) => {
                let m = p.stages();
                let nodal = |v: &[Expr], s: &str| -> Result<Vec<Vec<f64>>, BuiltinError> {
                    v.iter().map(|e| c.nodal(e, s)).collect()
                };
                let beta = nodal(&p.beta, "beta")?;
                let nu = nodal(&p.nu, "nu")?;
                let gamma = nodal(&p.gamma, "gamma")?;
                let l = c.nodal(&p.lambda, "lambda")?;
                let b = c.nodal(&p.b, "b")?;
                (0..n)
                    .map(|k| {
                        let at = |v: &Vec<Vec<f64>>| (0..m).map(|j| v[j][k]).collect::<Vec<_>>();
                        staged_formula(&at(&beta), &at(&nu), &at(&gamma), l[k] / b[k], p.alpha)
                    })
                    .collect()
            }
        };
        Ok(Field(values))
    }

    /// Closed-form small-diffusion limit: the maximum of the local profile.
    pub fn small_oracle(&self, grid: &Grid) -> Result<f64, BuiltinError> {
        Ok(self.local_oracle(grid)?.max())
    }

    /// Closed-form large-diffusion limit from integrated coefficients.
    pub fn large_oracle(&self, grid: &Grid) -> Result<f64, BuiltinError> {
        let c = Coefs { grid };
        Ok(match &self.params {
            BuiltinParams::Sis(p) => {
                c.integral(&p.beta, "beta")? / c.integral(&p.gamma, "gamma")? * p.total
                    / grid.measure()
            }
            BuiltinParams::Zika(p) => {
                let s1hu = c.integral(&(&p.sigma1 * &p.h_u), "sigma1*Hu")?;
                s1hu * c.integral(&p.sigma2, "sigma2")?
                    / (c.integral(&p.lambda, "lambda")? * c.integral(&p.mu, "mu")?)
            }
            BuiltinParams::VectorHost(p) => {
                let i = |e: &Expr, s: &str| c.integral(e, s);
                let cc = i(&p.c, "c")?;
                (i(&p.lambda1, "lambda1")?
                    * i(&p.lambda2, "lambda2")?
                    * i(&p.beta_s, "beta_s")?
                    * i(&p.beta_m, "beta_m")?
                    / (i(&p.b, "b")? * cc * cc * i(&(&p.b + &p.gamma), "b+gamma")?))
                .sqrt()
            }
            BuiltinParams::Staged(p) => {
                let ints = |v: &[Expr], s: &str| -> Result<Vec<f64>, BuiltinError> {
                    v.iter().map(|e| c.integral(e, s)).collect()
                };
                let beta = ints(&p.beta, "beta")?;
                let nu = ints(&p.nu, "nu")?;
                let gamma = ints(&p.gamma, "gamma")?;
                let s = c.integral(&p.lambda, "lambda")? / c.integral(&p.b, "b")?;
                staged_formula(&beta, &nu, &gamma, s, p.alpha)
            }
        })
    }

    /// Explicit inverse of the integrated staged matrix `V̌`:
    /// `a_ii = 1/∫(ν_i+γ_i)` and, for `j < i`,
    /// `a_ij = Π_{k=j}^{i-1} ∫ν_k / Π_{k=j}^{i} ∫(ν_k+γ_k)`.
    pub fn staged_v_inverse(&self, grid: &Grid) -> Option<Result<DMatrix<f64>, BuiltinError>> {
        let BuiltinParams::Staged(p) = &self.params else {
            return None;
        };
        let c = Coefs { grid };
        let run = || -> Result<DMatrix<f64>, BuiltinError> {
            let m = p.stages();
            let nu: Vec<f64> = p
                .nu
                .iter()
                .map(|e| c.integral(e, "nu"))
                .collect::<Result<_, _>>()?;
            let out: Vec<f64> = (0..m)
                .map(|k| c.integral(&(&p.nu[k] + &p.gamma[k]), "nu+gamma"))
                .collect::<Result<_, _>>()?;
            Ok(DMatrix::from_fn(m, m, |i, j| {
                if j > i {
                    0.0
                } else {
                    let num: f64 = (j..i).map(|k| nu[k]).product();
                    let den: f64 = (j..=i).map(|k| out[k]).product();
                    num / den
                }
            }))
        };
        Some(run())
    }
}

/// Build a built-in by name, replacing default coefficients by `overrides`
/// (expressions in `x`). Staged accepts `m` (stage count) and `alpha`; SIS
/// accepts `N` (total population).
pub fn builtin(
    name: &str,
    overrides: &IndexMap<String, String>,
    domain: (f64, f64),
) -> Result<BuiltinModel, BuiltinError> {
    let kind = BuiltinKind::from_name(name)?;
    let parse = |key: &str, text: &str| {
        parse_expression(text, &["x"]).map_err(|source| BuiltinError::Parse {
            name: key.to_string(),
            source,
        })
    };
    let constant = |key: &str, text: &str| -> Result<f64, BuiltinError> {
        parse(key, text)?
            .constant_value()
            .ok_or_else(|| BuiltinError::BadParam {
                name: key.to_string(),
                expected: "a constant",
            })
    };
    let unknown = |model: &'static str, key: &str| BuiltinError::UnknownParam {
        model,
        name: key.to_string(),
    };
    match kind {
        BuiltinKind::Sis => {
            let mut p = SisParams::default();
            for (k, v) in overrides {
                match k.as_str() {
                    "beta" => p.beta = parse(k, v)?,
                    "gamma" => p.gamma = parse(k, v)?,
                    "N" => p.total = constant(k, v)?,
                    _ => return Err(unknown("sis", k)),
                }
            }
            make_sis(p, domain)
        }
        BuiltinKind::Zika => {
            let mut p = ZikaParams::default();
            for (k, v) in overrides {
                let slot = match k.as_str() {
                    "lambda" => &mut p.lambda,
                    "sigma1" => &mut p.sigma1,
                    "Hu" => &mut p.h_u,
                    "sigma2" => &mut p.sigma2,
                    "mu" => &mut p.mu,
                    "beta" => &mut p.beta,
                    _ => return Err(unknown("zika", k)),
                };
                *slot = parse(k, v)?;
            }
            make_zika(p, domain)
        }
        BuiltinKind::VectorHost => {
            let mut p = VectorHostParams::default();
            for (k, v) in overrides {
                let slot = match k.as_str() {
                    "lambda1" => &mut p.lambda1,
                    "lambda2" => &mut p.lambda2,
                    "b" => &mut p.b,
                    "c" => &mut p.c,
                    "gamma" => &mut p.gamma,
                    "beta_s" => &mut p.beta_s,
                    "beta_m" => &mut p.beta_m,
                    _ => return Err(unknown("vector-host", k)),
                };
                *slot = parse(k, v)?;
            }
            make_vector_host(p, domain)
        }
        BuiltinKind::Staged => {
            let m = match overrides.get("m") {
                Some(v) => {
                    let c = constant("m", v)?;
                    if c < 1.0 || c.fract() != 0.0 || c > 64.0 {
                        return Err(BuiltinError::BadParam {
                            name: "m".into(),
                            expected: "an integer between 1 and 64",
                        });
                    }
                    c as usize
                }
                None => 3,
            };
            let mut p = StagedParams::uniform(m);
            for (k, v) in overrides {
                let indexed = |prefix: &str| -> Option<usize> {
                    let i: usize = k.strip_prefix(prefix)?.parse().ok()?;
                    (1..=m).contains(&i).then_some(i - 1)
                };
                match k.as_str() {
                    "m" => {}
                    "alpha" => p.alpha = constant(k, v)?,
                    "lambda" => p.lambda = parse(k, v)?,
                    "b" => p.b = parse(k, v)?,
                    _ => {
                        if let Some(i) = indexed("beta") {
                            p.beta[i] = parse(k, v)?;
                        } else if let Some(i) = indexed("nu") {
                            p.nu[i] = parse(k, v)?;
                        } else if let Some(i) = indexed("gamma") {
                            p.gamma[i] = parse(k, v)?;
                        } else {
                            return Err(unknown("staged", k));
                        }
                    }
                }
            }
            make_staged(p, domain)
        }
    }
}

/// `c0 + c1 cos(pi x)` with `c0` in `[lo, hi]` and `|c1| <= c0 / 2`.
fn random_coef(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Expr {
    let c0: f64 = rng.random_range(lo..hi);
    let c1: f64 = rng.random_range(-0.5..0.5) * c0;
    Expr::Const(c0) + Expr::Const(c1) * coef("cos(pi*x)")
}

/// Heterogeneous positive coefficients drawn from a seeded generator, on
/// `[0, 1]`. Staged models get `stages` stages and `alpha` drawn from `[0, 1]`.
pub fn random_builtin(kind: BuiltinKind, seed: u64, stages: usize) -> Result<BuiltinModel, BuiltinError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let domain = (0.0, 1.0);
    match kind {
        BuiltinKind::Sis => make_sis(
            SisParams {
                beta: random_coef(r, 0.5, 3.0),
                gamma: random_coef(r, 0.5, 2.0),
                total: r.random_range(0.5..2.0),
            },
            domain,
        ),
        BuiltinKind::Zika => make_zika(
            ZikaParams {
                lambda: random_coef(r, 0.5, 2.0),
                sigma1: random_coef(r, 0.5, 2.0),
                h_u: random_coef(r, 0.5, 3.0),
                sigma2: random_coef(r, 0.5, 2.0),
                mu: random_coef(r, 0.5, 2.0),
                beta: random_coef(r, 0.5, 2.0),
            },
            domain,
        ),
        BuiltinKind::VectorHost => make_vector_host(
            VectorHostParams {
                lambda1: random_coef(r, 0.5, 2.0),
                lambda2: random_coef(r, 0.5, 2.0),
                b: random_coef(r, 0.5, 2.0),
                c: random_coef(r, 0.5, 2.0),
                gamma: random_coef(r, 0.5, 2.0),
                beta_s: random_coef(r, 0.5, 3.0),
                beta_m: random_coef(r, 0.5, 3.0),
            },
            domain,
        ),
        BuiltinKind::Staged => {
            let mut v = |lo, hi| (0..stages).map(|_| random_coef(r, lo, hi)).collect::<Vec<_>>();
            let beta = v(0.5, 3.0);
            let nu = v(0.5, 2.0);
            let gamma = v(0.2, 1.0);
            make_staged(
                StagedParams {
                    beta,
                    nu,
                    gamma,
                    lambda: random_coef(r, 0.5, 2.0),
                    b: random_coef(r, 0.5, 2.0),
                    alpha: r.random_range(0.0..1.0),
                },
                domain,
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> Grid {
        Grid::unit(1025).unwrap()
    }

    #[test]
    fn sis_oracles() {
        let m = make_sis(SisParams::default(), (0.0, 1.0)).unwrap();
        assert!((m.small_oracle(&unit()).unwrap() - 3.0).abs() < 1e-12);
        assert!((m.large_oracle(&unit()).unwrap() - 2.0).abs() < 1e-6);
        let eq = make_sis(
            SisParams {
                beta: coef("1 + x"),
                gamma: coef("1 + x"),
                total: 1.0,
            },
            (0.0, 1.0),
        )
        .unwrap();
        assert!((eq.small_oracle(&unit()).unwrap() - 1.0).abs() < 1e-14);
        assert!((eq.large_oracle(&unit()).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zika_oracles() {
        let m = make_zika(ZikaParams::default(), (0.0, 1.0)).unwrap();
        assert_eq!(m.small_oracle(&unit()).unwrap(), 2.0);
        assert_eq!(m.large_oracle(&unit()).unwrap(), 2.0);
        let hx = make_zika(
            ZikaParams {
                h_u: coef("1 + x"),
                ..Default::default()
            },
            (0.0, 1.0),
        )
        .unwrap();
        assert!((hx.small_oracle(&unit()).unwrap() - 2.0).abs() < 1e-14);
        assert!((hx.large_oracle(&unit()).unwrap() - 1.5).abs() < 1e-14);
    }

    #[test]
    fn zika_rejects_zero_coefficient() {
        let err = make_zika(
            ZikaParams {
                sigma1: Expr::Const(0.0),
                ..Default::default()
            },
            (0.0, 1.0),
        )
        .unwrap_err();
        assert!(matches!(err, BuiltinError::NonPositive { ref name, .. } if name == "sigma1"));
    }

    #[test]
    fn vector_host_oracles() {
        let m = make_vector_host(VectorHostParams::default(), (0.0, 1.0)).unwrap();
        let r = 0.5f64.sqrt();
        assert!((m.small_oracle(&unit()).unwrap() - r).abs() < 1e-15);
        assert!((m.large_oracle(&unit()).unwrap() - r).abs() < 1e-15);
        let doubled = make_vector_host(
            VectorHostParams {
                lambda1: Expr::Const(2.0),
                ..Default::default()
            },
            (0.0, 1.0),
        )
        .unwrap();
        assert!((doubled.small_oracle(&unit()).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn staged_oracles() {
        let m = make_staged(StagedParams::uniform(2), (0.0, 1.0)).unwrap();
        assert!((m.small_oracle(&unit()).unwrap() - 0.75).abs() < 1e-15);
        assert!((m.large_oracle(&unit()).unwrap() - 0.75).abs() < 1e-15);
        let one = make_staged(
            StagedParams {
                beta: vec![Expr::Const(3.0)],
                nu: vec![Expr::Const(0.5)],
                gamma: vec![Expr::Const(1.0)],
                lambda: Expr::Const(2.0),
                b: Expr::Const(1.0),
                alpha: 0.5,
            },
            (0.0, 1.0),
        )
        .unwrap();
        let want = 3.0 / 1.5 * 2.0 * 2f64.powf(-0.5);
        assert!((one.small_oracle(&unit()).unwrap() - want).abs() < 1e-14);
        let a1 = make_staged(
            StagedParams {
                alpha: 1.0,
                ..StagedParams::uniform(2)
            },
            (0.0, 1.0),
        )
        .unwrap();
        assert!((a1.small_oracle(&unit()).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn named_overrides() {
        let mut o = IndexMap::new();
        o.insert("m".to_string(), "2".to_string());
        o.insert("beta2".to_string(), "2 + x".to_string());
        let m = builtin("staged", &o, (0.0, 1.0)).unwrap();
        assert_eq!(m.model.m(), 2);
        o.insert("beta3".to_string(), "1".to_string());
        assert!(matches!(
            builtin("staged", &o, (0.0, 1.0)),
            Err(BuiltinError::UnknownParam { .. })
        ));
        assert!(matches!(
            builtin("seir", &IndexMap::new(), (0.0, 1.0)),
            Err(BuiltinError::UnknownModel(_))
        ));
    }
}
