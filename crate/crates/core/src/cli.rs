//! Command-line front end: model files, subcommands and reports.
//!
//! Exit codes: 0 success, 1 validation failure (bad input, failed
//! assumption check), 2 numerical failure (a solver did not converge).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dfe::{solve_dfe, DfeError, DfeState};
use crate::expr::{parse_with, Expr, ParseError, Vocabulary};
use crate::grid::Grid;
use crate::limits::{
    auxiliary_lambda, averaged_limit, envelope_bounds, envelopes, local_r0_profile, log_schedule,
    sweep, AveragedLimit, LimitReport, LimitsError, LocalProfile, Reference, SweepOptions,
    DEFAULT_EPS_FRACTION,
};
use crate::model::{
    check_assumptions, AssumptionReport, CheckStatus, Compartment, CompartmentModel, DfeRule,
    LargeValue, ModelError,
};
use crate::models::{builtin, random_builtin, BuiltinError, BuiltinKind, BuiltinModel};
use crate::r0::{r0_of, sign_report, threshold_bound, BlockOperator, R0Error, SignReport};
use crate::sim::{dfe_stability_test, SimError, StabilityMode, StabilityReport, DEFAULT_AMPLITUDE};

pub const DEFAULT_GRID_N: usize = 257;
pub const DEFAULT_TOL: f64 = 1e-10;
const ASSUMPTION_SAMPLES: usize = 64;
const AUX_LEVELS: [f64; 4] = [0.5, 1.0, 1.5, 2.0];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{origin}:{line}:{column}: {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => 2,
            _ => 1,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Eval { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<BuiltinError> for CliError {
    fn from(e: BuiltinError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<DfeError> for CliError {
    fn from(e: DfeError) -> Self {
        match e {
            DfeError::Model(m) => m.into(),
            DfeError::GuessShape { .. } => CliError::Validation(e.to_string()),
            _ => CliError::Numerical(format!("disease-free state: {e}")),
        }
    }
}

impl From<R0Error> for CliError {
    fn from(e: R0Error) -> Self {
        match e {
            R0Error::Model(m) => m.into(),
            R0Error::Spectral(_) | R0Error::Band(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<LimitsError> for CliError {
    fn from(e: LimitsError) -> Self {
        match e {
            LimitsError::Model(m) => m.into(),
            LimitsError::Dfe(d) => d.into(),
            LimitsError::R0(r) => r.into(),
            LimitsError::Spectral(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Newton { .. } | SimError::BlowUp { .. } | SimError::Band(_) => {
                CliError::Numerical(e.to_string())
            }
            SimError::Model(m) => m.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "spatial-r0", version, about = "Basic reproduction numbers of reaction-diffusion epidemic models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the model assumptions and solve for the disease-free state.
    Check(CommonArgs),
    /// Compute R0 and s(B+F) at one diffusion tuple.
    R0(CommonArgs),
    /// R0 along a diffusion schedule, with both limits and envelope bounds.
    Sweep(SweepArgs),
    /// Small- and large-diffusion limits, envelope brackets and λ(a).
    Limits(LimitsArgs),
    /// Perturb the disease-free state and evolve the nonlinear system.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Model file path, or `builtin:<sis|zika|vector-host|staged>`.
    #[arg(long)]
    pub model: String,
    /// Override a built-in coefficient, `name=expr` (repeatable).
    #[arg(long = "param", value_name = "NAME=EXPR")]
    pub params: Vec<String>,
    /// Use a seeded random heterogeneous parameter set for a built-in.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Grid nodes (at least 3).
    #[arg(long = "grid-n", default_value_t = DEFAULT_GRID_N)]
    pub grid_n: usize,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    /// Diffusion rates: one value for every `sweep` placeholder, or a full
    /// tuple (comma separated).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub d: Vec<f64>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Log-spaced schedule `LO:HI:POINTS` in decades, used when `--d` is absent.
    #[arg(long = "log-range", allow_hyphen_values = true)]
    pub log_range: Option<String>,
    /// Envelope half-width as a fraction of the smallest reference value.
    #[arg(long, default_value_t = DEFAULT_EPS_FRACTION)]
    pub eps: f64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct LimitsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = DEFAULT_EPS_FRACTION)]
    pub eps: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Perturbation size relative to the disease-free scale.
    #[arg(long, default_value_t = DEFAULT_AMPLITUDE)]
    pub amplitude: f64,
    #[arg(long = "t-end", default_value_t = 20.0)]
    pub t_end: f64,
    /// Time step; defaults to T/1000.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Expected behaviour; by default decay when R0 < 1 and growth otherwise.
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Decay,
    Growth,
}

// ---------------------------------------------------------------- model files

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    name: Option<String>,
    domain: [f64; 2],
    compartments: Vec<CompartmentDecl>,
    diffusion: IndexMap<String, toml::Spanned<toml::Value>>,
    #[serde(default)]
    params: IndexMap<String, toml::Spanned<toml::Value>>,
    #[serde(default, rename = "F")]
    f: IndexMap<String, toml::Spanned<String>>,
    #[serde(default, rename = "Vplus")]
    vplus: IndexMap<String, toml::Spanned<String>>,
    #[serde(default, rename = "Vminus")]
    vminus: IndexMap<String, toml::Spanned<String>>,
    dfe_small: Option<IndexMap<String, toml::Spanned<String>>>,
    dfe_large: Option<IndexMap<String, toml::Spanned<toml::Value>>>,
    /// Total uninfected population for models whose DFE is fixed by mass.
    dfe_mass: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompartmentDecl {
    name: String,
    infected: bool,
}

/// A model ready to run, with the compartments whose diffusion is supplied
/// on the command line.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub model: CompartmentModel,
    pub placeholders: Vec<bool>,
    pub builtin: Option<BuiltinModel>,
}

impl LoadedModel {
    /// Diffusion tuple for `--d` values: empty keeps the defaults (1 for
    /// placeholders), one value fills every placeholder (every compartment if
    /// there are none), otherwise one value per placeholder or per compartment.
    pub fn diffusion_for(&self, d: &[f64]) -> Result<Vec<f64>, CliError> {
        let base = self.model.diffusion();
        let n = base.len();
        let holes: Vec<usize> = (0..n).filter(|&i| self.placeholders[i]).collect();
        let targets: Vec<usize> = if holes.is_empty() { (0..n).collect() } else { holes };
        let mut out = base;
        match d.len() {
            0 => {}
            1 => targets.iter().for_each(|&i| out[i] = d[0]),
            k if k == n => out.copy_from_slice(d),
            k if k == targets.len() => targets.iter().zip(d).for_each(|(&i, &v)| out[i] = v),
            k => {
                return Err(CliError::Usage(format!(
                    "--d has {k} values; expected 1, {} or {n}",
                    targets.len()
                )))
            }
        }
        if let Some(v) = out.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(CliError::Usage(format!("diffusion rates must be positive, got {v}")));
        }
        Ok(out)
    }

    pub fn with_d(&self, d: &[f64]) -> Result<CompartmentModel, CliError> {
        Ok(self.model.with_diffusion(&self.diffusion_for(d)?)?)
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

struct FileCtx<'a> {
    text: &'a str,
    origin: &'a str,
}

impl FileCtx<'_> {
    fn at(&self, offset: usize, message: impl Into<String>) -> CliError {
        let (line, column) = line_col(self.text, offset);
        CliError::Parse {
            origin: self.origin.to_string(),
            line,
            column,
            message: message.into(),
        }
    }

    fn expr(
        &self,
        key: &str,
        text: &str,
        start: usize,
        vocab: &Vocabulary,
        params: &IndexMap<String, Expr>,
    ) -> Result<Expr, CliError> {
        parse_with(text, vocab, params).map_err(|e: ParseError| {
            // +1 skips the opening quote
            let offset = start + 1 + e.column().map_or(0, |c| c.saturating_sub(1));
            self.at(offset, format!("in `{key}`: {e}"))
        })
    }

    fn value_expr(
        &self,
        key: &str,
        v: &toml::Spanned<toml::Value>,
        vocab: &Vocabulary,
        params: &IndexMap<String, Expr>,
    ) -> Result<Expr, CliError> {
        let start = v.span().start;
        match v.get_ref() {
            toml::Value::String(s) => self.expr(key, s, start, vocab, params),
            toml::Value::Integer(i) => Ok(Expr::Const(*i as f64)),
            toml::Value::Float(f) => Ok(Expr::Const(*f)),
            _ => Err(self.at(start, format!("`{key}` must be a number or an expression string"))),
        }
    }
}

/// Parse a model file.
pub fn load_model_str(text: &str, origin: &str) -> Result<LoadedModel, CliError> {
    let cx = FileCtx { text, origin };
    let file: ModelFile = toml::from_str(text).map_err(|e| {
        let offset = e.span().map_or(0, |s| s.start);
        cx.at(offset, e.message().trim().to_string())
    })?;
    let names: Vec<String> = file.compartments.iter().map(|c| c.name.clone()).collect();
    for (i, n) in names.iter().enumerate() {
        if n.is_empty() || n == "x" || names[..i].contains(n) {
            return Err(CliError::Validation(format!("{origin}: invalid or repeated compartment name `{n}`")));
        }
    }
    let bare = Vocabulary::new(&["x"]);
    let mut params = IndexMap::new();
    for (k, v) in &file.params {
        if names.contains(k) || k == "x" {
            return Err(cx.at(v.span().start, format!("parameter `{k}` shadows a variable")));
        }
        let e = cx.value_expr(k, v, &bare, &params)?;
        params.insert(k.clone(), e);
    }
    let mut vocab_names = vec!["x".to_string()];
    vocab_names.extend(names.iter().cloned());
    let vocab = Vocabulary::new(&vocab_names);

    for (section, map) in [("F", &file.f), ("Vplus", &file.vplus), ("Vminus", &file.vminus)] {
        if let Some((k, v)) = map.iter().find(|(k, _)| !names.contains(k)) {
            return Err(cx.at(v.span().start, format!("[{section}] names unknown compartment `{k}`")));
        }
    }
    if let Some((k, v)) = file.diffusion.iter().find(|(k, _)| !names.contains(k)) {
        return Err(cx.at(v.span().start, format!("[diffusion] names unknown compartment `{k}`")));
    }

    let mut comps = Vec::with_capacity(names.len());
    let mut placeholders = Vec::with_capacity(names.len());
    for decl in &file.compartments {
        let name = &decl.name;
        let (d, hole) = match file.diffusion.get(name) {
            None => {
                return Err(CliError::Validation(format!("{origin}: no diffusion rate for `{name}`")))
            }
            Some(v) => match v.get_ref() {
                toml::Value::Float(f) => (*f, false),
                toml::Value::Integer(i) => (*i as f64, false),
                toml::Value::String(s) if s == "sweep" => (1.0, true),
                _ => {
                    return Err(cx.at(
                        v.span().start,
                        format!("diffusion of `{name}` must be a positive number or \"sweep\""),
                    ))
                }
            },
        };
        let mut c = Compartment::new(name, decl.infected, d);
        let get = |map: &IndexMap<String, toml::Spanned<String>>, section: &str| {
            map.get(name)
                .map(|v| cx.expr(&format!("{section}.{name}"), v.get_ref(), v.span().start, &vocab, &params))
                .transpose()
        };
        if let Some(e) = get(&file.f, "F")? {
            c = c.f(e);
        }
        if let Some(e) = get(&file.vplus, "Vplus")? {
            c = c.vplus(e);
        }
        if let Some(e) = get(&file.vminus, "Vminus")? {
            c = c.vminus(e);
        }
        comps.push(c);
        placeholders.push(hole);
    }
    let name = file.name.clone().unwrap_or_else(|| {
        Path::new(origin)
            .file_stem()
            .map_or("model".into(), |s| s.to_string_lossy().into_owned())
    });
    let domain = (file.domain[0], file.domain[1]);
    if !(domain.0 < domain.1 && domain.0.is_finite() && domain.1.is_finite()) {
        return Err(CliError::Validation(format!("{origin}: domain must be an interval [a, b] with a < b")));
    }
    let mut model = CompartmentModel::new(&name, domain, comps)?;
    let uninfected: Vec<String> = names[model.m()..].to_vec();
    let missing = |section: &str, k: &str| {
        CliError::Validation(format!("{origin}: [{section}] has no entry for uninfected compartment `{k}`"))
    };
    if let Some(map) = &file.dfe_small {
        let mut c = Vec::new();
        for k in &uninfected {
            let v = map.get(k).ok_or_else(|| missing("dfe_small", k))?;
            c.push(cx.expr(&format!("dfe_small.{k}"), v.get_ref(), v.span().start, &bare, &params)?);
        }
        model = model.with_small_limit(c)?;
    }
    if let Some(map) = &file.dfe_large {
        let mut u = Vec::new();
        for k in &uninfected {
            let v = map.get(k).ok_or_else(|| missing("dfe_large", k))?;
            let key = format!("dfe_large.{k}");
            let value = match v.get_ref() {
                toml::Value::Array(a) if a.len() == 2 => {
                    let part = |p: &toml::Value| match p {
                        toml::Value::String(s) => parse_with(s, &bare, &params)
                            .map_err(|e| cx.at(v.span().start, format!("in `{key}`: {e}"))),
                        toml::Value::Integer(i) => Ok(Expr::Const(*i as f64)),
                        toml::Value::Float(f) => Ok(Expr::Const(*f)),
                        _ => Err(cx.at(v.span().start, format!("`{key}` entries must be expressions"))),
                    };
                    LargeValue::Ratio(part(&a[0])?, part(&a[1])?)
                }
                toml::Value::Array(_) => {
                    return Err(cx.at(
                        v.span().start,
                        format!("`{key}` must be an expression or a [numerator, denominator] pair"),
                    ))
                }
                _ => LargeValue::Mean(cx.value_expr(&key, v, &bare, &params)?),
            };
            u.push(value);
        }
        model = model.with_large_limit(u)?;
    }
    if let Some(mass) = file.dfe_mass {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(CliError::Validation(format!("{origin}: dfe_mass must be positive")));
        }
        model = model.with_dfe_rule(DfeRule::UniformMass(mass));
    }
    Ok(LoadedModel {
        model,
        placeholders,
        builtin: None,
    })
}

fn parse_params(params: &[String]) -> Result<IndexMap<String, String>, CliError> {
    params
        .iter()
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .filter(|(k, _)| !k.is_empty())
                .ok_or_else(|| CliError::Usage(format!("--param expects NAME=EXPR, got `{p}`")))
        })
        .collect()
}

/// Resolve `--model`, `--param` and `--seed`.
pub fn load_model(args: &CommonArgs) -> Result<LoadedModel, CliError> {
    if let Some(name) = args.model.strip_prefix("builtin:") {
        let b = match args.seed {
            Some(seed) => {
                let kind = BuiltinKind::from_name(name)?;
                let over = parse_params(&args.params)?;
                let stages = match over.get("m") {
                    Some(m) => m
                        .parse()
                        .map_err(|_| CliError::Usage(format!("m must be an integer, got `{m}`")))?,
                    None => 3,
                };
                if over.keys().any(|k| k != "m") {
                    return Err(CliError::Usage("--seed draws every coefficient; only `m` may be set with --param".into()));
                }
                random_builtin(kind, seed, stages)?
            }
            None => builtin(name, &parse_params(&args.params)?, (0.0, 1.0))?,
        };
        return Ok(LoadedModel {
            placeholders: vec![true; b.model.n()],
            model: b.model.clone(),
            builtin: Some(b),
        });
    }
    if !args.params.is_empty() || args.seed.is_some() {
        return Err(CliError::Usage("--param and --seed apply to built-in models only".into()));
    }
    let path = PathBuf::from(&args.model);
    let text = std::fs::read_to_string(&path).map_err(|source| CliError::Io { path: path.clone(), source })?;
    load_model_str(&text, &args.model)
}

fn grid_for(model: &CompartmentModel, n: usize) -> Result<Grid, CliError> {
    let (a, b) = model.domain();
    Grid::new(a, b, n).map_err(|e| CliError::Usage(format!("--grid-n: {e}")))
}

fn check_tol(tol: f64) -> Result<(), CliError> {
    if tol > 0.0 && tol < 1.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--tol must lie in (0, 1), got {tol}")))
    }
}

// ---------------------------------------------------------------- formatting

/// Fixed-width scientific notation used in every report.
pub fn num(x: f64) -> String {
    format!("{x:.12e}")
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".into(), num)
}

fn pair(p: Option<(f64, f64)>) -> String {
    p.map_or_else(|| "NA,NA".into(), |(a, b)| format!("{},{}", num(a), num(b)))
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(",")
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

fn status_word(s: &CheckStatus) -> &'static str {
    match s {
        CheckStatus::Pass => "pass",
        CheckStatus::Fail => "FAIL",
        CheckStatus::Skipped => "skipped",
    }
}

#[derive(Debug, Serialize)]
struct DfeSummary {
    method: String,
    iterations: usize,
    residual: f64,
    raw_residual: f64,
    min: Vec<f64>,
    max: Vec<f64>,
}

impl DfeSummary {
    fn new(d: &DfeState) -> Self {
        DfeSummary {
            method: serde_json::to_value(d.method)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default(),
            iterations: d.iterations,
            residual: d.residual,
            raw_residual: d.raw_residual,
            min: d.fields.iter().map(|f| f.min()).collect(),
            max: d.fields.iter().map(|f| f.max()).collect(),
        }
    }
}

// ---------------------------------------------------------------- commands

/// Output of a subcommand: the report text and the exit code.
pub struct Outcome {
    pub text: String,
    pub code: i32,
}

#[derive(Debug, Serialize)]
struct CheckOutput {
    model: String,
    nodes: usize,
    diffusion: Vec<f64>,
    passed: bool,
    assumptions: AssumptionReport,
    dfe: Option<DfeSummary>,
    dfe_error: Option<String>,
}

pub fn cmd_check(args: &CommonArgs) -> Result<Outcome, CliError> {
    check_tol(args.tol)?;
    let loaded = load_model(args)?;
    let model = loaded.with_d(&args.d)?;
    let grid = grid_for(&model, args.grid_n)?;
    let (dfe, dfe_error, dfe_numerical) = match solve_dfe(&model, &grid) {
        Ok(d) => (Some(d), None, false),
        Err(e) => {
            let numerical = matches!(CliError::from(e.clone()), CliError::Numerical(_));
            (None, Some(e.to_string()), numerical)
        }
    };
    let report = match &dfe {
        Some(d) => check_assumptions(&model, &grid, d, ASSUMPTION_SAMPLES),
        None => {
            let placeholder = DfeState::prescribed(&model, &grid, crate::dfe::dfe_small_limit(&model, &grid).unwrap_or_default())
                .ok();
            match placeholder {
                Some(p) => check_assumptions(&model, &grid, &p, ASSUMPTION_SAMPLES),
                None => AssumptionReport {
                    items: Vec::new(),
                    notes: vec!["no disease-free state available; pointwise checks skipped".into()],
                },
            }
        }
    };
    let passed = report.passed() && dfe.is_some();
    let out = CheckOutput {
        model: model.name().to_string(),
        nodes: grid.len(),
        diffusion: model.diffusion(),
        passed,
        dfe: dfe.as_ref().map(DfeSummary::new),
        dfe_error,
        assumptions: report,
    };
    let text = match args.format {
        Format::Json => json(&out),
        Format::Table => {
            let mut s = String::new();
            let _ = writeln!(s, "model     {}", out.model);
            let _ = writeln!(s, "nodes     {}", out.nodes);
            let _ = writeln!(s, "diffusion {}", join(&out.diffusion));
            for item in &out.assumptions.items {
                let _ = write!(s, "{:<20} {:<8} {}", item.id, status_word(&item.status), item.description);
                if !item.detail.is_empty() {
                    let _ = write!(s, " | {}", item.detail);
                }
                if let Some(w) = &item.worst {
                    if let Some(k) = w.node {
                        let _ = write!(s, " | node {k}");
                    }
                    let _ = write!(s, " (x = {}), {} = {}", num(w.x), w.entry, num(w.value));
                }
                s.push('\n');
            }
            match (&out.dfe, &out.dfe_error) {
                (Some(d), _) => {
                    let _ = writeln!(
                        s,
                        "dfe                  pass     method {} iterations {} residual {} min {} max {}",
                        d.method,
                        d.iterations,
                        num(d.residual),
                        join(&d.min),
                        join(&d.max)
                    );
                }
                (None, Some(e)) => {
                    let _ = writeln!(s, "dfe                  FAIL     {e}");
                }
                (None, None) => {}
            }
            for n in &out.assumptions.notes {
                let _ = writeln!(s, "note: {n}");
            }
            let _ = writeln!(s, "result    {}", if passed { "pass" } else { "FAIL" });
            s
        }
    };
    let code = if passed {
        0
    } else if dfe_numerical && out.assumptions.passed() {
        2
    } else {
        1
    };
    Ok(Outcome { text, code })
}

#[derive(Debug, Serialize)]
struct R0Output {
    model: String,
    nodes: usize,
    diffusion: Vec<f64>,
    r0: f64,
    r0_iterations: usize,
    r0_residual: f64,
    bound: f64,
    bound_iterations: usize,
    bound_residual: f64,
    sign: SignReport,
    dfe: DfeSummary,
}

pub fn cmd_r0(args: &CommonArgs) -> Result<Outcome, CliError> {
    check_tol(args.tol)?;
    let loaded = load_model(args)?;
    let model = loaded.with_d(&args.d)?;
    let grid = grid_for(&model, args.grid_n)?;
    let dfe = solve_dfe(&model, &grid)?;
    let op = BlockOperator::assemble(&model, &grid, &dfe)?;
    let r = r0_of(&op, args.tol)?;
    let s = threshold_bound(&op, args.tol)?;
    let out = R0Output {
        model: model.name().to_string(),
        nodes: grid.len(),
        diffusion: model.diffusion(),
        r0: r.value,
        r0_iterations: r.iterations,
        r0_residual: r.residual,
        bound: s.value,
        bound_iterations: s.iterations,
        bound_residual: s.residual,
        sign: sign_report(r.value, s.value),
        dfe: DfeSummary::new(&dfe),
    };
    let text = match args.format {
        Format::Json => json(&out),
        Format::Table => {
            let mut t = String::new();
            let _ = writeln!(t, "model            {}", out.model);
            let _ = writeln!(t, "nodes            {}", out.nodes);
            let _ = writeln!(t, "diffusion        {}", join(&out.diffusion));
            let _ = writeln!(t, "R0               {}", num(out.r0));
            let _ = writeln!(t, "R0 iterations    {}", out.r0_iterations);
            let _ = writeln!(t, "R0 residual      {}", num(out.r0_residual));
            let _ = writeln!(t, "s(B+F)           {}", num(out.bound));
            let _ = writeln!(t, "s iterations     {}", out.bound_iterations);
            let _ = writeln!(t, "s residual       {}", num(out.bound_residual));
            let sign = if out.sign.indeterminate {
                "indeterminate"
            } else if out.sign.agree {
                "agree"
            } else {
                "DISAGREE"
            };
            let _ = writeln!(t, "sign             {sign}");
            let _ = writeln!(t, "dfe method       {}", out.dfe.method);
            let _ = writeln!(t, "dfe iterations   {}", out.dfe.iterations);
            let _ = writeln!(t, "dfe residual     {}", num(out.dfe.residual));
            t
        }
    };
    Ok(Outcome { text, code: 0 })
}

fn parse_log_range(s: &str) -> Result<(f64, f64, usize), CliError> {
    let bad = || CliError::Usage(format!("--log-range expects LO:HI:POINTS, got `{s}`"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let k: usize = parts[2].trim().parse().map_err(|_| bad())?;
    Ok((lo, hi, k))
}

#[derive(Debug, Serialize)]
struct SweepOutput<'a> {
    #[serde(flatten)]
    report: &'a LimitReport,
    small_oracle: Option<f64>,
    large_oracle: Option<f64>,
}

/// Header of the sweep table.
pub fn sweep_header(names: &[String]) -> String {
    let mut cols: Vec<String> = names.iter().map(|n| format!("d_{n}")).collect();
    cols.extend(
        ["r0", "s_bf", "abs_r0_minus_small", "abs_r0_minus_large", "env_low", "env_high", "error"]
            .map(String::from),
    );
    cols.join(",")
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<Outcome, CliError> {
    let c = &args.common;
    check_tol(c.tol)?;
    if args.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let loaded = load_model(c)?;
    let grid = grid_for(&loaded.model, c.grid_n)?;
    let points: Vec<f64> = match (&args.log_range, c.d.is_empty()) {
        (Some(_), false) => return Err(CliError::Usage("give either --d or --log-range".into())),
        (Some(r), true) => {
            let (lo, hi, k) = parse_log_range(r)?;
            log_schedule(1, lo, hi, k).into_iter().map(|v| v[0]).collect()
        }
        (None, _) => c.d.clone(),
    };
    if points.is_empty() {
        return Err(CliError::Validation("diffusion schedule is empty".into()));
    }
    let schedule = points
        .iter()
        .map(|&v| loaded.diffusion_for(&[v]))
        .collect::<Result<Vec<_>, _>>()?;
    let opts = SweepOptions {
        tol: c.tol,
        eps_fraction: args.eps,
        jobs: args.jobs,
    };
    let report = sweep(&loaded.model, &grid, &schedule, &opts)?;
    let small_oracle = loaded.builtin.as_ref().and_then(|b| b.small_oracle(&grid).ok());
    let large_oracle = loaded.builtin.as_ref().and_then(|b| b.large_oracle(&grid).ok());
    let failed = report.rows.iter().filter(|r| r.error.is_some()).count();
    let text = match c.format {
        Format::Json => json(&SweepOutput {
            report: &report,
            small_oracle,
            large_oracle,
        }),
        Format::Table => {
            let mut t = String::new();
            let _ = writeln!(t, "{}", sweep_header(&loaded.model.names()));
            for r in &report.rows {
                let dist = |l: Option<f64>| opt(r.r0.zip(l).map(|(a, b)| (a - b).abs()));
                let _ = writeln!(
                    t,
                    "{},{},{},{},{},{},{}",
                    join(&r.diffusion),
                    opt(r.r0),
                    opt(r.bound),
                    dist(report.small_limit),
                    dist(report.large_limit),
                    pair(r.envelope),
                    r.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
                );
            }
            let _ = writeln!(t, "# model={} nodes={} points={}", report.model, report.nodes, report.rows.len());
            let _ = writeln!(t, "# small_limit={}", opt(report.small_limit));
            let _ = writeln!(t, "# large_limit={}", opt(report.large_limit));
            if loaded.builtin.is_some() {
                let _ = writeln!(t, "# small_oracle={}", opt(small_oracle));
                let _ = writeln!(t, "# large_oracle={}", opt(large_oracle));
            }
            let _ = writeln!(t, "# small_envelope={}", pair(report.small_envelope));
            let _ = writeln!(t, "# large_envelope={}", pair(report.large_envelope));
            if let Some(a) = &report.averaged {
                let _ = writeln!(t, "# large_limit_hypothesis={}", hypothesis_text(a));
            }
            let _ = writeln!(t, "# sign_violations={}", report.sign_violations(1e-10));
            let _ = writeln!(t, "# failed_points={failed}");
            for n in &report.notes {
                let _ = writeln!(t, "# note: {n}");
            }
            t
        }
    };
    Ok(Outcome {
        text,
        code: if failed > 0 { 2 } else { 0 },
    })
}

fn hypothesis_text(a: &AveragedLimit) -> String {
    let h = serde_json::to_value(&a.hypothesis).unwrap_or_default();
    let status = h["status"].as_str().unwrap_or("");
    let detail = h["detail"].as_str().unwrap_or("");
    let slow = if a.slow_convergence { " (slow convergence)" } else { "" };
    format!("{status}: {detail}{slow}")
}

#[derive(Debug, Serialize)]
struct LimitsOutput {
    model: String,
    nodes: usize,
    local_profile: LocalProfile,
    averaged: AveragedLimit,
    small_oracle: Option<f64>,
    large_oracle: Option<f64>,
    eps_fraction: f64,
    small_envelope: Option<(f64, f64)>,
    large_envelope: Option<(f64, f64)>,
    diffusion: Vec<f64>,
    /// `(a, λ(a))` with envelopes around `c(x)`.
    auxiliary: Vec<(f64, f64)>,
    notes: Vec<String>,
}

pub fn cmd_limits(args: &LimitsArgs) -> Result<Outcome, CliError> {
    let c = &args.common;
    check_tol(c.tol)?;
    let loaded = load_model(c)?;
    let model = loaded.with_d(&c.d)?;
    let grid = grid_for(&model, c.grid_n)?;
    let local = local_r0_profile(&model, &grid)?;
    let averaged = averaged_limit(&model, &grid)?;
    let mut notes = Vec::new();
    let mut bracket = |r: Reference, label: &str| -> Option<(crate::limits::EnvelopeMatrices, (f64, f64))> {
        let fields = match &r {
            Reference::SmallLimit => crate::dfe::dfe_small_limit(&model, &grid).ok()?,
            _ => crate::dfe::dfe_large_limit(&model, &grid)
                .ok()?
                .into_iter()
                .map(|v| crate::grid::Field::constant(grid.len(), v))
                .collect(),
        };
        let eps = args.eps * fields.iter().map(|f| f.min()).fold(f64::INFINITY, f64::min);
        let res = envelopes(&model, &grid, &r, eps).and_then(|e| envelope_bounds(&e).map(|b| (e, b)));
        res.map_err(|e| notes.push(format!("{label} envelope: {e}"))).ok()
    };
    let small = bracket(Reference::SmallLimit, "small-diffusion");
    let large = bracket(Reference::LargeLimit, "large-diffusion");
    let mut auxiliary = Vec::new();
    if let Some((env, _)) = &small {
        for a in AUX_LEVELS {
            match auxiliary_lambda(&model, &grid, env, a, c.tol) {
                Ok(l) => auxiliary.push((a, l.value)),
                Err(e) => notes.push(format!("λ({a}): {e}")),
            }
        }
    }
    if averaged.value > local.max * (1.0 + 1e-12) {
        notes.push("averaged limit exceeds the local maximum".into());
    }
    let out = LimitsOutput {
        model: model.name().to_string(),
        nodes: grid.len(),
        small_oracle: loaded.builtin.as_ref().and_then(|b| b.small_oracle(&grid).ok()),
        large_oracle: loaded.builtin.as_ref().and_then(|b| b.large_oracle(&grid).ok()),
        eps_fraction: args.eps,
        small_envelope: small.map(|s| s.1),
        large_envelope: large.map(|s| s.1),
        diffusion: model.diffusion(),
        auxiliary,
        notes,
        local_profile: local,
        averaged,
    };
    let text = match c.format {
        Format::Json => json(&out),
        Format::Table => {
            let mut t = String::new();
            let lp = &out.local_profile;
            let _ = writeln!(t, "model              {}", out.model);
            let _ = writeln!(t, "nodes              {}", out.nodes);
            let _ = writeln!(t, "small limit        {}", num(lp.max));
            let _ = writeln!(t, "  argmax           node {} (x = {})", lp.argmax, num(lp.x_max));
            let _ = writeln!(t, "large limit        {}", num(out.averaged.value));
            let _ = writeln!(t, "  hypothesis       {}", hypothesis_text(&out.averaged));
            if loaded.builtin.is_some() {
                let _ = writeln!(t, "small oracle       {}", opt(out.small_oracle));
                let _ = writeln!(t, "large oracle       {}", opt(out.large_oracle));
            }
            let _ = writeln!(t, "eps fraction       {}", num(out.eps_fraction));
            let _ = writeln!(t, "small envelope     {}", pair(out.small_envelope));
            let _ = writeln!(t, "large envelope     {}", pair(out.large_envelope));
            let _ = writeln!(t, "diffusion          {}", join(&out.diffusion));
            for (a, l) in &out.auxiliary {
                let _ = writeln!(t, "{:<19}{}", format!("lambda({a})"), num(*l));
            }
            for n in &out.notes {
                let _ = writeln!(t, "note: {n}");
            }
            t
        }
    };
    Ok(Outcome { text, code: 0 })
}

#[derive(Debug, Serialize)]
struct SimulateOutput {
    model: String,
    nodes: usize,
    diffusion: Vec<f64>,
    r0: f64,
    decay_ratio: f64,
    report: StabilityReport,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Outcome, CliError> {
    let c = &args.common;
    check_tol(c.tol)?;
    if !(args.amplitude >= 0.0 && args.amplitude.is_finite()) {
        return Err(CliError::Usage("--amplitude must be nonnegative".into()));
    }
    let loaded = load_model(c)?;
    let model = loaded.with_d(&c.d)?;
    let grid = grid_for(&model, c.grid_n)?;
    let dfe = solve_dfe(&model, &grid)?;
    let op = BlockOperator::assemble(&model, &grid, &dfe)?;
    let r0 = r0_of(&op, c.tol)?.value;
    let mode = match args.mode {
        Some(Mode::Decay) => StabilityMode::Decay,
        Some(Mode::Growth) => StabilityMode::Growth,
        None if r0 < 1.0 => StabilityMode::Decay,
        None => StabilityMode::Growth,
    };
    let dt = args.dt.unwrap_or(args.t_end / 1000.0);
    let report = dfe_stability_test(&model, &grid, &dfe, args.amplitude, args.t_end, dt, mode)?;
    let out = SimulateOutput {
        model: model.name().to_string(),
        nodes: grid.len(),
        diffusion: model.diffusion(),
        r0,
        decay_ratio: report.decay_ratio(),
        report,
    };
    let text = match c.format {
        Format::Json => json(&out),
        Format::Table => {
            let mut t = String::from("t,distance,infected\n");
            let r = &out.report;
            for ((time, d), i) in r.times.iter().zip(&r.distance).zip(&r.infected) {
                let _ = writeln!(t, "{},{},{}", num(*time), num(*d), num(*i));
            }
            let _ = writeln!(t, "# model={} nodes={} r0={}", out.model, out.nodes, num(out.r0));
            let _ = writeln!(t, "# mode={:?} amplitude={}", r.mode, num(r.amplitude)).map(|_| ());
            let _ = writeln!(t, "# decay_ratio={}", num(out.decay_ratio));
            let _ = writeln!(t, "# monotone_last_half={}", r.monotone_last_half);
            let _ = writeln!(t, "# passed={}", r.passed);
            t
        }
    };
    let code = if out.report.passed { 0 } else { 1 };
    Ok(Outcome { text, code })
}

fn emit(outcome: &Outcome, target: Option<&Path>, stdout: &mut dyn Write) -> Result<(), CliError> {
    match target {
        Some(p) => std::fs::write(p, &outcome.text).map_err(|source| CliError::Io {
            path: p.to_path_buf(),
            source,
        }),
        None => stdout
            .write_all(outcome.text.as_bytes())
            .map_err(|source| CliError::Io {
                path: PathBuf::from("<stdout>"),
                source,
            }),
    }
}

/// Run a parsed command.
pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let (outcome, out) = match &cli.command {
        Command::Check(a) => (cmd_check(a)?, a.out.as_deref()),
        Command::R0(a) => (cmd_r0(a)?, a.out.as_deref()),
        Command::Sweep(a) => (cmd_sweep(a)?, a.common.out.as_deref()),
        Command::Limits(a) => (cmd_limits(a)?, a.common.out.as_deref()),
        Command::Simulate(a) => (cmd_simulate(a)?, a.common.out.as_deref()),
    };
    emit(&outcome, out, stdout)?;
    Ok(outcome.code)
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                stdout.write_all(text.as_bytes())
            } else {
                stderr.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(&cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
