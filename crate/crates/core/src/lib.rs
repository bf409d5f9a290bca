//! Basic reproduction numbers of spatially heterogeneous reaction-diffusion
//! compartmental epidemic models on an interval, with the small- and
//! large-diffusion limits, envelope bounds and threshold checks.
//!
//! The usual pipeline: build a [`model::CompartmentModel`] (or take one from
//! [`models`]), discretize the interval with [`grid::Grid`], solve for the
//! disease-free state with [`dfe::solve_dfe`], then call [`r0::compute_r0`].

pub mod banded;
pub mod cli;
pub mod dfe;
pub mod expr;
pub mod grid;
pub mod limits;
pub mod model;
pub mod models;
pub mod r0;
pub mod sim;
pub mod spectral;

use thiserror::Error;

/// Any error raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] expr::ParseError),
    #[error(transparent)]
    Eval(#[from] expr::EvalError),
    #[error(transparent)]
    Grid(#[from] grid::GridError),
    #[error(transparent)]
    Band(#[from] banded::BandError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Dfe(#[from] dfe::DfeError),
    #[error(transparent)]
    Spectral(#[from] spectral::SpectralError),
    #[error(transparent)]
    R0(#[from] r0::R0Error),
    #[error(transparent)]
    Limits(#[from] limits::LimitsError),
    #[error(transparent)]
    Sim(#[from] sim::SimError),
    #[error(transparent)]
    Builtin(#[from] models::BuiltinError),
    #[error(transparent)]
    Cli(#[from] cli::CliError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
