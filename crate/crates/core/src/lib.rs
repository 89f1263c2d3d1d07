//! Boundary integral equations for time-harmonic Maxwell scattering from
//! perfect conductors, formulated with generalized Debye sources.
//!
//! The crate provides
//! * complex-argument special functions ([`specfun`]),
//! * the exact diagonal form of the equations on the unit sphere ([`sphere_ops`]),
//! * a complex root finder for the sphere multipliers ([`rootfinder`]),
//! * parametric surface geometry and surface calculus ([`surface`]),
//! * Nystrom layer potentials and boundary operators ([`layerpot`]),
//! * system assembly and scattering solves ([`solver`]),
//! * a command line front end ([`cli`]).

pub mod cli;
pub mod layerpot;
pub mod linalg;
pub mod rootfinder;
pub mod solver;
pub mod specfun;
pub mod sphere_ops;
pub mod surface;

use num_complex::Complex64;
use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("mean-zero violation: |mean| = {0:.3e}")]
    MeanZero(f64),
    #[error("singular multiplier at k = {k}, l = {l}: |m| = {abs:.3e}")]
    SingularMultiplier { k: Complex64, l: usize, abs: f64 },
    #[error("ill-conditioned system: condition estimate {0:.3e}")]
    IllConditioned(f64),
    #[error("root finding failed: {0}")]
    RootFinding(String),
    #[error("rank deficiency: expected nullspace dimension {expected}, found {found}")]
    RankDeficiency { expected: usize, found: usize },
    #[error("near-surface evaluation rejected: distance {dist:.3e} below cutoff {cutoff:.3e}")]
    NearSurface { dist: f64, cutoff: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
