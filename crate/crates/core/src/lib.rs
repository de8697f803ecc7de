//! Mass-, energy-, enstrophy- and vorticity-conserving mixed spectral element
//! solver for the two-dimensional incompressible Navier–Stokes equations in
//! rotational form.

pub mod assembly;
pub mod bench;
pub mod derham;
pub mod diagnostics;
pub mod io;
pub mod mesh;
pub mod polybasis;
pub mod solver;
pub mod sparse;

use thiserror::Error;

/// Crate-wide error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Basis(#[from] polybasis::BasisError),
    #[error(transparent)]
    Mesh(#[from] mesh::MeshError),
    #[error(transparent)]
    Space(#[from] derham::SpaceError),
    #[error(transparent)]
    Solver(#[from] solver::SolverError),
    #[error(transparent)]
    Config(#[from] io::ConfigError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
