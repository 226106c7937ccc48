//! Finite-difference sub-Laplacians on Heisenberg and step-2 Carnot groups,
//! their Dirichlet spectra, Levi-tension diagnostics for maps, and checks of
//! universal eigenvalue inequalities.

pub mod discretization;
pub mod eigensolver;
pub mod error;
pub mod grid;
pub mod group_models;
pub mod sparse;

pub use error::{Error, Result};
pub mod tension;
pub mod inequalities;
pub mod convergence;
pub mod io;
pub mod jobs;
