//! Finite-difference simulation and verification toolkit for the two-species
//! SKT cross-diffusion system `∂ₜu − Δp(u) + q(u) = l(u)` and its backward
//! adjoint.

pub mod adjoint;
pub mod algebra;
pub mod config;
pub mod error;
pub mod experiments;
pub mod forward;
pub mod grid;
pub mod io;
pub mod linsolve;

pub use algebra::{Coefficients, Matrix2, SpeciesPair};
pub use config::RunConfig;
pub use error::{Result, SktError};
pub use grid::{BoundaryCondition, FieldPair, Grid};
