//! Closed-form solutions of linear ODE systems through the complex Schur
//! form, and Galerkin/Legendre linearization of polynomial systems with
//! perturbation-expansion solvers.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod accum;
pub mod error;
pub mod galerkin;
pub mod io;
pub mod linalg;
pub mod oracles;
pub mod par;
pub mod perturbation;
pub mod poly;
pub mod report;
pub mod triangular;

pub use error::{Error, Result};
pub use galerkin::{BasisSpace, GalerkinSystem};
pub use linalg::{schur_decompose, Matrix, RealMatrix, SchurForm, C64};
pub use par::Execution;
pub use perturbation::{PerturbedSolution, Scheme, SolveOptions};
pub use poly::{PolynomialODE, SystemDefinition};
pub use report::Trajectory;
pub use triangular::{solve_linear_ivp, ExpPolySolution, TriangularFlow};
