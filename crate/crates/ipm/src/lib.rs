//! Sparse convex quadratic programs with linear inequality rows, solved by a
//! primal-dual interior-point method (Mehrotra predictor-corrector).
//!
//! Constraint rows are homogeneous (`A u ≥ 0`). Constants enter through a
//! variable pinned with [`VarBound::Fixed`], which presolve substitutes out.

mod io;
mod ipm;
mod matrix;
mod normal;
mod program;

pub use io::{read_program, write_program, ProgramHeader};
pub use ipm::{active_bounds, active_rows, solve, solve_warm, KktResiduals, Settings, Solution, Status};
pub use matrix::{RowMatrix, SymTriplets};
pub use program::{ConvexProgram, VarBound};

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("invalid program: {0}")]
    InvalidProgram(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(String),
}
