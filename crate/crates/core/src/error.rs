use crate::lattice::IVec;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("Unit vectors have no parents.")]
    NoParents,
    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("stencil family violates {property} at point {point}, offset {offset}")]
    InvalidStencil {
        property: &'static str,
        point: usize,
        offset: IVec,
    },
    #[error("function is not discretely convex (worst form value {0:e})")]
    NotConvex(f64),
    #[error("solver: {0}")]
    Solver(#[from] cvxgrid_ipm::SolverError),
    #[error("solver stopped with status {0:?}")]
    SolverStatus(cvxgrid_ipm::Status),
    #[error("refinement did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
