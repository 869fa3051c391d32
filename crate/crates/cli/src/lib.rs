//! Experiment drivers and figure export behind the `cvxgrid` binary.

pub mod experiments;
pub mod export;
pub mod functions;
