//! Discrete convexity on two-dimensional grids: lattice arithmetic, stencil
//! families and their constraint cones, lifted triangulations, adaptive
//! refinement loops and the monopolist problem.

mod error;

pub mod constraints;
pub mod delaunay;
pub mod grid;
pub mod hull_oracle;
pub mod lattice;
pub mod monopolist;
pub mod polygon;
pub mod refine;
pub mod stencils;

pub use error::Error;
