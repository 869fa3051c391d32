//! Convex test functions for the Monte Carlo experiments.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use cvxgrid::polygon::P2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FunctionKind {
    /// `½‖z‖²`
    Q,
    /// `½ zᵀAz` with random eigenvalues in `[0.1, 1]` and a random eigenbasis.
    Quadratic,
    /// Maximum of 8 random affine maps.
    MaxAffine,
    /// `max(0, z₁)`: rank-one Hessian almost everywhere.
    Ridge,
}

impl FromStr for FunctionKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "q" => FunctionKind::Q,
            "quadratic" | "random-quadratic" => FunctionKind::Quadratic,
            "max-affine" => FunctionKind::MaxAffine,
            "ridge" => FunctionKind::Ridge,
            _ => return Err(format!("unknown test function {s:?} (q, quadratic, max-affine, ridge)")),
        })
    }
}

impl fmt::Display for FunctionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FunctionKind::Q => "q",
            FunctionKind::Quadratic => "quadratic",
            FunctionKind::MaxAffine => "max-affine",
            FunctionKind::Ridge => "ridge",
        })
    }
}

#[derive(Clone, Debug)]
pub enum TestFunction {
    /// `½ (a z₁² + 2b z₁z₂ + c z₂²)`
    Quadratic {
        a: f64,
        b: f64,
        c: f64,
    },
    MaxAffine(Vec<[f64; 3]>),
    Ridge,
}

impl TestFunction {
    /// `scale` is the domain radius, so that max-affine pieces all show up.
    pub fn draw<R: Rng>(kind: FunctionKind, rng: &mut R, scale: f64) -> Self {
        match kind {
            FunctionKind::Q => TestFunction::Quadratic { a: 1.0, b: 0.0, c: 1.0 },
            FunctionKind::Quadratic => {
                let l1: f64 = rng.random_range(0.1..1.0);
                let l2: f64 = rng.random_range(0.1..1.0);
                let (s, c) = rng.random_range(0.0..std::f64::consts::PI).sin_cos();
                TestFunction::Quadratic {
                    a: l1 * c * c + l2 * s * s,
                    b: (l1 - l2) * c * s,
                    c: l1 * s * s + l2 * c * c,
                }
            }
            FunctionKind::MaxAffine => {
                let planes = (0..8)
                    .map(|_| {
                        let g = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                        [g[0], g[1], rng.random_range(-0.5..0.5) * scale]
                    })
                    .collect();
                TestFunction::MaxAffine(planes)
            }
            FunctionKind::Ridge => TestFunction::Ridge,
        }
    }

    pub fn eval(&self, z: P2) -> f64 {
        match self {
            TestFunction::Quadratic { a, b, c } => 0.5 * (a * z[0] * z[0] + 2.0 * b * z[0] * z[1] + c * z[1] * z[1]),
            TestFunction::MaxAffine(planes) => planes
                .iter()
                .map(|p| p[0] * z[0] + p[1] * z[1] + p[2])
                .fold(f64::NEG_INFINITY, f64::max),
            TestFunction::Ridge => z[0].max(0.0),
        }
    }
}
