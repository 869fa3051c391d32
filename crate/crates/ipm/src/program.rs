use serde::{Deserialize, Serialize};

use crate::matrix::{RowMatrix, SymTriplets};
use crate::normal::{NormalSystem, Shift};
use crate::SolverError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum VarBound {
    Free,
    Lower(f64),
    /// Pinned to a value. Used for the auxiliary variable that carries constants.
    Fixed(f64),
}

/// `min ½ uᵀHu + cᵀu + constant` subject to `A u ≥ 0` and per-variable bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexProgram {
    pub n: usize,
    pub hessian: SymTriplets,
    pub linear: Vec<f64>,
    pub constant: f64,
    pub rows: RowMatrix,
    pub bounds: Vec<VarBound>,
}

impl ConvexProgram {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            hessian: SymTriplets::new(n),
            linear: vec![0.0; n],
            constant: 0.0,
            rows: RowMatrix::new(n),
            bounds: vec![VarBound::Free; n],
        }
    }

    /// Appends a fixed variable and returns its index. Existing rows stay valid.
    pub fn add_fixed_variable(&mut self, value: f64) -> usize {
        let j = self.n;
        self.n += 1;
        self.hessian.n = self.n;
        self.linear.push(0.0);
        self.bounds.push(VarBound::Fixed(value));
        let mut rows = RowMatrix::new(self.n);
        for (idx, val) in self.rows.iter_rows() {
            rows.push_row(idx.iter().copied().zip(val.iter().copied()));
        }
        self.rows = rows;
        j
    }

    pub fn objective(&self, u: &[f64]) -> f64 {
        let lin: f64 = self.linear.iter().zip(u).map(|(c, x)| c * x).sum();
        0.5 * self.hessian.quad_form(u) + lin + self.constant
    }

    pub fn gradient(&self, u: &[f64]) -> Vec<f64> {
        let mut g = self.hessian.mul(u);
        for (gi, ci) in g.iter_mut().zip(&self.linear) {
            *gi += ci;
        }
        g
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: String| Err(SolverError::InvalidProgram(m));
        if self.linear.len() != self.n || self.bounds.len() != self.n {
            return bad(format!(
                "length mismatch: n={}, linear={}, bounds={}",
                self.n,
                self.linear.len(),
                self.bounds.len()
            ));
        }
        if self.rows.ncols() != self.n || self.hessian.n != self.n {
            return bad("row matrix or hessian has the wrong dimension".into());
        }
        for (i, (idx, _)) in self.rows.iter_rows().enumerate() {
            if idx.is_empty() {
                return bad(format!("row {i} is identically zero"));
            }
        }
        for &(i, j, v) in &self.hessian.entries {
            if i >= self.n || j >= self.n || !v.is_finite() {
                return bad(format!("bad hessian entry ({i}, {j}, {v})"));
            }
        }
        if self.linear.iter().any(|c| !c.is_finite()) {
            return bad("non-finite linear term".into());
        }
        if !self.hessian.is_empty() && !self.hessian_is_psd() {
            return bad("quadratic part is not positive semidefinite".into());
        }
        Ok(())
    }

    fn hessian_is_psd(&self) -> bool {
        let scale = self.hessian.max_abs().max(f64::MIN_POSITIVE);
        let empty = RowMatrix::new(self.n);
        let mut sys = NormalSystem::new(self.n, &self.hessian.entries, &empty);
        sys.factor(&self.hessian.entries, &[], &empty, Shift::Absolute(1e-10 * scale))
            .is_ok()
    }

    pub fn primal_violation(&self, u: &[f64]) -> f64 {
        let rows = self.rows.mul(u).into_iter().fold(0.0_f64, |m, r| m.max(-r));
        let b = self.bounds.iter().zip(u).fold(0.0_f64, |m, (b, &x)| match *b {
            VarBound::Free => m,
            VarBound::Lower(l) => m.max(l - x),
            VarBound::Fixed(v) => m.max((x - v).abs()),
        });
        rows.max(b)
    }
}
