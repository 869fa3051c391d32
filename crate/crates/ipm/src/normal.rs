//! Normal-equation matrix `H + Gᵀ W G + δI`, stored as the upper triangle in CSC.
//! The sparsity pattern and the symbolic factorization are computed once; every
//! interior-point iteration only rescatters values and refactors numerically.

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::{Conj, MatMut, Side};

use crate::matrix::RowMatrix;

pub(crate) struct NormalSystem {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    pattern: SymbolicSparseColMat<usize>,
    symbolic: Option<SymbolicLlt<usize>>,
    diag_pos: Vec<usize>,
    h_pos: Vec<usize>,
    g_ptr: Vec<usize>,
    g_pos: Vec<u32>,
    vals: Vec<f64>,
    llt: Option<Llt<usize, f64>>,
}

#[derive(Debug)]
pub(crate) struct NotPositiveDefinite;

/// Diagonal shift added before factoring.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Shift {
    Absolute(f64),
    /// Multiple of the largest diagonal entry (at least 1).
    Relative(f64),
}

impl NormalSystem {
    pub fn new(n: usize, hessian: &[(usize, usize, f64)], g: &RowMatrix) -> Self {
        let mut keys: Vec<(usize, usize)> = (0..n).map(|j| (j, j)).collect();
        for &(i, j, _) in hessian {
            keys.push((j.max(i), j.min(i)));
        }
        for (idx, _) in g.iter_rows() {
            for (k, &ck) in idx.iter().enumerate() {
                for &cl in &idx[..=k] {
                    keys.push((ck, cl));
                }
            }
        }
        keys.sort_unstable();
        keys.dedup();

        let mut col_ptr = vec![0usize; n + 1];
        for &(c, _) in &keys {
            col_ptr[c + 1] += 1;
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }
        let row_idx: Vec<usize> = keys.iter().map(|&(_, r)| r).collect();
        drop(keys);

        let find = |col: usize, row: usize| -> usize {
            let seg = &row_idx[col_ptr[col]..col_ptr[col + 1]];
            col_ptr[col] + seg.binary_search(&row).expect("entry in pattern")
        };
        let diag_pos: Vec<usize> = (0..n).map(|j| find(j, j)).collect();
        let h_pos: Vec<usize> = hessian.iter().map(|&(i, j, _)| find(i.max(j), i.min(j))).collect();
        let mut g_ptr = Vec::with_capacity(g.nrows() + 1);
        let mut g_pos = Vec::new();
        g_ptr.push(0);
        for (idx, _) in g.iter_rows() {
            for (k, &ck) in idx.iter().enumerate() {
                for &cl in &idx[..=k] {
                    g_pos.push(find(ck, cl) as u32);
                }
            }
            g_ptr.push(g_pos.len());
        }

        let nnz = row_idx.len();
        let pattern = SymbolicSparseColMat::<usize>::new_checked(n, n, col_ptr.clone(), None, row_idx.clone());
        Self {
            n,
            col_ptr,
            row_idx,
            pattern,
            symbolic: None,
            diag_pos,
            h_pos,
            g_ptr,
            g_pos,
            vals: vec![0.0; nnz],
            llt: None,
        }
    }

    /// Assembles with row weights `w` (empty slice means no rows) and factors.
    pub fn factor(
        &mut self,
        hessian: &[(usize, usize, f64)],
        w: &[f64],
        g: &RowMatrix,
        shift: Shift,
    ) -> Result<(), NotPositiveDefinite> {
        self.vals.iter_mut().for_each(|v| *v = 0.0);
        for (&p, &(_, _, v)) in self.h_pos.iter().zip(hessian) {
            self.vals[p] += v;
        }
        for (r, &wr) in w.iter().enumerate() {
            let (_, val) = g.row(r);
            let pos = &self.g_pos[self.g_ptr[r]..self.g_ptr[r + 1]];
            let mut t = 0;
            for (k, &vk) in val.iter().enumerate() {
                let s = wr * vk;
                for &vl in &val[..=k] {
                    self.vals[pos[t] as usize] += s * vl;
                    t += 1;
                }
            }
        }
        let delta = match shift {
            Shift::Absolute(d) => d,
            Shift::Relative(r) => r * self.diag_pos.iter().fold(1.0_f64, |m, &p| m.max(self.vals[p])),
        };
        for &p in &self.diag_pos {
            self.vals[p] += delta;
        }
        if self.symbolic.is_none() {
            self.symbolic =
                Some(SymbolicLlt::try_new(self.pattern.as_ref(), Side::Upper).map_err(|_| NotPositiveDefinite)?);
        }
        let mat = SparseColMatRef::new(self.pattern.as_ref(), &self.vals);
        let sym = self.symbolic.clone().unwrap();
        match Llt::try_new_with_symbolic(sym, mat, Side::Upper) {
            Ok(l) => {
                self.llt = Some(l);
                Ok(())
            }
            Err(_) => {
                self.llt = None;
                Err(NotPositiveDefinite)
            }
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for c in 0..self.n {
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[p];
                let v = self.vals[p];
                y[r] += v * x[c];
                if r != c {
                    y[c] += v * x[r];
                }
            }
        }
        y
    }

    fn solve_raw(&self, x: &mut [f64]) {
        let llt = self.llt.as_ref().expect("factored");
        llt.solve_in_place_with_conj(Conj::No, MatMut::from_column_major_slice_mut(x, self.n, 1));
    }

    /// Solves with one step of iterative refinement.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_raw(&mut x);
        let ax = self.apply(&x);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        self.solve_raw(&mut r);
        for (xi, di) in x.iter_mut().zip(&r) {
            *xi += di;
        }
        x
    }
}
