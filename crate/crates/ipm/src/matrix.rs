use serde::{Deserialize, Serialize};

/// Compressed sparse row storage, built row by row.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RowMatrix {
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl RowMatrix {
    pub fn new(ncols: usize) -> Self {
        Self {
            ncols,
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Appends a row. Repeated columns are summed and explicit zeros dropped.
    pub fn push_row<I>(&mut self, entries: I)
    where
        I: IntoIterator<Item = (usize, f64)>,
    {
        let mut row: Vec<(usize, f64)> = entries.into_iter().collect();
        row.sort_by_key(|&(c, _)| c);
        let start = self.indices.len();
        for (c, v) in row {
            if self.indices.len() > start && *self.indices.last().unwrap() == c {
                *self.values.last_mut().unwrap() += v;
            } else {
                self.indices.push(c);
                self.values.push(v);
            }
        }
        // drop cancellations
        let mut w = start;
        for r in start..self.indices.len() {
            if self.values[r] != 0.0 {
                self.indices[w] = self.indices[r];
                self.values[w] = self.values[r];
                w += 1;
            }
        }
        self.indices.truncate(w);
        self.values.truncate(w);
        self.indptr.push(w);
    }

    pub fn nrows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let (idx, val) = self.row(i);
        idx.iter().zip(val).map(|(&j, &v)| v * x[j]).sum()
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows()).map(|i| self.row_dot(i, x)).collect()
    }

    /// `y += Aᵀ w`
    pub fn tmul_add(&self, w: &[f64], y: &mut [f64]) {
        for (i, &wi) in w.iter().enumerate() {
            if wi == 0.0 {
                continue;
            }
            let (idx, val) = self.row(i);
            for (&j, &v) in idx.iter().zip(val) {
                y[j] += v * wi;
            }
        }
    }

    pub fn tmul(&self, w: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        self.tmul_add(w, &mut y);
        y
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = (&[usize], &[f64])> + '_ {
        (0..self.nrows()).map(move |i| self.row(i))
    }
}

/// Symmetric matrix given by its upper-triangular triplets (`i <= j`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SymTriplets {
    pub n: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SymTriplets {
    pub fn new(n: usize) -> Self {
        Self { n, entries: Vec::new() }
    }

    /// Adds `v` at `(i, j)` and, implicitly, at `(j, i)`.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        self.entries.push((a, b, v));
    }

    pub fn is_empty(&self) -> bool {
        self.entries.iter().all(|e| e.2 == 0.0)
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
            if i != j {
                y[j] += v * x[i];
            }
        }
        y
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|&(i, j, v)| if i == j { v * x[i] * x[i] } else { 2.0 * v * x[i] * x[j] })
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0_f64, |m, e| m.max(e.2.abs()))
    }
}
