//! Programs on disk: the constraint matrix as a Matrix Market coordinate file and
//! everything else in a JSON header next to it.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::matrix::{RowMatrix, SymTriplets};
use crate::program::{ConvexProgram, VarBound};
use crate::SolverError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgramHeader {
    pub schema: u32,
    pub n: usize,
    pub rows: usize,
    pub hessian: Vec<(usize, usize, f64)>,
    pub linear: Vec<f64>,
    pub constant: f64,
    pub bounds: Vec<VarBound>,
    pub matrix_file: String,
}

pub fn matrix_market(a: &RowMatrix) -> String {
    let mut out = String::new();
    out.push_str("%%MatrixMarket matrix coordinate real general\n");
    out.push_str("% rows are constraints A u >= 0\n");
    let _ = writeln!(out, "{} {} {}", a.nrows(), a.ncols(), a.nnz());
    for (i, (idx, val)) in a.iter_rows().enumerate() {
        for (&j, &v) in idx.iter().zip(val) {
            let _ = writeln!(out, "{} {} {:e}", i + 1, j + 1, v);
        }
    }
    out
}

pub fn parse_matrix_market(text: &str) -> Result<RowMatrix, SolverError> {
    let perr = |m: &str| SolverError::Parse(m.to_string());
    let mut lines = text.lines().filter(|l| !l.starts_with('%') && !l.trim().is_empty());
    let dims: Vec<usize> = lines
        .next()
        .ok_or_else(|| perr("missing size line"))?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| perr("bad size line")))
        .collect::<Result<_, _>>()?;
    if dims.len() != 3 {
        return Err(perr("size line needs three fields"));
    }
    let (nr, nc, nnz) = (dims[0], dims[1], dims[2]);
    let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nr];
    let mut count = 0;
    for line in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 3 {
            return Err(perr("entry line needs three fields"));
        }
        let i: usize = t[0].parse().map_err(|_| perr("bad row index"))?;
        let j: usize = t[1].parse().map_err(|_| perr("bad column index"))?;
        let v: f64 = t[2].parse().map_err(|_| perr("bad value"))?;
        if i == 0 || j == 0 || i > nr || j > nc {
            return Err(perr("index out of range"));
        }
        per_row[i - 1].push((j - 1, v));
        count += 1;
    }
    if count != nnz {
        return Err(perr("entry count does not match header"));
    }
    let mut a = RowMatrix::new(nc);
    for r in per_row {
        a.push_row(r);
    }
    Ok(a)
}

/// Writes `<base>.json` and `<base>.mtx`.
pub fn write_program(p: &ConvexProgram, base: &Path) -> Result<(), SolverError> {
    let mtx = base.with_extension("mtx");
    let header = ProgramHeader {
        schema: 1,
        n: p.n,
        rows: p.rows.nrows(),
        hessian: p.hessian.entries.clone(),
        linear: p.linear.clone(),
        constant: p.constant,
        bounds: p.bounds.clone(),
        matrix_file: mtx
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    fs::write(&mtx, matrix_market(&p.rows))?;
    let json = serde_json::to_string_pretty(&header).map_err(|e| SolverError::Parse(e.to_string()))?;
    fs::write(base.with_extension("json"), json)?;
    Ok(())
}

pub fn read_program(base: &Path) -> Result<ConvexProgram, SolverError> {
    let text = fs::read_to_string(base.with_extension("json"))?;
    let header: ProgramHeader = serde_json::from_str(&text).map_err(|e| SolverError::Parse(e.to_string()))?;
    let dir = base.parent().unwrap_or(Path::new("."));
    let rows = parse_matrix_market(&fs::read_to_string(dir.join(&header.matrix_file))?)?;
    if rows.nrows() != header.rows || rows.ncols() != header.n {
        return Err(SolverError::Parse("matrix shape disagrees with header".into()));
    }
    let p = ConvexProgram {
        n: header.n,
        hessian: SymTriplets {
            n: header.n,
            entries: header.hessian,
        },
        linear: header.linear,
        constant: header.constant,
        rows,
        bounds: header.bounds,
    };
    p.validate()?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_market_round_trip() {
        let mut a = RowMatrix::new(3);
        a.push_row([(0, 1.0), (2, -2.5)]);
        a.push_row([(1, 1e-3)]);
        let back = parse_matrix_market(&matrix_market(&a)).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn rejects_bad_counts() {
        let bad = "%%MatrixMarket matrix coordinate real general\n1 1 2\n1 1 1.0\n";
        assert!(parse_matrix_market(bad).is_err());
    }
}
