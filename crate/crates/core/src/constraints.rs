//! The S, T, P and H linear forms and the constraint systems built from them.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use cvxgrid_ipm::RowMatrix;

use crate::grid::GridDomain;
use crate::lattice::{self, IVec};
use crate::stencils::StencilFamily;
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FormKind {
    S,
    T,
    P,
    H,
}

/// A finite combination of Dirac masses at lattice sites, with integer weights.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearForm {
    pub kind: FormKind,
    pub base: IVec,
    pub offset: IVec,
    pub terms: Vec<(IVec, i64)>,
}

fn merged(mut terms: Vec<(IVec, i64)>) -> Vec<(IVec, i64)> {
    terms.sort();
    let mut out: Vec<(IVec, i64)> = Vec::with_capacity(terms.len());
    for (z, w) in terms {
        match out.last_mut() {
            Some(last) if last.0 == z => last.1 += w,
            _ => out.push((z, w)),
        }
    }
    out.retain(|t| t.1 != 0);
    out
}

fn check_irreducible(e: IVec) -> Result<(), Error> {
    if !lattice::is_irreducible(e)? {
        return Err(Error::InvalidArgument(format!("{e} is not irreducible")));
    }
    Ok(())
}

fn non_unit_parents(e: IVec, what: &str) -> Result<lattice::Basis, Error> {
    check_irreducible(e)?;
    if e.is_unit() {
        return Err(Error::InvalidArgument(format!(
            "{what} needs a non-unit offset, got {e}"
        )));
    }
    lattice::parents(e)
}

/// `S_x^e(u) = u(x+e) − 2u(x) + u(x−e)`.
pub fn form_s(x: IVec, e: IVec) -> Result<LinearForm, Error> {
    check_irreducible(e)?;
    Ok(LinearForm {
        kind: FormKind::S,
        base: x,
        offset: e,
        terms: vec![(x + e, 1), (x, -2), (x - e, 1)],
    })
}

/// `T_x^e(u) = u(x+e) + u(x−f) + u(x−g) − 3u(x)`.
pub fn form_t(x: IVec, e: IVec) -> Result<LinearForm, Error> {
    let b = non_unit_parents(e, "T")?;
    Ok(LinearForm {
        kind: FormKind::T,
        base: x,
        offset: e,
        terms: vec![(x + e, 1), (x - b.f, 1), (x - b.g, 1), (x, -3)],
    })
}

/// `P_x^e(u) = u(x+e) − u(x+f) − u(x+g) + u(x)`.
pub fn form_p(x: IVec, e: IVec) -> Result<LinearForm, Error> {
    let b = non_unit_parents(e, "P")?;
    Ok(LinearForm {
        kind: FormKind::P,
        base: x,
        offset: e,
        terms: vec![(x + e, 1), (x + b.f, -1), (x + b.g, -1), (x, 1)],
    })
}

/// `H_x^e = P_x^e + P_x^{−e}`, i.e. `S_x^e − S_x^f − S_x^g`.
pub fn form_h(x: IVec, e: IVec) -> Result<LinearForm, Error> {
    let b = non_unit_parents(e, "H")?;
    let (f, g) = (b.f, b.g);
    let terms = merged(vec![
        (x + e, 1),
        (x - e, 1),
        (x, -2),
        (x + f, -1),
        (x - f, -1),
        (x, 2),
        (x + g, -1),
        (x - g, -1),
        (x, 2),
    ]);
    Ok(LinearForm {
        kind: FormKind::H,
        base: x,
        offset: e,
        terms,
    })
}

impl LinearForm {
    pub fn eval<F: Fn(IVec) -> f64>(&self, u: F) -> f64 {
        self.terms.iter().map(|&(z, w)| w as f64 * u(z)).sum()
    }

    /// Value on `q(z) = ½‖z‖²` in lattice units; exact since the weights sum to zero.
    pub fn q_value(&self) -> f64 {
        let twice: i64 = self.terms.iter().map(|&(z, w)| w * (z - self.base).norm2()).sum();
        twice as f64 / 2.0
    }

    pub fn weight_sum(&self) -> i64 {
        self.terms.iter().map(|t| t.1).sum()
    }

    pub fn first_moment(&self) -> IVec {
        self.terms.iter().fold(IVec::ZERO, |m, &(z, w)| m + w * (z - self.base))
    }

    /// Resolves sites to grid indices; `None` when unsupported.
    pub fn resolve(&self, grid: &GridDomain) -> Option<Row> {
        let mut terms = Vec::with_capacity(self.terms.len());
        for &(z, w) in &self.terms {
            terms.push((grid.index_of(z)? as u32, w as i32));
        }
        Some(Row {
            kind: self.kind,
            base: grid.index_of(self.base)? as u32,
            offset: self.offset,
            q: self.q_value(),
            terms,
        })
    }
}

impl GridDomain {
    pub fn is_supported(&self, form: &LinearForm) -> bool {
        form.terms.iter().all(|&(z, _)| self.contains(z))
    }
}

/// A supported form with sites given as point indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub kind: FormKind,
    pub base: u32,
    pub offset: IVec,
    /// Value of the form on `q` in lattice units.
    pub q: f64,
    pub terms: Vec<(u32, i32)>,
}

impl Row {
    #[inline]
    pub fn eval(&self, u: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, w)| w as f64 * u[i as usize]).sum()
    }
}

/// Which cone a system describes.
#[derive(Clone, Copy, Debug)]
pub enum Cone<'a> {
    FullConv,
    ConvV(&'a StencilFamily),
    ConvPrimeV(&'a StencilFamily),
    DConvX,
    DConvV(&'a StencilFamily),
    /// S forms on `V` only: the super-cone used by the DConv refinement loop.
    DConvPrimeV(&'a StencilFamily),
}

impl Cone<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Cone::FullConv => "conv-x",
            Cone::ConvV(_) => "conv-v",
            Cone::ConvPrimeV(_) => "conv-prime-v",
            Cone::DConvX => "dconv-x",
            Cone::DConvV(_) => "dconv-v",
            Cone::DConvPrimeV(_) => "dconv-prime-v",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConstraintSystem {
    pub cone: &'static str,
    pub npoints: usize,
    pub rows: Vec<Row>,
}

#[inline]
fn site(grid: &GridDomain, z: IVec) -> Option<u32> {
    grid.index_of(z).map(|i| i as u32)
}

/// `S_x^e` as a row, if supported.
pub(crate) fn s_row(grid: &GridDomain, x: usize, e: IVec) -> Option<Row> {
    let p = grid.point(x);
    Some(Row {
        kind: FormKind::S,
        base: x as u32,
        offset: e,
        q: e.norm2() as f64,
        terms: vec![(site(grid, p + e)?, 1), (x as u32, -2), (site(grid, p - e)?, 1)],
    })
}

pub(crate) fn t_row(grid: &GridDomain, x: usize, e: IVec) -> Option<Row> {
    let p = grid.point(x);
    let b = grid.offsets().parents(e);
    let q = (e.norm2() + b.f.norm2() + b.g.norm2()) as f64 / 2.0;
    Some(Row {
        kind: FormKind::T,
        base: x as u32,
        offset: e,
        q,
        terms: vec![
            (site(grid, p + e)?, 1),
            (site(grid, p - b.f)?, 1),
            (site(grid, p - b.g)?, 1),
            (x as u32, -3),
        ],
    })
}

pub(crate) fn p_row(grid: &GridDomain, x: usize, e: IVec) -> Option<Row> {
    let p = grid.point(x);
    let b = grid.offsets().parents(e);
    Some(Row {
        kind: FormKind::P,
        base: x as u32,
        offset: e,
        q: b.f.dot(b.g) as f64,
        terms: vec![
            (site(grid, p + e)?, 1),
            (site(grid, p + b.f)?, -1),
            (site(grid, p + b.g)?, -1),
            (x as u32, 1),
        ],
    })
}

pub(crate) fn h_row(grid: &GridDomain, x: usize, e: IVec) -> Option<Row> {
    let p = grid.point(x);
    let b = grid.offsets().parents(e);
    let xi = x as u32;
    Some(Row {
        kind: FormKind::H,
        base: xi,
        offset: e,
        q: 2.0 * b.f.dot(b.g) as f64,
        terms: vec![
            (site(grid, p + e)?, 1),
            (site(grid, p - e)?, 1),
            (site(grid, p + b.f)?, -1),
            (site(grid, p - b.f)?, -1),
            (site(grid, p + b.g)?, -1),
            (site(grid, p - b.g)?, -1),
            (xi, 2),
        ],
    })
}

/// S rows over a stencil, one per `{e, −e}` pair present.
fn stencil_s_rows(grid: &GridDomain, x: usize, set: &[IVec], fam: &StencilFamily, out: &mut Vec<Row>) {
    for &e in set {
        if !e.is_lex_positive() && fam.contains(x, -e) {
            continue;
        }
        let rep = if e.is_lex_positive() { e } else { -e };
        out.extend(s_row(grid, x, rep));
    }
}

fn point_rows(grid: &GridDomain, cone: &Cone<'_>, x: usize) -> Vec<Row> {
    let mut out = Vec::new();
    match *cone {
        Cone::FullConv | Cone::DConvX => {
            let p = grid.point(x);
            let table = grid.offsets();
            for &y in grid.points() {
                let e = y - p;
                if e.is_zero() || !table.is_irreducible(e) {
                    continue;
                }
                if e.is_lex_positive() {
                    out.extend(s_row(grid, x, e));
                }
                if matches!(cone, Cone::FullConv) && !e.is_unit() {
                    out.extend(t_row(grid, x, e));
                }
            }
        }
        Cone::ConvV(fam) | Cone::ConvPrimeV(fam) => {
            let set = fam.get(x);
            stencil_s_rows(grid, x, set, fam, &mut out);
            for &e in set {
                if !e.is_unit() {
                    out.extend(t_row(grid, x, e));
                }
            }
            if matches!(cone, Cone::ConvV(_)) {
                for e in fam.refinement_candidates(grid, x) {
                    out.extend(p_row(grid, x, e));
                }
            }
        }
        Cone::DConvV(fam) | Cone::DConvPrimeV(fam) => {
            stencil_s_rows(grid, x, fam.get(x), fam, &mut out);
            if matches!(cone, Cone::DConvV(_)) {
                // H_x^e and H_x^{-e} coincide
                let cands = fam.refinement_candidates(grid, x);
                for &e in &cands {
                    if e.is_lex_positive() || !cands.contains(&-e) {
                        out.extend(h_row(grid, x, e));
                    }
                }
            }
        }
    }
    out
}

/// Assembles the rows of a cone. Families are checked for containment and
/// Stability (Visibility is left to [`StencilFamily::validate`]); the
/// `DConvPrimeV` cone accepts any offset sets, e.g. the fixed stencils of OF_k.
pub fn assemble(grid: &GridDomain, cone: Cone<'_>) -> Result<ConstraintSystem, Error> {
    match cone {
        Cone::ConvV(f) | Cone::ConvPrimeV(f) | Cone::DConvV(f) => f.validate_local(grid)?,
        Cone::DConvPrimeV(f) => {
            if f.len() != grid.len() {
                return Err(Error::InvalidArgument("stencil family does not match the grid".into()));
            }
        }
        _ => {}
    }
    let rows: Vec<Row> = (0..grid.len())
        .into_par_iter()
        .flat_map_iter(|x| point_rows(grid, &cone, x))
        .collect();
    Ok(ConstraintSystem {
        cone: cone.name(),
        npoints: grid.len(),
        rows,
    })
}

/// Number of rows of the full Conv(X) system without building it: (S count, T count).
pub fn count_full(grid: &GridDomain) -> (usize, usize) {
    let table = grid.offsets();
    (0..grid.len())
        .into_par_iter()
        .map(|x| {
            let p = grid.point(x);
            let mut s = 0;
            let mut t = 0;
            for &y in grid.points() {
                let e = y - p;
                if e.is_zero() || !table.is_irreducible(e) {
                    continue;
                }
                if e.is_lex_positive() && grid.contains(p - e) {
                    s += 1;
                }
                if !e.is_unit() {
                    let b = table.parents(e);
                    if grid.contains(p - b.f) && grid.contains(p - b.g) {
                        t += 1;
                    }
                }
            }
            (s, t)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefectMode {
    /// S and T forms: the distance to Conv(X).
    Full,
    /// S forms only: the distance to DConv(X).
    Directional,
}

/// Smallest `ε ≥ 0` with `u + εq` in Conv(X) (or DConv(X)), `q = ½‖z‖²` in lattice units.
/// Forms are enumerated on the fly, so this is quadratic in N but needs no storage.
pub fn convexity_defect(grid: &GridDomain, u: &[f64], mode: DefectMode) -> f64 {
    assert_eq!(u.len(), grid.len(), "values do not match the grid");
    let table = grid.offsets();
    (0..grid.len())
        .into_par_iter()
        .map(|x| {
            let p = grid.point(x);
            let ux = u[x];
            let mut worst = 0.0_f64;
            for (iy, &y) in grid.points().iter().enumerate() {
                let e = y - p;
                if e.is_zero() || !table.is_irreducible(e) {
                    continue;
                }
                if e.is_lex_positive() {
                    if let Some(im) = grid.index_of(p - e) {
                        let s = u[iy] - 2.0 * ux + u[im];
                        worst = worst.max(-s / e.norm2() as f64);
                    }
                }
                if mode == DefectMode::Full && !e.is_unit() {
                    let b = table.parents(e);
                    if let (Some(i_f), Some(i_g)) = (grid.index_of(p - b.f), grid.index_of(p - b.g)) {
                        let t = u[iy] + u[i_f] + u[i_g] - 3.0 * ux;
                        let q = (e.norm2() + b.f.norm2() + b.g.norm2()) as f64 / 2.0;
                        worst = worst.max(-t / q);
                    }
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}

/// Defect expressed with `q` in domain coordinates: the lattice value divided by `h²`.
pub fn convexity_defect_domain(grid: &GridDomain, u: &[f64], mode: DefectMode) -> f64 {
    convexity_defect(grid, u, mode) / (grid.h() * grid.h())
}

pub fn membership_scale(u: &[f64]) -> f64 {
    u.iter().fold(1.0_f64, |m, x| m.max(x.abs()))
}

/// True iff every form of the cone is `≥ −tol·max(1, ‖u‖∞)` on `u`.
pub fn is_member(grid: &GridDomain, u: &[f64], cone: Cone<'_>, tol: f64) -> Result<bool, Error> {
    let bound = -tol * membership_scale(u);
    match cone {
        Cone::FullConv | Cone::DConvX => {
            let mode = if matches!(cone, Cone::FullConv) {
                DefectMode::Full
            } else {
                DefectMode::Directional
            };
            // forms are checked raw, not rescaled by q
            let table = grid.offsets();
            let ok = (0..grid.len()).into_par_iter().all(|x| {
                let p = grid.point(x);
                grid.points().iter().enumerate().all(|(iy, &y)| {
                    let e = y - p;
                    if e.is_zero() || !table.is_irreducible(e) {
                        return true;
                    }
                    if e.is_lex_positive() {
                        if let Some(im) = grid.index_of(p - e) {
                            if u[iy] - 2.0 * u[x] + u[im] < bound {
                                return false;
                            }
                        }
                    }
                    if mode == DefectMode::Full && !e.is_unit() {
                        let b = table.parents(e);
                        if let (Some(i_f), Some(i_g)) = (grid.index_of(p - b.f), grid.index_of(p - b.g)) {
                            if u[iy] + u[i_f] + u[i_g] - 3.0 * u[x] < bound {
                                return false;
                            }
                        }
                    }
                    true
                })
            });
            Ok(ok)
        }
        _ => {
            let sys = assemble(grid, cone)?;
            Ok(sys.rows.par_iter().all(|r| r.eval(u) >= bound))
        }
    }
}

/// Smallest S or T value over the stencils of `fam` (0 if there are none).
pub(crate) fn worst_st_value(grid: &GridDomain, fam: &StencilFamily, u: &[f64]) -> f64 {
    (0..grid.len())
        .into_par_iter()
        .map(|x| {
            let mut worst = 0.0_f64;
            for &e in fam.get(x) {
                if let Some(r) = s_row(grid, x, e) {
                    worst = worst.min(r.eval(u));
                }
                if !e.is_unit() {
                    if let Some(r) = t_row(grid, x, e) {
                        worst = worst.min(r.eval(u));
                    }
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::min)
}

impl ConstraintSystem {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn count(&self, kind: FormKind) -> usize {
        self.rows.iter().filter(|r| r.kind == kind).count()
    }

    /// Rows as a sparse matrix with `ncols ≥ npoints` columns.
    pub fn to_matrix(&self, ncols: usize) -> RowMatrix {
        let mut m = RowMatrix::new(ncols.max(self.npoints));
        for r in &self.rows {
            m.push_row(r.terms.iter().map(|&(i, w)| (i as usize, w as f64)));
        }
        m
    }

    pub fn eval(&self, u: &[f64]) -> Vec<f64> {
        self.rows.par_iter().map(|r| r.eval(u)).collect()
    }

    /// Removes rows with the same `(kind, base, offset)`, keeping the first.
    pub fn dedup(&mut self) {
        let mut seen = HashSet::new();
        self.rows.retain(|r| seen.insert((r.kind, r.base, r.offset)));
    }

    pub fn write_matrix_market(&self, path: &Path) -> Result<(), Error> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let nnz: usize = self.rows.iter().map(|r| r.terms.len()).sum();
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "% cone={}", self.cone)?;
        writeln!(w, "{} {} {}", self.rows.len(), self.npoints, nnz)?;
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, wt) in &r.terms {
                writeln!(w, "{} {} {}", i + 1, j + 1, wt)?;
            }
        }
        Ok(())
    }

    pub fn to_json(&self, grid: &GridDomain) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|r| {
                let b = grid.point(r.base as usize);
                serde_json::json!({
                    "kind": r.kind,
                    "base": [b.a, b.b],
                    "offset": [r.offset.a, r.offset.b],
                    "terms": r.terms.iter().map(|&(i, w)| {
                        let z = grid.point(i as usize);
                        serde_json::json!([[z.a, z.b], w])
                    }).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::json!({ "schema": 1, "cone": self.cone, "points": self.npoints, "rows": rows })
    }
}

/// Directionally convex but not convex: `2‖z‖²` except `u(1,1) = 1` and
/// `u(−1,0) = u(0,−1) = −1`. Every S form is at least 1, every T form at least 2,
/// except `T_0^{(1,1)} = −1`.
pub fn dconv_counterexample(z: IVec) -> f64 {
    match (z.a, z.b) {
        (1, 1) => 1.0,
        (-1, 0) | (0, -1) => -1.0,
        _ => 2.0 * z.norm2() as f64,
    }
}
