//! Stencil families `V(x) ⊂ V_max(x)` and their candidate sets.

use serde::{Deserialize, Serialize};

use crate::grid::GridDomain;
use crate::lattice::{self, angle_cmp, strictly_between, v, IVec};
use crate::Error;

/// Per-point offset sets, each kept sorted by angle.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StencilFamily {
    sets: Vec<Vec<IVec>>,
}

fn same_dir(x: IVec, y: IVec) -> bool {
    x.det(y) == 0 && x.dot(y) > 0
}

fn in_closed_arc(f: IVec, x: IVec, g: IVec) -> bool {
    same_dir(x, f) || same_dir(x, g) || strictly_between(f, x, g)
}

/// Open arcs `(a, b)` and `(f, g)` share a direction.
fn arcs_overlap(a: IVec, b: IVec, f: IVec, g: IVec) -> bool {
    same_dir(a, f) || strictly_between(f, a, g) || strictly_between(a, f, b)
}

const QUADRANT_ROOTS: [(IVec, IVec); 4] = [
    (v(1, 0), v(0, 1)),
    (v(0, 1), v(-1, 0)),
    (v(-1, 0), v(0, -1)),
    (v(0, -1), v(1, 0)),
];

impl StencilFamily {
    /// Takes arbitrary sets; they are sorted and deduplicated but not validated.
    pub fn from_sets(mut sets: Vec<Vec<IVec>>) -> Self {
        for s in &mut sets {
            s.sort_by(|&a, &b| angle_cmp(a, b));
            s.dedup();
        }
        Self { sets }
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn get(&self, x: usize) -> &[IVec] {
        &self.sets[x]
    }

    pub fn sets(&self) -> &[Vec<IVec>] {
        &self.sets
    }

    /// `#V = Σ_x #V(x)`.
    pub fn cardinality(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    pub fn contains(&self, x: usize, e: IVec) -> bool {
        self.sets[x].binary_search_by(|&y| angle_cmp(y, e)).is_ok()
    }

    /// Inserts `e` at `x`; returns false if already present.
    pub fn insert(&mut self, x: usize, e: IVec) -> bool {
        match self.sets[x].binary_search_by(|&y| angle_cmp(y, e)) {
            Ok(_) => false,
            Err(k) => {
                self.sets[x].insert(k, e);
                true
            }
        }
    }

    pub fn max(grid: &GridDomain) -> Self {
        Self {
            sets: (0..grid.len()).map(|x| grid.max_stencil(x)).collect(),
        }
    }

    /// `V_min(x)`: offsets of `V_max(x)` with at most one parent in `V_max(x)`.
    pub fn minimal(grid: &GridDomain) -> Self {
        let table = grid.offsets();
        let pts = grid.points();
        let sets = (0..grid.len())
            .map(|x| {
                let p = pts[x];
                let mut s: Vec<IVec> = pts
                    .iter()
                    .map(|&y| y - p)
                    .filter(|&e| {
                        if !table.is_irreducible(e) {
                            return false;
                        }
                        if e.is_unit() {
                            return true;
                        }
                        let b = table.parents(e);
                        !(grid.contains(p + b.f) && grid.contains(p + b.g))
                    })
                    .collect();
                s.sort_by(|&a, &b| angle_cmp(a, b));
                s
            })
            .collect();
        Self { sets }
    }

    fn check_grid(&self, grid: &GridDomain) -> Result<(), Error> {
        if self.sets.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "stencil family has {} points, grid has {}",
                self.sets.len(),
                grid.len()
            )));
        }
        Ok(())
    }

    /// Containment in `V_max` and Stability. Linear in `#V`.
    pub fn validate_local(&self, grid: &GridDomain) -> Result<(), Error> {
        self.check_grid(grid)?;
        let table = grid.offsets();
        for (x, s) in self.sets.iter().enumerate() {
            let p = grid.point(x);
            for &e in s {
                if !grid.in_max_stencil(x, e) {
                    return Err(Error::InvalidStencil {
                        property: "containment in V_max",
                        point: x,
                        offset: e,
                    });
                }
                if e.is_unit() {
                    continue;
                }
                let b = table.parents(e);
                for f in [b.f, b.g] {
                    if grid.contains(p + f) && !self.contains(x, f) {
                        return Err(Error::InvalidStencil {
                            property: "stability",
                            point: x,
                            offset: e,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Containment, Stability and Visibility (`Cone V(x) = Cone V_max(x)`).
    pub fn validate(&self, grid: &GridDomain) -> Result<(), Error> {
        self.validate_local(grid)?;
        for (x, s) in self.sets.iter().enumerate() {
            let vmax = grid.max_stencil(x);
            if s.is_empty() {
                if let Some(&e) = vmax.first() {
                    return Err(Error::InvalidStencil {
                        property: "visibility",
                        point: x,
                        offset: e,
                    });
                }
                continue;
            }
            for k in 0..s.len() {
                let f = s[k];
                let g = s[(k + 1) % s.len()];
                if lattice::arc_below_pi(f, g) {
                    continue;
                }
                // a gap of at least π must not contain directions of V_max
                if let Some(&e) = vmax
                    .iter()
                    .find(|&&e| !same_dir(e, f) && !same_dir(e, g) && strictly_between(f, e, g))
                {
                    return Err(Error::InvalidStencil {
                        property: "visibility",
                        point: x,
                        offset: e,
                    });
                }
            }
        }
        Ok(())
    }

    /// Consecutive pairs `(f, g)` of `V(x)` in counterclockwise order.
    pub fn consecutive_pairs(&self, x: usize) -> impl Iterator<Item = (IVec, IVec)> + '_ {
        let s = &self.sets[x];
        let n = s.len();
        (0..if n >= 2 { n } else { 0 }).map(move |k| (s[k], s[(k + 1) % n]))
    }

    /// `Ĥ(x)`: offsets of `V_max(x) \ V(x)` whose two parents lie in `V(x)`.
    pub fn refinement_candidates(&self, grid: &GridDomain, x: usize) -> Vec<IVec> {
        self.consecutive_pairs(x)
            .filter(|(f, g)| f.det(*g) == 1 && f.dot(*g) >= 0)
            .map(|(f, g)| f + g)
            .filter(|&e| grid.in_max_stencil(x, e))
            .collect()
    }

    /// `Ĥ_ρ(x)`: offsets `e ∈ V_max(x) \ V(x)` with parents `f ≺ g` inside the arc of a
    /// consecutive pair `f′, g′` of `V(x)` and `‖f‖‖g‖ ≤ ρ‖f′‖‖g′‖`.
    pub fn extended_candidates(&self, grid: &GridDomain, x: usize, rho: f64) -> Result<Vec<IVec>, Error> {
        if !(rho >= 1.0) {
            return Err(Error::InvalidArgument(format!("rho must be at least 1, got {rho}")));
        }
        let mut out = Vec::new();
        let mut stack = Vec::new();
        for (fp, gp) in self.consecutive_pairs(x) {
            if !lattice::arc_below_pi(fp, gp) {
                continue;
            }
            let bound = rho * fp.norm() * gp.norm() * (1.0 + 1e-12);
            for &(a, b) in &QUADRANT_ROOTS {
                stack.push((a, b));
            }
            while let Some((a, b)) = stack.pop() {
                if a.norm() * b.norm() > bound || !arcs_overlap(a, b, fp, gp) {
                    continue;
                }
                let e = a + b;
                if in_closed_arc(fp, a, gp) && in_closed_arc(fp, b, gp) && grid.in_max_stencil(x, e) {
                    out.push(e);
                }
                stack.push((a, e));
                stack.push((e, b));
            }
        }
        out.sort_by(|&a, &b| angle_cmp(a, b));
        out.dedup();
        Ok(out)
    }

    /// Adds offsets and closes each added offset under ancestors inside `V_max(x)`.
    pub fn refine(&self, grid: &GridDomain, additions: &[(usize, IVec)]) -> Result<Self, Error> {
        let mut out = self.clone();
        for &(x, e) in additions {
            if !grid.in_max_stencil(x, e) {
                return Err(Error::InvalidArgument(format!("{e} is not in V_max of point {x}")));
            }
            out.insert_closed(grid, x, e);
        }
        Ok(out)
    }

    pub(crate) fn insert_closed(&mut self, grid: &GridDomain, x: usize, e: IVec) {
        let p = grid.point(x);
        let mut stack = vec![e];
        while let Some(y) = stack.pop() {
            if !self.insert(x, y) || y.is_unit() {
                continue;
            }
            let b = grid.offsets().parents(y);
            for f in [b.f, b.g] {
                if grid.contains(p + f) && !self.contains(x, f) {
                    stack.push(f);
                }
            }
        }
    }

    pub fn union(&self, other: &Self) -> Result<Self, Error> {
        self.combine(other, |a, b| {
            let mut s = a.to_vec();
            s.extend_from_slice(b);
            s.sort_by(|&x, &y| angle_cmp(x, y));
            s.dedup();
            s
        })
    }

    pub fn intersect(&self, other: &Self) -> Result<Self, Error> {
        self.combine(other, |a, b| {
            a.iter()
                .copied()
                .filter(|&e| b.binary_search_by(|&y| angle_cmp(y, e)).is_ok())
                .collect()
        })
    }

    fn combine<F: Fn(&[IVec], &[IVec]) -> Vec<IVec>>(&self, other: &Self, op: F) -> Result<Self, Error> {
        if self.sets.len() != other.sets.len() {
            return Err(Error::InvalidArgument(
                "stencil families live on different grids".into(),
            ));
        }
        Ok(Self {
            sets: self.sets.iter().zip(&other.sets).map(|(a, b)| op(a, b)).collect(),
        })
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.sets.len() == other.sets.len()
            && self
                .sets
                .iter()
                .enumerate()
                .all(|(x, s)| s.iter().all(|&e| other.contains(x, e)))
    }

    /// Smallest family `V` with `u ∈ Conv(V)`: non-unit `e` is kept iff `P_x^e` is
    /// unsupported or `P_x^e(u) < −tol`, with `tol = 1e-9·max(1, ‖u‖∞)`.
    pub fn minimal_for(grid: &GridDomain, u: &[f64]) -> Result<Self, Error> {
        let scale = u.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        let tol = 1e-9 * scale;
        let mut fam = Self::minimal(grid);
        for x in 0..grid.len() {
            fam.close_by_parallelograms(grid, x, u, tol);
        }
        // u ∈ Conv(V) ⇔ u ∈ Conv(X); the P rows hold by construction, so check S and T
        let worst = crate::constraints::worst_st_value(grid, &fam, u);
        if worst < -tol {
            return Err(Error::NotConvex(worst));
        }
        Ok(fam)
    }

    fn close_by_parallelograms(&mut self, grid: &GridDomain, x: usize, u: &[f64], tol: f64) {
        let p = grid.point(x);
        let ux = u[x];
        loop {
            let mut add = Vec::new();
            for (f, g) in self.consecutive_pairs(x) {
                if f.det(g) != 1 || f.dot(g) < 0 {
                    continue;
                }
                let e = f + g;
                let Some(ie) = grid.index_of(p + e) else { continue };
                let pf = grid.index_of(p + f).expect("f in V_max");
                let pg = grid.index_of(p + g).expect("g in V_max");
                if u[ie] - u[pf] - u[pg] + ux < -tol {
                    add.push(e);
                }
            }
            if add.is_empty() {
                break;
            }
            for e in add {
                self.insert(x, e);
            }
        }
    }

    /// `V(x) = V_max(x) ∩ ⋃ Anc(e)` over edge offsets `e` of the triangulation at `x`.
    pub fn of_edges(grid: &GridDomain, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut offsets: Vec<Vec<IVec>> = vec![Vec::new(); grid.len()];
        for (i, j) in edges {
            let d = grid.point(j) - grid.point(i);
            offsets[i].push(d);
            offsets[j].push(-d);
        }
        let sets = offsets
            .into_iter()
            .enumerate()
            .map(|(x, mut es)| {
                es.sort();
                es.dedup();
                let p = grid.point(x);
                let mut s: Vec<IVec> = Vec::new();
                for e in es {
                    for a in lattice::ancestors(e) {
                        if grid.contains(p + a) {
                            s.push(a);
                        }
                    }
                }
                s.sort_by(|&a, &b| angle_cmp(a, b));
                s.dedup();
                s
            })
            .collect();
        Self { sets }
    }

    /// Per-point offset lists, for JSON dumps.
    pub fn to_json(&self, grid: &GridDomain) -> serde_json::Value {
        let pts: Vec<serde_json::Value> = self
            .sets
            .iter()
            .enumerate()
            .map(|(x, s)| {
                let z = grid.point(x);
                serde_json::json!({
                    "point": [z.a, z.b],
                    "offsets": s.iter().map(|e| [e.a, e.b]).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::json!({ "schema": 1, "cardinality": self.cardinality(), "stencils": pts })
    }
}
