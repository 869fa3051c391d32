//! Lower convex hull of lifted lattice points by facet enumeration.
//!
//! This is the reference the constraint systems are tested against, so it
//! favours obviousness over speed: every triple of sites spans a candidate
//! plane, and a plane is kept when all lifted sites lie on or above it.

use crate::grid::GridDomain;
use crate::lattice::IVec;
use crate::Error;

/// Affine map `c0 + c1·a + c2·b` on lattice coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    pub c: [f64; 3],
}

impl Plane {
    pub fn at(&self, z: IVec) -> f64 {
        self.c[0] + self.c[1] * z.a as f64 + self.c[2] * z.b as f64
    }

    pub fn gradient(&self) -> [f64; 2] {
        [self.c[1], self.c[2]]
    }
}

#[derive(Clone, Debug)]
pub struct LiftedHull {
    pub sites: Vec<IVec>,
    pub values: Vec<f64>,
    /// Counterclockwise index triples.
    pub triangles: Vec<[usize; 3]>,
    pub on_hull: Vec<bool>,
    /// One supporting plane per lower facet, with the sites lying on it.
    pub facets: Vec<(Plane, Vec<usize>)>,
}

fn orient(p: IVec, q: IVec, r: IVec) -> i64 {
    (q - p).det(r - p)
}

fn plane_through(p: [IVec; 3], u: [f64; 3]) -> Plane {
    let d1 = p[1] - p[0];
    let d2 = p[2] - p[0];
    let det = d1.det(d2) as f64;
    let (du1, du2) = (u[1] - u[0], u[2] - u[0]);
    // solve [d1; d2] · (c1, c2) = (du1, du2)
    let c1 = (du1 * d2.b as f64 - du2 * d1.b as f64) / det;
    let c2 = (d1.a as f64 * du2 - d2.a as f64 * du1) / det;
    Plane {
        c: [u[0] - c1 * p[0].a as f64 - c2 * p[0].b as f64, c1, c2],
    }
}

/// Height of the lifted site `r` above the plane through sites `i, j, k`,
/// via the 3×3 orientation determinant divided by the 2D one.
fn height_above(s: &[IVec], u: &[f64], i: usize, j: usize, k: usize, r: usize, det2: f64) -> f64 {
    let (a, b, c) = (s[j] - s[i], s[k] - s[i], s[r] - s[i]);
    let (ua, ub, uc) = (u[j] - u[i], u[k] - u[i], u[r] - u[i]);
    let det3 = a.a as f64 * (b.b as f64 * uc - ub * c.b as f64) - a.b as f64 * (b.a as f64 * uc - ub * c.a as f64)
        + ua * (b.a * c.b - b.b * c.a) as f64;
    det3 / det2
}

fn on_open_segment(p: IVec, q: IVec, r: IVec) -> bool {
    orient(p, q, r) == 0 && (r - p).dot(q - p) > 0 && (r - q).dot(p - q) > 0
}

fn crosses(p: IVec, q: IVec, r: IVec, s: IVec) -> bool {
    let o1 = orient(p, q, r).signum();
    let o2 = orient(p, q, s).signum();
    let o3 = orient(r, s, p).signum();
    let o4 = orient(r, s, q).signum();
    o1 * o2 < 0 && o3 * o4 < 0
}

/// Greedy triangulation of coplanar sites: segments are added shortest first
/// (ties broken lexicographically) unless they cross an earlier one or pass
/// through a site.
fn triangulate_face(sites: &[IVec], face: &[usize]) -> Vec<[usize; 3]> {
    let pts: Vec<IVec> = face.iter().map(|&i| sites[i]).collect();
    let k = pts.len();
    let mut segs = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            segs.push(((pts[b] - pts[a]).norm2(), a, b));
        }
    }
    segs.sort_by_key(|&(l, a, b)| (l, pts[a].min(pts[b]), pts[a].max(pts[b])));
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut adj = vec![vec![false; k]; k];
    for (_, a, b) in segs {
        let (p, q) = (pts[a], pts[b]);
        if (0..k).any(|r| on_open_segment(p, q, pts[r])) {
            continue;
        }
        if edges
            .iter()
            .any(|&(c, d)| c != a && c != b && d != a && d != b && crosses(p, q, pts[c], pts[d]))
        {
            continue;
        }
        edges.push((a, b));
        adj[a][b] = true;
        adj[b][a] = true;
    }
    let mut tris = Vec::new();
    for &(a, b) in &edges {
        for c in 0..k {
            if c == a || c == b || !adj[a][c] || !adj[b][c] {
                continue;
            }
            let (pa, pb, pc) = (pts[a], pts[b], pts[c]);
            if orient(pa, pb, pc) <= 0 {
                continue;
            }
            // count each triangle once, from its smallest-index edge
            if a.min(b) > c {
                continue;
            }
            let empty = (0..k).all(|r| {
                r == a
                    || r == b
                    || r == c
                    || !(orient(pa, pb, pts[r]) >= 0 && orient(pb, pc, pts[r]) >= 0 && orient(pc, pa, pts[r]) >= 0)
            });
            if empty {
                tris.push([face[a], face[b], face[c]]);
            }
        }
    }
    let mut canon: Vec<[usize; 3]> = tris
        .into_iter()
        .map(|t| {
            let m = (0..3).min_by_key(|&i| t[i]).unwrap();
            [t[m], t[(m + 1) % 3], t[(m + 2) % 3]]
        })
        .collect();
    canon.sort();
    canon.dedup();
    canon
}

/// Lower hull of the sites lifted by `values`. Cost is cubic in the number of
/// sites times a linear support test; intended for a few hundred sites at most.
pub fn lower_hull(sites: &[IVec], values: &[f64]) -> Result<LiftedHull, Error> {
    let n = sites.len();
    if values.len() != n {
        return Err(Error::InvalidArgument("one value per site is required".into()));
    }
    let collinear = (2..n).all(|k| orient(sites[0], sites[1], sites[k]) == 0);
    if n < 3 || collinear {
        return Err(Error::DegenerateInput("sites are collinear".into()));
    }
    let scale = values.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
    let tol = 1e-10 * scale;
    let mut facets: Vec<(Plane, Vec<usize>)> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let o = orient(sites[i], sites[j], sites[k]);
                if o == 0 {
                    continue;
                }
                let det2 = o as f64;
                let mut on = Vec::new();
                let mut supporting = true;
                for r in 0..n {
                    let hgt = if r == i || r == j || r == k {
                        0.0
                    } else {
                        height_above(sites, values, i, j, k, r, det2)
                    };
                    if hgt < -tol {
                        supporting = false;
                        break;
                    }
                    if hgt <= tol {
                        on.push(r);
                    }
                }
                // coplanar triples produce the same site set; keep the first
                if supporting && seen.insert(on.clone()) {
                    let plane = plane_through([sites[i], sites[j], sites[k]], [values[i], values[j], values[k]]);
                    facets.push((plane, on));
                }
            }
        }
    }
    let mut triangles = Vec::new();
    let mut on_hull = vec![false; n];
    for (_, face) in &facets {
        for &r in face {
            on_hull[r] = true;
        }
        triangles.extend(triangulate_face(sites, face));
    }
    triangles.sort();
    Ok(LiftedHull {
        sites: sites.to_vec(),
        values: values.to_vec(),
        triangles,
        on_hull,
        facets,
    })
}

impl LiftedHull {
    /// Largest convex function below the values, at the sites.
    pub fn envelope(&self) -> Vec<f64> {
        self.sites
            .iter()
            .enumerate()
            .map(|(r, &z)| {
                let best = self
                    .facets
                    .iter()
                    .map(|(p, _)| p.at(z))
                    .fold(f64::NEG_INFINITY, f64::max);
                best.min(self.values[r])
            })
            .collect()
    }
}

pub fn convex_envelope(grid: &GridDomain, u: &[f64]) -> Result<Vec<f64>, Error> {
    Ok(lower_hull(grid.points(), u)?.envelope())
}

/// True iff `u` coincides with its convex envelope, i.e. extends to a convex map.
pub fn is_extensible(grid: &GridDomain, u: &[f64], tol: f64) -> Result<bool, Error> {
    let env = convex_envelope(grid, u)?;
    let scale = u.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
    Ok(u.iter().zip(&env).all(|(a, b)| a - b <= tol * scale))
}
