use serde::{Deserialize, Serialize};

use crate::Error;

pub type P2 = [f64; 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConvexPolygon {
    vertices: Vec<P2>,
}

fn cross(o: P2, a: P2, b: P2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

impl ConvexPolygon {
    /// Counterclockwise, strictly convex vertices.
    pub fn new(vertices: Vec<P2>) -> Result<Self, Error> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::DegenerateDomain("polygon needs at least 3 vertices".into()));
        }
        let scale = vertices
            .iter()
            .fold(0.0_f64, |m, p| m.max(p[0].abs()).max(p[1].abs()))
            .max(1.0);
        for i in 0..n {
            let c = cross(vertices[i], vertices[(i + 1) % n], vertices[(i + 2) % n]);
            if c <= 1e-14 * scale * scale {
                return Err(Error::DegenerateDomain(format!(
                    "vertices are not strictly convex and counterclockwise at {}",
                    (i + 1) % n
                )));
            }
        }
        Ok(Self { vertices })
    }

    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::new(vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]).expect("nondegenerate rectangle")
    }

    /// Regular polygon inscribed in the circle, used as a disc.
    pub fn disc(center: P2, radius: f64, sides: usize) -> Self {
        let verts = (0..sides)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / sides as f64;
                [center[0] + radius * t.cos(), center[1] + radius * t.sin()]
            })
            .collect();
        Self::new(verts).expect("regular polygon")
    }

    pub fn vertices(&self) -> &[P2] {
        &self.vertices
    }

    pub fn rotated(&self, angle: f64, about: P2) -> Self {
        let (s, c) = angle.sin_cos();
        let vertices = self
            .vertices
            .iter()
            .map(|p| {
                let (dx, dy) = (p[0] - about[0], p[1] - about[1]);
                [about[0] + c * dx - s * dy, about[1] + s * dx + c * dy]
            })
            .collect();
        Self { vertices }
    }

    pub fn bbox(&self) -> (P2, P2) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    pub fn area(&self) -> f64 {
        polygon_area(&self.vertices)
    }

    /// Signed distance-based membership; points within `tol` outside still count.
    pub fn contains(&self, p: P2, tol: f64) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            cross(a, b, p) / len >= -tol
        })
    }

    /// Intersection with an arbitrary polygon given by its vertices (counterclockwise).
    pub fn clip(&self, subject: &[P2]) -> Vec<P2> {
        let mut out = subject.to_vec();
        let n = self.vertices.len();
        for i in 0..n {
            if out.is_empty() {
                break;
            }
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            out = clip_halfplane(&out, |p| cross(a, b, p));
        }
        out
    }
}

/// Keeps the part of `poly` where `side(p) ≥ 0`; `side` must be affine.
pub fn clip_halfplane<F: Fn(P2) -> f64>(poly: &[P2], side: F) -> Vec<P2> {
    let m = poly.len();
    let mut out = Vec::with_capacity(m + 2);
    for j in 0..m {
        let p = poly[j];
        let q = poly[(j + 1) % m];
        let sp = side(p);
        let sq = side(q);
        if sp >= 0.0 {
            out.push(p);
        }
        if (sp >= 0.0) != (sq >= 0.0) {
            let t = sp / (sp - sq);
            out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
    out
}

pub fn polygon_area(p: &[P2]) -> f64 {
    let n = p.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let a = p[i];
        let b = p[(i + 1) % n];
        s += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * s
}

/// Area centroid; falls back to the vertex mean for degenerate polygons.
pub fn polygon_centroid(p: &[P2]) -> P2 {
    let a = polygon_area(p);
    let n = p.len();
    if n == 0 {
        return [0.0, 0.0];
    }
    if a.abs() < 1e-300 {
        let s = p.iter().fold([0.0, 0.0], |s, q| [s[0] + q[0], s[1] + q[1]]);
        return [s[0] / n as f64, s[1] / n as f64];
    }
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        let (u, v) = (p[i], p[(i + 1) % n]);
        let w = u[0] * v[1] - v[0] * u[1];
        cx += (u[0] + v[0]) * w;
        cy += (u[1] + v[1]) * w;
    }
    [cx / (6.0 * a), cy / (6.0 * a)]
}
