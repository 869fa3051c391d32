//! The point set `X = Ω ∩ h R_θ (ξ + Z²)`, stored in integer lattice coordinates.
//!
//! The embedding is a similarity, so orientation, angles and the Delaunay
//! predicate are lattice-coordinate computations; only membership needs floats.

use serde::{Deserialize, Serialize};

use crate::lattice::{angle_cmp, IVec, OffsetTable};
use crate::polygon::{ConvexPolygon, P2};
use crate::Error;

const ABSENT: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub polygon: ConvexPolygon,
    pub h: f64,
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub xi: P2,
}

pub struct GridDomain {
    domain: ConvexPolygon,
    h: f64,
    theta: f64,
    xi: P2,
    points: Vec<IVec>,
    lo: IVec,
    width: i64,
    height: i64,
    index: Vec<u32>,
    table: OffsetTable,
}

impl std::fmt::Debug for GridDomain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GridDomain")
            .field("n_points", &self.points.len())
            .field("h", &self.h)
            .field("theta", &self.theta)
            .field("xi", &self.xi)
            .finish()
    }
}

fn frac(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        0.0
    } else {
        x - x.floor()
    }
}

impl GridDomain {
    /// Enumerates lattice points whose embedding lies in the polygon, boundary included.
    /// `xi` is taken modulo 1.
    pub fn build(domain: ConvexPolygon, h: f64, theta: f64, xi: P2) -> Result<Self, Error> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidArgument(format!("grid step must be positive, got {h}")));
        }
        let xi = [frac(xi[0]), frac(xi[1])];
        let (s, c) = theta.sin_cos();
        // lattice coordinate of a domain point: R_{-θ} p / h − ξ
        let to_lattice = |p: &P2| -> P2 { [(c * p[0] + s * p[1]) / h - xi[0], (-s * p[0] + c * p[1]) / h - xi[1]] };
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in domain.vertices() {
            let z = to_lattice(p);
            for k in 0..2 {
                lo[k] = lo[k].min(z[k]);
                hi[k] = hi[k].max(z[k]);
            }
        }
        let za = (lo[0] - 1.0).floor() as i64;
        let zb = (lo[1] - 1.0).floor() as i64;
        let wa = (hi[0] + 1.0).ceil() as i64;
        let wb = (hi[1] + 1.0).ceil() as i64;
        let tol = 1e-12 * h;
        let mut points = Vec::new();
        for a in za..=wa {
            for b in zb..=wb {
                let z = IVec { a, b };
                if domain.contains(embed_raw(z, h, c, s, xi), tol) {
                    points.push(z);
                }
            }
        }
        if points.len() < 3 {
            return Err(Error::DegenerateDomain(format!(
                "grid has {} points, at least 3 are needed",
                points.len()
            )));
        }
        Ok(Self::from_points(domain, h, theta, xi, points))
    }

    fn from_points(domain: ConvexPolygon, h: f64, theta: f64, xi: P2, points: Vec<IVec>) -> Self {
        let amin = points.iter().map(|p| p.a).min().unwrap();
        let amax = points.iter().map(|p| p.a).max().unwrap();
        let bmin = points.iter().map(|p| p.b).min().unwrap();
        let bmax = points.iter().map(|p| p.b).max().unwrap();
        let width = amax - amin + 1;
        let height = bmax - bmin + 1;
        let lo = IVec { a: amin, b: bmin };
        let mut index = vec![ABSENT; (width * height) as usize];
        for (i, p) in points.iter().enumerate() {
            index[((p.a - amin) * height + (p.b - bmin)) as usize] = i as u32;
        }
        let table = OffsetTable::new(width.max(height));
        Self {
            domain,
            h,
            theta,
            xi,
            points,
            lo,
            width,
            height,
            index,
            table,
        }
    }

    pub fn from_spec(spec: &GridSpec) -> Result<Self, Error> {
        Self::build(spec.polygon.clone(), spec.h, spec.theta, spec.xi)
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            polygon: self.domain.clone(),
            h: self.h,
            theta: self.theta,
            xi: self.xi,
        }
    }

    /// `n × n` points covering the rectangle `[x0, x1] × [y0, y0 + (x1 − x0)]` exactly.
    pub fn square(x0: f64, x1: f64, y0: f64, n: usize) -> Result<Self, Error> {
        if n < 2 {
            return Err(Error::DegenerateDomain("need at least 2 points per side".into()));
        }
        let side = x1 - x0;
        let h = side / (n - 1) as f64;
        let poly = ConvexPolygon::rectangle(x0, y0, x1, y0 + side);
        Self::build(poly, h, 0.0, [x0 / h, y0 / h])
    }

    /// Integer rectangle `[0, w−1] × [0, ht−1]` with unit step.
    pub fn lattice_rect(w: usize, ht: usize) -> Result<Self, Error> {
        if w == 0 || ht == 0 {
            return Err(Error::DegenerateDomain("empty rectangle".into()));
        }
        let pad = 1e-9;
        let x1 = (w - 1) as f64;
        let y1 = (ht - 1) as f64;
        if w == 1 || ht == 1 {
            // a thin polygon still yields the aligned point row
            let poly = ConvexPolygon::rectangle(-pad, -pad, x1.max(pad) + pad, y1.max(pad) + pad);
            return Self::build(poly, 1.0, 0.0, [0.0, 0.0]);
        }
        Self::build(ConvexPolygon::rectangle(0.0, 0.0, x1, y1), 1.0, 0.0, [0.0, 0.0])
    }

    /// Explicit lattice point set; the bounding polygon is kept for reference only.
    pub fn from_lattice_points(points: Vec<IVec>) -> Result<Self, Error> {
        if points.len() < 2 {
            return Err(Error::DegenerateDomain("need at least 2 points".into()));
        }
        let mut points = points;
        points.sort();
        points.dedup();
        let amin = points.iter().map(|p| p.a).min().unwrap() as f64;
        let amax = points.iter().map(|p| p.a).max().unwrap() as f64;
        let bmin = points.iter().map(|p| p.b).min().unwrap() as f64;
        let bmax = points.iter().map(|p| p.b).max().unwrap() as f64;
        let poly = ConvexPolygon::rectangle(amin - 0.5, bmin - 0.5, amax + 0.5, bmax + 0.5);
        Ok(Self::from_points(poly, 1.0, 0.0, [0.0, 0.0], points))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn xi(&self) -> P2 {
        self.xi
    }

    pub fn domain(&self) -> &ConvexPolygon {
        &self.domain
    }

    pub fn points(&self) -> &[IVec] {
        &self.points
    }

    pub fn point(&self, i: usize) -> IVec {
        self.points[i]
    }

    pub fn offsets(&self) -> &OffsetTable {
        &self.table
    }

    #[inline]
    pub fn index_of(&self, z: IVec) -> Option<usize> {
        let da = z.a - self.lo.a;
        let db = z.b - self.lo.b;
        if da < 0 || db < 0 || da >= self.width || db >= self.height {
            return None;
        }
        let k = self.index[(da * self.height + db) as usize];
        (k != ABSENT).then_some(k as usize)
    }

    #[inline]
    pub fn contains(&self, z: IVec) -> bool {
        self.index_of(z).is_some()
    }

    /// `e ∈ V_max(x)`.
    #[inline]
    pub fn in_max_stencil(&self, x: usize, e: IVec) -> bool {
        self.contains(self.points[x] + e) && self.table.is_irreducible(e)
    }

    pub fn embed(&self, i: usize) -> P2 {
        self.embed_lattice(self.points[i])
    }

    pub fn embed_lattice(&self, z: IVec) -> P2 {
        let (s, c) = self.theta.sin_cos();
        embed_raw(z, self.h, c, s, self.xi)
    }

    /// Lattice-direction vector expressed in domain coordinates (no translation).
    pub fn embed_direction(&self, d: [f64; 2]) -> P2 {
        let (s, c) = self.theta.sin_cos();
        [self.h * (c * d[0] - s * d[1]), self.h * (s * d[0] + c * d[1])]
    }

    /// Domain gradient of the affine map whose lattice-coordinate gradient is `g`.
    pub fn gradient_to_domain(&self, g: [f64; 2]) -> P2 {
        let (s, c) = self.theta.sin_cos();
        [(c * g[0] - s * g[1]) / self.h, (s * g[0] + c * g[1]) / self.h]
    }

    /// `V_max(x)`, sorted by angle.
    pub fn max_stencil(&self, x: usize) -> Vec<IVec> {
        let p = self.points[x];
        let mut out: Vec<IVec> = self
            .points
            .iter()
            .map(|&y| y - p)
            .filter(|&e| self.table.is_irreducible(e))
            .collect();
        out.sort_by(|&a, &b| angle_cmp(a, b));
        out
    }

    /// Number of elements of `V_max(x)`, without materializing it.
    pub fn max_stencil_len(&self, x: usize) -> usize {
        let p = self.points[x];
        self.points
            .iter()
            .filter(|&&y| self.table.is_irreducible(y - p))
            .count()
    }

    /// Diameter of the point set in lattice units.
    pub fn diameter(&self) -> f64 {
        // hull vertices are among the per-column extremes
        let mut ext: Vec<IVec> = Vec::new();
        let mut i = 0;
        while i < self.points.len() {
            let a = self.points[i].a;
            let mut j = i;
            while j + 1 < self.points.len() && self.points[j + 1].a == a {
                j += 1;
            }
            ext.push(self.points[i]);
            if j != i {
                ext.push(self.points[j]);
            }
            i = j + 1;
        }
        let mut d2 = 0;
        for (k, &p) in ext.iter().enumerate() {
            for &q in &ext[k + 1..] {
                d2 = d2.max((p - q).norm2());
            }
        }
        (d2 as f64).sqrt()
    }

    /// `q(z) = ½‖z‖²` in lattice coordinates.
    pub fn q_values(&self) -> Vec<f64> {
        self.points.iter().map(|z| 0.5 * z.norm2() as f64).collect()
    }

    /// Values of a function of the embedded (domain) coordinates.
    pub fn sample<F: Fn(P2) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.len()).map(|i| f(self.embed(i))).collect()
    }

    /// Values of a function of lattice coordinates.
    pub fn sample_lattice<F: Fn(IVec) -> f64>(&self, f: F) -> Vec<f64> {
        self.points.iter().map(|&z| f(z)).collect()
    }

    /// Lattice-coordinate bounding box `(lo, hi)`.
    pub fn lattice_bbox(&self) -> (IVec, IVec) {
        (
            self.lo,
            IVec {
                a: self.lo.a + self.width - 1,
                b: self.lo.b + self.height - 1,
            },
        )
    }
}

fn embed_raw(z: IVec, h: f64, c: f64, s: f64, xi: P2) -> P2 {
    let p = [xi[0] + z.a as f64, xi[1] + z.b as f64];
    [h * (c * p[0] - s * p[1]), h * (s * p[0] + c * p[1])]
}
