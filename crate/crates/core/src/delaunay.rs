//! Triangulations of grid points, lifted edge flips and subgradient cells.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::grid::GridDomain;
use crate::lattice::IVec;
use crate::polygon::{polygon_area, P2};
use crate::Error;

const NONE: u32 = u32::MAX;

/// `k(k−1)‖e‖² + 2k⟨e,f⟩`: the lifted in-circle determinant of `x+f` against the
/// triangle `(x, x+e, x+ke+f)`, for `det(e, f) = 1`.
pub fn in_circle(e: IVec, f: IVec, k: i64) -> i64 {
    k * (k - 1) * e.norm2() + 2 * k * e.dot(f)
}

fn orient(p: IVec, q: IVec, r: IVec) -> i64 {
    (q - p).det(r - p)
}

/// Height of lifted `s` above the plane through lifted `r, p, q` (counterclockwise),
/// scaled by `orient(r, p, q)`.
fn lifted_height(pr: IVec, pp: IVec, pq: IVec, ps: IVec, ur: f64, up: f64, uq: f64, us: f64) -> f64 {
    let (a, b, c) = (pp - pr, pq - pr, ps - pr);
    let (ua, ub, uc) = (up - ur, uq - ur, us - ur);
    a.a as f64 * (b.b as f64 * uc - ub * c.b as f64) - a.b as f64 * (b.a as f64 * uc - ub * c.a as f64)
        + ua * (b.a * c.b - b.b * c.a) as f64
}

/// Same predicate for the lift `‖z‖²`, in exact integers.
fn q_height(pr: IVec, pp: IVec, pq: IVec, ps: IVec) -> i128 {
    let (a, b, c) = (pp - pr, pq - pr, ps - pr);
    let l = |z: IVec| z.norm2() as i128;
    let (ua, ub, uc) = (l(pp) - l(pr), l(pq) - l(pr), l(ps) - l(pr));
    a.a as i128 * (b.b as i128 * uc - ub * c.b as i128) - a.b as i128 * (b.a as i128 * uc - ub * c.a as i128)
        + ua * (b.a as i128 * c.b as i128 - b.b as i128 * c.a as i128)
}

#[derive(Clone, Debug)]
pub struct Triangulation {
    pts: Vec<IVec>,
    tri: Vec<[u32; 3]>,
    /// `adj[t][k]`: triangle across the edge opposite to vertex `k` of `t`.
    adj: Vec<[u32; 3]>,
    vtri: Vec<u32>,
}

/// Outcome of a flip run.
#[derive(Clone, Debug, Default, Serialize)]
pub struct FlipRun {
    pub flips: usize,
    pub lowered: usize,
    /// Diagonals created by the flips, in order.
    pub created: Vec<(usize, usize)>,
}

enum EdgeState {
    Fine,
    Flip,
    /// Reflex, but the quad is not convex; the vertex is the reflex corner.
    Stuck(usize),
}

impl Triangulation {
    /// Lexicographic sweep: keeps every point as a vertex, including collinear ones
    /// on the boundary.
    pub fn sweep(points: &[IVec]) -> Result<Self, Error> {
        let n = points.len();
        let mut order: Vec<u32> = (0..n as u32).collect();
        order.sort_by_key(|&i| points[i as usize]);
        let p = |i: u32| points[i as usize];
        let mut k = 2;
        while k < n && orient(p(order[0]), p(order[1]), p(order[k])) == 0 {
            k += 1;
        }
        if n < 3 || k == n {
            return Err(Error::DegenerateInput("points are collinear".into()));
        }
        let mut t = Triangulation {
            pts: points.to_vec(),
            tri: Vec::with_capacity(2 * n),
            adj: Vec::with_capacity(2 * n),
            vtri: vec![NONE; n],
        };
        let apex = order[k];
        let left = orient(p(order[0]), p(order[1]), p(apex)) > 0;
        // fan over the initial collinear chain
        let mut hull: Vec<u32> = Vec::new();
        let mut hull_tri: Vec<u32> = Vec::new();
        let chain: Vec<u32> = if left {
            order[..k].to_vec()
        } else {
            order[..k].iter().rev().copied().collect()
        };
        for w in chain.windows(2) {
            let id = t.tri.len() as u32;
            t.tri.push([w[0], w[1], apex]);
            t.adj.push([NONE; 3]);
            if id > 0 {
                // previous triangle [w_prev, w0, apex] shares edge (w0, apex)
                t.adj[id as usize][1] = id - 1;
                t.adj[id as usize - 1][0] = id;
            }
            hull.push(w[0]);
            hull_tri.push(id);
        }
        // hull: chain vertices, then apex; edge (last chain, apex) and (apex, first)
        let last_tri = t.tri.len() as u32 - 1;
        hull.push(*chain.last().unwrap());
        hull_tri.push(last_tri);
        hull.push(apex);
        hull_tri.push(0);
        for (id, tr) in t.tri.iter().enumerate() {
            for &v in tr {
                t.vtri[v as usize] = id as u32;
            }
        }
        for &v in &order[k + 1..] {
            t.insert_outside(v, &mut hull, &mut hull_tri);
        }
        Ok(t)
    }

    fn insert_outside(&mut self, v: u32, hull: &mut Vec<u32>, hull_tri: &mut Vec<u32>) {
        let m = hull.len();
        let pv = self.pts[v as usize];
        let visible: Vec<bool> = (0..m)
            .map(|i| orient(self.pts[hull[i] as usize], self.pts[hull[(i + 1) % m] as usize], pv) < 0)
            .collect();
        // first visible edge whose predecessor is not visible
        let start = (0..m)
            .find(|&i| visible[i] && !visible[(i + m - 1) % m])
            .expect("new point sees the hull");
        let mut len = 0;
        while visible[(start + len) % m] {
            len += 1;
        }
        let mut prev_new = NONE;
        let mut first_new = NONE;
        for j in 0..len {
            let i = (start + j) % m;
            let (a, b) = (hull[i], hull[(i + 1) % m]);
            let id = self.tri.len() as u32;
            // [b, a, v]: opposite b is (a, v), opposite a is (v, b), opposite v is (b, a)
            self.tri.push([b, a, v]);
            let inner = hull_tri[i];
            self.adj.push([prev_new, NONE, inner]);
            let slot = self.slot_of_edge(inner, a, b);
            self.adj[inner as usize][slot] = id;
            if prev_new != NONE {
                // previous [a, a_prev, v]: opposite a_prev is (v, a)
                self.adj[prev_new as usize][1] = id;
            } else {
                first_new = id;
            }
            prev_new = id;
            for w in [a, b, v] {
                self.vtri[w as usize] = id;
            }
        }
        // replace hull vertices strictly inside the visible chain by v
        let first = start;
        let last = (start + len) % m;
        let mut nh = Vec::with_capacity(m + 1);
        let mut nt = Vec::with_capacity(m + 1);
        let mut i = last;
        loop {
            nh.push(hull[i]);
            nt.push(hull_tri[i]);
            if i == first {
                break;
            }
            i = (i + 1) % m;
        }
        // nh ends at hull[first]; edges (hull[first], v) and (v, hull[last])
        *nt.last_mut().unwrap() = first_new;
        nh.push(v);
        nt.push(prev_new);
        *hull = nh;
        *hull_tri = nt;
    }

    fn slot_of_edge(&self, t: u32, a: u32, b: u32) -> usize {
        let tr = self.tri[t as usize];
        (0..3)
            .find(|&k| tr[k] != a && tr[k] != b)
            .expect("edge belongs to triangle")
    }

    /// Builds adjacency for an explicit list of counterclockwise triangles.
    pub fn from_triangles(points: &[IVec], triangles: &[[usize; 3]]) -> Result<Self, Error> {
        let mut t = Triangulation {
            pts: points.to_vec(),
            tri: triangles.iter().map(|tr| tr.map(|v| v as u32)).collect(),
            adj: vec![[NONE; 3]; triangles.len()],
            vtri: vec![NONE; points.len()],
        };
        let mut edges: HashMap<(u32, u32), (u32, usize)> = HashMap::new();
        for (id, tr) in t.tri.iter().enumerate() {
            if orient(points[tr[0] as usize], points[tr[1] as usize], points[tr[2] as usize]) <= 0 {
                return Err(Error::InvalidArgument(format!("triangle {id} is not counterclockwise")));
            }
            for k in 0..3 {
                let (a, b) = (tr[(k + 1) % 3], tr[(k + 2) % 3]);
                if edges.insert((a, b), (id as u32, k)).is_some() {
                    return Err(Error::InvalidArgument(format!("edge ({a},{b}) is used twice")));
                }
            }
            for &v in tr {
                t.vtri[v as usize] = id as u32;
            }
        }
        for (&(a, b), &(id, k)) in &edges {
            if let Some(&(other, _)) = edges.get(&(b, a)) {
                t.adj[id as usize][k] = other;
            }
        }
        Ok(t)
    }

    /// Sweep followed by flips toward the lift `½‖z‖²`; cocircular quads are left as they are.
    pub fn standard_delaunay(grid: &GridDomain) -> Result<Self, Error> {
        let mut t = Self::sweep(grid.points())?;
        let mut stack: Vec<(u32, u8)> = t.all_edge_slots();
        while let Some((id, k)) = stack.pop() {
            let Some((r, p, q, s)) = t.quad(id, k as usize) else {
                continue;
            };
            let pt = |i: usize| t.pts[i];
            if q_height(pt(r), pt(p), pt(q), pt(s)) >= 0 {
                continue;
            }
            if orient(pt(r), pt(p), pt(s)) <= 0 || orient(pt(s), pt(q), pt(r)) <= 0 {
                continue;
            }
            let n = t.adj[id as usize][k as usize];
            t.flip(id, k as usize);
            t.push_outer(id, n, &mut stack);
        }
        Ok(t)
    }

    fn all_edge_slots(&self) -> Vec<(u32, u8)> {
        let mut out = Vec::with_capacity(3 * self.tri.len() / 2);
        for (id, a) in self.adj.iter().enumerate() {
            for k in 0..3 {
                if a[k] != NONE && (a[k] as usize) > id {
                    out.push((id as u32, k as u8));
                }
            }
        }
        out
    }

    fn push_outer(&self, t1: u32, t2: u32, stack: &mut Vec<(u32, u8)>) {
        // the new diagonal sits at slot 1 of both triangles after a flip
        for id in [t1, t2] {
            for k in [0u8, 2] {
                if self.adj[id as usize][k as usize] != NONE {
                    stack.push((id, k));
                }
            }
        }
    }

    /// `(r, p, q, s)` for the edge opposite vertex `k` of triangle `id`: `t = (r, p, q)`
    /// and `s` is the far vertex of the neighbour.
    fn quad(&self, id: u32, k: usize) -> Option<(usize, usize, usize, usize)> {
        let n = self.adj[id as usize][k];
        if n == NONE {
            return None;
        }
        let tr = self.tri[id as usize];
        let (r, p, q) = (tr[k], tr[(k + 1) % 3], tr[(k + 2) % 3]);
        let ks = self.slot_of_edge(n, p, q);
        let s = self.tri[n as usize][ks];
        Some((r as usize, p as usize, q as usize, s as usize))
    }

    /// Flips the edge opposite vertex `k` of `id`. Afterwards `id = (r, p, s)` and the
    /// neighbour is `(s, q, r)`, with the new diagonal `(s, r)` at slot 1 of both.
    fn flip(&mut self, id: u32, k: usize) {
        let n = self.adj[id as usize][k];
        let tr = self.tri[id as usize];
        let (r, p, q) = (tr[k], tr[(k + 1) % 3], tr[(k + 2) % 3]);
        let ks = self.slot_of_edge(n, p, q);
        let nt = self.tri[n as usize];
        let s = nt[ks];
        let a1 = self.adj[id as usize][(k + 2) % 3]; // across (r, p)
        let a2 = self.adj[id as usize][(k + 1) % 3]; // across (q, r)
                                                     // n = (s, q, p) up to rotation
        let b1 = self.adj[n as usize][(ks + 2) % 3]; // across (s, q)
        let b2 = self.adj[n as usize][(ks + 1) % 3]; // across (p, s)
        debug_assert_eq!(nt[(ks + 1) % 3], q);
        self.tri[id as usize] = [r, p, s];
        self.adj[id as usize] = [b2, n, a1];
        self.tri[n as usize] = [s, q, r];
        self.adj[n as usize] = [a2, id, b1];
        if b2 != NONE {
            let sl = self.slot_of_edge(b2, p, s);
            self.adj[b2 as usize][sl] = id;
        }
        if a2 != NONE {
            let sl = self.slot_of_edge(a2, q, r);
            self.adj[a2 as usize][sl] = n;
        }
        self.vtri[r as usize] = id;
        self.vtri[p as usize] = id;
        self.vtri[s as usize] = id;
        self.vtri[q as usize] = n;
    }

    pub fn points(&self) -> &[IVec] {
        &self.pts
    }

    pub fn triangles(&self) -> Vec<[usize; 3]> {
        self.tri.iter().map(|t| t.map(|v| v as usize)).collect()
    }

    pub fn len(&self) -> usize {
        self.tri.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tri.is_empty()
    }

    /// Edges as `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(3 * self.tri.len() / 2 + self.pts.len());
        for (id, tr) in self.tri.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tr[(k + 1) % 3] as usize, tr[(k + 2) % 3] as usize);
                let n = self.adj[id][k];
                if n == NONE || (n as usize) > id {
                    out.push((a.min(b), a.max(b)));
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Triangles sorted in a rotation-independent form, for comparisons.
    pub fn canonical_triangles(&self) -> Vec<[usize; 3]> {
        let mut out: Vec<[usize; 3]> = self
            .tri
            .iter()
            .map(|t| {
                let m = (0..3).min_by_key(|&i| t[i]).unwrap();
                [t[m] as usize, t[(m + 1) % 3] as usize, t[(m + 2) % 3] as usize]
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Orientation, adjacency symmetry, unimodular triangles, every point used, and
    /// total area equal to the area of the convex hull.
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let mut used = vec![false; self.pts.len()];
        let mut twice_area = 0i64;
        for (id, tr) in self.tri.iter().enumerate() {
            let o = orient(
                self.pts[tr[0] as usize],
                self.pts[tr[1] as usize],
                self.pts[tr[2] as usize],
            );
            if o != 1 {
                return bad(format!("triangle {id} has doubled area {o}"));
            }
            twice_area += o;
            for k in 0..3 {
                used[tr[k] as usize] = true;
                let n = self.adj[id][k];
                if n != NONE {
                    let (a, b) = (tr[(k + 1) % 3], tr[(k + 2) % 3]);
                    let nt = self.tri[n as usize];
                    let sl = (0..3).find(|&j| nt[j] != a && nt[j] != b);
                    match sl {
                        Some(j) if nt.contains(&a) && nt.contains(&b) && self.adj[n as usize][j] == id as u32 => {}
                        _ => return bad(format!("adjacency of triangle {id} is not symmetric")),
                    }
                }
            }
        }
        if let Some(v) = used.iter().position(|&u| !u) {
            return bad(format!("point {v} is not a vertex"));
        }
        let hull = convex_hull(&self.pts);
        let hull_twice: i64 = (0..hull.len())
            .map(|i| self.pts[hull[i]].det(self.pts[hull[(i + 1) % hull.len()]]))
            .sum();
        if hull_twice != twice_area {
            return bad(format!("triangles cover area {twice_area}/2, hull has {hull_twice}/2"));
        }
        Ok(())
    }

    fn edge_state(&self, id: u32, k: usize, u: &[f64], tol: f64) -> EdgeState {
        let Some((r, p, q, s)) = self.quad(id, k) else {
            return EdgeState::Fine;
        };
        let pt = |i: usize| self.pts[i];
        let h = lifted_height(pt(r), pt(p), pt(q), pt(s), u[r], u[p], u[q], u[s]);
        if h >= -tol {
            return EdgeState::Fine;
        }
        if orient(pt(r), pt(p), pt(s)) <= 0 {
            EdgeState::Stuck(p)
        } else if orient(pt(s), pt(q), pt(r)) <= 0 {
            EdgeState::Stuck(q)
        } else {
            EdgeState::Flip
        }
    }

    /// True iff no interior edge is reflex for the lift `u`.
    pub fn is_u_delaunay(&self, u: &[f64], tol: f64) -> bool {
        let tol = tol * u.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        self.all_edge_slots()
            .into_iter()
            .all(|(id, k)| matches!(self.edge_state(id, k as usize, u, tol), EdgeState::Fine))
    }

    fn star(&self, v: usize) -> Vec<u32> {
        let start = self.vtri[v];
        let mut out = vec![start];
        let idx = |t: u32| self.tri[t as usize].iter().position(|&w| w as usize == v).unwrap();
        let mut t = start;
        loop {
            let n = self.adj[t as usize][(idx(t) + 1) % 3];
            if n == NONE || n == start {
                if n == start {
                    return out;
                }
                break;
            }
            out.push(n);
            t = n;
        }
        let mut t = start;
        loop {
            let n = self.adj[t as usize][(idx(t) + 2) % 3];
            if n == NONE {
                return out;
            }
            out.push(n);
            t = n;
        }
    }

    /// Triangles around an interior vertex in counterclockwise order; `None` on the boundary.
    fn closed_star(&self, v: usize) -> Option<Vec<u32>> {
        let start = self.vtri[v];
        let mut out = vec![start];
        let mut t = start;
        loop {
            let i = self.tri[t as usize].iter().position(|&w| w as usize == v).unwrap();
            let n = self.adj[t as usize][(i + 1) % 3];
            if n == NONE {
                return None;
            }
            if n == start {
                return Some(out);
            }
            out.push(n);
            t = n;
        }
    }

    fn run(&mut self, u: &mut [f64], lower: bool, tol: f64) -> Result<FlipRun, Error> {
        let mut run = FlipRun::default();
        let n = self.pts.len();
        let budget = 50 * n * n + 10_000;
        let mut stack = self.all_edge_slots();
        let mut steps = 0usize;
        let mut last_progress = usize::MAX;
        loop {
            while let Some((id, k)) = stack.pop() {
                steps += 1;
                if steps > budget {
                    return Err(Error::NoConvergence(steps));
                }
                match self.edge_state(id, k as usize, u, tol) {
                    EdgeState::Fine => {}
                    EdgeState::Flip => {
                        let nb = self.adj[id as usize][k as usize];
                        self.flip(id, k as usize);
                        let tr = self.tri[id as usize];
                        run.flips += 1;
                        run.created.push((tr[0] as usize, tr[2] as usize));
                        self.push_outer(id, nb, &mut stack);
                    }
                    EdgeState::Stuck(v) if lower => {
                        // the reflex corner lies in the triangle of the other three; drop it onto that plane
                        let (r, p, q, s) = self.quad(id, k as usize).unwrap();
                        let (a, b, c) = if v == p { (r, s, q) } else { (s, r, p) };
                        let pt = |i: usize| self.pts[i];
                        let val = plane_value([pt(a), pt(b), pt(c)], [u[a], u[b], u[c]], pt(v));
                        if val >= u[v] {
                            continue;
                        }
                        u[v] = val;
                        run.lowered += 1;
                        for t in self.star(v) {
                            for kk in 0..3u8 {
                                if self.adj[t as usize][kk as usize] != NONE {
                                    stack.push((t, kk));
                                }
                            }
                        }
                    }
                    EdgeState::Stuck(_) => {}
                }
            }
            // a final sweep catches edges left stuck and since unblocked
            let pending: Vec<(u32, u8)> = self
                .all_edge_slots()
                .into_iter()
                .filter(|&(id, k)| !matches!(self.edge_state(id, k as usize, u, tol), EdgeState::Fine))
                .collect();
            let Some(&(id, k)) = pending.first() else {
                return Ok(run);
            };
            let progress = run.flips + run.lowered;
            if progress == last_progress {
                if lower {
                    return Err(Error::NoConvergence(steps));
                }
                let (r, p, q, s) = self.quad(id, k as usize).unwrap();
                let pt = |i: usize| self.pts[i];
                let h = lifted_height(pt(r), pt(p), pt(q), pt(s), u[r], u[p], u[q], u[s]);
                return Err(Error::NotConvex(h));
            }
            last_progress = progress;
            stack = pending;
        }
    }

    /// Lawson flips toward the lift `u`; fails if `u` is not discretely convex.
    pub fn flip_to_u_delaunay(&mut self, u: &[f64]) -> Result<FlipRun, Error> {
        if u.len() != self.pts.len() {
            return Err(Error::InvalidArgument("one value per vertex is required".into()));
        }
        let tol = 1e-12 * u.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        let mut vals = u.to_vec();
        self.run(&mut vals, false, tol)
    }

    /// Value of the piecewise linear interpolant at `z` (lattice coordinates), or `None`
    /// outside. Linear scan; meant for tests and small audits.
    pub fn interpolate(&self, u: &[f64], z: P2) -> Option<f64> {
        for tr in &self.tri {
            let [a, b, c] = tr.map(|v| self.pts[v as usize].as_f64());
            let d = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
            let l1 = ((z[0] - a[0]) * (c[1] - a[1]) - (z[1] - a[1]) * (c[0] - a[0])) / d;
            let l2 = ((b[0] - a[0]) * (z[1] - a[1]) - (b[1] - a[1]) * (z[0] - a[0])) / d;
            let l0 = 1.0 - l1 - l2;
            if l0 >= -1e-12 && l1 >= -1e-12 && l2 >= -1e-12 {
                return Some(l0 * u[tr[0] as usize] + l1 * u[tr[1] as usize] + l2 * u[tr[2] as usize]);
            }
        }
        None
    }

    /// Gradient of the interpolant on triangle `id`, in lattice units.
    pub fn gradient(&self, id: usize, u: &[f64]) -> [f64; 2] {
        let tr = self.tri[id];
        let [a, b, c] = tr.map(|v| self.pts[v as usize]);
        plane_gradient([a, b, c], tr.map(|v| u[v as usize]))
    }

    /// OFF text: vertices in domain coordinates lifted by `u`, then triangles.
    pub fn to_off(&self, grid: &GridDomain, u: &[f64]) -> String {
        let mut s = String::new();
        writeln!(s, "OFF\n{} {} 0", self.pts.len(), self.tri.len()).unwrap();
        for (i, &z) in self.pts.iter().enumerate() {
            let p = grid.embed_lattice(z);
            writeln!(s, "{} {} {}", p[0], p[1], u[i]).unwrap();
        }
        for t in &self.tri {
            writeln!(s, "3 {} {} {}", t[0], t[1], t[2]).unwrap();
        }
        s
    }
}

fn plane_gradient(p: [IVec; 3], u: [f64; 3]) -> [f64; 2] {
    let d1 = p[1] - p[0];
    let d2 = p[2] - p[0];
    let det = d1.det(d2) as f64;
    let (du1, du2) = (u[1] - u[0], u[2] - u[0]);
    [
        (du1 * d2.b as f64 - du2 * d1.b as f64) / det,
        (d1.a as f64 * du2 - d2.a as f64 * du1) / det,
    ]
}

fn plane_value(p: [IVec; 3], u: [f64; 3], z: IVec) -> f64 {
    let g = plane_gradient(p, u);
    let d = z - p[0];
    u[0] + g[0] * d.a as f64 + g[1] * d.b as f64
}

/// Convex hull vertex indices, counterclockwise, without collinear points.
pub fn convex_hull(pts: &[IVec]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pts.len()).collect();
    idx.sort_by_key(|&i| pts[i]);
    idx.dedup_by_key(|i| pts[*i]);
    if idx.len() < 3 {
        return idx;
    }
    let mut lower: Vec<usize> = Vec::new();
    for &i in &idx {
        while lower.len() >= 2 && orient(pts[lower[lower.len() - 2]], pts[lower[lower.len() - 1]], pts[i]) <= 0 {
            lower.pop();
        }
        lower.push(i);
    }
    let mut upper: Vec<usize> = Vec::new();
    for &i in idx.iter().rev() {
        while upper.len() >= 2 && orient(pts[upper[upper.len() - 2]], pts[upper[upper.len() - 1]], pts[i]) <= 0 {
            upper.pop();
        }
        upper.push(i);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Convex envelope of arbitrary values: Lawson flips, and where a reflex edge sits in
/// a non-convex quad, its reflex corner is lowered onto the plane of the other three.
/// Returns a triangulation on which the interpolant of the envelope is convex.
pub fn lower_envelope(grid: &GridDomain, u: &[f64]) -> Result<(Triangulation, Vec<f64>), Error> {
    if u.len() != grid.len() {
        return Err(Error::InvalidArgument("values do not match the grid".into()));
    }
    let mut t = Triangulation::standard_delaunay(grid)?;
    let mut vals = u.to_vec();
    let tol = 1e-12 * u.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
    t.run(&mut vals, true, tol)?;
    Ok((t, vals))
}

#[derive(Clone, Debug, Serialize)]
pub struct SubgradientCell {
    pub point: usize,
    /// Gradient-space polygon in domain units, counterclockwise.
    pub vertices: Vec<P2>,
    pub area: f64,
    /// Estimate of `det ∇²U` at the point: `area / h²`.
    pub det: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SubgradientCellMap {
    /// One entry per grid point; `None` on the boundary of the triangulation.
    pub cells: Vec<Option<SubgradientCell>>,
}

impl SubgradientCellMap {
    pub fn det_estimates(&self) -> Vec<Option<f64>> {
        self.cells.iter().map(|c| c.as_ref().map(|c| c.det)).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let cells: Vec<_> = self
            .cells
            .iter()
            .flatten()
            .map(|c| serde_json::json!({ "point": c.point, "polygon": c.vertices, "area": c.area }))
            .collect();
        serde_json::json!({ "schema": 1, "cells": cells })
    }
}

/// Subgradient cells of the interpolant of `u` on `t` (which should be `u`-Delaunay).
pub fn cells_of_triangulation(grid: &GridDomain, t: &Triangulation, u: &[f64]) -> SubgradientCellMap {
    let h2 = grid.h() * grid.h();
    let grads: Vec<P2> = (0..t.len())
        .map(|id| grid.gradient_to_domain(t.gradient(id, u)))
        .collect();
    let scale = grads.iter().fold(1e-300_f64, |m, g| m.max(g[0].abs()).max(g[1].abs()));
    let cells = (0..t.pts.len())
        .map(|x| {
            let star = t.closed_star(x)?;
            let mut verts: Vec<P2> = Vec::with_capacity(star.len());
            for id in star {
                let g = grads[id as usize];
                let same = |a: &P2| (a[0] - g[0]).abs() <= 1e-12 * scale && (a[1] - g[1]).abs() <= 1e-12 * scale;
                if !verts.last().is_some_and(same) {
                    verts.push(g);
                }
            }
            while verts.len() > 1 && {
                let (f, l) = (verts[0], verts[verts.len() - 1]);
                (f[0] - l[0]).abs() <= 1e-12 * scale && (f[1] - l[1]).abs() <= 1e-12 * scale
            } {
                verts.pop();
            }
            let area = polygon_area(&verts).abs();
            Some(SubgradientCell {
                point: x,
                vertices: verts,
                area,
                det: area / h2,
            })
        })
        .collect();
    SubgradientCellMap { cells }
}

/// Envelope triangulation of `u`, then its cells.
pub fn subgradient_cells(grid: &GridDomain, u: &[f64]) -> Result<SubgradientCellMap, Error> {
    let (t, env) = lower_envelope(grid, u)?;
    Ok(cells_of_triangulation(grid, &t, &env))
}

/// Determinant of the centred finite-difference Hessian, in domain units; `None`
/// where one of the 8 neighbours is missing.
pub fn hessian_det_naive(grid: &GridDomain, u: &[f64]) -> Vec<Option<f64>> {
    let h2 = grid.h() * grid.h();
    (0..grid.len())
        .map(|x| {
            let p = grid.point(x);
            let at = |a: i64, b: i64| grid.index_of(p + crate::lattice::v(a, b)).map(|i| u[i]);
            let d11 = (at(1, 0)? - 2.0 * u[x] + at(-1, 0)?) / h2;
            let d22 = (at(0, 1)? - 2.0 * u[x] + at(0, -1)?) / h2;
            let d12 = (at(1, 1)? - at(1, -1)? - at(-1, 1)? + at(-1, -1)?) / (4.0 * h2);
            Some(d11 * d22 - d12 * d12)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::v;

    #[test]
    fn in_circle_matches_determinant() {
        for (e, f) in [
            (v(1, 0), v(0, 1)),
            (v(2, 1), v(1, 1)),
            (v(3, -1), v(1, 0)),
            (v(-2, 5), v(-1, 2)),
        ] {
            assert_eq!(e.det(f), 1);
            for k in -3..=3 {
                let g = k * e + f;
                let row = |z: IVec| [z.a as i128, z.b as i128, z.norm2() as i128];
                let (a, b, c) = (row(e), row(f), row(g));
                let det = a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
                    + a[2] * (b[0] * c[1] - b[1] * c[0]);
                assert_eq!(det, in_circle(e, f, k) as i128, "e={e} f={f} k={k}");
            }
        }
        assert_eq!(in_circle(v(3, 1), v(1, 0), 0), 0);
        assert_eq!(in_circle(v(1, 0), v(0, 1), 1), 0);
        assert_eq!(in_circle(v(1, 1), v(1, 0), 1), 2);
    }

    #[test]
    fn sweep_is_valid_on_odd_shapes() {
        let sets: Vec<Vec<IVec>> = vec![
            vec![v(0, 0), v(1, 0), v(2, 0), v(3, 0), v(1, 1)],
            vec![v(0, 0), v(0, 1), v(0, 2), v(1, 0), v(1, 1), v(1, 2)],
            (0..5)
                .flat_map(|a| (0..5).map(move |b| v(a, b)))
                .filter(|z| z.a + z.b <= 5)
                .collect(),
            vec![v(0, 0), v(1, 0), v(0, 1)],
        ];
        for s in sets {
            Triangulation::sweep(&s).unwrap().validate().unwrap();
        }
        assert!(Triangulation::sweep(&[v(0, 0), v(1, 1), v(2, 2)]).is_err());
    }

    #[test]
    fn delaunay_counts_on_squares() {
        for n in 2..8 {
            let g = GridDomain::lattice_rect(n, n).unwrap();
            let t = Triangulation::standard_delaunay(&g).unwrap();
            t.validate().unwrap();
            assert_eq!(t.len(), 2 * (n - 1) * (n - 1));
            assert!(t.edges().len() <= 3 * (g.len() - 2));
            assert!(t.is_u_delaunay(&g.q_values(), 1e-12));
        }
    }

    #[test]
    fn single_quad_flip() {
        let g = GridDomain::lattice_rect(2, 2).unwrap();
        let mut t = Triangulation::standard_delaunay(&g).unwrap();
        let q = g.q_values();
        assert_eq!(t.clone().flip_to_u_delaunay(&q).unwrap().flips, 0);
        let diag = |t: &Triangulation| {
            t.edges()
                .into_iter()
                .filter(|&(i, j)| (g.point(i) - g.point(j)).norm2() == 2)
                .next()
                .unwrap()
        };
        let (i, j) = diag(&t);
        // make the current diagonal the reflex one
        let mut u = vec![0.0; 4];
        u[i] = 1.0;
        u[j] = 1.0;
        assert!(!t.is_u_delaunay(&u, 1e-12));
        let run = t.flip_to_u_delaunay(&u).unwrap();
        assert_eq!(run.flips, 1);
        assert_ne!(diag(&t), (i, j));
        assert!(t.is_u_delaunay(&u, 1e-12));
    }

    #[test]
    fn non_convex_values_are_rejected() {
        let g = GridDomain::lattice_rect(3, 3).unwrap();
        let mut t = Triangulation::standard_delaunay(&g).unwrap();
        let u = g.sample_lattice(|z| if z == v(1, 1) { 1.0 } else { 0.0 });
        assert!(matches!(t.flip_to_u_delaunay(&u), Err(Error::NotConvex(_))));
    }

    #[test]
    fn envelope_by_lowering_matches_spike() {
        let g = GridDomain::lattice_rect(3, 3).unwrap();
        let u = g.sample_lattice(|z| if z == v(1, 1) { 1.0 } else { 0.0 });
        let (t, env) = lower_envelope(&g, &u).unwrap();
        assert!(env.iter().all(|&x| x.abs() < 1e-12));
        assert!(t.is_u_delaunay(&env, 1e-12));
    }

    #[test]
    fn cells_of_q_have_unit_determinant() {
        let g = GridDomain::square(0.0, 1.0, 0.0, 9).unwrap();
        let q = g.sample(|p| 0.5 * (p[0] * p[0] + p[1] * p[1]));
        let cells = subgradient_cells(&g, &q).unwrap();
        let h2 = g.h() * g.h();
        let mut interior = 0;
        for c in cells.cells.iter().flatten() {
            interior += 1;
            assert!((c.area - h2).abs() < 1e-12, "{}", c.area);
            assert!((c.det - 1.0).abs() < 1e-9);
        }
        assert_eq!(interior, 7 * 7);
        let aff = g.sample(|p| 2.0 * p[0] - p[1]);
        assert!(subgradient_cells(&g, &aff)
            .unwrap()
            .cells
            .iter()
            .flatten()
            .all(|c| c.area < 1e-15));
        let crease = g.sample(|p| (p[0] - 0.5).max(0.0));
        assert!(subgradient_cells(&g, &crease)
            .unwrap()
            .cells
            .iter()
            .flatten()
            .all(|c| c.det.abs() < 1e-9));
    }

    #[test]
    fn naive_hessian() {
        let g = GridDomain::square(0.0, 1.0, 0.0, 6).unwrap();
        let q = g.sample(|p| 0.5 * (p[0] * p[0] + p[1] * p[1]));
        for d in hessian_det_naive(&g, &q).into_iter().flatten() {
            assert!((d - 1.0).abs() < 1e-9);
        }
        let aff = g.sample(|p| p[0] + 3.0 * p[1]);
        assert!(hessian_det_naive(&g, &aff)
            .into_iter()
            .flatten()
            .all(|d| d.abs() < 1e-9));
        let grid = GridDomain::lattice_rect(7, 7).unwrap();
        let crease = grid.sample_lattice(|z| (z.a - z.b).abs() as f64);
        let dets = hessian_det_naive(&grid, &crease);
        let next = grid.index_of(v(3, 2)).unwrap();
        assert!(dets[next].unwrap() < 0.0);
    }

    #[test]
    fn off_export() {
        let g = GridDomain::lattice_rect(3, 2).unwrap();
        let t = Triangulation::standard_delaunay(&g).unwrap();
        let off = t.to_off(&g, &g.q_values());
        assert!(off.starts_with("OFF\n6 4 0\n"));
        assert_eq!(off.lines().count(), 2 + 6 + 4);
    }
}
