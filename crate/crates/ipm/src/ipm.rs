use serde::{Deserialize, Serialize};

use crate::matrix::RowMatrix;
use crate::normal::{NormalSystem, Shift};
use crate::program::{ConvexProgram, VarBound};
use crate::SolverError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub tol_rel: f64,
    pub max_iter: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            tol_rel: 1e-9,
            max_iter: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Optimal,
    /// Stopped without progress at a point within `NEAR_FACTOR · tol_rel` of
    /// optimality; typical when rows pin an equality and the feasible set has no interior.
    NearOptimal,
    Infeasible,
    MaxIter,
}

impl Status {
    pub fn is_usable(self) -> bool {
        matches!(self, Status::Optimal | Status::NearOptimal)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub primal: Vec<f64>,
    /// One multiplier per row of `A`.
    pub duals: Vec<f64>,
    /// Multiplier of each variable bound; zero for free variables. For fixed
    /// variables this is the signed multiplier of the equality.
    pub bound_duals: Vec<f64>,
    pub status: Status,
    pub kkt: KktResiduals,
    pub objective: f64,
    pub iterations: usize,
}

const DELTA: f64 = 1e-12;
const STEP_FRACTION: f64 = 0.99;
const STALL_WINDOW: usize = 30;
const NEAR_FACTOR: f64 = 1e3;

/// The program after fixed variables are substituted out and lower bounds
/// turned into rows: `min ½xᵀHx + cᵀx` with `Gx ≥ h`.
struct Reduced {
    n: usize,
    free_of: Vec<Option<usize>>,
    hess: Vec<(usize, usize, f64)>,
    c: Vec<f64>,
    g: RowMatrix,
    h: Vec<f64>,
    /// For each reduced row: `Row(i)` original row, `Bound(j)` lower bound of var j.
    origin: Vec<Origin>,
    scale: f64,
}

#[derive(Clone, Copy)]
enum Origin {
    Row(usize),
    Bound(usize),
}

fn presolve(p: &ConvexProgram) -> Result<Reduced, SolverError> {
    let mut free_of = vec![None; p.n];
    let mut fixed = vec![0.0; p.n];
    let mut nfree = 0;
    for (j, b) in p.bounds.iter().enumerate() {
        match *b {
            VarBound::Fixed(v) => fixed[j] = v,
            _ => {
                free_of[j] = Some(nfree);
                nfree += 1;
            }
        }
    }
    let mut c = vec![0.0; nfree];
    for (j, &cj) in p.linear.iter().enumerate() {
        if let Some(k) = free_of[j] {
            c[k] += cj;
        }
    }
    let mut hess = Vec::new();
    for &(i, j, v) in &p.hessian.entries {
        match (free_of[i], free_of[j]) {
            (Some(a), Some(b)) => hess.push((a.min(b), a.max(b), v)),
            (Some(a), None) => c[a] += v * fixed[j],
            (None, Some(b)) => c[b] += v * fixed[i],
            (None, None) => {}
        }
    }
    let mut g = RowMatrix::new(nfree);
    let mut h = Vec::new();
    let mut origin = Vec::new();
    let mut entries = Vec::new();
    for (r, (idx, val)) in p.rows.iter_rows().enumerate() {
        entries.clear();
        let mut rhs = 0.0;
        for (&j, &v) in idx.iter().zip(val) {
            match free_of[j] {
                Some(k) => entries.push((k, v)),
                None => rhs -= v * fixed[j],
            }
        }
        if entries.is_empty() {
            if rhs > 1e-12 * (1.0 + rhs.abs()) {
                return Err(SolverError::InvalidProgram(format!(
                    "row {r} involves only fixed variables and is violated"
                )));
            }
            continue;
        }
        g.push_row(entries.iter().copied());
        h.push(rhs);
        origin.push(Origin::Row(r));
    }
    for (j, b) in p.bounds.iter().enumerate() {
        if let VarBound::Lower(l) = *b {
            g.push_row([(free_of[j].unwrap(), 1.0)]);
            h.push(l);
            origin.push(Origin::Bound(j));
        }
    }
    let hmax = hess.iter().fold(0.0_f64, |m, e| m.max(e.2.abs()));
    let cmax = c.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let scale = if hmax.max(cmax) > 0.0 { hmax.max(cmax) } else { 1.0 };
    for e in &mut hess {
        e.2 /= scale;
    }
    for x in &mut c {
        *x /= scale;
    }
    Ok(Reduced {
        n: nfree,
        free_of,
        hess,
        c,
        g,
        h,
        origin,
        scale,
    })
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sym_mul(n: usize, h: &[(usize, usize, f64)], x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for &(i, j, v) in h {
        y[i] += v * x[j];
        if i != j {
            y[j] += v * x[i];
        }
    }
    y
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    let mut a = 1.0_f64;
    for (x, d) in v.iter().zip(dv) {
        if *d < 0.0 {
            a = a.min(-x / d);
        }
    }
    a
}

struct Iterate {
    x: Vec<f64>,
    s: Vec<f64>,
    z: Vec<f64>,
}

struct Residuals {
    rd: Vec<f64>,
    rp: Vec<f64>,
    rel_p: f64,
    rel_d: f64,
    rel_gap: f64,
}

impl Reduced {
    fn residuals(&self, it: &Iterate) -> Residuals {
        let hx = sym_mul(self.n, &self.hess, &it.x);
        let mut rd: Vec<f64> = hx.iter().zip(&self.c).map(|(a, b)| a + b).collect();
        let gtz = self.g.tmul(&it.z);
        for (r, v) in rd.iter_mut().zip(&gtz) {
            *r -= v;
        }
        let gx = self.g.mul(&it.x);
        let rp: Vec<f64> = (0..gx.len()).map(|i| gx[i] - it.s[i] - self.h[i]).collect();
        let xhx = dot(&it.x, &hx);
        let pobj = 0.5 * xhx + dot(&self.c, &it.x);
        let dobj = -0.5 * xhx + dot(&self.h, &it.z);
        let gap = dot(&it.s, &it.z);
        let rel_p = norm_inf(&rp) / (1.0 + norm_inf(&self.h).max(norm_inf(&gx)));
        let rel_d = norm_inf(&rd) / (1.0 + norm_inf(&self.c).max(norm_inf(&hx)));
        let rel_gap = gap.max((pobj - dobj).abs()) / (1.0 + pobj.abs().max(dobj.abs()));
        Residuals {
            rd,
            rp,
            rel_p,
            rel_d,
            rel_gap,
        }
    }

    /// Newton direction for the complementarity target `rc`.
    fn direction(
        &self,
        sys: &NormalSystem,
        it: &Iterate,
        res: &Residuals,
        rc: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let m = self.h.len();
        let mut t = vec![0.0; m];
        for i in 0..m {
            t[i] = rc[i] / it.s[i] + it.z[i] / it.s[i] * res.rp[i];
        }
        let mut rhs: Vec<f64> = res.rd.iter().map(|v| -v).collect();
        let gt = self.g.tmul(&t);
        for (r, v) in rhs.iter_mut().zip(&gt) {
            *r -= v;
        }
        let dx = sys.solve(&rhs);
        let gdx = self.g.mul(&dx);
        let mut ds = vec![0.0; m];
        let mut dz = vec![0.0; m];
        for i in 0..m {
            ds[i] = gdx[i] + res.rp[i];
            dz[i] = -(rc[i] + it.z[i] * ds[i]) / it.s[i];
        }
        (dx, ds, dz)
    }
}

pub fn solve(program: &ConvexProgram, settings: &Settings) -> Result<Solution, SolverError> {
    solve_from(program, settings, None)
}

/// Starts the primal iterate from `start`, e.g. the previous minimizer when
/// re-solving after a few constraints were added.
pub fn solve_warm(program: &ConvexProgram, settings: &Settings, start: &[f64]) -> Result<Solution, SolverError> {
    if start.len() != program.n {
        return Err(SolverError::InvalidProgram(format!(
            "warm start has length {}, expected {}",
            start.len(),
            program.n
        )));
    }
    solve_from(program, settings, Some(start))
}

fn solve_from(program: &ConvexProgram, settings: &Settings, start: Option<&[f64]>) -> Result<Solution, SolverError> {
    program.validate()?;
    let red = presolve(program)?;
    let n = red.n;
    let m = red.h.len();
    let is_lp = red.hess.iter().all(|e| e.2 == 0.0);

    let mut x = vec![0.0; n];
    if let Some(u) = start {
        for (j, f) in red.free_of.iter().enumerate() {
            if let Some(k) = f {
                x[*k] = u[j];
            }
        }
    }
    let gx = red.g.mul(&x);
    let s: Vec<f64> = (0..m).map(|i| (gx[i] - red.h[i]).max(1.0)).collect();
    let z = vec![1.0; m];
    let mut it = Iterate { x, s, z };

    let mut sys = NormalSystem::new(n, &red.hess, &red.g);
    let mut status = Status::MaxIter;
    let mut iterations = 0;
    let mut best: Option<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> = None;
    let mut stall_ref = f64::INFINITY;
    let mut stall_count = 0;
    let mut best_at = 0;
    let mut w = vec![0.0; m];

    for k in 0..=settings.max_iter {
        let res = red.residuals(&it);
        let merit = res.rel_p.max(res.rel_d).max(res.rel_gap);
        if best.as_ref().is_none_or(|b| merit < b.0) {
            if best.as_ref().is_none_or(|b| merit < 0.9 * b.0) {
                best_at = k;
            }
            best = Some((merit, it.x.clone(), it.s.clone(), it.z.clone()));
        }
        iterations = k;
        if res.rel_p <= settings.tol_rel && res.rel_d <= settings.tol_rel && res.rel_gap <= settings.tol_rel {
            status = Status::Optimal;
            break;
        }
        if m > 0 && farkas_certificate(&red, &it.z) {
            status = Status::Infeasible;
            break;
        }
        if res.rel_p < 0.9 * stall_ref {
            stall_ref = res.rel_p;
            stall_count = 0;
        } else {
            stall_count += 1;
            let hz = dot(&red.h, &it.z);
            if stall_count >= STALL_WINDOW && res.rel_p > 1e-6 && hz > 0.0 {
                status = Status::Infeasible;
                break;
            }
        }
        if k == settings.max_iter || k >= best_at + STALL_WINDOW {
            break;
        }

        for i in 0..m {
            w[i] = it.z[i] / it.s[i];
        }
        // absolute shift first; retries scale with the largest pivot, since z/s spans
        // 35 orders of magnitude when pairs of rows pin an equality
        let mut factored = sys.factor(&red.hess, &w, &red.g, Shift::Absolute(DELTA)).is_ok();
        let mut rel = 1e-15;
        while !factored && rel < 1e-5 {
            factored = sys.factor(&red.hess, &w, &red.g, Shift::Relative(rel)).is_ok();
            rel *= 100.0;
        }
        if !factored {
            break;
        }

        let mu = if m > 0 { dot(&it.s, &it.z) / m as f64 } else { 0.0 };
        let rc_aff: Vec<f64> = (0..m).map(|i| it.s[i] * it.z[i]).collect();
        let (dx_a, ds_a, dz_a) = red.direction(&sys, &it, &res, &rc_aff);
        let ap = max_step(&it.s, &ds_a);
        let ad = max_step(&it.z, &dz_a);
        let (ap, ad) = if is_lp { (ap, ad) } else { (ap.min(ad), ap.min(ad)) };
        let mu_aff = if m > 0 {
            (0..m)
                .map(|i| (it.s[i] + ap * ds_a[i]) * (it.z[i] + ad * dz_a[i]))
                .sum::<f64>()
                / m as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3).min(1.0) } else { 0.0 };
        let rc: Vec<f64> = (0..m)
            .map(|i| it.s[i] * it.z[i] + ds_a[i] * dz_a[i] - sigma * mu)
            .collect();
        drop(dx_a);
        let (dx, ds, dz) = red.direction(&sys, &it, &res, &rc);
        let mut ap = (STEP_FRACTION * max_step(&it.s, &ds)).min(1.0);
        let mut ad = (STEP_FRACTION * max_step(&it.z, &dz)).min(1.0);
        if !is_lp {
            ap = ap.min(ad);
            ad = ap;
        }
        for (a, d) in it.x.iter_mut().zip(&dx) {
            *a += ap * d;
        }
        for (a, d) in it.s.iter_mut().zip(&ds) {
            *a += ap * d;
        }
        for (a, d) in it.z.iter_mut().zip(&dz) {
            *a += ad * d;
        }
        if it.x.iter().chain(&it.s).chain(&it.z).any(|v| !v.is_finite()) {
            break;
        }
    }

    if status == Status::MaxIter {
        if let Some((merit, x, s, z)) = best {
            it = Iterate { x, s, z };
            if merit <= NEAR_FACTOR * settings.tol_rel {
                status = Status::NearOptimal;
            }
        }
    }
    Ok(finish(program, &red, &it, status, iterations))
}

fn farkas_certificate(red: &Reduced, z: &[f64]) -> bool {
    let hz = dot(&red.h, z);
    if hz <= 0.0 {
        return false;
    }
    let gtz = red.g.tmul(z);
    // the objective gradient must stay bounded for this to certify anything
    let zmax = norm_inf(z);
    zmax > 1e8 && norm_inf(&gtz) / hz < 1e-8
}

fn finish(p: &ConvexProgram, red: &Reduced, it: &Iterate, status: Status, iterations: usize) -> Solution {
    let mut primal = vec![0.0; p.n];
    for (j, f) in red.free_of.iter().enumerate() {
        primal[j] = match (f, p.bounds[j]) {
            (Some(k), _) => it.x[*k],
            (None, VarBound::Fixed(v)) => v,
            (None, _) => unreachable!(),
        };
    }
    let mut duals = vec![0.0; p.rows.nrows()];
    let mut bound_duals = vec![0.0; p.n];
    for (r, o) in red.origin.iter().enumerate() {
        let zr = it.z[r] * red.scale;
        match *o {
            Origin::Row(i) => duals[i] = zr,
            Origin::Bound(j) => bound_duals[j] = zr,
        }
    }
    // fixed variables: the equality multiplier closes the stationarity condition
    let mut grad = p.gradient(&primal);
    let atl = p.rows.tmul(&duals);
    for j in 0..p.n {
        grad[j] -= atl[j];
        if matches!(p.bounds[j], VarBound::Fixed(_)) {
            bound_duals[j] = grad[j];
        }
    }

    let viol = p.primal_violation(&primal);
    let row_scale = 1.0 + norm_inf(&primal);
    let mut dual_res = 0.0_f64;
    let gscale = 1.0 + norm_inf(&p.linear).max(norm_inf(&p.hessian.mul(&primal)));
    for j in 0..p.n {
        if !matches!(p.bounds[j], VarBound::Fixed(_)) {
            dual_res = dual_res.max((grad[j] - bound_duals[j]).abs());
        }
    }
    let ax = p.rows.mul(&primal);
    let mut comp = 0.0_f64;
    for (i, &l) in duals.iter().enumerate() {
        comp = comp.max((l * ax[i]).abs());
    }
    for (j, b) in p.bounds.iter().enumerate() {
        if let VarBound::Lower(l) = *b {
            comp = comp.max((bound_duals[j] * (primal[j] - l)).abs());
        }
    }
    let objective = p.objective(&primal);
    Solution {
        primal,
        duals,
        bound_duals,
        status,
        kkt: KktResiduals {
            primal: viol / row_scale,
            dual: dual_res / gscale,
            complementarity: comp / (1.0 + objective.abs()),
        },
        objective,
        iterations,
    }
}

/// Rows whose multiplier exceeds `threshold · max(1, largest multiplier)`.
pub fn active_rows(solution: &Solution, threshold: f64) -> Vec<usize> {
    let scale = solution.duals.iter().fold(1.0_f64, |m, &d| m.max(d));
    solution
        .duals
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > threshold * scale)
        .map(|(i, _)| i)
        .collect()
}

/// Variables whose lower-bound multiplier passes the same test as [`active_rows`].
pub fn active_bounds(solution: &Solution, threshold: f64) -> Vec<usize> {
    let scale = solution.bound_duals.iter().fold(1.0_f64, |m, &d| m.max(d));
    solution
        .bound_duals
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > threshold * scale)
        .map(|(i, _)| i)
        .collect()
}
