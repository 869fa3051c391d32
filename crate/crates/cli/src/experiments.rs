//! Monte Carlo and comparison experiments behind the CLI subcommands.
//!
//! Sample `k` of an experiment draws from ChaCha8 stream `k` of the seed, so
//! results do not depend on how rayon schedules the samples.

use std::f64::consts::FRAC_PI_2;

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use cvxgrid::constraints::{convexity_defect_domain, DefectMode};
use cvxgrid::delaunay::Triangulation;
use cvxgrid::grid::GridDomain;
use cvxgrid::monopolist::{baseline_constraint_count, solve_method, Method, MonopolistInstance};
use cvxgrid::polygon::ConvexPolygon;
use cvxgrid::refine::RefineSettings;
use cvxgrid::stencils::StencilFamily;

use crate::functions::{FunctionKind, TestFunction};

pub fn sample_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Disc of radius `r` (grid units) seen through lattice angle `θ ~ U[0, π/2)` and offset `ξ ~ U[0,1)²`.
pub fn random_disc_grid<R: Rng>(rng: &mut R, radius: f64) -> Result<GridDomain> {
    let theta = rng.random_range(0.0..FRAC_PI_2);
    let xi = [rng.random::<f64>(), rng.random::<f64>()];
    Ok(GridDomain::build(
        ConvexPolygon::disc([0.0, 0.0], radius, 128),
        1.0,
        theta,
        xi,
    )?)
}

/// Square `[0, side]²` with random lattice angle and offset.
pub fn random_square_grid<R: Rng>(rng: &mut R, side: f64) -> Result<GridDomain> {
    let theta = rng.random_range(0.0..FRAC_PI_2);
    let xi = [rng.random::<f64>(), rng.random::<f64>()];
    let c = side / 2.0;
    let poly = ConvexPolygon::rectangle(-c, -c, c, c);
    Ok(GridDomain::build(poly, 1.0, theta, xi)?)
}

#[derive(Clone, Debug, Serialize)]
pub struct StencilSample {
    pub radius: f64,
    pub sample: usize,
    pub points: usize,
    pub cardinality: usize,
    /// `6(N−2)(diam+2)`
    pub worst_case_bound: f64,
    /// Family of the standard Delaunay triangulation.
    pub delaunay_cardinality: usize,
    pub max_stencil: usize,
}

impl StencilSample {
    pub fn within_bounds(&self) -> bool {
        let n = self.points as f64;
        (self.cardinality as f64) <= self.worst_case_bound && (self.delaunay_cardinality as f64) <= 6.0 * (n - 2.0)
    }
}

pub fn stencil_stats(kind: FunctionKind, radii: &[f64], samples: usize, seed: u64) -> Result<Vec<StencilSample>> {
    let jobs: Vec<(usize, usize)> = (0..radii.len())
        .flat_map(|r| (0..samples).map(move |k| (r, k)))
        .collect();
    let mut out = jobs
        .par_iter()
        .map(|&(ri, k)| {
            let radius = radii[ri];
            let mut rng = sample_rng(seed, (ri * samples + k) as u64);
            let grid = random_disc_grid(&mut rng, radius)?;
            let f = TestFunction::draw(kind, &mut rng, radius);
            let u = grid.sample(|z| f.eval(z));
            let fam = StencilFamily::minimal_for(&grid, &u)
                .with_context(|| format!("minimal stencils, radius {radius}, sample {k}"))?;
            let tri = Triangulation::standard_delaunay(&grid)?;
            let vt = StencilFamily::of_edges(&grid, tri.edges());
            let n = grid.len() as f64;
            Ok(StencilSample {
                radius,
                sample: k,
                points: grid.len(),
                cardinality: fam.cardinality(),
                worst_case_bound: 6.0 * (n - 2.0) * (grid.diameter() + 2.0),
                delaunay_cardinality: vt.cardinality(),
                max_stencil: fam.sets().iter().map(Vec::len).max().unwrap_or(0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.radius.total_cmp(&b.radius).then(a.sample.cmp(&b.sample)));
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct SizeSummary {
    pub radius: f64,
    pub samples: usize,
    pub mean_points: f64,
    pub mean_cardinality: f64,
    pub std_cardinality: f64,
    pub mean_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthFit {
    /// Slope of `log mean #V` against `log mean N`.
    pub exponent: f64,
    /// Least-squares `C` in `#V ≈ C·N·ln²N`.
    pub c_ln2: f64,
    pub r2_ln2: f64,
}

pub fn summarize(samples: &[StencilSample]) -> Vec<SizeSummary> {
    let mut radii: Vec<f64> = samples.iter().map(|s| s.radius).collect();
    radii.dedup();
    radii
        .into_iter()
        .map(|r| {
            let group: Vec<&StencilSample> = samples.iter().filter(|s| s.radius == r).collect();
            let m = group.len() as f64;
            let mean_n = group.iter().map(|s| s.points as f64).sum::<f64>() / m;
            let mean_v = group.iter().map(|s| s.cardinality as f64).sum::<f64>() / m;
            let var = group
                .iter()
                .map(|s| (s.cardinality as f64 - mean_v).powi(2))
                .sum::<f64>()
                / (m - 1.0).max(1.0);
            let ratio = group
                .iter()
                .map(|s| s.cardinality as f64 / s.points as f64)
                .sum::<f64>()
                / m;
            SizeSummary {
                radius: r,
                samples: group.len(),
                mean_points: mean_n,
                mean_cardinality: mean_v,
                std_cardinality: var.sqrt(),
                mean_ratio: ratio,
            }
        })
        .collect()
}

/// Needs at least two sizes.
pub fn fit_growth(rows: &[SizeSummary]) -> Option<GrowthFit> {
    if rows.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.mean_points.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_cardinality.ln()).collect();
    let exponent = slope(&xs, &ys);

    // one-parameter fit through the origin
    let basis: Vec<f64> = rows
        .iter()
        .map(|r| r.mean_points * r.mean_points.ln().powi(2))
        .collect();
    let v: Vec<f64> = rows.iter().map(|r| r.mean_cardinality).collect();
    let c = basis.iter().zip(&v).map(|(b, y)| b * y).sum::<f64>() / basis.iter().map(|b| b * b).sum::<f64>();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let ss_res: f64 = basis.iter().zip(&v).map(|(b, y)| (y - c * b).powi(2)).sum();
    let ss_tot: f64 = v.iter().map(|y| (y - mean).powi(2)).sum();
    Some(GrowthFit {
        exponent,
        c_ln2: c,
        r2_ln2: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
    })
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Clone, Debug, Serialize)]
pub struct FlipSample {
    pub side: usize,
    pub sample: usize,
    pub points: usize,
    pub flips: usize,
    /// `#V_u`
    pub minimal_cardinality: usize,
    /// `#(V_T ∪ V_u)`
    pub bound: usize,
}

impl FlipSample {
    pub fn within_bound(&self) -> bool {
        self.flips <= self.bound
    }
}

pub fn flip_experiment(kind: FunctionKind, sides: &[usize], samples: usize, seed: u64) -> Result<Vec<FlipSample>> {
    let jobs: Vec<(usize, usize)> = (0..sides.len())
        .flat_map(|s| (0..samples).map(move |k| (s, k)))
        .collect();
    let mut out = jobs
        .par_iter()
        .map(|&(si, k)| {
            let side = sides[si];
            let mut rng = sample_rng(seed, (si * samples + k) as u64);
            let grid = random_square_grid(&mut rng, side as f64)?;
            let f = TestFunction::draw(kind, &mut rng, side as f64 / 2.0);
            let u = grid.sample(|z| f.eval(z));
            let mut tri = Triangulation::standard_delaunay(&grid)?;
            let vt = StencilFamily::of_edges(&grid, tri.edges());
            let vu = StencilFamily::minimal_for(&grid, &u)?;
            let bound = vt.union(&vu)?.cardinality();
            let run = tri.flip_to_u_delaunay(&u)?;
            Ok(FlipSample {
                side,
                sample: k,
                points: grid.len(),
                flips: run.flips,
                minimal_cardinality: vu.cardinality(),
                bound,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by_key(|s| (s.side, s.sample));
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareRow {
    pub n: usize,
    pub method: String,
    pub points: usize,
    pub constraints: usize,
    /// `None` when the method was only counted, not solved.
    pub objective: Option<f64>,
    pub profit: Option<f64>,
    /// Domain units, comparable across `n`.
    pub full_defect: Option<f64>,
    pub directional_defect: Option<f64>,
    pub refinement_steps: Option<usize>,
    pub seconds: Option<f64>,
}

/// Full-cone solves above `clrm_solve_max` are counted but not solved.
pub fn compare(
    instance: &MonopolistInstance,
    sizes: &[usize],
    methods: &[Method],
    settings: &RefineSettings,
    clrm_solve_max: usize,
) -> Result<Vec<CompareRow>> {
    let mut rows = Vec::new();
    for &n in sizes {
        let grid = instance.grid(n)?;
        for &method in methods {
            if method == Method::Clrm && n > clrm_solve_max {
                let count = baseline_constraint_count(&grid, method)?.expect("fixed system");
                rows.push(CompareRow {
                    n,
                    method: method.to_string(),
                    points: grid.len(),
                    constraints: count,
                    objective: None,
                    profit: None,
                    full_defect: None,
                    directional_defect: None,
                    refinement_steps: None,
                    seconds: None,
                });
                continue;
            }
            let r = solve_method(instance, &grid, method, settings).with_context(|| format!("{method} at n={n}"))?;
            let profit = instance.exact_profit(&grid, &r.values)?;
            rows.push(CompareRow {
                n,
                method: method.to_string(),
                points: grid.len(),
                constraints: r.constraint_count,
                objective: Some(r.objective),
                profit: Some(profit.value),
                full_defect: Some(convexity_defect_domain(&grid, &r.values, DefectMode::Full)),
                directional_defect: Some(convexity_defect_domain(&grid, &r.values, DefectMode::Directional)),
                refinement_steps: Some(r.refinement_steps),
                seconds: Some(r.seconds),
            });
        }
    }
    Ok(rows)
}
