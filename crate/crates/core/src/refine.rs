//! Adaptive stencil refinement: grow sub-cones from multipliers, or shrink
//! super-cones by adding violated candidates, until the stencils settle.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use cvxgrid_ipm::{solve, solve_warm, ConvexProgram, Settings, Solution};

use crate::constraints::{self, assemble, convexity_defect, Cone, ConstraintSystem, DefectMode, FormKind};
use crate::grid::GridDomain;
use crate::lattice::IVec;
use crate::stencils::StencilFamily;
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConeFamily {
    Conv,
    DConv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Solve over Conv(V), add candidates whose P (or H) multiplier is positive.
    SubCones,
    /// Solve over Conv′(V), add extended candidates whose P (or H) value is negative.
    SuperCones,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RefineSettings {
    pub algorithm: Algorithm,
    pub cone: ConeFamily,
    /// Candidate extension factor of the super-cone loop; the sub-cone loop uses Ĥ.
    pub rho: f64,
    pub max_outer: usize,
    /// Multipliers above `lambda_rel · max dual` count as positive.
    pub lambda_rel: f64,
    /// Multipliers below `dual_floor · (1 + ‖∇f(u)‖∞)` are solver noise.
    pub dual_floor: f64,
    /// Values below `−violation_tol · max(1, ‖u‖∞)` count as negative.
    pub violation_tol: f64,
    pub solver: Settings,
}

impl Default for RefineSettings {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::SuperCones,
            cone: ConeFamily::Conv,
            rho: 1.5,
            max_outer: 50,
            lambda_rel: 1e-7,
            dual_floor: 1e-6,
            violation_tol: 1e-9,
            solver: Settings::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub stencil_count: usize,
    pub constraint_count: usize,
    pub objective: f64,
    /// Candidates added after this solve (violated or with active multiplier).
    pub added: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct RefinementRun {
    pub iterations: Vec<IterationRecord>,
    pub stencils: StencilFamily,
    pub solution: Solution,
    /// The first `N` primal values, one per grid point.
    pub values: Vec<f64>,
    pub converged: bool,
}

impl RefinementRun {
    pub fn objective(&self) -> f64 {
        self.solution.objective
    }

    /// Convexity rows of the final program.
    pub fn constraint_count(&self) -> usize {
        self.iterations.last().map_or(0, |r| r.constraint_count)
    }

    pub fn trace_csv(&self, seed: Option<u64>) -> String {
        let mut s = String::from("# schema=1\n");
        if let Some(seed) = seed {
            writeln!(s, "# seed={seed}").unwrap();
        }
        s.push_str("iteration,stencil_count,constraint_count,objective,violations,wall_time\n");
        for r in &self.iterations {
            writeln!(
                s,
                "{},{},{},{:.12e},{},{:.3}",
                r.iteration, r.stencil_count, r.constraint_count, r.objective, r.added, r.seconds
            )
            .unwrap();
        }
        s
    }
}

/// `base` with the rows of `sys` appended (columns are the first N variables).
pub fn with_rows(base: &ConvexProgram, sys: &ConstraintSystem) -> ConvexProgram {
    let mut p = base.clone();
    for r in &sys.rows {
        p.rows.push_row(r.terms.iter().map(|&(i, w)| (i as usize, w as f64)));
    }
    p
}

fn solve_checked(p: &ConvexProgram, settings: &Settings, start: Option<&[f64]>) -> Result<Solution, Error> {
    let sol = match start {
        Some(x) => solve_warm(p, settings, x)?,
        None => solve(p, settings)?,
    };
    if sol.status.is_usable() {
        Ok(sol)
    } else {
        Err(Error::SolverStatus(sol.status))
    }
}

/// Minimizer over a fixed cone; used for the full-system baselines.
pub fn solve_over(
    base: &ConvexProgram,
    grid: &GridDomain,
    cone: Cone<'_>,
    settings: &Settings,
) -> Result<(ConstraintSystem, Solution), Error> {
    let sys = assemble(grid, cone)?;
    let sol = solve_checked(&with_rows(base, &sys), settings, None)?;
    Ok((sys, sol))
}

/// Runs the selected loop. `base` must have the grid values as its first N variables.
pub fn run(base: &ConvexProgram, grid: &GridDomain, settings: &RefineSettings) -> Result<RefinementRun, Error> {
    if base.n < grid.len() {
        return Err(Error::InvalidArgument(
            "program has fewer variables than grid points".into(),
        ));
    }
    let n = grid.len();
    let mut fam = StencilFamily::minimal(grid);
    let mut iterations = Vec::new();
    let mut start: Option<Vec<f64>> = None;
    for it in 0..settings.max_outer {
        let clock = Instant::now();
        let cone = match (settings.algorithm, settings.cone) {
            (Algorithm::SubCones, ConeFamily::Conv) => Cone::ConvV(&fam),
            (Algorithm::SubCones, ConeFamily::DConv) => Cone::DConvV(&fam),
            (Algorithm::SuperCones, ConeFamily::Conv) => Cone::ConvPrimeV(&fam),
            (Algorithm::SuperCones, ConeFamily::DConv) => Cone::DConvPrimeV(&fam),
        };
        let sys = assemble(grid, cone)?;
        let program = with_rows(base, &sys);
        let sol = solve_checked(&program, &settings.solver, start.as_deref())?;
        let u = &sol.primal[..n];
        let additions = match settings.algorithm {
            Algorithm::SubCones => {
                let floor = settings.dual_floor * (1.0 + max_abs(&program.gradient(&sol.primal)));
                active_candidates(&sys, &sol, base.rows.nrows(), settings.lambda_rel, floor)
            }
            Algorithm::SuperCones => violated_candidates(grid, &fam, u, settings)?,
        };
        iterations.push(IterationRecord {
            iteration: it,
            stencil_count: fam.cardinality(),
            constraint_count: sys.len(),
            objective: sol.objective,
            added: additions.len(),
            seconds: clock.elapsed().as_secs_f64(),
        });
        if additions.is_empty() {
            let values = u.to_vec();
            return Ok(RefinementRun {
                iterations,
                stencils: fam,
                solution: sol,
                values,
                converged: true,
            });
        }
        fam = fam.refine(grid, &additions)?;
        start = Some(sol.primal);
    }
    Err(Error::NoConvergence(settings.max_outer))
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, &x| m.max(x.abs()))
}

/// Rows with opposite coefficient vectors (e.g. the two diagonals of a unit
/// square under V_min) make the multipliers non-unique: any common amount can
/// be moved between them. Cancel it first, then threshold the net multiplier.
fn active_candidates(
    sys: &ConstraintSystem,
    sol: &Solution,
    offset: usize,
    lambda_rel: f64,
    floor: f64,
) -> Vec<(usize, IVec)> {
    let duals = &sol.duals[offset..];
    let key = |terms: &[(u32, i32)], sign: i32| {
        let mut k: Vec<(u32, i32)> = terms.iter().map(|&(i, w)| (i, sign * w)).collect();
        k.sort_unstable();
        k
    };
    let mut net: HashMap<Vec<(u32, i32)>, f64> = HashMap::new();
    for (r, &d) in sys.rows.iter().zip(duals) {
        *net.entry(key(&r.terms, 1)).or_default() += d;
    }
    let net_of = |r: &constraints::Row| {
        let own = net.get(&key(&r.terms, 1)).copied().unwrap_or(0.0);
        let opp = net.get(&key(&r.terms, -1)).copied().unwrap_or(0.0);
        own - opp
    };
    let nets: Vec<f64> = sys.rows.iter().map(net_of).collect();
    let threshold = (lambda_rel * max_abs(&nets)).max(floor);
    let mut out = Vec::new();
    for (r, &d) in sys.rows.iter().zip(&nets) {
        if d <= threshold {
            continue;
        }
        match r.kind {
            FormKind::P => out.push((r.base as usize, r.offset)),
            // one H row stands for the candidates ±e
            FormKind::H => {
                out.push((r.base as usize, r.offset));
                out.push((r.base as usize, -r.offset));
            }
            _ => {}
        }
    }
    out
}

fn violated_candidates(
    grid: &GridDomain,
    fam: &StencilFamily,
    u: &[f64],
    settings: &RefineSettings,
) -> Result<Vec<(usize, IVec)>, Error> {
    let bound = -settings.violation_tol * constraints::membership_scale(u);
    let per_point: Result<Vec<Vec<(usize, IVec)>>, Error> = (0..grid.len())
        .into_par_iter()
        .map(|x| {
            let cands = fam.extended_candidates(grid, x, settings.rho)?;
            let mut out = Vec::new();
            for e in cands {
                let row = match settings.cone {
                    ConeFamily::Conv => constraints::p_row(grid, x, e),
                    ConeFamily::DConv => constraints::h_row(grid, x, e),
                };
                if row.is_some_and(|r| r.eval(u) < bound) {
                    out.push((x, e));
                }
            }
            Ok(out)
        })
        .collect();
    let mut all: Vec<(usize, IVec)> = per_point?.into_iter().flatten().collect();
    // refine() ignores offsets already present, and ±e of an H row are candidates together
    if settings.cone == ConeFamily::DConv {
        let mirrored: Vec<(usize, IVec)> = all
            .iter()
            .filter(|&&(x, e)| grid.in_max_stencil(x, -e) && !fam.contains(x, -e))
            .map(|&(x, e)| (x, -e))
            .collect();
        all.extend(mirrored);
    }
    Ok(all)
}

/// Convexity defect of a run's final values in the mode matching its cone.
pub fn final_defect(grid: &GridDomain, run: &RefinementRun, cone: ConeFamily) -> f64 {
    let mode = match cone {
        ConeFamily::Conv => DefectMode::Full,
        ConeFamily::DConv => DefectMode::Directional,
    };
    convexity_defect(grid, &run.values, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cvxgrid_ipm::VarBound;

    /// `½‖u − target‖²`
    fn projection(target: &[f64]) -> ConvexProgram {
        let mut p = ConvexProgram::new(target.len());
        for (i, &t) in target.iter().enumerate() {
            p.hessian.add(i, i, 1.0);
            p.linear[i] = -t;
            p.constant += 0.5 * t * t;
        }
        p
    }

    #[test]
    fn projection_of_q_stops_at_once() {
        let g = GridDomain::lattice_rect(6, 6).unwrap();
        let q = g.q_values();
        for algorithm in [Algorithm::SubCones, Algorithm::SuperCones] {
            let s = RefineSettings {
                algorithm,
                ..Default::default()
            };
            let r = run(&projection(&q), &g, &s).unwrap();
            assert!(r.converged);
            assert_eq!(r.iterations.len(), 1);
            for (a, b) in r.values.iter().zip(&q) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn projection_of_noise_matches_full_solve() {
        let g = GridDomain::lattice_rect(5, 5).unwrap();
        let target = g.sample_lattice(|z| (((z.a * 37 + z.b * 11) % 13) as f64 - 6.0) / 3.0);
        let base = projection(&target);
        let (_, full) = solve_over(&base, &g, Cone::FullConv, &Settings::default()).unwrap();
        for algorithm in [Algorithm::SubCones, Algorithm::SuperCones] {
            let s = RefineSettings {
                algorithm,
                ..Default::default()
            };
            let r = run(&base, &g, &s).unwrap();
            assert!(
                (r.objective() - full.objective).abs() <= 1e-7 * (1.0 + full.objective.abs()),
                "{algorithm:?}: {} vs {}",
                r.objective(),
                full.objective
            );
            assert!(final_defect(&g, &r, ConeFamily::Conv) < 1e-6);
            // the stencils can only grow, so the trace is monotone in that column
            assert!(r.iterations.windows(2).all(|w| w[0].stencil_count < w[1].stencil_count));
        }
    }

    #[test]
    fn dconv_loops_agree_with_direct_solve() {
        let g = GridDomain::lattice_rect(5, 5).unwrap();
        let target = g.sample_lattice(|z| (((z.a * 17 + z.b * 29) % 11) as f64 - 5.0) / 2.0);
        let mut base = projection(&target);
        base.bounds = vec![VarBound::Free; g.len()];
        let (_, full) = solve_over(&base, &g, Cone::DConvX, &Settings::default()).unwrap();
        for algorithm in [Algorithm::SubCones, Algorithm::SuperCones] {
            let s = RefineSettings {
                algorithm,
                cone: ConeFamily::DConv,
                ..Default::default()
            };
            let r = run(&base, &g, &s).unwrap();
            assert!(
                (r.objective() - full.objective).abs() <= 1e-7 * (1.0 + full.objective.abs()),
                "{algorithm:?}: {} vs {}",
                r.objective(),
                full.objective
            );
            assert!(final_defect(&g, &r, ConeFamily::DConv) < 1e-6);
        }
    }

    #[test]
    fn trace_has_header_and_rows() {
        let g = GridDomain::lattice_rect(4, 4).unwrap();
        let r = run(&projection(&g.q_values()), &g, &RefineSettings::default()).unwrap();
        let csv = r.trace_csv(Some(3));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# schema=1");
        assert_eq!(lines[1], "# seed=3");
        assert_eq!(lines.len(), 3 + r.iterations.len());
    }
}
