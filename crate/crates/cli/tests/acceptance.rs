//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if a criterion fails that is not a documented known failure.

use std::f64::consts::FRAC_PI_4;
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use cvxgrid::constraints::{
    assemble, convexity_defect_domain, dconv_counterexample, form_p, is_member, Cone, DefectMode, FormKind,
};
use cvxgrid::grid::GridDomain;
use cvxgrid::hull_oracle::is_extensible;
use cvxgrid::lattice::{v, IVec};
use cvxgrid::monopolist::{
    baseline_constraint_count, default_refine, solve_method, Method, MonopolistInstance, Thresholds,
};
use cvxgrid::polygon::{clip_halfplane, polygon_area, P2};
use cvxgrid::refine::{solve_over, Algorithm, ConeFamily, RefineSettings};
use cvxgrid::stencils::StencilFamily;
use cvxgrid_cli::experiments::{fit_growth, flip_experiment, sample_rng, stencil_stats, summarize};
use cvxgrid_cli::functions::FunctionKind;
use cvxgrid_ipm::{solve, ConvexProgram, Settings, VarBound};

const SEED: u64 = 20_260_914;

struct Check {
    name: &'static str,
    pass: bool,
    known_failure: bool,
    detail: String,
    seconds: f64,
}

fn run(name: &'static str, budget: f64, f: impl FnOnce() -> (bool, String)) -> Check {
    let clock = Instant::now();
    let (pass, mut detail) = f();
    let seconds = clock.elapsed().as_secs_f64();
    let in_budget = seconds <= budget;
    if !in_budget {
        detail.push_str(&format!("; over the {budget:.0}s budget"));
    }
    Check {
        name,
        pass: pass && in_budget,
        known_failure: false,
        detail,
        seconds,
    }
}

/// `max` of random planes plus a positive definite quadratic, in lattice coordinates.
fn random_convex(rng: &mut ChaCha8Rng, grid: &GridDomain, curvature: f64) -> Vec<f64> {
    let k = rng.random_range(1..5);
    let planes: Vec<[f64; 3]> = (0..k)
        .map(|_| {
            [
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-3.0..3.0),
            ]
        })
        .collect();
    let (l1, l2) = (rng.random_range(0.0..curvature), rng.random_range(0.0..curvature));
    let (s, c) = rng.random_range(0.0..std::f64::consts::PI).sin_cos();
    let (a, b, d) = (l1 * c * c + l2 * s * s, (l1 - l2) * c * s, l1 * s * s + l2 * c * c);
    grid.sample_lattice(|z| {
        let [x, y] = z.as_f64();
        let m = planes
            .iter()
            .map(|p| p[0] * x + p[1] * y + p[2])
            .fold(f64::NEG_INFINITY, f64::max);
        m + 0.5 * (a * x * x + 2.0 * b * x * y + d * y * y)
    })
}

fn oracle_equivalence() -> (bool, String) {
    let mut rng = sample_rng(SEED, 1);
    let (mut disagreements, mut convex, mut total) = (0, 0, 0);
    for _ in 0..600 {
        let w = rng.random_range(3..=5);
        let h = rng.random_range(3..=5);
        let grid = GridDomain::lattice_rect(w, h).unwrap();
        let u: Vec<f64> = if rng.random_bool(0.6) {
            // rounding a convex quadratic leaves it convex only sometimes
            let k = rng.random_range(0.3..2.0);
            let (p, q) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let mut u = grid.sample_lattice(|z| {
                let [x, y] = z.as_f64();
                (k * 0.5 * (x * x + y * y) + p * x + q * y).round()
            });
            if rng.random_bool(0.3) {
                let i = rng.random_range(0..u.len());
                u[i] += if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            }
            u
        } else {
            (0..grid.len()).map(|_| rng.random_range(-3..=3) as f64).collect()
        };
        let a = is_member(&grid, &u, Cone::FullConv, 1e-12).unwrap();
        let b = is_extensible(&grid, &u, 1e-12).unwrap();
        total += 1;
        convex += a as usize;
        disagreements += (a != b) as usize;
    }
    (
        disagreements == 0,
        format!("{total} functions, {convex} convex, {disagreements} disagreements"),
    )
}

fn minimality() -> (bool, String) {
    let grid = GridDomain::lattice_rect(4, 4).unwrap();
    let sys = assemble(&grid, Cone::FullConv).unwrap();
    let n = grid.len();
    let mut witnessed = 0;
    let mut missing = Vec::new();
    for r in 0..sys.len() {
        // min ½‖u‖² s.t. every other row ≥ 0 and row r ≤ −1
        let mut p = ConvexProgram::new(n);
        for i in 0..n {
            p.hessian.add(i, i, 1.0);
        }
        let one = p.add_fixed_variable(1.0);
        p.bounds[one] = VarBound::Fixed(1.0);
        for (k, row) in sys.rows.iter().enumerate() {
            let terms = row.terms.iter().map(|&(i, w)| (i as usize, w as f64));
            if k == r {
                p.rows.push_row(terms.map(|(i, w)| (i, -w)).chain([(one, -1.0)]));
            } else {
                p.rows.push_row(terms);
            }
        }
        let ok = solve(&p, &Settings::default())
            .ok()
            .filter(|s| s.status.is_usable())
            .is_some_and(|s| {
                let u = &s.primal[..n];
                sys.rows.iter().enumerate().all(|(k, row)| {
                    let val = row.eval(u);
                    if k == r {
                        val <= -1.0 + 1e-6
                    } else {
                        val >= -1e-7
                    }
                })
            });
        if ok {
            witnessed += 1;
        } else {
            missing.push(r);
        }
    }
    (
        missing.is_empty(),
        format!("{witnessed}/{} rows have a witness violating only that row", sys.len()),
    )
}

fn random_family(rng: &mut ChaCha8Rng, grid: &GridDomain) -> StencilFamily {
    let u = random_convex(rng, grid, 0.3);
    let fam = StencilFamily::minimal_for(grid, &u).unwrap();
    let extra: Vec<(usize, IVec)> = (0..rng.random_range(0..20))
        .filter_map(|_| {
            let x = rng.random_range(0..grid.len());
            let vmax = grid.max_stencil(x);
            (!vmax.is_empty()).then(|| (x, vmax[rng.random_range(0..vmax.len())]))
        })
        .collect();
    fam.refine(grid, &extra).unwrap()
}

fn hierarchy() -> (bool, String) {
    let mut rng = sample_rng(SEED, 3);
    let grid = GridDomain::lattice_rect(6, 6).unwrap();
    let (mut failures, mut both, mut one) = (0, 0, 0);
    for _ in 0..50 {
        let a = random_family(&mut rng, &grid);
        let b = random_family(&mut rng, &grid);
        let w = a.intersect(&b).unwrap();
        if w.validate(&grid).is_err() {
            failures += 1;
            continue;
        }
        for _ in 0..50 {
            let mut u = random_convex(&mut rng, &grid, 1.0);
            let noise = [0.0, 0.05, 0.3][rng.random_range(0..3)];
            for x in &mut u {
                *x += noise * rng.random_range(-1.0..1.0);
            }
            let in_a = is_member(&grid, &u, Cone::ConvV(&a), 1e-12).unwrap();
            let in_b = is_member(&grid, &u, Cone::ConvV(&b), 1e-12).unwrap();
            let in_w = is_member(&grid, &u, Cone::ConvV(&w), 1e-12).unwrap();
            both += (in_a && in_b) as usize;
            one += (in_a != in_b) as usize;
            failures += ((in_a && in_b) != in_w) as usize;
        }
    }
    (
        failures == 0,
        format!("2500 memberships, {both} in both, {one} in exactly one, {failures} failures"),
    )
}

fn minimal_fixed_point() -> (bool, String) {
    let mut rng = sample_rng(SEED, 4);
    let grid = GridDomain::lattice_rect(8, 8).unwrap();
    let mut bad = 0;
    let mut sizes = 0;
    for _ in 0..100 {
        let u = random_convex(&mut rng, &grid, 0.5);
        let tol = 1e-9 * u.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        let fam = StencilFamily::minimal_for(&grid, &u).unwrap();
        sizes += fam.cardinality();
        let member = is_member(&grid, &u, Cone::ConvV(&fam), 1e-9).unwrap();
        let valid = fam.validate(&grid).is_ok();
        // no refinement candidate is violated, so refining would add nothing
        let fixed = (0..grid.len()).all(|x| {
            fam.refinement_candidates(&grid, x).into_iter().all(|e| {
                form_p(grid.point(x), e)
                    .unwrap()
                    .resolve(&grid)
                    .is_some_and(|row| row.eval(&u) >= -tol)
            })
        });
        let hull = is_extensible(&grid, &u, 1e-9).unwrap();
        bad += !(member && valid && fixed && hull) as usize;
    }
    (
        bad == 0,
        format!("100 functions, mean #V {:.1}, {bad} failures", sizes as f64 / 100.0),
    )
}

fn worst_case() -> (bool, String) {
    let mut total = 0;
    let mut bad = 0;
    let mut worst_ratio = 0.0_f64;
    let mut worst_delaunay = 0.0_f64;
    for (k, kind) in [FunctionKind::Ridge, FunctionKind::Quadratic, FunctionKind::MaxAffine]
        .into_iter()
        .enumerate()
    {
        let samples = stencil_stats(kind, &[5.0, 10.0, 20.0], 16, SEED + k as u64).unwrap();
        for s in &samples {
            total += 1;
            bad += !s.within_bounds() as usize;
            worst_ratio = worst_ratio.max(s.cardinality as f64 / s.worst_case_bound);
            worst_delaunay = worst_delaunay.max(s.delaunay_cardinality as f64 / (6.0 * (s.points as f64 - 2.0)));
        }
    }
    (
        bad == 0,
        format!(
            "{total} samples, max #V/bound {worst_ratio:.4}, max #V_T/6(N-2) {worst_delaunay:.3}, {bad} violations"
        ),
    )
}

fn average_growth() -> (bool, String) {
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, kind) in [FunctionKind::Q, FunctionKind::Quadratic].into_iter().enumerate() {
        let samples = stencil_stats(kind, &[5.0, 10.0, 20.0, 40.0], 64, SEED + 10 + k as u64).unwrap();
        let summary = summarize(&samples);
        let fit = fit_growth(&summary).unwrap();
        pass &= (1.0..=1.3).contains(&fit.exponent);
        let ratios: Vec<String> = summary.iter().map(|r| format!("{:.2}", r.mean_ratio)).collect();
        parts.push(format!(
            "{kind}: exponent {:.3}, #V/N [{}]",
            fit.exponent,
            ratios.join(" ")
        ));
    }
    (pass, parts.join("; "))
}

fn flip_bound() -> (bool, String) {
    let mut total = 0;
    let mut bad = 0;
    let mut max_ratio = 0.0_f64;
    for (k, kind) in [FunctionKind::Quadratic, FunctionKind::MaxAffine]
        .into_iter()
        .enumerate()
    {
        let samples = flip_experiment(kind, &[10, 20, 30], 64, SEED + 20 + k as u64).unwrap();
        for s in &samples {
            total += 1;
            bad += !s.within_bound() as usize;
            max_ratio = max_ratio.max(s.flips as f64 / s.bound as f64);
        }
    }
    (
        bad == 0,
        format!("{total} runs, max flips/#(V_T ∪ V_u) {max_ratio:.3}, {bad} violations"),
    )
}

/// `max{0, x−a, y−a, x+y−b}` on the unit square.
struct BundleMenu {
    a: f64,
    b: f64,
}

impl BundleMenu {
    fn planes(&self) -> [[f64; 3]; 4] {
        [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, -self.a],
            [0.0, 1.0, -self.a],
            [1.0, 1.0, -self.b],
        ]
    }

    fn eval(&self, z: P2) -> f64 {
        self.planes()
            .iter()
            .map(|p| p[0] * z[0] + p[1] * z[1] + p[2])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Each plane's cell of the square, priced at minus its intercept.
    fn profit(&self) -> f64 {
        let planes = self.planes();
        planes
            .iter()
            .map(|p| {
                let mut cell: Vec<P2> = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
                for q in &planes {
                    cell = clip_halfplane(&cell, |z| (p[0] - q[0]) * z[0] + (p[1] - q[1]) * z[1] + p[2] - q[2]);
                }
                -p[2] * polygon_area(&cell)
            })
            .sum()
    }
}

struct BundleResult {
    linf: [f64; 2],
    profit_gap: [f64; 2],
    snap: f64,
    profit: f64,
    reference: [f64; 2],
}

fn bundles() -> BundleResult {
    let inst = MonopolistInstance::bundles();
    let grid = inst.grid(100).unwrap();
    let r = solve_method(&inst, &grid, Method::AdaptiveConv, &default_refine(ConeFamily::Conv)).unwrap();
    let report = inst.economic_report(&grid, &r.values, &Thresholds::default()).unwrap();
    let menus = [
        BundleMenu {
            a: 2.0 / 3.0,
            b: (4.0 - 3f64.sqrt()) / 2.0,
        },
        BundleMenu {
            a: 2.0 / 3.0,
            b: (4.0 - 2f64.sqrt()) / 3.0,
        },
    ];
    let linf = menus.each_ref().map(|m| {
        (0..grid.len())
            .map(|i| (report.envelope[i] - m.eval(grid.embed(i))).abs())
            .fold(0.0, f64::max)
    });
    let reference = menus.each_ref().map(|m| m.profit());
    let snap = report
        .sales
        .iter()
        .filter(|s| s.mass > 0.0)
        .map(|s| {
            s.gradient
                .iter()
                .map(|g| g.abs().min((g - 1.0).abs()))
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    BundleResult {
        linf,
        profit_gap: reference.map(|p| (p - report.profit.value).abs()),
        snap,
        profit: report.profit.value,
        reference,
    }
}

fn bundle_check(b: &BundleResult, k: usize, label: &str) -> (bool, String) {
    let pass = b.linf[k] <= 2e-2 && b.profit_gap[k] <= 1e-3 && b.snap <= 0.02;
    (
        pass,
        format!(
            "{label}: L∞ {:.3e}, profit {:.6} vs reference {:.6}, max gradient distance to {{0,1}}² {:.1e}",
            b.linf[k], b.profit, b.reference[k], b.snap
        ),
    )
}

fn comparison() -> (bool, String) {
    let inst = MonopolistInstance::classical(0.0);
    let grid = inst.grid(50).unwrap();
    let settings = default_refine(ConeFamily::Conv);
    let conv = solve_method(&inst, &grid, Method::AdaptiveConv, &settings).unwrap();
    let dconv = solve_method(&inst, &grid, Method::AdaptiveDConv, &settings).unwrap();
    let of2 = solve_method(&inst, &grid, Method::Of(2), &settings).unwrap();
    let clrm = baseline_constraint_count(&grid, Method::Clrm).unwrap().unwrap();
    let scale = |u: &[f64]| u.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
    let d_conv = convexity_defect_domain(&grid, &conv.values, DefectMode::Full);
    let d_dconv = convexity_defect_domain(&grid, &dconv.values, DefectMode::Directional);
    let d_of2 = convexity_defect_domain(&grid, &of2.values, DefectMode::Full);
    let pass = (17_000..=31_000).contains(&conv.constraint_count)
        && (7_000..=13_000).contains(&dconv.constraint_count)
        && (1_400_000..=2_100_000).contains(&clrm)
        && d_conv <= 1e-6 * scale(&conv.values)
        && d_dconv <= 1e-6 * scale(&dconv.values)
        && d_of2 >= 1e-2
        && conv.refinement_steps <= 10
        && dconv.refinement_steps <= 10;
    (
        pass,
        format!(
            "constraints conv {} / dconv {} / clrm {clrm}; defects conv {d_conv:.1e}, dconv (directional) {d_dconv:.1e}, of2 {d_of2:.3}; steps {} / {}",
            conv.constraint_count, dconv.constraint_count, conv.refinement_steps, dconv.refinement_steps
        ),
    )
}

fn algorithm_equivalence() -> (bool, String) {
    let inst = MonopolistInstance::classical(0.0);
    let mut worst = 0.0_f64;
    for n in [8, 12, 16, 20] {
        let grid = inst.grid(n).unwrap();
        let base = inst.discretize(&grid).unwrap();
        let (_, direct) = solve_over(&base, &grid, Cone::FullConv, &Settings::default()).unwrap();
        for algorithm in [Algorithm::SubCones, Algorithm::SuperCones] {
            let s = RefineSettings {
                algorithm,
                ..default_refine(ConeFamily::Conv)
            };
            let r = cvxgrid::refine::run(&base, &grid, &s).unwrap();
            worst = worst.max((r.objective() - direct.objective).abs() / direct.objective.abs());
        }
    }
    (worst <= 1e-6, format!("n ≤ 20, max relative objective gap {worst:.1e}"))
}

fn qualitative() -> (bool, String) {
    let counts = [0.0, FRAC_PI_4].map(|theta| {
        let inst = MonopolistInstance::classical(theta);
        let grid = inst.grid(50).unwrap();
        let r = solve_method(&inst, &grid, Method::AdaptiveConv, &default_refine(ConeFamily::Conv)).unwrap();
        let rep = inst.economic_report(&grid, &r.values, &Thresholds::default()).unwrap();
        (
            rep.exclusion.iter().filter(|&&b| b).count(),
            rep.bunching.iter().filter(|&&b| b).count(),
        )
    });
    let pass = counts[0].0 > 0 && counts[0].1 > 0 && counts[1].0 == 0;
    (
        pass,
        format!(
            "θ=0: {} excluded, {} bunched; θ=π/4: {} excluded, {} bunched",
            counts[0].0, counts[0].1, counts[1].0, counts[1].1
        ),
    )
}

fn directional_counterexample() -> (bool, String) {
    let pts: Vec<IVec> = (-4..=4).flat_map(|a| (-4..=4).map(move |b| v(a, b))).collect();
    let grid = GridDomain::from_lattice_points(pts).unwrap();
    let u = grid.sample_lattice(dconv_counterexample);
    let in_dconv = is_member(&grid, &u, Cone::DConvX, 0.0).unwrap();
    let in_conv = is_member(&grid, &u, Cone::FullConv, 0.0).unwrap();
    let sys = assemble(&grid, Cone::FullConv).unwrap();
    let s_ok = sys
        .rows
        .iter()
        .filter(|r| r.kind == FormKind::S)
        .all(|r| r.eval(&u) >= 1.0);
    let exceptions: Vec<(IVec, IVec, f64)> = sys
        .rows
        .iter()
        .filter(|r| r.kind == FormKind::T && r.eval(&u) < 2.0)
        .map(|r| (grid.point(r.base as usize), r.offset, r.eval(&u)))
        .collect();
    let exact = exceptions == vec![(v(0, 0), v(1, 1), -1.0)];

    // coarse restriction of directionally convex projections
    let mut rng = sample_rng(SEED, 12);
    let fine = GridDomain::lattice_rect(9, 9).unwrap();
    let coarse_pts: Vec<usize> = (0..fine.len())
        .filter(|&i| {
            let z = fine.point(i);
            z.a % 2 == 0 && z.b % 2 == 0
        })
        .collect();
    let coarse = GridDomain::from_lattice_points(
        coarse_pts
            .iter()
            .map(|&i| {
                let z = fine.point(i);
                v(z.a / 2, z.b / 2)
            })
            .collect(),
    )
    .unwrap();
    let (mut failures, mut nonconvex) = (0, 0);
    for k in 0..100 {
        let f: Vec<f64> = (0..fine.len())
            .map(|i| {
                let z = fine.point(i) - v(4, 4);
                let shape = if k % 2 == 0 { dconv_counterexample(z) } else { 0.0 };
                shape + 2.0 * rng.random_range(-1.0..1.0)
            })
            .collect();
        let mut p = ConvexProgram::new(fine.len());
        for (i, &fi) in f.iter().enumerate() {
            p.hessian.add(i, i, 1.0);
            p.linear[i] = -fi;
        }
        let (_, sol) = solve_over(&p, &fine, Cone::DConvX, &Settings::default()).unwrap();
        let w = &sol.primal[..fine.len()];
        nonconvex += (convexity_defect_domain(&fine, w, DefectMode::Full) > 1e-6) as usize;
        // coarse points were collected in lattice order, as from_lattice_points sorts them
        let restricted: Vec<f64> = coarse_pts.iter().map(|&i| w[i]).collect();
        failures += !is_member(&coarse, &restricted, Cone::FullConv, 1e-7).unwrap() as usize;
    }
    (
        in_dconv && !in_conv && s_ok && exact && failures == 0,
        format!(
            "counterexample: in DConv {in_dconv}, in Conv {in_conv}, T exceptions {exceptions:?}; 100 projections ({nonconvex} not convex on X), {failures} coarse failures"
        ),
    )
}

fn main() -> ExitCode {
    let mut checks = vec![
        run("oracle equivalence", 60.0, oracle_equivalence),
        run("minimality of the full characterization", 120.0, minimality),
        run("hierarchy under intersection", f64::INFINITY, hierarchy),
        run("minimal stencils are fixed points", f64::INFINITY, minimal_fixed_point),
        run("worst-case cardinality", f64::INFINITY, worst_case),
        run("average cardinality growth", 600.0, average_growth),
        run("flip bound", f64::INFINITY, flip_bound),
    ];

    let clock = Instant::now();
    let b = bundles();
    let seconds = clock.elapsed().as_secs_f64();
    for (k, name, label, known) in [
        (0, "bundles optimum (stated bundle price)", "b = (4−√3)/2", true),
        (1, "bundles optimum (corrected bundle price)", "b = (4−√2)/3", false),
    ] {
        let (pass, detail) = bundle_check(&b, k, label);
        let pass = pass && seconds <= 900.0;
        checks.push(Check {
            name,
            pass,
            known_failure: known && !pass,
            detail,
            seconds,
        });
    }

    checks.push(run("classical comparison at n=50", f64::INFINITY, comparison));
    checks.push(run("algorithm equivalence", f64::INFINITY, algorithm_equivalence));
    checks.push(run("qualitative economics", f64::INFINITY, qualitative));
    checks.push(run(
        "directional convexity counterexample",
        f64::INFINITY,
        directional_counterexample,
    ));

    let mut unexpected = 0;
    for c in &checks {
        let tag = match (c.pass, c.known_failure) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => {
                unexpected += 1;
                "FAIL"
            }
        };
        println!("{tag} {} [{:.1}s]: {}", c.name, c.seconds, c.detail);
    }
    let passed = checks.iter().filter(|c| c.pass).count();
    println!(
        "acceptance: {passed}/{} passed, {unexpected} unexpected failures",
        checks.len()
    );
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
