use proptest::prelude::*;

use cvxgrid::constraints::{convexity_defect, is_member, Cone, DefectMode};
use cvxgrid::grid::GridDomain;
use cvxgrid::monopolist::{default_refine, MonopolistInstance};
use cvxgrid::refine::{run, solve_over, Algorithm, ConeFamily, RefineSettings};
use cvxgrid::stencils::StencilFamily;
use cvxgrid_ipm::ConvexProgram;

/// `min ½‖u − f‖²` over the grid.
fn projection(f: &[f64]) -> ConvexProgram {
    let mut p = ConvexProgram::new(f.len());
    for (i, &fi) in f.iter().enumerate() {
        p.hessian.add(i, i, 1.0);
        p.linear[i] = -fi;
    }
    p
}

fn settings(algorithm: Algorithm, cone: ConeFamily) -> RefineSettings {
    RefineSettings {
        algorithm,
        ..default_refine(cone)
    }
}

fn check_run(grid: &GridDomain, f: &[f64], algorithm: Algorithm) -> Result<(), TestCaseError> {
    let base = projection(f);
    let r = run(&base, grid, &settings(algorithm, ConeFamily::Conv)).unwrap();
    prop_assert!(r.converged);
    let objs: Vec<f64> = r.iterations.iter().map(|it| it.objective).collect();
    let tol = 1e-7 * (1.0 + objs[0].abs());
    for w in objs.windows(2) {
        // super-cones tighten (objective rises), sub-cones widen (objective falls)
        match algorithm {
            Algorithm::SuperCones => prop_assert!(w[1] >= w[0] - tol, "{objs:?}"),
            Algorithm::SubCones => prop_assert!(w[1] <= w[0] + tol, "{objs:?}"),
        }
    }
    let scale = r.values.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
    prop_assert!(convexity_defect(grid, &r.values, DefectMode::Full) <= 1e-6 * scale);
    r.stencils.validate(grid).unwrap();

    let (_, direct) = solve_over(&base, grid, Cone::FullConv, &Default::default()).unwrap();
    prop_assert!((r.objective() - direct.objective).abs() <= 1e-6 * (1.0 + direct.objective.abs()));
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn super_cone_loop(w in 4_usize..8, h in 4_usize..8, noise in prop::collection::vec(-1.0..1.0_f64, 64)) {
        let grid = GridDomain::lattice_rect(w, h).unwrap();
        let f: Vec<f64> = grid.q_values().iter().zip(&noise).map(|(q, e)| 0.3 * q + 2.0 * e).collect();
        check_run(&grid, &f, Algorithm::SuperCones)?;
    }

    #[test]
    fn sub_cone_loop(w in 4_usize..8, h in 4_usize..8, noise in prop::collection::vec(-1.0..1.0_f64, 64)) {
        let grid = GridDomain::lattice_rect(w, h).unwrap();
        let f: Vec<f64> = grid.q_values().iter().zip(&noise).map(|(q, e)| 0.3 * q + 2.0 * e).collect();
        check_run(&grid, &f, Algorithm::SubCones)?;
    }
}

#[test]
fn final_stencils_hold_the_solution() {
    let inst = MonopolistInstance::classical(0.0);
    let grid = inst.grid(14).unwrap();
    let base = inst.discretize(&grid).unwrap();
    for algorithm in [Algorithm::SuperCones, Algorithm::SubCones] {
        let r = run(&base, &grid, &settings(algorithm, ConeFamily::Conv)).unwrap();
        assert!(is_member(&grid, &r.values, Cone::ConvV(&r.stencils), 1e-7).unwrap());
        assert!(StencilFamily::minimal(&grid).is_subset(&r.stencils));
    }
}

#[test]
fn dconv_loop_reaches_directional_convexity() {
    let inst = MonopolistInstance::classical(0.0);
    let grid = inst.grid(14).unwrap();
    let base = inst.discretize(&grid).unwrap();
    let r = run(&base, &grid, &settings(Algorithm::SuperCones, ConeFamily::DConv)).unwrap();
    let scale = r.values.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
    assert!(convexity_defect(&grid, &r.values, DefectMode::Directional) <= 1e-6 * scale);
    let (_, direct) = solve_over(&base, &grid, Cone::DConvX, &Default::default()).unwrap();
    assert!((r.objective() - direct.objective).abs() <= 1e-6 * direct.objective.abs());
}

#[test]
fn trace_rows_follow_iterations() {
    let inst = MonopolistInstance::classical(0.0);
    let grid = inst.grid(10).unwrap();
    let base = inst.discretize(&grid).unwrap();
    let r = run(&base, &grid, &default_refine(ConeFamily::Conv)).unwrap();
    let csv = r.trace_csv(Some(7));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "# schema=1");
    assert_eq!(lines[1], "# seed=7");
    assert_eq!(lines.len(), 3 + r.iterations.len());
    let last = lines.last().unwrap();
    assert_eq!(last.split(',').nth(4), Some("0"));
}
