use cvxgrid_ipm::{
    active_bounds, active_rows, read_program, solve, solve_warm, ConvexProgram, Settings, Status, VarBound,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

#[test]
fn projection_onto_orthant() {
    let b = [1.0, -2.0, 3.0];
    let mut p = ConvexProgram::new(3);
    for (j, &bj) in b.iter().enumerate() {
        p.hessian.add(j, j, 1.0);
        p.linear[j] = -bj;
        p.bounds[j] = VarBound::Lower(0.0);
    }
    let sol = solve(&p, &Settings::default()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    for (got, want) in sol.primal.iter().zip([1.0, 0.0, 3.0]) {
        assert!(close(*got, want, 1e-7), "{:?}", sol.primal);
    }
    for (got, want) in sol.bound_duals.iter().zip([0.0, 2.0, 0.0]) {
        assert!(close(*got, want, 1e-7), "{:?}", sol.bound_duals);
    }
    assert_eq!(active_bounds(&sol, 1e-6), vec![1]);
    assert!(active_rows(&sol, 1e-6).is_empty());
}

#[test]
fn single_row_qp() {
    let mut p = ConvexProgram::new(2);
    p.hessian.add(0, 0, 1.0);
    p.hessian.add(1, 1, 1.0);
    p.linear[0] = -1.0;
    p.rows.push_row([(1, 1.0), (0, -1.0)]);
    let sol = solve(&p, &Settings::default()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!(close(sol.primal[0], 0.5, 1e-7) && close(sol.primal[1], 0.5, 1e-7));
    assert!(close(sol.duals[0], 0.5, 1e-7));
    assert_eq!(active_rows(&sol, 1e-6), vec![0]);

    // exhaustive grid search on the feasible half-plane
    let mut best = f64::INFINITY;
    for i in 0..=200 {
        for j in 0..=200 {
            let u = [i as f64 / 100.0 - 1.0, j as f64 / 100.0 - 1.0];
            if u[1] >= u[0] {
                best = best.min(p.objective(&u));
            }
        }
    }
    assert!(close(sol.objective, best, 1e-9));
}

#[test]
fn strictly_interior_optimum_has_no_active_rows() {
    let mut p = ConvexProgram::new(2);
    p.hessian.add(0, 0, 1.0);
    p.hessian.add(1, 1, 1.0);
    p.linear[0] = -1.0;
    p.rows.push_row([(0, 1.0), (1, 1.0)]);
    let sol = solve(&p, &Settings::default()).unwrap();
    assert!(active_rows(&sol, 1e-6).is_empty());
}

#[test]
fn lp_with_constant_through_fixed_variable() {
    let mut p = ConvexProgram::new(1);
    p.linear[0] = -1.0;
    let t = p.add_fixed_variable(1.0);
    p.rows.push_row([(t, 1.0), (0, -1.0)]);
    let sol = solve(&p, &Settings::default()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!(close(sol.primal[0], 1.0, 1e-7));
    assert!(close(sol.duals[0], 1.0, 1e-7));
    assert_eq!(sol.primal[t], 1.0);
}

#[test]
fn infeasible_program_detected() {
    // u ≥ 1 and −u ≥ 0
    let mut p = ConvexProgram::new(1);
    p.linear[0] = 1.0;
    let t = p.add_fixed_variable(1.0);
    p.rows.push_row([(0, 1.0), (t, -1.0)]);
    p.rows.push_row([(0, -1.0)]);
    let sol = solve(&p, &Settings::default()).unwrap();
    assert_eq!(sol.status, Status::Infeasible);
}

#[test]
fn degenerate_lp_duals_sum_correctly() {
    // min −u₁−u₂ over u ≥ 0, u₁ ≤ 1, u₂ ≤ 1, u₁+u₂ ≤ 2: the vertex (1,1) has three
    // binding rows, so the individual multipliers are not unique.
    let mut p = ConvexProgram::new(2);
    p.linear = vec![-1.0, -1.0];
    p.bounds = vec![VarBound::Lower(0.0); 2];
    let t = p.add_fixed_variable(1.0);
    p.rows.push_row([(t, 1.0), (0, -1.0)]);
    p.rows.push_row([(t, 1.0), (1, -1.0)]);
    p.rows.push_row([(t, 2.0), (0, -1.0), (1, -1.0)]);
    let sol = solve(&p, &Settings::default()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!(close(sol.primal[0], 1.0, 1e-7) && close(sol.primal[1], 1.0, 1e-7));

    // enumerate vertices of the feasible polygon to confirm the optimum value
    let verts = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)];
    let best = verts.iter().map(|&(a, b)| -a - b).fold(f64::INFINITY, f64::min);
    assert!(close(sol.objective, best, 1e-8));
    // stationarity per coordinate: λ₀ + λ₂ = 1 and λ₁ + λ₂ = 1
    let d = &sol.duals;
    assert!(close(d[0] + d[2], 1.0, 1e-6) && close(d[1] + d[2], 1.0, 1e-6));
    assert!(!active_rows(&sol, 1e-6).is_empty());
}

/// Coordinate-wise projected descent on the dual of `min ½xᵀQx + cᵀx, Ax ≥ 0` with Q ≻ 0.
fn dual_reference(
    q: &nalgebra::DMatrix<f64>,
    c: &nalgebra::DVector<f64>,
    a: &nalgebra::DMatrix<f64>,
) -> nalgebra::DVector<f64> {
    let qinv = q.clone().cholesky().unwrap().inverse();
    // x(λ) = Q⁻¹(Aᵀλ − c); the dual gradient in λ_i is −a_i·x
    let m = a.nrows();
    let b = &qinv * a.transpose(); // column i = Q⁻¹ a_i
    let mut x = -(&qinv * c);
    let mut lam = vec![0.0; m];
    for _ in 0..1_000_000 {
        let mut change = 0.0_f64;
        for i in 0..m {
            let d = (a.row(i) * b.column(i))[(0, 0)];
            let ax = (a.row(i) * &x)[(0, 0)];
            let next = (lam[i] - ax / d).max(0.0);
            let step = next - lam[i];
            if step != 0.0 {
                x += b.column(i) * step;
                lam[i] = next;
                change = change.max(step.abs());
            }
        }
        if change < 1e-15 {
            break;
        }
    }
    x
}

#[test]
fn random_psd_programs_match_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..100 {
        let n = rng.random_range(2..=50);
        // m ≤ n keeps the reference dual well conditioned
        let m = rng.random_range(1..=n);
        let b = nalgebra::DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let q = &b * b.transpose() + nalgebra::DMatrix::<f64>::identity(n, n) * 0.5;
        let c = nalgebra::DVector::<f64>::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let mut a = nalgebra::DMatrix::<f64>::zeros(m, n);
        for i in 0..m {
            for _ in 0..3 {
                let j = rng.random_range(0..n);
                a[(i, j)] = rng.random_range(-1.0..1.0);
            }
            if a.row(i).amax() == 0.0 {
                a[(i, 0)] = 1.0;
            }
        }
        let mut p = ConvexProgram::new(n);
        for i in 0..n {
            for j in i..n {
                p.hessian.add(i, j, q[(i, j)]);
            }
            p.linear[i] = c[i];
        }
        for i in 0..m {
            p.rows
                .push_row((0..n).filter(|&j| a[(i, j)] != 0.0).map(|j| (j, a[(i, j)])));
        }
        let sol = solve(&p, &Settings::default()).unwrap();
        assert_eq!(sol.status, Status::Optimal, "trial {trial}");

        let xref = dual_reference(&q, &c, &a);
        let fref = p.objective(xref.as_slice());
        let viol = (&a * &xref).iter().fold(0.0_f64, |m, v| m.max(-v));
        assert!(
            close(sol.objective, fref, 1e-6),
            "trial {trial}: {} vs {} (ref violation {viol}, ipm violation {})",
            sol.objective,
            fref,
            p.primal_violation(&sol.primal)
        );

        // weak/strong duality on the solver's own pair
        let x = nalgebra::DVector::from_column_slice(&sol.primal);
        let lam = nalgebra::DVector::from_column_slice(&sol.duals);
        let dual_obj = -0.5 * (x.transpose() * &q * &x)[(0, 0)];
        let primal_obj = sol.objective;
        assert!(
            (primal_obj - dual_obj).abs() <= 1e-7 * (1.0 + primal_obj.abs()),
            "trial {trial}"
        );
        // Aᵀλ reproduces the gradient
        let r = (&q * &x + &c - a.transpose() * &lam).amax();
        assert!(r <= 1e-7 * (1.0 + c.amax()), "trial {trial}: {r}");
        assert!(lam.iter().all(|&l| l >= -1e-9));
    }
}

#[test]
fn warm_start_keeps_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 30;
    let mut p = ConvexProgram::new(n);
    for i in 0..n {
        p.hessian.add(i, i, 1.0 + rng.random_range(0.0..1.0));
        p.linear[i] = rng.random_range(-1.0..1.0);
        if i + 1 < n {
            p.rows.push_row([(i + 1, 1.0), (i, -1.0)]);
        }
    }
    let cold = solve(&p, &Settings::default()).unwrap();
    let warm = solve_warm(&p, &Settings::default(), &cold.primal).unwrap();
    assert_eq!(warm.status, Status::Optimal);
    for (a, b) in cold.primal.iter().zip(&warm.primal) {
        assert!((a - b).abs() < 1e-7);
    }
}

#[test]
fn non_psd_is_rejected() {
    let mut p = ConvexProgram::new(2);
    p.hessian.add(0, 0, 1.0);
    p.hessian.add(0, 1, 2.0);
    p.hessian.add(1, 1, 1.0);
    assert!(solve(&p, &Settings::default()).is_err());
}

#[test]
fn zero_row_is_rejected() {
    let mut p = ConvexProgram::new(2);
    p.rows.push_row([(0, 1.0), (0, -1.0)]);
    assert!(p.validate().is_err());
}

#[test]
fn program_file_round_trip() {
    let dir = std::env::temp_dir().join(format!("cvxgrid-ipm-io-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let mut p = ConvexProgram::new(2);
    p.hessian.add(0, 0, 1.0);
    p.hessian.add(1, 1, 2.0);
    p.linear = vec![-1.0, 0.5];
    p.bounds[1] = VarBound::Lower(0.0);
    let t = p.add_fixed_variable(1.0);
    p.rows.push_row([(0, 1.0), (1, -1.0), (t, 0.25)]);
    let base = dir.join("prog");
    cvxgrid_ipm::write_program(&p, &base).unwrap();
    let back = read_program(&base).unwrap();
    assert_eq!(p, back);
    std::fs::remove_dir_all(&dir).ok();
}
