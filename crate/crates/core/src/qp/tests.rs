use super::*;
pub use crate::verify::{brute_force_qp, random_feasible_problem, random_spd};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn scalar_bound() {
    // min 1/2 x^2 s.t. x >= 1  ->  x* = 1
    let problem = QuadProblem {
        hessian: DMatrix::from_element(1, 1, 1.0),
        gradient: DVector::zeros(1),
        eq_matrix: DMatrix::zeros(0, 1),
        eq_rhs: DVector::zeros(0),
        ineq_matrix: DMatrix::from_element(1, 1, -1.0),
        ineq_rhs: DVector::from_element(1, -1.0),
    };
    let sol = solve_qp(&problem).unwrap();
    approx::assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-10);
    assert_eq!(sol.active_set, vec![0]);
}

#[test]
fn unconstrained_matches_linear_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let n = rng.gen_range(1..8);
        let h = random_spd(&mut rng, n);
        let g = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let sol = solve_qp(&QuadProblem::unconstrained(h.clone(), g.clone())).unwrap();
        let expected = h.clone().cholesky().unwrap().solve(&(-&g));
        approx::assert_relative_eq!(sol.x, expected, epsilon = 1e-9);
    }
}

#[test]
fn equality_constrained() {
    // min 1/2 (x^2 + y^2) s.t. x + y = 2 -> (1, 1)
    let problem = QuadProblem {
        hessian: DMatrix::identity(2, 2),
        gradient: DVector::zeros(2),
        eq_matrix: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        eq_rhs: DVector::from_element(1, 2.0),
        ineq_matrix: DMatrix::zeros(0, 2),
        ineq_rhs: DVector::zeros(0),
    };
    let sol = solve_qp(&problem).unwrap();
    approx::assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-10);
    approx::assert_relative_eq!(sol.x[1], 1.0, epsilon = 1e-10);
}

#[test]
fn detects_infeasible() {
    // x <= 0 and x >= 1 cannot both hold.
    let problem = QuadProblem {
        hessian: DMatrix::identity(1, 1),
        gradient: DVector::zeros(1),
        eq_matrix: DMatrix::zeros(0, 1),
        eq_rhs: DVector::zeros(0),
        ineq_matrix: DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
        ineq_rhs: DVector::from_row_slice(&[0.0, -1.0]),
    };
    assert!(matches!(solve_qp(&problem), Err(QpError::Infeasible { .. })));
}

#[test]
fn conflicting_equalities_infeasible() {
    let problem = QuadProblem {
        hessian: DMatrix::identity(1, 1),
        gradient: DVector::zeros(1),
        eq_matrix: DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
        eq_rhs: DVector::from_row_slice(&[0.0, 1.0]),
        ineq_matrix: DMatrix::zeros(0, 1),
        ineq_rhs: DVector::zeros(0),
    };
    assert!(matches!(solve_qp(&problem), Err(QpError::Infeasible { .. })));
}

#[test]
fn dependent_consistent_equalities_ok() {
    // Duplicated equality rows must not break the factorization.
    let problem = QuadProblem {
        hessian: DMatrix::identity(2, 2),
        gradient: DVector::from_row_slice(&[-1.0, 0.0]),
        eq_matrix: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]),
        eq_rhs: DVector::from_row_slice(&[1.0, 2.0]),
        ineq_matrix: DMatrix::zeros(0, 2),
        ineq_rhs: DVector::zeros(0),
    };
    let sol = solve_qp(&problem).unwrap();
    approx::assert_relative_eq!(sol.x[0] + sol.x[1], 1.0, epsilon = 1e-10);
}

#[test]
fn matches_brute_force_on_random_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for trial in 0..100 {
        let n = rng.gen_range(1..=8);
        let mine = rng.gen_range(0..=10);
        let meq = rng.gen_range(0..=n.min(2));
        let problem = random_feasible_problem(&mut rng, n, mine, meq);
        let sol = solve_qp(&problem).unwrap_or_else(|e| panic!("trial {trial}: {e}"));
        let (_, oracle_obj) = brute_force_qp(&problem).expect("oracle found no solution");
        assert!(
            (sol.objective - oracle_obj).abs() <= 1e-6 * (1.0 + oracle_obj.abs()),
            "trial {trial}: objective {} vs oracle {}",
            sol.objective,
            oracle_obj
        );
        assert!(
            kkt_residual(&problem, &sol) < 1e-8 * (1.0 + problem.hessian.abs().max()),
            "trial {trial}: KKT residual too large"
        );
    }
}

#[test]
fn deterministic_solutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let problem = random_feasible_problem(&mut rng, 6, 8, 1);
    let a = solve_qp(&problem).unwrap();
    let b = solve_qp(&problem).unwrap();
    assert_eq!(a.active_set, b.active_set);
    assert_eq!(a.x.as_slice(), b.x.as_slice());
    assert_eq!(a.objective.to_bits(), b.objective.to_bits());
}
