//! Self-contained verification suites: deterministic randomized checks of
//! the solvers and analytic derivatives against independent oracles. Used by
//! the command-line `verify` subcommand and the acceptance tests.

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::foothold::expected_foothold;
use crate::model::{
    kinematics, point_jacobian, GeneralizedState, JointConfig, LinkConfig, ModelConfig,
    RobotModel,
};
use crate::qp::{solve_hierarchy, solve_qp, QuadProblem, TaskLevel, DEFAULT_REGULARIZATION};
use crate::zmp::{evaluate_spline, Edge, SplineCoefficients, SPLINE_COEFFS};

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub failures: Vec<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub const SUITE_NAMES: [&str; 4] = ["qp", "hierarchy", "foothold", "jacobians"];

pub fn run_suite(name: &str, seed: u64) -> Option<SuiteReport> {
    match name {
        "qp" => Some(run_qp_suite(seed)),
        "hierarchy" => Some(run_hierarchy_suite(seed)),
        "foothold" => Some(run_foothold_suite(seed)),
        "jacobians" => Some(run_jacobian_suite(seed)),
        _ => None,
    }
}

pub fn run_all(seed: u64) -> Vec<SuiteReport> {
    SUITE_NAMES
        .iter()
        .map(|name| run_suite(name, seed).unwrap())
        .collect()
}

// ---------------------------------------------------------------------------
// Shared random-problem generators and oracles

pub fn random_spd(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &b * b.transpose() + DMatrix::identity(n, n) * 0.5
}

/// Random QP whose inequalities are anchored at an interior point, so the
/// feasible set is nonempty.
pub fn random_feasible_problem(
    rng: &mut impl Rng,
    n: usize,
    mine: usize,
    meq: usize,
) -> QuadProblem {
    let hessian = random_spd(rng, n);
    let gradient = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
    let anchor = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let ineq_matrix = DMatrix::from_fn(mine, n, |_, _| rng.gen_range(-1.0..1.0));
    let ineq_rhs = DVector::from_fn(mine, |i, _| {
        ineq_matrix.row(i).dot(&anchor.transpose()) + rng.gen_range(0.0..1.0)
    });
    let eq_matrix = DMatrix::from_fn(meq, n, |_, _| rng.gen_range(-1.0..1.0));
    let eq_rhs = DVector::from_fn(meq, |i, _| eq_matrix.row(i).dot(&anchor.transpose()));
    QuadProblem {
        hessian,
        gradient,
        eq_matrix,
        eq_rhs,
        ineq_matrix,
        ineq_rhs,
    }
}

/// Exhaustive active-set enumeration: for every subset of inequalities solve
/// the KKT system and keep the best primal-dual feasible stationary point.
pub fn brute_force_qp(problem: &QuadProblem) -> Option<(DVector<f64>, f64)> {
    let n = problem.n_vars();
    let meq = problem.eq_rhs.len();
    let mine = problem.ineq_rhs.len();
    assert!(mine <= 16, "oracle is exponential in the inequality count");
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << mine) {
        let chosen: Vec<usize> = (0..mine).filter(|i| mask & (1 << i) != 0).collect();
        let m = meq + chosen.len();
        let dim = n + m;
        let mut kkt = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&problem.hessian);
        rhs.rows_mut(0, n).copy_from(&(-&problem.gradient));
        for i in 0..meq {
            for c in 0..n {
                kkt[(n + i, c)] = problem.eq_matrix[(i, c)];
                kkt[(c, n + i)] = problem.eq_matrix[(i, c)];
            }
            rhs[n + i] = problem.eq_rhs[i];
        }
        for (k, &i) in chosen.iter().enumerate() {
            for c in 0..n {
                kkt[(n + meq + k, c)] = problem.ineq_matrix[(i, c)];
                kkt[(c, n + meq + k)] = problem.ineq_matrix[(i, c)];
            }
            rhs[n + meq + k] = problem.ineq_rhs[i];
        }
        let lu = kkt.clone().full_piv_lu();
        let Some(sol) = lu.solve(&rhs) else {
            continue;
        };
        if (&kkt * &sol - &rhs).abs().max() > 1e-8 {
            continue;
        }
        let x = sol.rows(0, n).clone_owned();
        let mut feasible = true;
        for i in 0..mine {
            if problem.ineq_matrix.row(i).dot(&x.transpose()) > problem.ineq_rhs[i] + 1e-8 {
                feasible = false;
                break;
            }
        }
        for k in 0..chosen.len() {
            if sol[n + meq + k] < -1e-8 {
                feasible = false;
            }
        }
        if !feasible {
            continue;
        }
        let obj = 0.5 * (&problem.hessian * &x).dot(&x) + problem.gradient.dot(&x);
        if best.as_ref().map_or(true, |(_, b)| obj < *b) {
            best = Some((x, obj));
        }
    }
    best
}

/// Randomized wheeled-quadruped model (structure fixed, parameters varied).
pub fn random_quadruped(rng: &mut impl Rng) -> RobotModel {
    let thigh_len = rng.gen_range(0.2..0.3);
    let shank_len = rng.gen_range(0.2..0.3);
    let hip_x = rng.gen_range(0.3..0.4);
    let hip_y = rng.gen_range(0.15..0.25);
    let lateral = rng.gen_range(0.04..0.1);
    let base_mass = rng.gen_range(10.0..20.0);
    let mut links = vec![LinkConfig {
        name: "base".into(),
        parent: None,
        leg: None,
        mass: base_mass,
        com: [0.0, 0.0, rng.gen_range(-0.02..0.02)],
        inertia: [0.27, 0.53, 0.69, 0.0, 0.0, 0.0],
        joint: None,
    }];
    let joint = |axis: [f64; 3], origin: [f64; 3]| -> Option<JointConfig> {
        Some(JointConfig {
            axis,
            origin,
            position_limits: [-3.2, 3.2],
            velocity_limit: 40.0,
            torque_limit: 80.0,
        })
    };
    for (leg, sx, sy) in [
        ("LF", 1.0, 1.0),
        ("RF", 1.0, -1.0),
        ("LH", -1.0, 1.0),
        ("RH", -1.0, -1.0),
    ] {
        links.push(LinkConfig {
            name: format!("{leg}_hip"),
            parent: Some("base".into()),
            leg: Some(leg.into()),
            mass: rng.gen_range(0.8..1.5),
            com: [0.0, sy * lateral * 0.5, 0.0],
            inertia: [0.002, 0.003, 0.003, 0.0, 0.0, 0.0],
            joint: joint([1.0, 0.0, 0.0], [sx * hip_x, sy * hip_y, 0.0]),
        });
        links.push(LinkConfig {
            name: format!("{leg}_thigh"),
            parent: Some(format!("{leg}_hip")),
            leg: Some(leg.into()),
            mass: rng.gen_range(0.7..1.3),
            com: [0.0, 0.0, -thigh_len / 2.0],
            inertia: [0.006, 0.006, 0.0012, 0.0, 0.0, 0.0],
            joint: joint([0.0, 1.0, 0.0], [0.0, sy * lateral, 0.0]),
        });
        links.push(LinkConfig {
            name: format!("{leg}_shank"),
            parent: Some(format!("{leg}_thigh")),
            leg: Some(leg.into()),
            mass: rng.gen_range(0.5..1.1),
            com: [0.0, 0.0, -shank_len / 2.0],
            inertia: [0.005, 0.005, 0.001, 0.0, 0.0, 0.0],
            joint: joint([0.0, 1.0, 0.0], [0.0, 0.0, -thigh_len]),
        });
        links.push(LinkConfig {
            name: format!("{leg}_wheel"),
            parent: Some(format!("{leg}_shank")),
            leg: Some(leg.into()),
            mass: rng.gen_range(0.3..0.8),
            com: [0.0, 0.0, 0.0],
            inertia: [0.0014, 0.0025, 0.0014, 0.0, 0.0, 0.0],
            joint: joint([0.0, 1.0, 0.0], [0.0, 0.0, -shank_len]),
        });
    }
    RobotModel::from_config(&ModelConfig {
        wheel_radius: rng.gen_range(0.08..0.12),
        links,
    })
    .expect("generated model is valid")
}

pub fn random_model_state(rng: &mut impl Rng) -> GeneralizedState {
    let mut state = GeneralizedState::at_rest(16);
    state.base_position = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(0.4..0.7),
    );
    state.base_orientation = nalgebra::UnitQuaternion::from_scaled_axis(Vector3::new(
        rng.gen_range(-0.3..0.3),
        rng.gen_range(-0.3..0.3),
        rng.gen_range(-1.0..1.0),
    ));
    for i in 0..16 {
        state.joint_positions[i] = rng.gen_range(-0.6..0.6);
        state.joint_velocities[i] = rng.gen_range(-2.0..2.0);
    }
    state.base_linear_velocity = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-0.5..0.5),
    );
    state.base_angular_velocity = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    state
}

// ---------------------------------------------------------------------------
// Suites

/// 100 random dense QPs (n <= 8, <= 10 inequalities): the solver objective
/// must match exhaustive active-set enumeration within 1e-6.
pub fn run_qp_suite(seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let cases = 100;
    for trial in 0..cases {
        let n = rng.gen_range(1..=8);
        let mine = rng.gen_range(0..=10);
        let meq = rng.gen_range(0..=n.min(2));
        let problem = random_feasible_problem(&mut rng, n, mine, meq);
        match (solve_qp(&problem), brute_force_qp(&problem)) {
            (Ok(sol), Some((_, oracle))) => {
                let err = (sol.objective - oracle).abs();
                if err > 1e-6 * (1.0 + oracle.abs()) {
                    failures.push(format!(
                        "trial {trial}: objective {} vs oracle {} (err {err:.3e})",
                        sol.objective, oracle
                    ));
                }
            }
            (Err(e), _) => failures.push(format!("trial {trial}: solver failed: {e}")),
            (_, None) => failures.push(format!("trial {trial}: oracle found no solution")),
        }
    }
    SuiteReport {
        name: "qp",
        cases,
        failures,
    }
}

/// 100 random 3-level stacks: perturbing level-3 targets must not move
/// level-1/2 residual vectors by more than 1e-9.
pub fn run_hierarchy_suite(seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let cases = 100;
    for trial in 0..cases {
        let n = rng.gen_range(2..=6);
        let mut stack: Vec<TaskLevel> = (0..3)
            .map(|_| {
                let rows = rng.gen_range(1..=3);
                let a = DMatrix::from_fn(rows, n, |_, _| rng.gen_range(-1.0..1.0));
                let b = DVector::from_fn(rows, |_, _| rng.gen_range(-1.0..1.0));
                let mine = rng.gen_range(0..=2);
                let d = DMatrix::from_fn(mine, n, |_, _| rng.gen_range(-1.0..1.0));
                let f = DVector::from_fn(mine, |_, _| rng.gen_range(0.0..1.0));
                TaskLevel::equality(a, b).with_inequality(d, f)
            })
            .collect();
        let base = match solve_hierarchy(&stack, DEFAULT_REGULARIZATION) {
            Ok(s) => s,
            Err(e) => {
                failures.push(format!("trial {trial}: base solve failed: {e}"));
                continue;
            }
        };
        for r in 0..stack[2].eq_rhs.len() {
            stack[2].eq_rhs[r] += rng.gen_range(-1.0..1.0);
        }
        let perturbed = match solve_hierarchy(&stack, DEFAULT_REGULARIZATION) {
            Ok(s) => s,
            Err(e) => {
                failures.push(format!("trial {trial}: perturbed solve failed: {e}"));
                continue;
            }
        };
        for lvl in 0..2 {
            let delta = (&base.levels[lvl].eq_residual - &perturbed.levels[lvl].eq_residual)
                .abs()
                .max();
            if delta >= 1e-9 {
                failures.push(format!(
                    "trial {trial}: level {} residual moved by {delta:.3e}",
                    lvl + 1
                ));
            }
        }
    }
    SuiteReport {
        name: "hierarchy",
        cases,
        failures,
    }
}

/// 1000 random (v, ω, τ): the closed-form expected foothold must match RK4
/// integration of the unicycle within 1e-9.
pub fn run_foothold_suite(seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let cases = 1000;
    for trial in 0..cases {
        let v = Vector2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let w = rng.gen_range(-1.5..1.5);
        let tau = rng.gen_range(0.0..1.5);
        let p0 = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0);
        let analytic = expected_foothold(&p0, &Vector3::new(v.x, v.y, 0.0), w, tau);
        let oracle = {
            let f = |t: f64| -> Vector2<f64> {
                let (s, c) = (w * t).sin_cos();
                Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
            };
            let steps = 4000;
            let h = tau / steps as f64;
            let mut p = Vector2::new(p0.x, p0.y);
            for i in 0..steps {
                let t = i as f64 * h;
                let k1 = f(t);
                let k2 = f(t + h / 2.0);
                let k3 = f(t + h / 2.0);
                let k4 = f(t + h);
                p += (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (h / 6.0);
            }
            p
        };
        let err = (Vector2::new(analytic.x, analytic.y) - oracle).norm();
        if err > 1e-9 {
            failures.push(format!(
                "trial {trial}: v = {v:?}, w = {w:.3}, tau = {tau:.3}: error {err:.3e}"
            ));
        }
    }
    SuiteReport {
        name: "foothold",
        cases,
        failures,
    }
}

/// 100 random models/states: kinematic point Jacobians and the ZMP
/// constraint linearization against central finite differences (1e-5).
pub fn run_jacobian_suite(seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let cases = 100;
    for trial in 0..cases {
        let model = random_quadruped(&mut rng);
        let state = random_model_state(&mut rng);
        let tree = &model.tree;
        let kd = kinematics(tree, &state);
        let body = rng.gen_range(0..tree.links.len());
        let local = nalgebra::Point3::new(
            rng.gen_range(-0.2..0.2),
            rng.gen_range(-0.2..0.2),
            rng.gen_range(-0.2..0.2),
        );
        let point = (kd.pose[body] * local).coords;
        let analytic = point_jacobian(tree, &kd, body, &point);
        let h = 1e-6;
        let mut worst = 0.0f64;
        for k in 0..tree.n_u() {
            let sp = state.perturb_coordinate(tree, k, h);
            let sm = state.perturb_coordinate(tree, k, -h);
            let pl = kd.pose[body].inverse_transform_point(&nalgebra::Point3::from(point));
            let pp = (kinematics(tree, &sp).pose[body] * pl).coords;
            let pm = (kinematics(tree, &sm).pose[body] * pl).coords;
            let fd = (pp - pm) / (2.0 * h);
            for r in 0..3 {
                worst = worst.max((analytic[(r, k)] - fd[r]).abs());
            }
        }
        let scale = 1.0 + analytic.abs().max();
        if worst / scale > 1e-5 {
            failures.push(format!(
                "trial {trial}: kinematic Jacobian error {:.3e}",
                worst / scale
            ));
        }

        // ZMP constraint gradient at a random sample.
        let coeffs = SplineCoefficients::from_fn(|_, _| rng.gen_range(-0.5..0.5));
        let t = rng.gen_range(0.1..1.0);
        let edge = Edge::normalized(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.3);
        let gravity = Vector3::new(0.0, 0.0, -9.81);
        let value = |c: &SplineCoefficients| {
            let (p, _, a) = evaluate_spline(c, t);
            let w = gravity - a;
            edge.p * (p.x * w.z - w.x * p.z) + edge.q * (p.y * w.z - w.y * p.z) + edge.r * w.z
        };
        let grad = crate::zmp::zmp_gradient(&edge, &coeffs, t, &gravity);
        let mut worst_zmp = 0.0f64;
        for i in 0..SPLINE_COEFFS {
            let mut cp = coeffs;
            cp[i] += h;
            let mut cm = coeffs;
            cm[i] -= h;
            let fd = (value(&cp) - value(&cm)) / (2.0 * h);
            worst_zmp = worst_zmp.max((grad[i] - fd).abs() / (1.0 + fd.abs()));
        }
        if worst_zmp > 1e-5 {
            failures.push(format!(
                "trial {trial}: ZMP linearization error {worst_zmp:.3e}"
            ));
        }
    }
    SuiteReport {
        name: "jacobians",
        cases,
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        for report in run_all(2026) {
            assert!(
                report.passed(),
                "suite {} failed: {:?}",
                report.name,
                report.failures
            );
        }
    }
}
