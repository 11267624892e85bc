use super::sqp::{acceleration_gram, zmp_constraint_gradient, zmp_constraint_value, PlannerConfig};
use super::*;
use crate::gait::{schedule_horizon, GaitPattern};
use approx::assert_relative_eq;
use nalgebra::{Unit, Vector2, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn flat_frame() -> PlanFrame {
    crate::terrain::plan_frame(
        &crate::terrain::TerrainPlane::horizontal(0.0),
        &[Vector3::zeros()],
        &Vector3::x(),
    )
    .unwrap()
}

fn standard_gi() -> GravitoInertial {
    GravitoInertial {
        mass: 30.0,
        gravity: Vector3::new(0.0, 0.0, -9.81),
    }
}

#[test]
fn zmp_static_projection() {
    let p = Vector3::new(0.1, 0.2, 0.5);
    let zmp = zmp_position(&p, &Vector3::zeros(), &Vector3::z_axis(), &standard_gi()).unwrap();
    assert_relative_eq!(zmp, Vector3::new(0.1, 0.2, 0.0), epsilon = 1e-12);
}

#[test]
fn zmp_free_fall_is_singular() {
    let gi = standard_gi();
    let r = zmp_position(
        &Vector3::new(0.1, 0.2, 0.5),
        &gi.gravity.clone(),
        &Vector3::z_axis(),
        &gi,
    );
    assert!(matches!(r, Err(ZmpError::VanishingDenominator)));
}

#[test]
fn zmp_orthogonal_to_normal_and_balances_wrench() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let gi = standard_gi();
    for _ in 0..200 {
        let n = Unit::new_normalize(Vector3::new(
            rng.gen_range(-0.4..0.4),
            rng.gen_range(-0.4..0.4),
            1.0,
        ));
        let p = Vector3::new(
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(0.3..0.7),
        );
        let acc = Vector3::new(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
        );
        let Ok(zmp) = zmp_position(&p, &acc, &n, &gi) else {
            continue;
        };
        assert!(zmp.dot(&n).abs() < 1e-12);
        // Wrench balance: the gravito-inertial moment about the returned
        // point has no component in the support plane.
        let w = gi.gravity - acc;
        let moment = gi.mass * (p - zmp).cross(&w);
        let t1 = n.cross(&Vector3::x());
        let t1 = if t1.norm() > 1e-6 {
            t1.normalize()
        } else {
            n.cross(&Vector3::y()).normalize()
        };
        let t2 = n.cross(&t1);
        assert!(
            moment.dot(&t1).abs() < 1e-9 && moment.dot(&t2).abs() < 1e-9,
            "in-plane moment residual {:?}",
            (moment.dot(&t1), moment.dot(&t2))
        );
    }
}

#[test]
fn square_footprint_edges() {
    let half = 0.3;
    let points = vec![
        (0, Vector2::new(half, half)),
        (1, Vector2::new(half, -half)),
        (2, Vector2::new(-half, half)),
        (3, Vector2::new(-half, -half)),
    ];
    let edges = footprint_edges(&points, 0.04).unwrap();
    assert_eq!(edges.len(), 4);
    let centroid = Vector2::zeros();
    for e in &edges {
        assert_relative_eq!(e.margin(&centroid), half, epsilon = 1e-12);
        assert_relative_eq!(e.p * e.p + e.q * e.q, 1.0, epsilon = 1e-12);
    }
}

#[test]
fn two_stance_band_edges() {
    let a = Vector2::new(0.36, 0.29);
    let b = Vector2::new(-0.36, -0.29);
    let edges = footprint_edges(&[(0, a), (3, b)], 0.04).unwrap();
    assert_eq!(edges.len(), 2);
    // Points on the support line have margin w/2 on both edges.
    let mid = (a + b) / 2.0;
    for e in &edges {
        assert_relative_eq!(e.margin(&mid), 0.02, epsilon = 1e-12);
    }
    // A point 1 cm off the line keeps positive margin, 3 cm off does not.
    let u = (b - a).normalize();
    let n = Vector2::new(-u.y, u.x);
    assert!(edges.iter().all(|e| e.margin(&(mid + n * 0.01)) > 0.0));
    assert!(edges.iter().any(|e| e.margin(&(mid + n * 0.03)) < 0.0));
}

#[test]
fn one_stance_leg_rejected() {
    assert!(matches!(
        footprint_edges(&[(0, Vector2::zeros())], 0.04),
        Err(ZmpError::TooFewStanceLegs(_))
    ));
}

#[test]
fn deformed_edge_endpoints_and_midpoint() {
    let d0 = Edge::normalized(1.0, 0.0, 0.3);
    let dt = Edge::normalized(1.0, 0.0, 0.1);
    let at = |t: f64| deformed_edge(&d0, &dt, t, 2.0, 1.0);
    assert_eq!(at(2.0), d0);
    assert_eq!(at(3.0), dt);
    let mid = at(2.5);
    // Pure translation: p, q unchanged, offset is the arithmetic mean.
    assert_relative_eq!(mid.p, 1.0, epsilon = 1e-12);
    assert_relative_eq!(mid.r, 0.2, epsilon = 1e-12);
}

#[test]
fn driving_polygon_deforms_by_translation() {
    let gait = GaitPattern::drive();
    let schedule = schedule_horizon(&gait, 0.0, 1.0).unwrap();
    let footholds = [
        Some(Vector2::new(0.36, 0.29)),
        Some(Vector2::new(0.36, -0.29)),
        Some(Vector2::new(-0.36, 0.29)),
        Some(Vector2::new(-0.36, -0.29)),
    ];
    let v = Vector2::new(0.5, 0.0);
    let phases = build_polygon_sequence(
        &schedule,
        &footholds,
        &[None; 4],
        true,
        &v,
        0.0,
        0.04,
    )
    .unwrap();
    assert_eq!(phases.len(), 1);
    let phase = &phases[0];
    assert_eq!(phase.edges.len(), 4);
    for pair in &phase.edges {
        let end = pair.end.expect("driving edges deform");
        // Translating the hull by τ·v shifts each edge offset by -(p,q)·τv.
        let shift = pair.start.p * v.x + pair.start.q * v.y;
        assert_relative_eq!(end.p, pair.start.p, epsilon = 1e-12);
        assert_relative_eq!(end.q, pair.start.q, epsilon = 1e-12);
        assert_relative_eq!(end.r, pair.start.r - shift, epsilon = 1e-12);
    }
}

#[test]
fn trot_polygon_sequence_has_band_phases() {
    let gait = GaitPattern::trot(0.8, 0.5).unwrap();
    let schedule = schedule_horizon(&gait, 0.0, 0.96).unwrap();
    let footholds = [
        Some(Vector2::new(0.36, 0.29)),
        Some(Vector2::new(0.36, -0.29)),
        Some(Vector2::new(-0.36, 0.29)),
        Some(Vector2::new(-0.36, -0.29)),
    ];
    let targets = [
        Some(Vector2::new(0.46, 0.29)),
        Some(Vector2::new(0.46, -0.29)),
        Some(Vector2::new(-0.26, 0.29)),
        Some(Vector2::new(-0.26, -0.29)),
    ];
    let phases = build_polygon_sequence(
        &schedule,
        &footholds,
        &targets,
        false,
        &Vector2::zeros(),
        0.0,
        0.04,
    )
    .unwrap();
    assert_eq!(phases.len(), schedule.phases.len());
    for phase in &phases {
        assert_eq!(phase.edges.len(), 2, "trot phases are support bands");
    }
}

fn rest_problem(frame: &PlanFrame) -> MotionProblem<'_> {
    MotionProblem {
        start_time: 0.0,
        com_position: Vector3::new(0.0, 0.0, 0.5),
        com_velocity: Vector3::zeros(),
        polygons: vec![SupportPolygonPhase {
            duration: 1.0,
            edges: footprint_edges(
                &[
                    (0, Vector2::new(0.36, 0.29)),
                    (1, Vector2::new(0.36, -0.29)),
                    (2, Vector2::new(-0.36, 0.29)),
                    (3, Vector2::new(-0.36, -0.29)),
                ],
                0.04,
            )
            .unwrap()
            .into_iter()
            .map(|start| EdgePair { start, end: None })
            .collect(),
        }],
        gravity_plan: Vector3::new(0.0, 0.0, -9.81),
        mass: 30.0,
        v_ref: Vector2::zeros(),
        yaw_rate: 0.0,
        plan_frame: frame.clone(),
        previous: None,
    }
}

// Leaked references keep the borrow checker happy for the test-only frame.
fn leak_frame() -> &'static PlanFrame {
    Box::leak(Box::new(flat_frame()))
}

#[test]
fn rest_plan_is_a_fixed_point() {
    let frame = leak_frame();
    let cfg = PlannerConfig::default();
    let plan = solve_motion_plan(&rest_problem(frame), &cfg).unwrap();
    for i in 0..=20 {
        let t = i as f64 / 20.0;
        let (p, _, a) = plan.evaluate(t).unwrap();
        assert!(a.norm() < 1e-6, "|a| = {} at t = {}", a.norm(), t);
        assert_relative_eq!(p, Vector3::new(0.0, 0.0, 0.5), epsilon = 1e-4);
    }
    assert!(plan.diagnostics.max_junction_residual < 1e-9);
}

#[test]
fn plan_junction_continuity_and_evaluation() {
    let frame = leak_frame();
    let cfg = PlannerConfig::default();
    let mut problem = rest_problem(frame);
    // Two phases to create a junction.
    let edges = problem.polygons[0].edges.clone();
    problem.polygons = vec![
        SupportPolygonPhase {
            duration: 0.4,
            edges: edges.clone(),
        },
        SupportPolygonPhase {
            duration: 0.4,
            edges,
        },
    ];
    problem.com_velocity = Vector3::new(0.2, 0.0, 0.0);
    let plan = solve_motion_plan(&problem, &cfg).unwrap();
    assert!(
        plan.diagnostics.max_junction_residual < 1e-9,
        "junction residual {:.3e}",
        plan.diagnostics.max_junction_residual
    );
    // Left/right evaluation at the junction agree.
    let tj = 0.4;
    let left = plan.evaluate_segment(0, tj);
    let right = plan.evaluate_segment(1, tj);
    assert!((left.0 - right.0).norm() < 1e-9);
    assert!((left.1 - right.1).norm() < 1e-9);
    assert!((left.2 - right.2).norm() < 1e-9);
    // Out-of-horizon evaluation errors.
    assert!(plan.evaluate(1.2).is_err());
    assert!(plan.evaluate(-0.2).is_err());
}

#[test]
fn plan_derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let coeffs = SplineCoefficients::from_fn(|_, _| rng.gen_range(-0.3..0.3));
    let h = 1e-6;
    for i in 1..10 {
        let t = i as f64 * 0.1;
        let (_, v, a) = evaluate_spline(&coeffs, t);
        let (pp, vp, _) = evaluate_spline(&coeffs, t + h);
        let (pm, vm, _) = evaluate_spline(&coeffs, t - h);
        assert!(((pp - pm) / (2.0 * h) - v).norm() < 1e-6);
        assert!(((vp - vm) / (2.0 * h) - a).norm() < 1e-6);
    }
}

#[test]
fn acceleration_gram_matches_quadrature() {
    let (a, b) = (0.3, 0.9);
    let gram = acceleration_gram(a, b);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let alpha = Vector6::from_fn(|_, _| rng.gen_range(-1.0..1.0));
    // ∫ (η̈ᵀα)² dt by Simpson quadrature.
    let f = |t: f64| {
        let e = eta(t, 2);
        let v = e.dot(&alpha);
        v * v
    };
    let n = 2000;
    let h = (b - a) / n as f64;
    let mut integral = f(a) + f(b);
    for i in 1..n {
        integral += if i % 2 == 0 { 2.0 } else { 4.0 } * f(a + i as f64 * h);
    }
    integral *= h / 3.0;
    let quad_form = (gram * alpha).dot(&alpha);
    assert_relative_eq!(quad_form, integral, epsilon = 1e-8, max_relative = 1e-8);
}

#[test]
fn zmp_constraint_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..100 {
        let coeffs = SplineCoefficients::from_fn(|_, _| rng.gen_range(-0.5..0.5));
        let t = rng.gen_range(0.1..1.0);
        let edge = Edge::normalized(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.3);
        let gravity = Vector3::new(0.0, 0.0, -9.81);
        let value = |c: &SplineCoefficients| {
            let (p, _, a) = evaluate_spline(c, t);
            zmp_constraint_value(&edge, &p, &a, &gravity)
        };
        let (p, _, a) = evaluate_spline(&coeffs, t);
        let grad = zmp_constraint_gradient(&edge, &p, &a, &gravity, t);
        let h = 1e-6;
        for i in 0..SPLINE_COEFFS {
            let mut cp = coeffs;
            cp[i] += h;
            let mut cm = coeffs;
            cm[i] -= h;
            let fd = (value(&cp) - value(&cm)) / (2.0 * h);
            assert!(
                (grad[i] - fd).abs() < 1e-5 * (1.0 + fd.abs()),
                "coeff {i}: analytic {} vs fd {}",
                grad[i],
                fd
            );
        }
    }
}

#[test]
fn driving_plan_converges_to_commanded_velocity() {
    // Receding-horizon rollout with perfect tracking: replan every 10 ms
    // from the previous plan's state; the COM velocity must reach the
    // commanded 0.5 m/s within two horizons and every accepted plan must
    // keep its sampled ZMP margins nonnegative.
    let frame = leak_frame();
    let cfg = PlannerConfig::default();
    let mut com = Vector3::new(0.0, 0.0, 0.5);
    let mut vel = Vector3::zeros();
    let mut previous: Option<MotionPlan> = None;
    let dt = 0.01;
    let v_cmd = 0.5;
    let mut t = 0.0;
    let offsets = [
        Vector2::new(0.36, 0.29),
        Vector2::new(0.36, -0.29),
        Vector2::new(-0.36, 0.29),
        Vector2::new(-0.36, -0.29),
    ];
    for step in 0..200 {
        let footholds: [Option<Vector2<f64>>; 4] = [
            Some(Vector2::new(com.x, com.y) + offsets[0]),
            Some(Vector2::new(com.x, com.y) + offsets[1]),
            Some(Vector2::new(com.x, com.y) + offsets[2]),
            Some(Vector2::new(com.x, com.y) + offsets[3]),
        ];
        let gait = GaitPattern::drive();
        let schedule = schedule_horizon(&gait, t, cfg.horizon_driving).unwrap();
        let polygons = build_polygon_sequence(
            &schedule,
            &footholds,
            &[None; 4],
            true,
            &Vector2::new(v_cmd, 0.0),
            0.0,
            cfg.line_width,
        )
        .unwrap();
        let problem = MotionProblem {
            start_time: t,
            com_position: com,
            com_velocity: vel,
            polygons,
            gravity_plan: Vector3::new(0.0, 0.0, -9.81),
            mass: 30.0,
            v_ref: Vector2::new(v_cmd, 0.0),
            yaw_rate: 0.0,
            plan_frame: frame.clone(),
            previous: previous.as_ref(),
        };
        let plan = solve_motion_plan(&problem, &cfg).unwrap();
        assert!(
            plan.diagnostics.min_sample_margin > -1e-9,
            "step {step}: margin {}",
            plan.diagnostics.min_sample_margin
        );
        // Merit is non-increasing across accepted SQP iterations.
        for pair in plan.diagnostics.merit_history.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9);
        }
        t += dt;
        let (p, v, _) = plan.evaluate(t).unwrap();
        com = p;
        vel = v;
        previous = Some(plan);
    }
    assert!(
        (vel.x - v_cmd).abs() < 0.05,
        "COM velocity {} after 2 s (commanded {v_cmd})",
        vel.x
    );
}

#[test]
fn trot_plan_keeps_zmp_inside_bands() {
    let frame = leak_frame();
    let cfg = PlannerConfig::default();
    let gait = GaitPattern::trot(0.8, 0.5).unwrap();
    let schedule = schedule_horizon(&gait, 0.0, 0.96).unwrap();
    let footholds = [
        Some(Vector2::new(0.36, 0.29)),
        Some(Vector2::new(0.36, -0.29)),
        Some(Vector2::new(-0.36, 0.29)),
        Some(Vector2::new(-0.36, -0.29)),
    ];
    let polygons = build_polygon_sequence(
        &schedule,
        &footholds,
        &footholds,
        false,
        &Vector2::zeros(),
        0.0,
        cfg.line_width,
    )
    .unwrap();
    let mut problem = rest_problem(frame);
    problem.polygons = polygons;
    let plan = solve_motion_plan(&problem, &cfg).unwrap();
    assert!(
        plan.diagnostics.min_hard_margin > -1e-9,
        "hard margin {}",
        plan.diagnostics.min_hard_margin
    );
    // Spot-check the full nonlinear margin along the plan.
    for i in 0..=40 {
        let t = plan.horizon * i as f64 / 40.0;
        let (_, margin) = plan.zmp_at(t).unwrap();
        assert!(margin > -1e-6, "margin {margin} at t = {t}");
    }
}
