use nalgebra::{Vector2, Vector3};
use wheelquad_core::gait::{schedule_horizon, GaitPattern};
use wheelquad_core::terrain::{plan_frame, TerrainPlane};
use wheelquad_core::zmp::*;

#[test]
fn profile_trot_planner() {
    let frame = plan_frame(
        &TerrainPlane::horizontal(0.0),
        &[Vector3::zeros()],
        &Vector3::x(),
    )
    .unwrap();
    let cfg = PlannerConfig::default();
    let gait = GaitPattern::trot(0.7, 0.6).unwrap();
    let schedule = schedule_horizon(&gait, 0.123, 0.7 * 1.2).unwrap();
    println!("phases: {}", schedule.phases.len());
    let footholds = [
        Some(Vector2::new(0.36, 0.29)),
        Some(Vector2::new(0.36, -0.29)),
        Some(Vector2::new(-0.36, 0.29)),
        Some(Vector2::new(-0.36, -0.29)),
    ];
    let polygons = build_polygon_sequence(
        &schedule, &footholds, &footholds, false,
        &Vector2::new(0.5, 0.0), 0.0, cfg.line_width,
    )
    .unwrap();
    println!("segments: {}", polygons.len());
    let problem = MotionProblem {
        start_time: 0.0,
        com_position: Vector3::new(0.0, 0.0, 0.48),
        com_velocity: Vector3::new(0.4, 0.0, 0.0),
        polygons,
        gravity_plan: Vector3::new(0.0, 0.0, -9.81),
        mass: 30.0,
        v_ref: Vector2::new(0.5, 0.0),
        yaw_rate: 0.0,
        plan_frame: frame.clone(),
        previous: None,
    };
    let t0 = std::time::Instant::now();
    let mut plan = solve_motion_plan(&problem, &cfg).unwrap();
    println!("cold solve: {:.2} ms", t0.elapsed().as_secs_f64() * 1e3);
    for _ in 0..5 {
        let mut p2 = problem.clone();
        p2.previous = Some(&plan);
        let t0 = std::time::Instant::now();
        let next = solve_motion_plan(&p2, &cfg).unwrap();
        println!(
            "warm solve: {:.2} ms (iters {}, converged {})",
            t0.elapsed().as_secs_f64() * 1e3,
            next.diagnostics.sqp_iterations,
            next.diagnostics.converged
        );
        plan = next;
    }
}
