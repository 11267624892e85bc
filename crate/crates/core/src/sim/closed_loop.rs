//! Fixed-order closed loop: planner (100 Hz) → whole-body controller
//! (400 Hz) → simulator (2 kHz), logging one CSV row per controller tick.

use nalgebra::DVector;
use serde::Serialize;

use super::physics::{settle_base_height, step};
use super::pipeline::{Pipeline, WbcTick};
use super::surface::TerrainSurface;
use super::{Scenario, ScenarioError, SIM_DT};
use crate::model::{com_state, kinematics, GeneralizedState, RobotModel};
use crate::Leg;

/// Fixed log schema, one row per controller tick.
pub const LOG_COLUMNS: [&str; 99] = [
    "t",
    "base_x", "base_y", "base_z",
    "base_qw", "base_qx", "base_qy", "base_qz",
    "base_vx", "base_vy", "base_vz",
    "base_wx", "base_wy", "base_wz",
    "q_lf_haa", "q_lf_hfe", "q_lf_kfe", "q_lf_wheel",
    "q_rf_haa", "q_rf_hfe", "q_rf_kfe", "q_rf_wheel",
    "q_lh_haa", "q_lh_hfe", "q_lh_kfe", "q_lh_wheel",
    "q_rh_haa", "q_rh_hfe", "q_rh_kfe", "q_rh_wheel",
    "dq_lf_haa", "dq_lf_hfe", "dq_lf_kfe", "dq_lf_wheel",
    "dq_rf_haa", "dq_rf_hfe", "dq_rf_kfe", "dq_rf_wheel",
    "dq_lh_haa", "dq_lh_hfe", "dq_lh_kfe", "dq_lh_wheel",
    "dq_rh_haa", "dq_rh_hfe", "dq_rh_kfe", "dq_rh_wheel",
    "tau_lf_haa", "tau_lf_hfe", "tau_lf_kfe", "tau_lf_wheel",
    "tau_rf_haa", "tau_rf_hfe", "tau_rf_kfe", "tau_rf_wheel",
    "tau_lh_haa", "tau_lh_hfe", "tau_lh_kfe", "tau_lh_wheel",
    "tau_rh_haa", "tau_rh_hfe", "tau_rh_kfe", "tau_rh_wheel",
    "lam_lf_x", "lam_lf_y", "lam_lf_z",
    "lam_rf_x", "lam_rf_y", "lam_rf_z",
    "lam_lh_x", "lam_lh_y", "lam_lh_z",
    "lam_rh_x", "lam_rh_y", "lam_rh_z",
    "com_x", "com_y", "com_z",
    "com_ref_x", "com_ref_y", "com_ref_z",
    "com_vx", "com_vy", "com_vz",
    "com_ref_vx", "com_ref_vy", "com_ref_vz",
    "zmp_x", "zmp_y", "zmp_z", "zmp_margin",
    "contact_lf", "contact_rf", "contact_lh", "contact_rh",
    "power_mech", "rolling_resid", "wbc_ms", "planner_ms", "mass_kg",
];

#[derive(Debug, Clone, Default)]
pub struct RunLog {
    pub rows: Vec<Vec<f64>>,
}

impl RunLog {
    pub fn column_index(name: &str) -> Option<usize> {
        LOG_COLUMNS.iter().position(|c| *c == name)
    }

    /// Serialize with shortest round-trip float formatting so re-parsing the
    /// CSV reproduces every value bit-exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.rows.len() * 512 + 1024);
        out.push_str(&LOG_COLUMNS.join(","));
        out.push('\n');
        for row in &self.rows {
            let mut first = true;
            for value in row {
                if !first {
                    out.push(',');
                }
                out.push_str(&format!("{}", value));
                first = false;
            }
            out.push('\n');
        }
        out
    }
}

/// Aggregated in-loop checks, recorded while the run executes.
#[derive(Debug, Clone, Serialize)]
pub struct RunChecks {
    /// max ‖J_S u̇* - rolling_rhs‖∞ over all controller ticks.
    pub max_rolling_residual: f64,
    /// max floating-base EoM residual over all ticks.
    pub max_eom_residual: f64,
    /// max spline junction residual over all accepted plans.
    pub max_junction_residual: f64,
    /// min recomputed ZMP margin over hard planner samples of all plans.
    pub min_plan_hard_margin: f64,
    /// min margin including softened samples.
    pub min_plan_sample_margin: f64,
    /// Ticks where λ* violated a friction-pyramid facet beyond 1e-9.
    pub friction_cone_violations: usize,
    /// max wheel-rim penetration (m).
    pub max_penetration: f64,
    /// Base height above the terrain at start (m).
    pub nominal_base_height: f64,
    pub min_base_height: f64,
    pub max_base_height: f64,
    /// max |(com - com_ref)·n_plan| over ticks (m).
    pub max_com_height_deviation: f64,
    pub plans_degraded: usize,
    pub fell: bool,
}

impl Default for RunChecks {
    fn default() -> RunChecks {
        RunChecks {
            max_rolling_residual: 0.0,
            max_eom_residual: 0.0,
            max_junction_residual: 0.0,
            min_plan_hard_margin: f64::INFINITY,
            min_plan_sample_margin: f64::INFINITY,
            friction_cone_violations: 0,
            max_penetration: 0.0,
            nominal_base_height: 0.0,
            min_base_height: f64::INFINITY,
            max_base_height: f64::NEG_INFINITY,
            max_com_height_deviation: 0.0,
            plans_degraded: 0,
            fell: false,
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub log: RunLog,
    pub checks: RunChecks,
    pub completed: bool,
    pub error: Option<String>,
    pub wall_time_s: f64,
}

/// Execute the scenario end to end. Setup problems (bad model, bad timeline)
/// fail fast; runtime failures terminate the run and return the partial log
/// with `completed = false`.
pub fn run_closed_loop(scenario: &Scenario) -> Result<RunOutcome, ScenarioError> {
    let wall_start = std::time::Instant::now();
    scenario.validate()?;
    let model = RobotModel::from_config(&scenario.model)
        .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    let surface = TerrainSurface::from_spec(&scenario.terrain);

    let mut state = GeneralizedState::at_rest(16);
    state.base_position.x = scenario.initial.position[0];
    state.base_position.y = scenario.initial.position[1];
    state.base_orientation =
        nalgebra::UnitQuaternion::from_axis_angle(&nalgebra::Vector3::z_axis(), scenario.initial.yaw);
    if !scenario.initial.joint_positions.is_empty() {
        state.joint_positions =
            DVector::from_vec(scenario.initial.joint_positions.clone());
    }
    state.base_position.z = surface.height(state.base_position.x) + 1.0;
    settle_base_height(&model, &mut state, &surface);

    let initial_plane = surface.local_plane(state.base_position.x, state.base_position.y);
    let mut pipeline = Pipeline::new(model.clone(), scenario, initial_plane);

    let dt = SIM_DT;
    let steps = (scenario.duration / dt).round() as usize;
    let wbc_every = ((1.0 / (dt * scenario.wbc.rate)).round() as usize).max(1);
    let planner_every = ((1.0 / (dt * scenario.planner.rate)).round() as usize).max(1);

    let mut checks = RunChecks::default();
    checks.nominal_base_height =
        state.base_position.z - surface.height(state.base_position.x);

    let mut log = RunLog::default();
    let mut torques = DVector::zeros(16);
    let mut planner_ms_pending = 0.0;
    let mut latest_tick: Option<WbcTick> = None;

    let fail = |log: RunLog, checks: RunChecks, error: String, wall_start: std::time::Instant| RunOutcome {
        log,
        checks,
        completed: false,
        error: Some(error),
        wall_time_s: wall_start.elapsed().as_secs_f64(),
    };

    for k in 0..steps {
        let t = k as f64 * dt;

        if k % planner_every == 0 {
            match pipeline.planner_tick(t, &state, scenario) {
                Ok(()) => {
                    let snapshot = pipeline.snapshot().expect("planner just ran");
                    planner_ms_pending = snapshot.solve_time_ms;
                    let d = &snapshot.plan.diagnostics;
                    checks.max_junction_residual =
                        checks.max_junction_residual.max(d.max_junction_residual);
                    checks.min_plan_hard_margin =
                        checks.min_plan_hard_margin.min(d.min_hard_margin);
                    checks.min_plan_sample_margin =
                        checks.min_plan_sample_margin.min(d.min_sample_margin);
                    if d.degraded || snapshot.foothold_degraded {
                        checks.plans_degraded += 1;
                    }
                }
                Err(e) => {
                    return Ok(fail(log, checks, format!("planner at t = {t:.3}: {e}"), wall_start))
                }
            }
        }

        if k % wbc_every == 0 {
            match pipeline.wbc_tick(t, &state) {
                Ok(tick) => {
                    torques = tick.solution.torques.clone();
                    pipeline.clamp_torques(&mut torques);
                    checks.max_rolling_residual = checks
                        .max_rolling_residual
                        .max(tick.solution.rolling_residual);
                    checks.max_eom_residual =
                        checks.max_eom_residual.max(tick.solution.eom_residual);
                    if tick.solution.friction_violation > 1e-9 {
                        checks.friction_cone_violations += 1;
                    }
                    log.rows.push(log_row(
                        t,
                        &model,
                        &state,
                        &pipeline,
                        &tick,
                        &torques,
                        planner_ms_pending,
                    ));
                    planner_ms_pending = 0.0;
                    latest_tick = Some(tick);
                }
                Err(e) => {
                    return Ok(fail(log, checks, format!("controller at t = {t:.3}: {e}"), wall_start))
                }
            }
        }

        match step(
            &model,
            &mut state,
            &torques,
            &surface,
            &scenario.contact,
            dt,
            t,
        ) {
            Ok(info) => {
                checks.max_penetration = checks.max_penetration.max(info.max_penetration);
            }
            Err(e) => return Ok(fail(log, checks, e.to_string(), wall_start)),
        }

        let height = state.base_position.z - surface.height(state.base_position.x);
        checks.min_base_height = checks.min_base_height.min(height);
        checks.max_base_height = checks.max_base_height.max(height);
        let up = state.base_orientation * nalgebra::Vector3::z();
        if height < 0.5 * checks.nominal_base_height || up.z < 0.5 {
            checks.fell = true;
        }
        if let (Some(tick), Some(snapshot)) = (&latest_tick, pipeline.snapshot()) {
            let kd = kinematics(&model.tree, &state);
            let (com, _, _) = com_state(&model.tree, &kd);
            let n = snapshot.frame.rotation().column(2).into_owned();
            let dev = (com - tick.com_reference.position).dot(&n).abs();
            checks.max_com_height_deviation = checks.max_com_height_deviation.max(dev);
        }
    }

    Ok(RunOutcome {
        log,
        checks,
        completed: true,
        error: None,
        wall_time_s: wall_start.elapsed().as_secs_f64(),
    })
}

fn log_row(
    t: f64,
    model: &RobotModel,
    state: &GeneralizedState,
    pipeline: &Pipeline,
    tick: &WbcTick,
    torques: &DVector<f64>,
    planner_ms: f64,
) -> Vec<f64> {
    let mut row = Vec::with_capacity(LOG_COLUMNS.len());
    row.push(t);
    row.extend_from_slice(state.base_position.as_slice());
    let q = state.base_orientation.as_ref();
    row.extend_from_slice(&[q.w, q.i, q.j, q.k]);
    row.extend_from_slice(state.base_linear_velocity.as_slice());
    row.extend_from_slice(state.base_angular_velocity.as_slice());
    row.extend_from_slice(state.joint_positions.as_slice());
    row.extend_from_slice(state.joint_velocities.as_slice());
    row.extend_from_slice(torques.as_slice());
    // Contact forces stacked in fixed leg order; swing legs log zeros.
    let mut lam = [0.0; 12];
    for (k, leg) in tick.contact_legs.iter().enumerate() {
        for i in 0..3 {
            lam[3 * leg.index() + i] = tick.solution.lambda[3 * k + i];
        }
    }
    row.extend_from_slice(&lam);

    let kd = kinematics(&model.tree, state);
    let (com, com_v, mass) = com_state(&model.tree, &kd);
    row.extend_from_slice(com.as_slice());
    row.extend_from_slice(tick.com_reference.position.as_slice());
    row.extend_from_slice(com_v.as_slice());
    row.extend_from_slice(tick.com_reference.velocity.as_slice());

    let snapshot = pipeline.snapshot().expect("tick requires a plan");
    let t_plan = t.min(snapshot.plan.start_time + snapshot.plan.horizon);
    match snapshot.plan.zmp_at(t_plan) {
        Ok((zmp_plan, margin)) => {
            let zmp_world = snapshot.frame.to_world(&zmp_plan);
            row.extend_from_slice(zmp_world.as_slice());
            row.push(margin);
        }
        Err(_) => {
            row.extend_from_slice(&[f64::NAN, f64::NAN, f64::NAN]);
            row.push(f64::NEG_INFINITY);
        }
    }
    for leg in Leg::ALL {
        row.push(if tick.contact_flags[leg.index()] { 1.0 } else { 0.0 });
    }
    // Total mechanical joint power Σ τ·ω, recomputable from the tau and dq
    // columns.
    let power: f64 = (0..16)
        .map(|j| torques[j] * state.joint_velocities[j])
        .sum();
    row.push(power);
    row.push(tick.solution.rolling_residual);
    row.push(tick.solution.solve_time_ms);
    row.push(planner_ms);
    row.push(mass);
    debug_assert_eq!(row.len(), LOG_COLUMNS.len());
    row
}
