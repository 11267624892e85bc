//! Controller pipeline: terrain estimation → contact schedule → foothold
//! optimization → motion plan at the planner cadence, and whole-body control
//! at the controller cadence.

use nalgebra::{DVector, UnitQuaternion, Vector2, Vector3};
use thiserror::Error;

use super::{GaitLibraryConfig, Scenario};
use crate::foothold::{
    driving_contact_reference, expected_foothold, optimize_footholds, swing_trajectory,
    FootholdConfig, FootholdError, LegFootholdInput, SwingTrajectory,
};
use crate::gait::{schedule_horizon, ContactSchedule, GaitError, GaitPattern};
use crate::model::{
    com_state, dynamics_terms, kinematics, wheel_contact_point, GeneralizedState, ModelError,
    RobotModel, GRAVITY,
};
use crate::terrain::{plan_frame, ContactSample, PlanFrame, TerrainError, TerrainEstimator};
use crate::wbc::{solve_wbc, ComReference, LegReference, WbcConfig, WbcError, WbcInput, WbcSolution};
use crate::zmp::{
    build_polygon_sequence, solve_motion_plan, MotionPlan, MotionProblem, PlannerConfig,
    PlannerError, ZmpError,
};
use crate::Leg;

#[derive(Debug, Clone, Error)]
pub enum PipelineError {
    #[error("terrain: {0}")]
    Terrain(#[from] TerrainError),
    #[error("gait: {0}")]
    Gait(#[from] GaitError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("foothold: {0}")]
    Foothold(#[from] FootholdError),
    #[error("planner: {0}")]
    Planner(#[from] PlannerError),
    #[error("polygons: {0}")]
    Polygons(#[from] ZmpError),
    #[error("whole-body controller: {0}")]
    Wbc(#[from] WbcError),
    #[error("no motion plan available")]
    NoPlan,
    #[error("unknown gait '{0}'")]
    UnknownGait(String),
}

fn make_gait(name: &str, lib: &GaitLibraryConfig) -> Result<GaitPattern, PipelineError> {
    match name {
        "drive" => Ok(GaitPattern::drive()),
        "trot" => Ok(GaitPattern::trot(lib.trot_stride, lib.trot_duty)?),
        "crawl" => Ok(GaitPattern::crawl(lib.crawl_stride, lib.crawl_duty)?),
        other => Err(PipelineError::UnknownGait(other.into())),
    }
}

#[derive(Debug, Clone)]
struct SwingState {
    liftoff_time: f64,
    touchdown_time: f64,
    liftoff_world: Vector3<f64>,
    target_world: Vector3<f64>,
    /// Trajectory in the plan frame of the cycle that (re)built it.
    trajectory: SwingTrajectory,
}

/// Output of one planner cycle, shared with the controller ticks until the
/// next cycle.
pub struct PlannerSnapshot {
    pub plan: MotionPlan,
    pub schedule: ContactSchedule,
    pub frame: PlanFrame,
    pub solve_time_ms: f64,
    pub foothold_degraded: bool,
}

pub struct WbcTick {
    pub solution: WbcSolution,
    pub com_reference: ComReference,
    pub contact_flags: [bool; 4],
    /// Contact legs of the lambda stacking.
    pub contact_legs: Vec<Leg>,
}

pub struct Pipeline {
    pub model: RobotModel,
    planner_cfg: PlannerConfig,
    wbc_cfg: WbcConfig,
    foothold_cfg: FootholdConfig,
    gait_lib: GaitLibraryConfig,
    estimator: TerrainEstimator,
    active_gait: GaitPattern,
    gait_start: f64,
    pending_gait: Option<String>,
    command_velocity: Vector2<f64>,
    command_yaw_rate: f64,
    swing: [Option<SwingState>; 4],
    previous_targets: [Option<Vector3<f64>>; 4],
    snapshot: Option<PlannerSnapshot>,
    was_grounded: [bool; 4],
    /// Integrated desired contact positions of grounded legs (world frame);
    /// re-anchored at touchdown.
    ground_ref_world: [Option<Vector3<f64>>; 4],
    last_wbc_time: Option<f64>,
}

impl Pipeline {
    pub fn new(model: RobotModel, scenario: &Scenario, initial_plane: crate::terrain::TerrainPlane) -> Pipeline {
        Pipeline {
            model,
            planner_cfg: scenario.planner.clone(),
            wbc_cfg: scenario.wbc.clone(),
            foothold_cfg: scenario.foothold.clone(),
            gait_lib: scenario.gait.clone(),
            // Exponential smoothing factor 0.2 on the estimated normal.
            estimator: TerrainEstimator::new(initial_plane, 0.2),
            active_gait: GaitPattern::drive(),
            gait_start: 0.0,
            pending_gait: None,
            command_velocity: Vector2::zeros(),
            command_yaw_rate: 0.0,
            swing: [None, None, None, None],
            previous_targets: [None; 4],
            snapshot: None,
            was_grounded: [true; 4],
            ground_ref_world: [None; 4],
            last_wbc_time: None,
        }
    }

    pub fn snapshot(&self) -> Option<&PlannerSnapshot> {
        self.snapshot.as_ref()
    }

    fn gait_time(&self, t: f64) -> f64 {
        t - self.gait_start
    }

    pub fn contact_flags(&self, t: f64) -> [bool; 4] {
        crate::gait::contact_flags(&self.active_gait, self.gait_time(t))
    }

    fn maybe_switch_gait(&mut self, t: f64, requested: &str, planner_period: f64) -> Result<(), PipelineError> {
        if requested != self.active_gait.name {
            self.pending_gait = Some(requested.to_string());
        }
        if let Some(name) = self.pending_gait.clone() {
            let switch_now = if self.active_gait.is_driving() {
                true
            } else {
                // Gait transitions happen at stride boundaries, where every
                // leg is momentarily grounded.
                let phase = self.gait_time(t).rem_euclid(self.active_gait.stride);
                phase < planner_period * 0.5 || phase > self.active_gait.stride - planner_period * 0.5
            };
            if switch_now {
                self.active_gait = make_gait(&name, &self.gait_lib)?;
                self.gait_start = t;
                self.pending_gait = None;
                self.swing = [None, None, None, None];
                self.ground_ref_world = [None; 4];
            }
        }
        Ok(())
    }

    /// One planner cycle: terrain estimate, contact schedule, foothold
    /// optimization, support polygons and the COM motion plan.
    pub fn planner_tick(
        &mut self,
        t: f64,
        state: &GeneralizedState,
        scenario: &Scenario,
    ) -> Result<(), PipelineError> {
        let started = std::time::Instant::now();
        let command = scenario.command_at(t);
        self.command_velocity = Vector2::new(command.velocity[0], command.velocity[1]);
        self.command_yaw_rate = command.yaw_rate;
        let planner_period = 1.0 / self.planner_cfg.rate;
        self.maybe_switch_gait(t, &command.gait, planner_period)?;

        let kd = kinematics(&self.model.tree, state);
        let flags = self.contact_flags(t);

        // Terrain estimation from the grounded wheels.
        for leg in Leg::ALL {
            if flags[leg.index()] {
                let legs = self.model.leg(leg);
                let axle = nalgebra::Unit::new_unchecked(
                    kd.pose[legs.shank].rotation * Vector3::y(),
                );
                self.estimator.record(
                    leg,
                    ContactSample {
                        wheel_center: kd.pose[legs.wheel].translation.vector,
                        axle,
                    },
                );
            }
        }
        self.estimator.update(self.model.wheel_radius, t);
        let plane = self.estimator.plane().clone();

        // Plan frame from the current rim points and the base heading.
        let mut rims = Vec::with_capacity(4);
        for leg in Leg::ALL {
            rims.push(wheel_contact_point(&self.model, &kd, leg, &plane)?);
        }
        let heading = state.base_orientation * Vector3::x();
        let frame = plan_frame(&plane, &rims, &heading)?;

        // Swing bookkeeping: clear on touchdown, arm on liftoff.
        let gait_t = self.gait_time(t);
        for leg in Leg::ALL {
            let grounded = flags[leg.index()];
            if grounded {
                self.swing[leg.index()] = None;
            } else if self.swing[leg.index()].is_none() {
                let interval = self
                    .active_gait
                    .swing_interval(leg, gait_t)
                    .unwrap_or((gait_t, gait_t + 0.3));
                let liftoff_world = rims[leg.index()];
                // Placeholder target: re-optimized below.
                let target_world = liftoff_world;
                let duration = (interval.1 - interval.0).max(1e-3);
                let liftoff_plan = frame.to_plan(&liftoff_world);
                let trajectory = swing_trajectory(
                    &liftoff_plan,
                    &frame.to_plan(&target_world),
                    duration,
                    self.foothold_cfg.swing_height,
                    &Vector3::z(),
                )?;
                self.swing[leg.index()] = Some(SwingState {
                    liftoff_time: self.gait_start + interval.0,
                    touchdown_time: self.gait_start + interval.1,
                    liftoff_world,
                    target_world,
                    trajectory,
                });
            }
            self.was_grounded[leg.index()] = grounded;
        }

        // Horizon and schedule.
        let horizon = if self.active_gait.is_driving() {
            self.planner_cfg.horizon_driving
        } else {
            self.active_gait.stride * self.planner_cfg.horizon_stride_factor
        };
        let schedule = schedule_horizon(&self.active_gait, gait_t, horizon)?;

        // Foothold optimization for every leg with a swing inside the
        // horizon.
        let (_, com_velocity, _) = com_state(&self.model.tree, &kd);
        let v_ref3 = Vector3::new(self.command_velocity.x, self.command_velocity.y, 0.0);
        let mut foothold_degraded = false;
        let mut targets_plan: [Option<Vector2<f64>>; 4] = [None; 4];
        let mut optimized_legs: Vec<(Leg, (f64, f64))> = Vec::new();
        for leg in Leg::ALL {
            if let Some(interval) = self.active_gait.swing_interval(leg, gait_t) {
                if interval.0 < gait_t + horizon {
                    optimized_legs.push((leg, interval));
                }
            }
        }
        if !optimized_legs.is_empty() {
            let com_v_plan = frame.rotate_to_plan(&com_velocity);
            let mut inputs = Vec::with_capacity(optimized_legs.len());
            for (leg, interval) in &optimized_legs {
                let legs = self.model.leg(*leg);
                let hip_world = kd.pose[legs.hip].translation.vector;
                let hip_plan = frame.to_plan(&hip_world);
                let default_xy = Vector2::new(hip_plan.x, hip_plan.y);
                let swing_len = interval.1 - interval.0;
                let stance = (self.active_gait.stride - swing_len).max(0.0);
                let lead = (self.gait_start + interval.1 - t).max(0.0) + 0.5 * stance;
                let projected = expected_foothold(
                    &Vector3::new(default_xy.x, default_xy.y, 0.0),
                    &v_ref3,
                    self.command_yaw_rate,
                    lead,
                );
                let pendulum_offset = (Vector2::new(com_v_plan.x, com_v_plan.y)
                    - self.command_velocity)
                    * self.foothold_cfg.pendulum_gain
                    * (self.planner_cfg.nominal_height / GRAVITY).sqrt();
                let previous_xy = self.previous_targets[leg.index()].map(|w| {
                    let p = frame.to_plan(&w);
                    Vector2::new(p.x, p.y)
                });
                let reach_radius = (self.foothold_cfg.max_reach.powi(2) - hip_plan.z.powi(2))
                    .max(0.01)
                    .sqrt();
                inputs.push(LegFootholdInput {
                    leg: *leg,
                    default_xy,
                    velocity_xy: Vector2::new(projected.x, projected.y),
                    previous_xy,
                    pendulum_xy: default_xy + pendulum_offset,
                    reach_center_xy: default_xy,
                    reach_radius,
                });
            }
            let stance_xy: Vec<(Leg, Vector2<f64>)> = Leg::ALL
                .iter()
                .filter(|leg| flags[leg.index()])
                .filter(|leg| !optimized_legs.iter().any(|(l, _)| l == *leg))
                .map(|&leg| {
                    let p = frame.to_plan(&rims[leg.index()]);
                    (leg, Vector2::new(p.x, p.y))
                })
                .collect();
            let solution = optimize_footholds(&inputs, &stance_xy, &self.foothold_cfg)?;
            foothold_degraded = solution.degraded;
            for ((leg, interval), target) in optimized_legs.iter().zip(&solution.targets) {
                targets_plan[leg.index()] = Some(*target);
                let target_world = frame.to_world(&Vector3::new(target.x, target.y, 0.0));
                self.previous_targets[leg.index()] = Some(target_world);
                // Rebuild the swing trajectory for currently airborne legs.
                if let Some(swing) = &mut self.swing[leg.index()] {
                    let liftoff_plan = frame.to_plan(&swing.liftoff_world);
                    let duration = (interval.1 - interval.0).max(1e-3);
                    swing.target_world = target_world;
                    swing.touchdown_time = self.gait_start + interval.1;
                    swing.trajectory = swing_trajectory(
                        &liftoff_plan,
                        &Vector3::new(target.x, target.y, 0.0),
                        duration,
                        self.foothold_cfg.swing_height,
                        &Vector3::z(),
                    )?;
                }
            }
        }

        // Support polygons and the motion plan. The foothold map is seeded
        // from the union of the instantaneous flags and the schedule's first
        // phase so boundary jitter cannot leave a scheduled stance leg
        // without a position (a leg within rounding of its touchdown sits at
        // the target anyway).
        let first_flags = schedule.phases.first().map(|p| p.flags).unwrap_or(flags);
        let mut footholds_now: [Option<Vector2<f64>>; 4] = [None; 4];
        for leg in Leg::ALL {
            if flags[leg.index()] || first_flags[leg.index()] {
                let p = frame.to_plan(&rims[leg.index()]);
                footholds_now[leg.index()] = Some(Vector2::new(p.x, p.y));
            }
        }
        let polygons = build_polygon_sequence(
            &schedule,
            &footholds_now,
            &targets_plan,
            self.active_gait.is_driving(),
            &self.command_velocity,
            self.command_yaw_rate,
            self.planner_cfg.line_width,
)?;

        let (com_position, com_velocity_w, mass) = com_state(&self.model.tree, &kd);
        let problem = MotionProblem {
            start_time: t,
            com_position: frame.to_plan(&com_position),
            com_velocity: frame.rotate_to_plan(&com_velocity_w),
            polygons,
            gravity_plan: frame.gravity(&self.model.tree.gravity),
            mass,
            v_ref: self.command_velocity,
            yaw_rate: self.command_yaw_rate,
            plan_frame: frame.clone(),
            previous: self.snapshot.as_ref().map(|s| &s.plan),
        };
        let plan = solve_motion_plan(&problem, &self.planner_cfg)?;
        self.snapshot = Some(PlannerSnapshot {
            plan,
            schedule,
            frame,
            solve_time_ms: started.elapsed().as_secs_f64() * 1e3,
            foothold_degraded,
        });
        Ok(())
    }

    /// One whole-body control tick; returns the torque command and tick
    /// diagnostics.
    pub fn wbc_tick(&mut self, t: f64, state: &GeneralizedState) -> Result<WbcTick, PipelineError> {
        let snapshot = self.snapshot.as_ref().ok_or(PipelineError::NoPlan)?;
        let frame = &snapshot.frame;
        let plane = self.estimator.plane();
        let flags = self.contact_flags(t);
        let contact_legs: Vec<Leg> = Leg::ALL
            .iter()
            .copied()
            .filter(|leg| flags[leg.index()])
            .collect();

        let kd = kinematics(&self.model.tree, state);
        let terms = dynamics_terms(&self.model, state, &contact_legs, plane)?;

        // COM references from the motion plan (clamped to its horizon).
        let t_plan = t.min(snapshot.plan.start_time + snapshot.plan.horizon);
        let (p_plan, v_plan, a_plan) = snapshot.plan.evaluate(t_plan)?;
        let com = ComReference {
            position: frame.to_world(&p_plan),
            velocity: frame.rotate_to_world(&v_plan),
            acceleration: frame.rotate_to_world(&a_plan),
        };
        // Base orientation follows the terrain-aligned heading frame; the
        // commanded yaw rate enters as an angular velocity feedforward.
        let base_orientation_ref = frame.pose.rotation;
        let omega_world = frame.rotate_to_world(&Vector3::new(0.0, 0.0, self.command_yaw_rate));
        let base_angular_velocity_ref = state.base_orientation.inverse() * omega_world;

        let mut swing_refs = Vec::new();
        for leg in Leg::ALL {
            if flags[leg.index()] {
                continue;
            }
            if let Some(swing) = &self.swing[leg.index()] {
                let s = t - swing.liftoff_time;
                let (p, v, a) = swing.trajectory.evaluate(s);
                swing_refs.push((
                    leg,
                    LegReference {
                        position: p,
                        velocity: v,
                        acceleration: a,
                    },
                ));
            } else {
                // Scheduled airborne without a planned swing (transient
                // right at a gait switch): hold the current point.
                let point = wheel_contact_point(&self.model, &kd, leg, plane)?;
                swing_refs.push((
                    leg,
                    LegReference {
                        position: frame.to_plan(&point),
                        velocity: Vector3::zeros(),
                        acceleration: Vector3::zeros(),
                    },
                ));
            }
        }

        // Grounded-wheel references: the velocity field follows the plan's
        // COM velocity (stepped commands reach the wheels through the motion
        // optimizer, not as a PD impulse), and the position reference
        // integrates that field from the touchdown point so the stance
        // geometry cannot drift. The integrated point is leashed to the
        // measured contact so saturation cannot wind it up.
        let v_ref3 = Vector3::new(v_plan.x, v_plan.y, 0.0);
        let dt = self.last_wbc_time.map(|t0| t - t0).unwrap_or(0.0);
        self.last_wbc_time = Some(t);
        let mut ground_refs = Vec::new();
        for &leg in &contact_legs {
            let legs = self.model.leg(leg);
            let point = wheel_contact_point(&self.model, &kd, leg, plane)?;
            let axle = nalgebra::Unit::new_unchecked(kd.pose[legs.shank].rotation * Vector3::y());
            let cf = crate::terrain::contact_frame(plane, &axle, &kd.pose[legs.wheel].translation.vector, self.model.wheel_radius)?;
            let cx_plan = frame.rotate_to_plan(&cf.rolling_direction());

            let anchored = match self.ground_ref_world[leg.index()] {
                Some(w) => frame.to_plan(&w),
                None => frame.to_plan(&point),
            };
            let reference = driving_contact_reference(&anchored, &cx_plan, &v_ref3, self.command_yaw_rate);
            // Advance the anchor along the commanded field and leash it.
            let mut advanced = anchored + reference.velocity * dt;
            let measured = frame.to_plan(&point);
            let offset = advanced - measured;
            let leash = 0.06;
            if offset.norm() > leash {
                advanced = measured + offset.normalize() * leash;
            }
            advanced.z = 0.0;
            self.ground_ref_world[leg.index()] = Some(frame.to_world(&advanced));

            ground_refs.push((
                leg,
                LegReference {
                    position: Vector3::new(anchored.x, anchored.y, 0.0),
                    velocity: reference.velocity,
                    acceleration: reference.acceleration,
                },
            ));
        }
        // Swing legs lose their anchors; they re-anchor at touchdown.
        for leg in Leg::ALL {
            if !flags[leg.index()] {
                self.ground_ref_world[leg.index()] = None;
            }
        }

        let input = WbcInput {
            model: &self.model,
            state,
            kd: &kd,
            terms: &terms,
            plane,
            plan_frame: frame,
            com,
            base_orientation_ref,
            base_angular_velocity_ref,
            swing: swing_refs,
            ground: ground_refs,
        };
        let solution = solve_wbc(&input, &self.wbc_cfg)?;
        Ok(WbcTick {
            solution,
            com_reference: com,
            contact_flags: flags,
            contact_legs: terms.contact_legs.clone(),
        })
    }

    /// Torque limits applied as a final safety clamp.
    pub fn clamp_torques(&self, torques: &mut DVector<f64>) {
        let limits = self.model.torque_limits();
        for j in 0..torques.len() {
            torques[j] = torques[j].clamp(-limits[j], limits[j]);
        }
    }

    pub fn plan_frame_orientation(&self) -> Option<UnitQuaternion<f64>> {
        self.snapshot.as_ref().map(|s| s.frame.pose.rotation)
    }
}
