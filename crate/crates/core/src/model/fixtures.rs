//! Shared test models: a 30 kg wheeled quadruped with 0.5 m legs and
//! r0 = 0.1 m, plus degenerate variants for focused oracles.

use nalgebra::{DVector, Vector3};
use rand::Rng;

use super::{
    GeneralizedState, JointConfig, Link, LinkConfig, ModelConfig, RobotModel, TreeModel,
};

fn link(
    name: &str,
    parent: &str,
    leg: &str,
    mass: f64,
    com: [f64; 3],
    inertia: [f64; 6],
    axis: [f64; 3],
    origin: [f64; 3],
    torque_limit: f64,
) -> LinkConfig {
    LinkConfig {
        name: name.into(),
        parent: Some(parent.into()),
        leg: Some(leg.into()),
        mass,
        com,
        inertia,
        joint: Some(JointConfig {
            axis,
            origin,
            position_limits: [-3.2, 3.2],
            velocity_limit: 40.0,
            torque_limit,
        }),
    }
}

/// Quadruped configuration with the given hip lateral offsets (the default
/// robot offsets the thigh by `lateral`; the columnar variant sets both to
/// zero so vertical loads pass through every joint axis).
fn quadruped_config_with_offsets(hip_y: f64, lateral: f64) -> ModelConfig {
    let mut links = vec![LinkConfig {
        name: "base".into(),
        parent: None,
        leg: None,
        mass: 16.0,
        com: [0.0, 0.0, 0.0],
        inertia: [0.27, 0.53, 0.69, 0.0, 0.0, 0.0],
        joint: None,
    }];
    for (leg, sx, sy) in [
        ("LF", 1.0, 1.0),
        ("RF", 1.0, -1.0),
        ("LH", -1.0, 1.0),
        ("RH", -1.0, -1.0),
    ] {
        let hip = format!("{leg}_hip");
        let thigh = format!("{leg}_thigh");
        let shank = format!("{leg}_shank");
        let wheel = format!("{leg}_wheel");
        links.push(link(
            &hip,
            "base",
            leg,
            1.2,
            [0.0, sy * lateral * 0.5, 0.0],
            [0.002, 0.003, 0.003, 0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [sx * 0.36, sy * hip_y, 0.0],
            80.0,
        ));
        links.push(link(
            &thigh,
            &hip,
            leg,
            1.0,
            [0.0, 0.0, -0.125],
            [0.006, 0.006, 0.0012, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, sy * lateral, 0.0],
            80.0,
        ));
        links.push(link(
            &shank,
            &thigh,
            leg,
            0.8,
            [0.0, 0.0, -0.125],
            [0.005, 0.005, 0.001, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, -0.25],
            80.0,
        ));
        links.push(link(
            &wheel,
            &shank,
            leg,
            0.5,
            [0.0, 0.0, 0.0],
            [0.0014, 0.0025, 0.0014, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, -0.25],
            25.0,
        ));
    }
    ModelConfig {
        wheel_radius: 0.1,
        links,
    }
}

pub fn quadruped_config() -> ModelConfig {
    quadruped_config_with_offsets(0.21, 0.08)
}

pub fn quadruped() -> RobotModel {
    RobotModel::from_config(&quadruped_config()).unwrap()
}

/// Variant with wheels directly under the hip joints: a vertical load
/// produces zero torque about every joint axis.
pub fn columnar_quadruped() -> RobotModel {
    RobotModel::from_config(&quadruped_config_with_offsets(0.21, 0.0)).unwrap()
}

/// Bent-leg standing configuration (front knees backward, hind forward).
pub fn nominal_joint_positions() -> DVector<f64> {
    let mut q = DVector::zeros(16);
    for (i, sign) in [(0usize, 1.0), (1, 1.0), (2, -1.0), (3, -1.0)] {
        q[4 * i + 1] = 0.4 * sign; // HFE
        q[4 * i + 2] = -0.8 * sign; // KFE
    }
    q
}

/// Wheel-center drop below the hip for the nominal configuration.
pub fn nominal_leg_drop() -> f64 {
    0.25 * (0.4f64).cos() * 2.0
}

pub fn nominal_state() -> GeneralizedState {
    let mut state = GeneralizedState::at_rest(16);
    state.joint_positions = nominal_joint_positions();
    state.base_position = Vector3::new(0.0, 0.0, nominal_leg_drop() + 0.1);
    state
}

pub fn random_state(rng: &mut impl Rng) -> GeneralizedState {
    let mut state = nominal_state();
    state.base_position += Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-0.2..0.2),
    );
    state.base_orientation = nalgebra::UnitQuaternion::from_scaled_axis(Vector3::new(
        rng.gen_range(-0.3..0.3),
        rng.gen_range(-0.3..0.3),
        rng.gen_range(-1.0..1.0),
    ));
    for i in 0..16 {
        state.joint_positions[i] += rng.gen_range(-0.3..0.3);
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

/// Fixed-base single pendulum: one revolute joint about y, point mass at
/// distance `length` below the joint.
pub fn pendulum_tree(length: f64, mass: f64) -> TreeModel {
    let root = Link {
        name: "root".into(),
        parent: None,
        joint: None,
        mass: 1.0,
        com: Vector3::zeros(),
        inertia: nalgebra::Matrix3::identity() * 1e-3,
    };
    let bob = Link {
        name: "bob".into(),
        parent: Some(0),
        joint: Some(super::Joint {
            axis: Vector3::y_axis(),
            origin: Vector3::zeros(),
            position_limits: [-10.0, 10.0],
            velocity_limit: 100.0,
            torque_limit: 100.0,
        }),
        mass,
        com: Vector3::new(0.0, 0.0, -length),
        inertia: nalgebra::Matrix3::identity() * 1e-6,
    };
    TreeModel::new(vec![root, bob], false).unwrap()
}
