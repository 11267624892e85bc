//! Nonholonomic rolling contact: wheel frame decomposition and the
//! acceleration of the wheel-fixed contact point under maintained rolling.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use super::kinematics::{contact_direction, KinematicData};
use super::{GeneralizedState, ModelError, RobotModel};
use crate::math::EulerZxy;
use crate::terrain::TerrainPlane;
use crate::Leg;

/// Margin kept from the roll singularity at |roll| = π/2.
pub const EULER_SINGULARITY_MARGIN: f64 = 1e-3;

/// Orientation of a leg's wheel frames and the Euler decomposition of the
/// leg-fixed frame W'.
#[derive(Debug, Clone)]
pub struct WheelFramePose {
    /// Wheel-fixed frame W (rotates with the wheel joint).
    pub rotation_wheel: Rotation3<f64>,
    /// Leg-fixed frame W' (carried by the shank, y axis along the axle).
    pub rotation_leg_fixed: Rotation3<f64>,
    /// Intrinsic z-x'-y'' decomposition of W': yaw ψ, roll φ, pitch χ.
    pub euler: EulerZxy,
    /// Rates (ψ̇, φ̇, χ̇).
    pub euler_rates: Vector3<f64>,
    pub wheel_angle: f64,
    pub wheel_rate: f64,
}

impl WheelFramePose {
    pub fn axle(&self) -> Unit<Vector3<f64>> {
        Unit::new_unchecked(self.rotation_leg_fixed * Vector3::y())
    }
}

pub fn wheel_frame_pose(
    model: &RobotModel,
    kd: &KinematicData,
    state: &GeneralizedState,
    leg: Leg,
) -> Result<WheelFramePose, ModelError> {
    let legs = model.leg(leg);
    let leg_fixed: Rotation3<f64> =
        kd.pose[legs.shank].rotation.to_rotation_matrix();
    let euler = EulerZxy::from_rotation(&leg_fixed, EULER_SINGULARITY_MARGIN).ok_or(
        ModelError::EulerSingularity {
            margin: EULER_SINGULARITY_MARGIN,
        },
    )?;
    let euler_rates = euler.rates_from_world(&kd.omega[legs.shank]);
    let dof = model.tree.joint_dof(legs.wheel).unwrap();
    let wheel_angle = state.joint_positions[dof];
    let wheel_rate = state.joint_velocities[dof];
    let rotation_wheel =
        leg_fixed * Rotation3::from_axis_angle(&Vector3::y_axis(), wheel_angle);
    Ok(WheelFramePose {
        rotation_wheel,
        rotation_leg_fixed: leg_fixed,
        euler,
        euler_rates,
        wheel_angle,
        wheel_rate,
    })
}

/// Contact-aligned wheel frame: x along the rolling direction, y along the
/// axle, z from the contact point toward the wheel center. This is the frame
/// in which the rolling contact acceleration takes its closed form.
pub fn contact_aligned_frame(
    axle: &Unit<Vector3<f64>>,
    normal: &Unit<Vector3<f64>>,
) -> Result<Rotation3<f64>, ModelError> {
    let d = contact_direction(axle, normal)?;
    let z = -d.into_inner();
    let x = axle.cross(&z); // equals the normalized axle × normal
    Ok(Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[
        x,
        axle.into_inner(),
        z,
    ])))
}

/// Acceleration of the wheel-fixed contact point of a rolling wheel:
///
/// R · [0, -r₀ ψ̇ cos φ (χ̇ + θ̇), r₀ (χ̇ + θ̇)(χ̇ + θ̇ + ψ̇ sin φ)]ᵀ
///
/// with R the contact-aligned wheel frame and (ψ, φ, χ) the intrinsic
/// z-x'-y'' angles of the leg-fixed wheel frame.
pub fn rolling_contact_acceleration(
    model: &RobotModel,
    kd: &KinematicData,
    state: &GeneralizedState,
    plane: &TerrainPlane,
    leg: Leg,
) -> Result<Vector3<f64>, ModelError> {
    let pose = wheel_frame_pose(model, kd, state, leg)?;
    let frame = contact_aligned_frame(&pose.axle(), &plane.normal)?;
    let r0 = model.wheel_radius;
    let yaw_rate = pose.euler_rates[0];
    let pitch_total = pose.euler_rates[2] + pose.wheel_rate;
    let roll = pose.euler.roll;
    let local = Vector3::new(
        0.0,
        -r0 * yaw_rate * roll.cos() * pitch_total,
        r0 * pitch_total * (pitch_total + yaw_rate * roll.sin()),
    );
    Ok(frame * local)
}
