//! Forward kinematics, frame queries and geometric Jacobians.

use nalgebra::{DMatrix, Isometry3, Rotation3, Translation3, Unit, UnitQuaternion, Vector3};

use super::{GeneralizedState, ModelError, RobotModel, TreeModel};
use crate::math::skew;
use crate::terrain::{contact_frame, TerrainPlane};
use crate::Leg;

/// World-frame pose and twist of every link, cached per state.
#[derive(Debug, Clone)]
pub struct KinematicData {
    pub pose: Vec<Isometry3<f64>>,
    /// World angular velocity of each link.
    pub omega: Vec<Vector3<f64>>,
    /// World linear velocity of each link-frame origin.
    pub v_origin: Vec<Vector3<f64>>,
    /// World joint axis of each link (None for the root).
    pub axis_world: Vec<Option<Unit<Vector3<f64>>>>,
}

pub fn kinematics(tree: &TreeModel, state: &GeneralizedState) -> KinematicData {
    let n = tree.links.len();
    let mut pose = Vec::with_capacity(n);
    let mut omega = Vec::with_capacity(n);
    let mut v_origin = Vec::with_capacity(n);
    let mut axis_world = Vec::with_capacity(n);

    if tree.floating_base {
        pose.push(state.base_pose());
        omega.push(state.base_orientation * state.base_angular_velocity);
        v_origin.push(state.base_linear_velocity);
    } else {
        pose.push(Isometry3::identity());
        omega.push(Vector3::zeros());
        v_origin.push(Vector3::zeros());
    }
    axis_world.push(None);

    for (i, link) in tree.links.iter().enumerate().skip(1) {
        let parent = link.parent.unwrap();
        let joint = link.joint.as_ref().unwrap();
        let dof = tree.joint_dof(i).unwrap();
        let q = state.joint_positions[dof];
        let dq = state.joint_velocities[dof];

        let parent_pose = pose[parent];
        let axis_w = Unit::new_unchecked(parent_pose.rotation * joint.axis.into_inner());
        let origin_w = parent_pose * nalgebra::Point3::from(joint.origin);
        let rot = parent_pose.rotation * UnitQuaternion::from_axis_angle(&joint.axis, q);
        pose.push(Isometry3::from_parts(
            Translation3::from(origin_w.coords),
            rot,
        ));
        omega.push(omega[parent] + axis_w.into_inner() * dq);
        let arm = origin_w.coords - pose[parent].translation.vector;
        v_origin.push(v_origin[parent] + omega[parent].cross(&arm));
        axis_world.push(Some(axis_w));
    }

    KinematicData {
        pose,
        omega,
        v_origin,
        axis_world,
    }
}

/// 3×n_u Jacobian of a world-frame point rigidly attached to `body`.
pub fn point_jacobian(
    tree: &TreeModel,
    kd: &KinematicData,
    body: usize,
    point: &Vector3<f64>,
) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(3, tree.n_u());
    if tree.floating_base {
        j.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&nalgebra::Matrix3::identity());
        let r = kd.pose[0].rotation.to_rotation_matrix();
        let arm = point - kd.pose[0].translation.vector;
        j.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(-skew(&arm) * r.matrix()));
    }
    let offset = tree.joint_offset();
    let mut link = body;
    while let Some(joint_dof) = tree.joint_dof(link) {
        let axis = kd.axis_world[link].unwrap();
        let arm = point - kd.pose[link].translation.vector;
        let col = axis.cross(&arm);
        for r in 0..3 {
            j[(r, offset + joint_dof)] = col[r];
        }
        link = tree.links[link].parent.unwrap();
    }
    j
}

/// 3×n_u Jacobian mapping u to the world angular velocity of `body`.
pub fn angular_jacobian(tree: &TreeModel, kd: &KinematicData, body: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(3, tree.n_u());
    if tree.floating_base {
        let r = kd.pose[0].rotation.to_rotation_matrix();
        j.fixed_view_mut::<3, 3>(0, 3).copy_from(r.matrix());
    }
    let offset = tree.joint_offset();
    let mut link = body;
    while let Some(joint_dof) = tree.joint_dof(link) {
        let axis = kd.axis_world[link].unwrap();
        for r in 0..3 {
            j[(r, offset + joint_dof)] = axis[r];
        }
        link = tree.links[link].parent.unwrap();
    }
    j
}

/// World velocity of a point rigidly attached to `body`.
pub fn point_velocity(kd: &KinematicData, body: usize, point: &Vector3<f64>) -> Vector3<f64> {
    kd.v_origin[body] + kd.omega[body].cross(&(point - kd.pose[body].translation.vector))
}

/// Velocity-product accelerations: world angular acceleration and world
/// origin acceleration of every link under u̇ = 0, with the base linear
/// acceleration forced to `base_accel` (pass -gravity to absorb gravity into
/// the recursion).
pub(crate) fn velocity_product_accelerations(
    tree: &TreeModel,
    kd: &KinematicData,
    state: &GeneralizedState,
    base_accel: Vector3<f64>,
) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let n = tree.links.len();
    let mut alpha = vec![Vector3::zeros(); n];
    let mut a_origin = vec![Vector3::zeros(); n];
    a_origin[0] = base_accel;
    for i in 1..n {
        let link = &tree.links[i];
        let parent = link.parent.unwrap();
        let dof = tree.joint_dof(i).unwrap();
        let dq = state.joint_velocities[dof];
        let axis = kd.axis_world[i].unwrap().into_inner();
        let arm = kd.pose[i].translation.vector - kd.pose[parent].translation.vector;
        alpha[i] = alpha[parent] + kd.omega[parent].cross(&(axis * dq));
        a_origin[i] = a_origin[parent]
            + alpha[parent].cross(&arm)
            + kd.omega[parent].cross(&kd.omega[parent].cross(&arm));
    }
    (alpha, a_origin)
}

/// J̇·u for a point rigidly attached to `body`: its world acceleration under
/// u̇ = 0 and zero gravity.
pub fn point_acceleration_bias(
    tree: &TreeModel,
    kd: &KinematicData,
    state: &GeneralizedState,
    body: usize,
    point: &Vector3<f64>,
) -> Vector3<f64> {
    let (alpha, a_origin) = velocity_product_accelerations(tree, kd, state, Vector3::zeros());
    let arm = point - kd.pose[body].translation.vector;
    a_origin[body] + alpha[body].cross(&arm) + kd.omega[body].cross(&kd.omega[body].cross(&arm))
}

/// Direction from the wheel center to the rim contact point: the normalized
/// projection of -n onto the wheel plane.
pub fn contact_direction(
    axle_world: &Unit<Vector3<f64>>,
    normal: &Unit<Vector3<f64>>,
) -> Result<Unit<Vector3<f64>>, ModelError> {
    let n = normal.into_inner();
    let proj = -(n - axle_world.into_inner() * n.dot(axle_world));
    Unit::try_new(proj, 1e-6).ok_or(ModelError::DegenerateAxle)
}

/// Rim contact point of a wheel against the terrain plane.
pub fn wheel_contact_point(
    model: &RobotModel,
    kd: &KinematicData,
    leg: Leg,
    plane: &TerrainPlane,
) -> Result<Vector3<f64>, ModelError> {
    let wheel = model.leg(leg).wheel;
    let shank = model.leg(leg).shank;
    let axle = Unit::new_unchecked(kd.pose[shank].rotation * Vector3::y());
    let d = contact_direction(&axle, &plane.normal)?;
    Ok(kd.pose[wheel].translation.vector + d.into_inner() * model.wheel_radius)
}

/// Frames exposed by `forward_kinematics`. Contact frames need a terrain
/// plane; every leg-fixed quantity is independent of the wheel angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameId {
    Base,
    Hip(Leg),
    /// Wheel-fixed wheel frame W (rotates with the wheel).
    WheelCenter(Leg),
    /// Leg-fixed wheel frame W' (same origin, carried by the shank).
    WheelCenterLegFixed(Leg),
    /// Wheel-fixed contact frame C.
    ContactWheelFixed(Leg),
    /// Leg-fixed contact frame C'.
    ContactLegFixed(Leg),
}

pub fn forward_kinematics(
    model: &RobotModel,
    state: &GeneralizedState,
    frame: FrameId,
    plane: Option<&TerrainPlane>,
) -> Result<Isometry3<f64>, ModelError> {
    let kd = kinematics(&model.tree, state);
    forward_kinematics_cached(model, &kd, frame, plane)
}

pub fn forward_kinematics_cached(
    model: &RobotModel,
    kd: &KinematicData,
    frame: FrameId,
    plane: Option<&TerrainPlane>,
) -> Result<Isometry3<f64>, ModelError> {
    match frame {
        FrameId::Base => Ok(kd.pose[0]),
        FrameId::Hip(leg) => Ok(kd.pose[model.leg(leg).hip]),
        FrameId::WheelCenter(leg) => Ok(kd.pose[model.leg(leg).wheel]),
        FrameId::WheelCenterLegFixed(leg) => {
            let legs = model.leg(leg);
            Ok(Isometry3::from_parts(
                kd.pose[legs.wheel].translation,
                kd.pose[legs.shank].rotation,
            ))
        }
        FrameId::ContactWheelFixed(leg) | FrameId::ContactLegFixed(leg) => {
            let plane = plane.ok_or(ModelError::MissingTerrain)?;
            let legs = model.leg(leg);
            let axle = Unit::new_unchecked(kd.pose[legs.shank].rotation * Vector3::y());
            let center = kd.pose[legs.wheel].translation.vector;
            let info = contact_frame(plane, &axle, &center, model.wheel_radius)
                .map_err(|_| ModelError::DegenerateAxle)?;
            Ok(Isometry3::from_parts(
                Translation3::from(info.origin),
                UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
                    info.rotation,
                )),
            ))
        }
    }
}

/// Material attachment of a contact point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attachment {
    /// Point fixed on the spinning wheel rim.
    WheelFixed,
    /// Point fixed relative to the leg (frame W'); its Jacobian has a zero
    /// column for the wheel joint.
    LegFixed,
}

/// 3×n_u contact-point Jacobian of a leg against the terrain plane.
pub fn contact_jacobian(
    model: &RobotModel,
    kd: &KinematicData,
    plane: &TerrainPlane,
    leg: Leg,
    attachment: Attachment,
) -> Result<DMatrix<f64>, ModelError> {
    let point = wheel_contact_point(model, kd, leg, plane)?;
    let body = match attachment {
        Attachment::WheelFixed => model.leg(leg).wheel,
        Attachment::LegFixed => model.leg(leg).shank,
    };
    Ok(point_jacobian(&model.tree, kd, body, &point))
}
