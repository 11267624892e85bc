//! Equations-of-motion terms: mass matrix, bias forces, support Jacobian.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::kinematics::{
    angular_jacobian, contact_jacobian, kinematics, point_acceleration_bias, point_jacobian,
    velocity_product_accelerations, Attachment, KinematicData,
};
use super::{GeneralizedState, ModelError, RobotModel, TreeModel};
use crate::terrain::TerrainPlane;
use crate::Leg;

/// Terms of `M u̇ + h = Sᵀ τ + J_Sᵀ λ` for a given contact set.
#[derive(Debug, Clone)]
pub struct DynamicsTerms {
    pub mass_matrix: DMatrix<f64>,
    /// Coriolis, centrifugal and gravity forces.
    pub bias: DVector<f64>,
    /// Selection matrix [0 | I] mapping joint torques to generalized forces.
    pub selection: DMatrix<f64>,
    /// Legs in contact, in fixed leg order.
    pub contact_legs: Vec<Leg>,
    /// Stacked wheel-fixed contact Jacobians (3 n_c × n_u).
    pub support_jacobian: DMatrix<f64>,
    /// Stacked drift terms J̇_S u (3 n_c).
    pub support_drift: DVector<f64>,
}

/// Mass matrix via per-link Jacobians: M = Σ mᵢ J_cᵢᵀ J_cᵢ + J_ωᵢᵀ Iᵢ J_ωᵢ.
pub fn mass_matrix(tree: &TreeModel, kd: &KinematicData) -> DMatrix<f64> {
    let n = tree.n_u();
    let mut m = DMatrix::zeros(n, n);
    for (i, link) in tree.links.iter().enumerate() {
        let com_world = kd.pose[i] * nalgebra::Point3::from(link.com);
        let jc = point_jacobian(tree, kd, i, &com_world.coords);
        m += link.mass * (jc.transpose() * &jc);
        let jw = angular_jacobian(tree, kd, i);
        let r = kd.pose[i].rotation.to_rotation_matrix();
        let inertia_world: Matrix3<f64> = r.matrix() * link.inertia * r.matrix().transpose();
        m += jw.transpose() * inertia_world * jw;
    }
    m
}

/// Inverse dynamics `ID(q, u, u̇) = M u̇ + h` via world-frame Newton-Euler.
/// Gravity is absorbed by offsetting the base acceleration.
pub fn inverse_dynamics(
    tree: &TreeModel,
    kd: &KinematicData,
    state: &GeneralizedState,
    udot: &DVector<f64>,
) -> DVector<f64> {
    let n_links = tree.links.len();
    let offset = tree.joint_offset();

    // Velocity-product part with gravity folded into the base acceleration.
    let (mut alpha, mut a_origin) =
        velocity_product_accelerations(tree, kd, state, -tree.gravity);

    // Add the u̇ contribution.
    if tree.floating_base {
        let lin = Vector3::new(udot[0], udot[1], udot[2]);
        let ang_body = Vector3::new(udot[3], udot[4], udot[5]);
        // d/dt(R ω_B) = R ω̇_B because ω × ω = 0.
        let ang_world = kd.pose[0].rotation * ang_body;
        let mut extra_alpha = vec![Vector3::zeros(); n_links];
        let mut extra_a = vec![Vector3::zeros(); n_links];
        extra_alpha[0] = ang_world;
        extra_a[0] = lin;
        propagate_udot(tree, kd, udot, offset, &mut extra_alpha, &mut extra_a);
        for i in 0..n_links {
            alpha[i] += extra_alpha[i];
            a_origin[i] += extra_a[i];
        }
    } else {
        let mut extra_alpha = vec![Vector3::zeros(); n_links];
        let mut extra_a = vec![Vector3::zeros(); n_links];
        propagate_udot(tree, kd, udot, offset, &mut extra_alpha, &mut extra_a);
        for i in 0..n_links {
            alpha[i] += extra_alpha[i];
            a_origin[i] += extra_a[i];
        }
    }

    // Per-link inertial wrench about the link COM.
    let mut force = vec![Vector3::zeros(); n_links];
    let mut moment = vec![Vector3::zeros(); n_links];
    let mut com_world = vec![Vector3::zeros(); n_links];
    for (i, link) in tree.links.iter().enumerate() {
        let c = kd.pose[i] * nalgebra::Point3::from(link.com);
        com_world[i] = c.coords;
        let arm = c.coords - kd.pose[i].translation.vector;
        let a_com = a_origin[i]
            + alpha[i].cross(&arm)
            + kd.omega[i].cross(&kd.omega[i].cross(&arm));
        let r = kd.pose[i].rotation.to_rotation_matrix();
        let inertia_world: Matrix3<f64> = r.matrix() * link.inertia * r.matrix().transpose();
        force[i] = link.mass * a_com;
        moment[i] = inertia_world * alpha[i] + kd.omega[i].cross(&(inertia_world * kd.omega[i]));
    }

    // Project subtree wrenches onto the joints (and the base, if floating).
    let mut tau = DVector::zeros(tree.n_u());
    for (j, link) in tree.links.iter().enumerate() {
        let Some(dof) = tree.joint_dof(j) else {
            continue;
        };
        let _ = link;
        let axis = kd.axis_world[j].unwrap();
        let origin = kd.pose[j].translation.vector;
        let mut total = Vector3::zeros();
        for i in 0..n_links {
            if is_in_subtree(tree, j, i) {
                total += moment[i] + (com_world[i] - origin).cross(&force[i]);
            }
        }
        tau[offset + dof] = axis.dot(&total);
    }
    if tree.floating_base {
        let mut f_total = Vector3::zeros();
        let mut n_total = Vector3::zeros();
        let base_origin = kd.pose[0].translation.vector;
        for i in 0..n_links {
            f_total += force[i];
            n_total += moment[i] + (com_world[i] - base_origin).cross(&force[i]);
        }
        tau.fixed_rows_mut::<3>(0).copy_from(&f_total);
        // Generalized force dual to the base-frame angular velocity.
        let n_body = kd.pose[0].rotation.inverse() * n_total;
        tau.fixed_rows_mut::<3>(3).copy_from(&n_body);
    }
    tau
}

fn propagate_udot(
    tree: &TreeModel,
    kd: &KinematicData,
    udot: &DVector<f64>,
    offset: usize,
    alpha: &mut [Vector3<f64>],
    a_origin: &mut [Vector3<f64>],
) {
    for i in 1..tree.links.len() {
        let parent = tree.links[i].parent.unwrap();
        let dof = tree.joint_dof(i).unwrap();
        let axis = kd.axis_world[i].unwrap().into_inner();
        let arm = kd.pose[i].translation.vector - kd.pose[parent].translation.vector;
        alpha[i] = alpha[parent] + axis * udot[offset + dof];
        a_origin[i] = a_origin[parent] + alpha[parent].cross(&arm);
    }
}

fn is_in_subtree(tree: &TreeModel, root: usize, mut link: usize) -> bool {
    loop {
        if link == root {
            return true;
        }
        match tree.links[link].parent {
            Some(p) => link = p,
            None => return false,
        }
    }
}

/// Bias forces h(q, u): inverse dynamics at zero acceleration.
pub fn bias_forces(
    tree: &TreeModel,
    kd: &KinematicData,
    state: &GeneralizedState,
) -> DVector<f64> {
    inverse_dynamics(tree, kd, state, &DVector::zeros(tree.n_u()))
}

/// Whole-body COM position, velocity and total mass.
pub fn com_state(tree: &TreeModel, kd: &KinematicData) -> (Vector3<f64>, Vector3<f64>, f64) {
    let mut mass = 0.0;
    let mut p = Vector3::zeros();
    let mut v = Vector3::zeros();
    for (i, link) in tree.links.iter().enumerate() {
        let c = (kd.pose[i] * nalgebra::Point3::from(link.com)).coords;
        let vel = kd.v_origin[i]
            + kd.omega[i].cross(&(c - kd.pose[i].translation.vector));
        mass += link.mass;
        p += link.mass * c;
        v += link.mass * vel;
    }
    (p / mass, v / mass, mass)
}

/// 3×n_u Jacobian of the whole-body COM.
pub fn com_jacobian(tree: &TreeModel, kd: &KinematicData) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(3, tree.n_u());
    let mut mass = 0.0;
    for (i, link) in tree.links.iter().enumerate() {
        let c = (kd.pose[i] * nalgebra::Point3::from(link.com)).coords;
        j += link.mass * point_jacobian(tree, kd, i, &c);
        mass += link.mass;
    }
    j / mass
}

/// J̇_com · u: COM acceleration under u̇ = 0 without gravity.
pub fn com_acceleration_bias(
    tree: &TreeModel,
    kd: &KinematicData,
    state: &GeneralizedState,
) -> Vector3<f64> {
    let mut a = Vector3::zeros();
    let mut mass = 0.0;
    for (i, link) in tree.links.iter().enumerate() {
        let c = (kd.pose[i] * nalgebra::Point3::from(link.com)).coords;
        a += link.mass * point_acceleration_bias(tree, kd, state, i, &c);
        mass += link.mass;
    }
    a / mass
}

/// Assemble every dynamics term needed by the controller for one tick.
pub fn dynamics_terms(
    model: &RobotModel,
    state: &GeneralizedState,
    contact_set: &[Leg],
    plane: &TerrainPlane,
) -> Result<DynamicsTerms, ModelError> {
    let tree = &model.tree;
    let kd = kinematics(tree, state);
    let n_u = tree.n_u();
    let n_j = tree.n_joints();

    let mut selection = DMatrix::zeros(n_j, n_u);
    for i in 0..n_j {
        selection[(i, tree.joint_offset() + i)] = 1.0;
    }

    let mut contact_legs: Vec<Leg> = contact_set.to_vec();
    contact_legs.sort_by_key(|l| l.index());
    contact_legs.dedup();

    let n_c = contact_legs.len();
    let mut support_jacobian = DMatrix::zeros(3 * n_c, n_u);
    let mut support_drift = DVector::zeros(3 * n_c);
    for (k, &leg) in contact_legs.iter().enumerate() {
        let j = contact_jacobian(model, &kd, plane, leg, Attachment::WheelFixed)?;
        support_jacobian.rows_mut(3 * k, 3).copy_from(&j);
        let point = super::kinematics::wheel_contact_point(model, &kd, leg, plane)?;
        let drift =
            point_acceleration_bias(tree, &kd, state, model.leg(leg).wheel, &point);
        support_drift.rows_mut(3 * k, 3).copy_from(&drift);
    }

    Ok(DynamicsTerms {
        mass_matrix: mass_matrix(tree, &kd),
        bias: bias_forces(tree, &kd, state),
        selection,
        contact_legs,
        support_jacobian,
        support_drift,
    })
}
