//! Penalty-based rigid-body simulation of the wheeled quadruped.

use nalgebra::{DVector, Unit, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::surface::TerrainSurface;
use crate::model::{
    bias_forces, kinematics, mass_matrix, point_jacobian, point_velocity, GeneralizedState,
    RobotModel,
};
use crate::Leg;

#[derive(Debug, Clone, Error)]
pub enum SimError {
    #[error("simulation diverged at t = {t:.4}: {reason}")]
    Diverged { t: f64, reason: String },
    #[error("simulation step needs dt <= 1e-3, got {0}")]
    StepTooLarge(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactModelConfig {
    /// Normal penalty stiffness (N/m).
    pub stiffness: f64,
    /// Normal penalty damping (N·s/m).
    pub damping: f64,
    /// Ground friction coefficient.
    pub friction: f64,
    /// Regularization velocity of the Coulomb model (m/s).
    pub regularization_velocity: f64,
}

impl Default for ContactModelConfig {
    fn default() -> ContactModelConfig {
        ContactModelConfig {
            stiffness: 5e4,
            damping: 3e3,
            friction: 0.8,
            regularization_velocity: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContactForce {
    pub leg: Leg,
    pub point: Vector3<f64>,
    pub force: Vector3<f64>,
    pub penetration: f64,
}

/// Wheel-rim contact forces against the local terrain plane: penalty normal
/// force max(0, kδ - c·v_n) plus regularized Coulomb friction saturating at
/// μF_n with a linear zone below the regularization velocity.
pub fn contact_forces(
    model: &RobotModel,
    kd: &crate::model::KinematicData,
    surface: &TerrainSurface,
    cm: &ContactModelConfig,
) -> Vec<ContactForce> {
    let mut forces = Vec::with_capacity(4);
    for leg in Leg::ALL {
        let legs = model.leg(leg);
        let center = kd.pose[legs.wheel].translation.vector;
        let axle = Unit::new_unchecked(kd.pose[legs.shank].rotation * Vector3::y());
        // Two passes: refine the local plane at the rim location.
        let mut plane = surface.local_plane(center.x, center.y);
        let mut rim = center;
        for _ in 0..2 {
            let n = plane.normal.into_inner();
            let proj = -(n - axle.into_inner() * n.dot(&axle));
            let Some(dir) = Unit::try_new(proj, 1e-9) else {
                break;
            };
            rim = center + dir.into_inner() * model.wheel_radius;
            plane = surface.local_plane(rim.x, rim.y);
        }
        let penetration = -plane.signed_distance(&rim);
        if penetration <= 0.0 {
            continue;
        }
        let n = plane.normal.into_inner();
        let v = point_velocity(kd, legs.wheel, &rim);
        let v_n = v.dot(&n);
        let f_n = (cm.stiffness * penetration - cm.damping * v_n).max(0.0);
        if f_n <= 0.0 {
            continue;
        }
        let v_t = v - n * v_n;
        let speed = v_t.norm();
        let f_t = if speed > 1e-12 {
            -v_t * (cm.friction * f_n / speed.max(cm.regularization_velocity))
        } else {
            Vector3::zeros()
        };
        forces.push(ContactForce {
            leg,
            point: rim,
            force: n * f_n + f_t,
            penetration,
        });
    }
    forces
}

#[derive(Debug, Clone)]
pub struct StepInfo {
    pub contacts: Vec<ContactForce>,
    pub max_penetration: f64,
}

/// One semi-implicit Euler step of the forward dynamics
/// u̇ = M⁻¹(Sᵀτ + Σ Jᵀf - h) with wheel-rim penalty contacts.
pub fn step(
    model: &RobotModel,
    state: &mut GeneralizedState,
    torques: &DVector<f64>,
    surface: &TerrainSurface,
    cm: &ContactModelConfig,
    dt: f64,
    t: f64,
) -> Result<StepInfo, SimError> {
    if dt > 1e-3 {
        return Err(SimError::StepTooLarge(dt));
    }
    let tree = &model.tree;
    let kd = kinematics(tree, state);
    let contacts = contact_forces(model, &kd, surface, cm);

    let mut rhs = -bias_forces(tree, &kd, state);
    for j in 0..tree.n_joints() {
        rhs[tree.joint_offset() + j] += torques[j];
    }
    for contact in &contacts {
        let j = point_jacobian(tree, &kd, model.leg(contact.leg).wheel, &contact.point);
        rhs += j.transpose() * contact.force;
    }
    let m = mass_matrix(tree, &kd);
    let udot = m
        .cholesky()
        .ok_or_else(|| SimError::Diverged {
            t,
            reason: "mass matrix lost positive definiteness".into(),
        })?
        .solve(&rhs);

    state.integrate(tree, &udot, dt);

    let max_penetration = contacts
        .iter()
        .map(|c| c.penetration)
        .fold(0.0f64, f64::max);
    let speed = state.base_linear_velocity.norm()
        + state.base_angular_velocity.norm()
        + state.joint_velocities.abs().max();
    if !speed.is_finite() || speed > 1e3 || !state.base_position.z.is_finite() {
        return Err(SimError::Diverged {
            t,
            reason: format!("velocity blow-up (|u| ~ {speed:.1})"),
        });
    }
    if max_penetration > 0.05 {
        return Err(SimError::Diverged {
            t,
            reason: format!("rim penetration {max_penetration:.3} m"),
        });
    }
    Ok(StepInfo {
        contacts,
        max_penetration,
    })
}

/// Solve the base height so the lowest wheel rim exactly touches the ground.
pub fn settle_base_height(model: &RobotModel, state: &mut GeneralizedState, surface: &TerrainSurface) {
    for _ in 0..4 {
        let kd = kinematics(&model.tree, state);
        let mut clearance = f64::INFINITY;
        for leg in Leg::ALL {
            let legs = model.leg(leg);
            let center = kd.pose[legs.wheel].translation.vector;
            let axle = Unit::new_unchecked(kd.pose[legs.shank].rotation * Vector3::y());
            let plane = surface.local_plane(center.x, center.y);
            let n = plane.normal.into_inner();
            let proj = -(n - axle.into_inner() * n.dot(&axle));
            if let Some(dir) = Unit::try_new(proj, 1e-9) {
                let rim = center + dir.into_inner() * model.wheel_radius;
                clearance = clearance.min(plane.signed_distance(&rim));
            }
        }
        if clearance.is_finite() {
            state.base_position.z -= clearance;
        }
    }
}
