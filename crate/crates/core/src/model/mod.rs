//! Kinematics and dynamics of the floating-base wheeled quadruped.
//!
//! The underlying rigid-body tree is generic (any revolute-joint tree with an
//! optional floating base); `RobotModel` validates the wheeled-quadruped
//! structure the rest of the stack relies on: four legs in LF, RF, LH, RH
//! order, each with three leg joints plus one wheel joint about the local
//! y axis.

mod dynamics;
mod kinematics;
mod rolling;

pub use dynamics::{
    bias_forces, com_acceleration_bias, com_jacobian, com_state, dynamics_terms,
    inverse_dynamics, mass_matrix, DynamicsTerms,
};
pub use kinematics::{
    contact_jacobian, forward_kinematics, kinematics, point_acceleration_bias, point_jacobian,
    point_velocity, wheel_contact_point, Attachment, FrameId, KinematicData,
};
pub use rolling::{rolling_contact_acceleration, wheel_frame_pose, WheelFramePose};

use nalgebra::{DVector, Isometry3, Matrix3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Leg;

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Error)]
pub enum ModelError {
    #[error("invalid model: {0}")]
    Validation(String),
    #[error("unknown frame or link: {0}")]
    UnknownFrame(String),
    #[error("contact frames require a terrain plane")]
    MissingTerrain,
    #[error("wheel orientation is ill-conditioned (roll within {margin} rad of ±π/2)")]
    EulerSingularity { margin: f64 },
    #[error("wheel axle is parallel to the terrain normal")]
    DegenerateAxle,
}

/// Joint connecting a link to its parent; purely revolute.
#[derive(Debug, Clone)]
pub struct Joint {
    /// Rotation axis in parent-frame coordinates.
    pub axis: Unit<Vector3<f64>>,
    /// Joint origin in parent-frame coordinates.
    pub origin: Vector3<f64>,
    pub position_limits: [f64; 2],
    pub velocity_limit: f64,
    pub torque_limit: f64,
}

#[derive(Debug, Clone)]
pub struct Link {
    pub name: String,
    pub parent: Option<usize>,
    pub joint: Option<Joint>,
    pub mass: f64,
    /// Center of mass in the link frame.
    pub com: Vector3<f64>,
    /// Rotational inertia about the COM, link frame.
    pub inertia: Matrix3<f64>,
}

/// Revolute-joint rigid-body tree with an optional floating base.
#[derive(Debug, Clone)]
pub struct TreeModel {
    pub links: Vec<Link>,
    pub floating_base: bool,
    pub gravity: Vector3<f64>,
    /// Generalized-velocity index of each link's joint (root: None).
    joint_dof: Vec<Option<usize>>,
    n_joints: usize,
}

impl TreeModel {
    pub fn new(links: Vec<Link>, floating_base: bool) -> Result<TreeModel, ModelError> {
        if links.is_empty() {
            return Err(ModelError::Validation("tree has no links".into()));
        }
        if links[0].parent.is_some() || links[0].joint.is_some() {
            return Err(ModelError::Validation(
                "first link must be the root (no parent, no joint)".into(),
            ));
        }
        let mut joint_dof = vec![None; links.len()];
        let mut n_joints = 0;
        for (i, link) in links.iter().enumerate().skip(1) {
            let parent = link.parent.ok_or_else(|| {
                ModelError::Validation(format!("link '{}' has no parent", link.name))
            })?;
            if parent >= i {
                return Err(ModelError::Validation(format!(
                    "link '{}' appears before its parent",
                    link.name
                )));
            }
            if link.joint.is_none() {
                return Err(ModelError::Validation(format!(
                    "non-root link '{}' has no joint",
                    link.name
                )));
            }
            joint_dof[i] = Some(n_joints);
            n_joints += 1;
        }
        for link in &links {
            if link.mass <= 0.0 {
                return Err(ModelError::Validation(format!(
                    "link '{}' has non-positive mass",
                    link.name
                )));
            }
            let sym = (link.inertia - link.inertia.transpose()).abs().max();
            if sym > 1e-9 {
                return Err(ModelError::Validation(format!(
                    "link '{}' inertia is not symmetric",
                    link.name
                )));
            }
            if link.inertia.cholesky().is_none() {
                return Err(ModelError::Validation(format!(
                    "link '{}' inertia is not positive definite",
                    link.name
                )));
            }
        }
        Ok(TreeModel {
            links,
            floating_base,
            gravity: Vector3::new(0.0, 0.0, -GRAVITY),
            joint_dof,
            n_joints,
        })
    }

    pub fn n_joints(&self) -> usize {
        self.n_joints
    }

    /// Number of generalized velocity coordinates.
    pub fn n_u(&self) -> usize {
        if self.floating_base {
            6 + self.n_joints
        } else {
            self.n_joints
        }
    }

    /// Offset of joint rates inside the generalized velocity vector.
    pub fn joint_offset(&self) -> usize {
        if self.floating_base {
            6
        } else {
            0
        }
    }

    pub fn joint_dof(&self, link: usize) -> Option<usize> {
        self.joint_dof[link]
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }
}

/// Link indices of one leg, in kinematic order from the base outward.
#[derive(Debug, Clone, Copy)]
pub struct LegLinks {
    pub hip: usize,
    pub thigh: usize,
    pub shank: usize,
    pub wheel: usize,
}

/// Validated wheeled-quadruped model.
#[derive(Debug, Clone)]
pub struct RobotModel {
    pub tree: TreeModel,
    pub wheel_radius: f64,
    pub legs: [LegLinks; 4],
}

impl RobotModel {
    pub fn from_config(config: &ModelConfig) -> Result<RobotModel, ModelError> {
        let mut links = Vec::with_capacity(config.links.len());
        let mut leg_links: [Vec<usize>; 4] = Default::default();
        for (i, lc) in config.links.iter().enumerate() {
            let parent = match &lc.parent {
                None => None,
                Some(name) => Some(
                    config.links[..i]
                        .iter()
                        .position(|c| &c.name == name)
                        .ok_or_else(|| {
                            ModelError::Validation(format!(
                                "link '{}' references unknown parent '{}'",
                                lc.name, name
                            ))
                        })?,
                ),
            };
            let joint = match &lc.joint {
                None => None,
                Some(jc) => Some(Joint {
                    axis: Unit::try_new(Vector3::from(jc.axis), 1e-9).ok_or_else(|| {
                        ModelError::Validation(format!("link '{}' joint axis is zero", lc.name))
                    })?,
                    origin: Vector3::from(jc.origin),
                    position_limits: jc.position_limits,
                    velocity_limit: jc.velocity_limit,
                    torque_limit: jc.torque_limit,
                }),
            };
            if let Some(leg_name) = &lc.leg {
                let leg = Leg::ALL
                    .iter()
                    .find(|l| l.short_name() == leg_name)
                    .copied()
                    .ok_or_else(|| {
                        ModelError::Validation(format!(
                            "link '{}' has unknown leg label '{leg_name}'",
                            lc.name
                        ))
                    })?;
                leg_links[leg.index()].push(i);
            }
            links.push(Link {
                name: lc.name.clone(),
                parent,
                joint,
                mass: lc.mass,
                com: Vector3::from(lc.com),
                inertia: lc.inertia_matrix(),
            });
        }
        let tree = TreeModel::new(links, true)?;
        if config.wheel_radius <= 0.0 {
            return Err(ModelError::Validation(
                "wheel radius must be positive".into(),
            ));
        }

        let mut legs = Vec::with_capacity(4);
        for (leg, indices) in Leg::ALL.iter().zip(&leg_links) {
            if indices.len() != 4 {
                return Err(ModelError::Validation(format!(
                    "leg {leg} must have exactly 4 links, found {}",
                    indices.len()
                )));
            }
            let [hip, thigh, shank, wheel] = [indices[0], indices[1], indices[2], indices[3]];
            // Must form a chain hip -> thigh -> shank -> wheel off the base.
            let chain_ok = tree.links[hip].parent == Some(0)
                && tree.links[thigh].parent == Some(hip)
                && tree.links[shank].parent == Some(thigh)
                && tree.links[wheel].parent == Some(shank);
            if !chain_ok {
                return Err(ModelError::Validation(format!(
                    "leg {leg} links do not form a base->hip->thigh->shank->wheel chain"
                )));
            }
            let axle = tree.links[wheel].joint.as_ref().unwrap().axis;
            if (axle.into_inner() - Vector3::y()).norm() > 1e-9 {
                return Err(ModelError::Validation(format!(
                    "leg {leg} wheel joint axis must be local +y"
                )));
            }
            legs.push(LegLinks {
                hip,
                thigh,
                shank,
                wheel,
            });
        }
        let model = RobotModel {
            tree,
            wheel_radius: config.wheel_radius,
            legs: [legs[0], legs[1], legs[2], legs[3]],
        };
        if model.tree.n_joints() != 16 {
            return Err(ModelError::Validation(format!(
                "wheeled quadruped needs 16 joints, found {}",
                model.tree.n_joints()
            )));
        }
        debug_assert_eq!(model.tree.n_u(), 22);
        Ok(model)
    }

    pub fn from_json(json: &str) -> Result<RobotModel, ModelError> {
        let config: ModelConfig = serde_json::from_str(json)
            .map_err(|e| ModelError::Validation(format!("model JSON: {e}")))?;
        RobotModel::from_config(&config)
    }

    pub fn leg(&self, leg: Leg) -> &LegLinks {
        &self.legs[leg.index()]
    }

    /// Generalized-velocity index of a leg's wheel joint.
    pub fn wheel_dof(&self, leg: Leg) -> usize {
        self.tree.joint_offset() + self.tree.joint_dof(self.leg(leg).wheel).unwrap()
    }

    pub fn total_mass(&self) -> f64 {
        self.tree.total_mass()
    }

    /// Per-joint torque limits in joint order.
    pub fn torque_limits(&self) -> DVector<f64> {
        let mut limits = DVector::zeros(self.tree.n_joints());
        for (i, link) in self.tree.links.iter().enumerate() {
            if let (Some(joint), Some(dof)) = (&link.joint, self.tree.joint_dof(i)) {
                limits[dof] = joint.torque_limit;
            }
        }
        limits
    }
}

/// Base pose/twist plus joint positions and rates.
#[derive(Debug, Clone)]
pub struct GeneralizedState {
    pub base_position: Vector3<f64>,
    pub base_orientation: UnitQuaternion<f64>,
    pub joint_positions: DVector<f64>,
    /// Base linear velocity in the inertial frame.
    pub base_linear_velocity: Vector3<f64>,
    /// Base angular velocity expressed in the base frame.
    pub base_angular_velocity: Vector3<f64>,
    pub joint_velocities: DVector<f64>,
}

impl GeneralizedState {
    pub fn at_rest(n_joints: usize) -> GeneralizedState {
        GeneralizedState {
            base_position: Vector3::zeros(),
            base_orientation: UnitQuaternion::identity(),
            joint_positions: DVector::zeros(n_joints),
            base_linear_velocity: Vector3::zeros(),
            base_angular_velocity: Vector3::zeros(),
            joint_velocities: DVector::zeros(n_joints),
        }
    }

    pub fn base_pose(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::from(self.base_position),
            self.base_orientation,
        )
    }

    /// Stacked generalized velocity `u` for the given tree.
    pub fn u(&self, tree: &TreeModel) -> DVector<f64> {
        let mut u = DVector::zeros(tree.n_u());
        if tree.floating_base {
            u.fixed_rows_mut::<3>(0)
                .copy_from(&self.base_linear_velocity);
            u.fixed_rows_mut::<3>(3)
                .copy_from(&self.base_angular_velocity);
        }
        u.rows_mut(tree.joint_offset(), tree.n_joints())
            .copy_from(&self.joint_velocities);
        u
    }

    pub fn validate(&self, tree: &TreeModel) -> Result<(), ModelError> {
        if self.joint_positions.len() != tree.n_joints()
            || self.joint_velocities.len() != tree.n_joints()
        {
            return Err(ModelError::Validation(format!(
                "state has {} joints, model has {}",
                self.joint_positions.len(),
                tree.n_joints()
            )));
        }
        if (self.base_orientation.as_ref().norm() - 1.0).abs() > 1e-9 {
            return Err(ModelError::Validation("base quaternion is not unit".into()));
        }
        Ok(())
    }

    /// Semi-implicit Euler step: velocities first, then configuration with
    /// the updated velocities. The quaternion is renormalized.
    pub fn integrate(&mut self, tree: &TreeModel, udot: &DVector<f64>, dt: f64) {
        if tree.floating_base {
            self.base_linear_velocity += udot.fixed_rows::<3>(0) * dt;
            self.base_angular_velocity += udot.fixed_rows::<3>(3) * dt;
        }
        self.joint_velocities += udot.rows(tree.joint_offset(), tree.n_joints()) * dt;

        self.base_position += self.base_linear_velocity * dt;
        let dq = UnitQuaternion::from_scaled_axis(self.base_angular_velocity * dt);
        self.base_orientation =
            UnitQuaternion::new_normalize((self.base_orientation * dq).into_inner());
        self.joint_positions += &self.joint_velocities * dt;
    }

    /// Shift coordinate `k` of the generalized-coordinate chart by `eps`,
    /// matching the tangent directions of `u` (used by finite-difference
    /// oracles).
    pub fn perturb_coordinate(&self, tree: &TreeModel, k: usize, eps: f64) -> GeneralizedState {
        let mut s = self.clone();
        if tree.floating_base {
            if k < 3 {
                s.base_position[k] += eps;
                return s;
            }
            if k < 6 {
                let mut axis = Vector3::zeros();
                axis[k - 3] = eps;
                s.base_orientation = UnitQuaternion::new_normalize(
                    (s.base_orientation * UnitQuaternion::from_scaled_axis(axis)).into_inner(),
                );
                return s;
            }
        }
        s.joint_positions[k - tree.joint_offset()] += eps;
        s
    }
}

// ---------------------------------------------------------------------------
// JSON configuration

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub wheel_radius: f64,
    pub links: Vec<LinkConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkConfig {
    pub name: String,
    #[serde(default)]
    pub parent: Option<String>,
    /// Leg label (LF, RF, LH, RH) for leg links.
    #[serde(default)]
    pub leg: Option<String>,
    pub mass: f64,
    pub com: [f64; 3],
    /// [ixx, iyy, izz, ixy, ixz, iyz] about the COM in the link frame.
    pub inertia: [f64; 6],
    #[serde(default)]
    pub joint: Option<JointConfig>,
}

impl LinkConfig {
    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        let [ixx, iyy, izz, ixy, ixz, iyz] = self.inertia;
        Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz)
    }
}

fn default_position_limits() -> [f64; 2] {
    [-3.2, 3.2]
}
fn default_velocity_limit() -> f64 {
    40.0
}
fn default_torque_limit() -> f64 {
    80.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointConfig {
    pub axis: [f64; 3],
    pub origin: [f64; 3],
    #[serde(default = "default_position_limits")]
    pub position_limits: [f64; 2],
    #[serde(default = "default_velocity_limit")]
    pub velocity_limit: f64,
    #[serde(default = "default_torque_limit")]
    pub torque_limit: f64,
}

#[cfg(test)]
pub(crate) mod fixtures;
