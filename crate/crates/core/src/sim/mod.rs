//! Built-in rigid-body simulator and the closed-loop pipeline driver.

mod closed_loop;
mod physics;
mod pipeline;
mod surface;

pub use closed_loop::{run_closed_loop, RunChecks, RunLog, RunOutcome, LOG_COLUMNS};
pub use physics::{
    contact_forces, settle_base_height, step, ContactForce, ContactModelConfig, SimError,
    StepInfo,
};
pub use pipeline::{Pipeline, PipelineError};
pub use surface::{TerrainSpec, TerrainSurface, FILLET};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::foothold::FootholdConfig;
use crate::model::ModelConfig;
use crate::wbc::WbcConfig;
use crate::zmp::PlannerConfig;

/// Fixed simulator step (2 kHz); the controller runs at its own cadences
/// with zero-order-held torques in between.
pub const SIM_DT: f64 = 5e-4;

#[derive(Debug, Clone, Error)]
pub enum ScenarioError {
    #[error("scenario JSON: {0}")]
    Parse(String),
    #[error("scenario is invalid: {0}")]
    Invalid(String),
}

/// One entry of the piecewise-constant command timeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommandEntry {
    pub time: f64,
    /// Commanded planar velocity [vx, vy, 0] in the heading frame (m/s).
    pub velocity: [f64; 3],
    #[serde(default)]
    pub yaw_rate: f64,
    /// Gait name: "drive", "trot" or "crawl".
    pub gait: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GaitLibraryConfig {
    pub trot_stride: f64,
    pub trot_duty: f64,
    pub crawl_stride: f64,
    pub crawl_duty: f64,
}

impl Default for GaitLibraryConfig {
    fn default() -> GaitLibraryConfig {
        GaitLibraryConfig {
            trot_stride: 0.8,
            trot_duty: 0.5,
            crawl_stride: 1.2,
            crawl_duty: 0.85,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct InitialStateConfig {
    /// Base xy position and yaw; the height is solved so the lowest wheel
    /// rim touches the ground.
    pub position: [f64; 2],
    pub yaw: f64,
    /// 16 joint angles in LF, RF, LH, RH × (HAA, HFE, KFE, WHEEL) order.
    pub joint_positions: Vec<f64>,
}

impl Default for InitialStateConfig {
    fn default() -> InitialStateConfig {
        InitialStateConfig {
            position: [0.0, 0.0],
            yaw: 0.0,
            joint_positions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub terrain: TerrainSpec,
    pub commands: Vec<CommandEntry>,
    #[serde(default)]
    pub gait: GaitLibraryConfig,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub wbc: WbcConfig,
    #[serde(default)]
    pub foothold: FootholdConfig,
    #[serde(default)]
    pub contact: ContactModelConfig,
    #[serde(default)]
    pub initial: InitialStateConfig,
}

impl Scenario {
    pub fn from_json(json: &str) -> Result<Scenario, ScenarioError> {
        let scenario: Scenario =
            serde_json::from_str(json).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.duration <= 0.0 {
            return Err(ScenarioError::Invalid("duration must be positive".into()));
        }
        if self.commands.is_empty() {
            return Err(ScenarioError::Invalid("command timeline is empty".into()));
        }
        if self.commands[0].time > 0.0 {
            return Err(ScenarioError::Invalid(
                "command timeline must start at time 0".into(),
            ));
        }
        for pair in self.commands.windows(2) {
            if pair[1].time <= pair[0].time {
                return Err(ScenarioError::Invalid(
                    "command times must be strictly increasing".into(),
                ));
            }
        }
        if !self.initial.joint_positions.is_empty() && self.initial.joint_positions.len() != 16 {
            return Err(ScenarioError::Invalid(format!(
                "initial joint_positions needs 16 entries, got {}",
                self.initial.joint_positions.len()
            )));
        }
        Ok(())
    }

    /// Active command at time t.
    pub fn command_at(&self, t: f64) -> &CommandEntry {
        let mut active = &self.commands[0];
        for entry in &self.commands {
            if entry.time <= t {
                active = entry;
            } else {
                break;
            }
        }
        active
    }
}
