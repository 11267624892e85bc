//! Locomotion stack for a quadruped whose legs end in actuated wheels.
//!
//! The pipeline runs terrain estimation, contact scheduling, foothold
//! optimization, a receding-horizon ZMP motion optimizer and a hierarchical
//! whole-body controller, closed in a built-in rigid-body simulator driven
//! by scripted velocity-command scenarios.

pub mod foothold;
pub mod gait;
pub mod math;
pub mod metrics;
pub mod model;
pub mod qp;
pub mod sim;
pub mod terrain;
pub mod verify;
pub mod wbc;
pub mod zmp;

/// Fixed leg order used for every stacked per-leg quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Leg {
    LeftFront = 0,
    RightFront = 1,
    LeftHind = 2,
    RightHind = 3,
}

impl Leg {
    pub const ALL: [Leg; 4] = [
        Leg::LeftFront,
        Leg::RightFront,
        Leg::LeftHind,
        Leg::RightHind,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Leg> {
        Leg::ALL.get(i).copied()
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Leg::LeftFront => "LF",
            Leg::RightFront => "RF",
            Leg::LeftHind => "LH",
            Leg::RightHind => "RH",
        }
    }
}

impl std::fmt::Display for Leg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.short_name())
    }
}
