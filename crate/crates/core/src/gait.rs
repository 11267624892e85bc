//! Contact scheduling from a gait-pattern library.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Leg;

#[derive(Debug, Clone, Error)]
pub enum GaitError {
    #[error("invalid gait: {0}")]
    Invalid(String),
}

/// Swing window in normalized stride phase: the leg is airborne for
/// phase ∈ [liftoff, touchdown).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SwingWindow {
    pub liftoff: f64,
    pub touchdown: f64,
}

/// Periodic gait: per-leg swing windows over a stride. Driving is the gait
/// with no windows at all.
#[derive(Debug, Clone)]
pub struct GaitPattern {
    pub name: String,
    /// Stride duration in seconds.
    pub stride: f64,
    pub windows: [Vec<SwingWindow>; 4],
}

impl GaitPattern {
    /// All legs stay in contact; no lift-off events are scheduled.
    pub fn drive() -> GaitPattern {
        GaitPattern {
            name: "drive".into(),
            stride: 1.0,
            windows: Default::default(),
        }
    }

    /// Diagonal-pair trot: LF+RH swing first, then RF+LH.
    pub fn trot(stride: f64, duty: f64) -> Result<GaitPattern, GaitError> {
        if !(0.5..1.0).contains(&duty) {
            return Err(GaitError::Invalid(format!(
                "trot duty factor must be in [0.5, 1), got {duty}"
            )));
        }
        let swing = 1.0 - duty;
        let first = vec![SwingWindow {
            liftoff: 0.0,
            touchdown: swing,
        }];
        let second = vec![SwingWindow {
            liftoff: 0.5,
            touchdown: 0.5 + swing,
        }];
        let pattern = GaitPattern {
            name: "trot".into(),
            stride,
            windows: [first.clone(), second.clone(), second, first],
        };
        pattern.validate()?;
        Ok(pattern)
    }

    /// One swing leg at a time in LF, RH, RF, LH order.
    pub fn crawl(stride: f64, duty: f64) -> Result<GaitPattern, GaitError> {
        if !(0.75..1.0).contains(&duty) {
            return Err(GaitError::Invalid(format!(
                "crawl duty factor must be in [0.75, 1), got {duty}"
            )));
        }
        let swing = 1.0 - duty;
        let offsets = [0.0, 0.5, 0.25, 0.75]; // LF, RF, LH, RH phase offsets
        let mut windows: [Vec<SwingWindow>; 4] = Default::default();
        for (leg, off) in offsets.iter().enumerate() {
            windows[leg] = vec![SwingWindow {
                liftoff: *off,
                touchdown: off + swing,
            }];
        }
        let pattern = GaitPattern {
            name: "crawl".into(),
            stride,
            windows,
        };
        pattern.validate()?;
        Ok(pattern)
    }

    pub fn validate(&self) -> Result<(), GaitError> {
        if self.stride <= 0.0 {
            return Err(GaitError::Invalid("stride must be positive".into()));
        }
        for (leg, windows) in self.windows.iter().enumerate() {
            let mut sorted = windows.clone();
            sorted.sort_by(|a, b| a.liftoff.total_cmp(&b.liftoff));
            let mut prev_end = 0.0;
            let mut first = true;
            for w in &sorted {
                if !(0.0..1.0).contains(&w.liftoff)
                    || w.touchdown <= w.liftoff
                    || w.touchdown > 1.0
                {
                    return Err(GaitError::Invalid(format!(
                        "leg {} window [{}, {}) out of range",
                        Leg::ALL[leg],
                        w.liftoff,
                        w.touchdown
                    )));
                }
                if !first && w.liftoff < prev_end {
                    return Err(GaitError::Invalid(format!(
                        "leg {} windows overlap",
                        Leg::ALL[leg]
                    )));
                }
                prev_end = w.touchdown;
                first = false;
            }
        }
        Ok(())
    }

    pub fn phase(&self, t: f64) -> f64 {
        (t / self.stride).rem_euclid(1.0)
    }

    /// True iff the leg is in contact at time t.
    pub fn in_contact(&self, leg: Leg, t: f64) -> bool {
        let phase = self.phase(t);
        !self.windows[leg.index()]
            .iter()
            .any(|w| phase >= w.liftoff && phase < w.touchdown)
    }

    /// True if this gait schedules no swing phases at all.
    pub fn is_driving(&self) -> bool {
        self.windows.iter().all(|w| w.is_empty())
    }

    /// Absolute (liftoff, touchdown) times of the swing containing t, or of
    /// the next swing after t, for the given leg.
    pub fn swing_interval(&self, leg: Leg, t: f64) -> Option<(f64, f64)> {
        let windows = &self.windows[leg.index()];
        if windows.is_empty() {
            return None;
        }
        let cycle = (t / self.stride).floor();
        let mut best: Option<(f64, f64)> = None;
        for k in [cycle, cycle + 1.0] {
            for w in windows {
                let liftoff = (k + w.liftoff) * self.stride;
                let touchdown = (k + w.touchdown) * self.stride;
                if touchdown <= t + 1e-12 {
                    continue;
                }
                if best.map_or(true, |(lo, _)| liftoff < lo) {
                    best = Some((liftoff, touchdown));
                }
            }
        }
        best
    }
}

/// Per-leg contact flags at time t, in LF, RF, LH, RH order.
pub fn contact_flags(gait: &GaitPattern, t: f64) -> [bool; 4] {
    [
        gait.in_contact(Leg::LeftFront, t),
        gait.in_contact(Leg::RightFront, t),
        gait.in_contact(Leg::LeftHind, t),
        gait.in_contact(Leg::RightHind, t),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulePhase {
    pub flags: [bool; 4],
    pub duration: f64,
}

/// Contact schedule over a horizon: ordered phases split at every lift-off
/// and touch-down event.
#[derive(Debug, Clone)]
pub struct ContactSchedule {
    pub start: f64,
    pub horizon: f64,
    pub phases: Vec<SchedulePhase>,
}

impl ContactSchedule {
    pub fn flags_at(&self, t: f64) -> [bool; 4] {
        let mut acc = self.start;
        for phase in &self.phases {
            acc += phase.duration;
            if t < acc {
                return phase.flags;
            }
        }
        self.phases
            .last()
            .map(|p| p.flags)
            .unwrap_or([true; 4])
    }

    /// Start time of each phase.
    pub fn phase_starts(&self) -> Vec<f64> {
        let mut starts = Vec::with_capacity(self.phases.len());
        let mut acc = self.start;
        for phase in &self.phases {
            starts.push(acc);
            acc += phase.duration;
        }
        starts
    }
}

/// Partition [t0, t0 + τ] at every contact event of the gait.
pub fn schedule_horizon(gait: &GaitPattern, t0: f64, tau: f64) -> Result<ContactSchedule, GaitError> {
    if tau <= 0.0 {
        return Err(GaitError::Invalid("horizon must be positive".into()));
    }
    gait.validate()?;

    let mut boundaries = vec![t0];
    if !gait.is_driving() {
        // Event times are stride·(k + phase) for every window edge.
        let k_first = (t0 / gait.stride).floor() as i64 - 1;
        let k_last = ((t0 + tau) / gait.stride).ceil() as i64 + 1;
        for k in k_first..=k_last {
            for windows in &gait.windows {
                for w in windows {
                    for phase in [w.liftoff, w.touchdown] {
                        let event = (k as f64 + phase) * gait.stride;
                        if event > t0 && event < t0 + tau {
                            boundaries.push(event);
                        }
                    }
                }
            }
        }
    }
    boundaries.push(t0 + tau);
    boundaries.sort_by(|a, b| a.total_cmp(b));
    boundaries.dedup_by(|a, b| (*a - *b).abs() < 1e-9);

    let mut phases: Vec<SchedulePhase> = Vec::new();
    for pair in boundaries.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let flags = contact_flags(gait, 0.5 * (a + b));
        match phases.last_mut() {
            Some(last) if last.flags == flags => last.duration += b - a,
            _ => phases.push(SchedulePhase {
                flags,
                duration: b - a,
            }),
        }
    }
    Ok(ContactSchedule {
        start: t0,
        horizon: tau,
        phases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn driving_always_in_contact() {
        let gait = GaitPattern::drive();
        for t in [0.0, 0.3, 1.7, 123.4] {
            assert_eq!(contact_flags(&gait, t), [true; 4]);
        }
    }

    #[test]
    fn trot_flags_at_quarter_phase() {
        let gait = GaitPattern::trot(0.8, 0.5).unwrap();
        // Phase 0.25: LF and RH swinging ([0, 0.5) window), RF and LH down.
        let flags = contact_flags(&gait, 0.25 * 0.8);
        assert_eq!(flags, [false, true, true, false]);
    }

    #[test]
    fn periodicity_at_stride_boundary() {
        let gait = GaitPattern::trot(0.8, 0.5).unwrap();
        assert_eq!(contact_flags(&gait, 0.0), contact_flags(&gait, 0.8));
        for k in 1..5 {
            assert_eq!(
                contact_flags(&gait, 0.1),
                contact_flags(&gait, 0.1 + k as f64 * 0.8)
            );
        }
    }

    #[test]
    fn driving_horizon_single_phase() {
        let gait = GaitPattern::drive();
        let schedule = schedule_horizon(&gait, 0.0, 2.0).unwrap();
        assert_eq!(schedule.phases.len(), 1);
        assert_eq!(schedule.phases[0].flags, [true; 4]);
        assert_relative_eq!(schedule.phases[0].duration, 2.0);
    }

    #[test]
    fn trot_one_stride_two_phases() {
        let gait = GaitPattern::trot(0.8, 0.5).unwrap();
        let schedule = schedule_horizon(&gait, 0.0, 0.8).unwrap();
        assert_eq!(schedule.phases.len(), 2);
        assert_relative_eq!(schedule.phases[0].duration, 0.4, epsilon = 1e-12);
        assert_relative_eq!(schedule.phases[1].duration, 0.4, epsilon = 1e-12);
        assert_eq!(schedule.phases[0].flags, [false, true, true, false]);
        assert_eq!(schedule.phases[1].flags, [true, false, false, true]);
    }

    #[test]
    fn horizon_crossing_stride_boundary_durations_sum() {
        let gait = GaitPattern::trot(0.8, 0.55).unwrap();
        let tau = 1.234;
        let schedule = schedule_horizon(&gait, 0.57, tau).unwrap();
        let total: f64 = schedule.phases.iter().map(|p| p.duration).sum();
        assert!((total - tau).abs() < 1e-9);
        // Consecutive phases must differ in at least one flag.
        for pair in schedule.phases.windows(2) {
            assert_ne!(pair[0].flags, pair[1].flags);
        }
    }

    #[test]
    fn phase_boundaries_coincide_with_events() {
        let gait = GaitPattern::crawl(1.2, 0.85).unwrap();
        let schedule = schedule_horizon(&gait, 0.1, 2.0).unwrap();
        for start in schedule.phase_starts().iter().skip(1) {
            // Each internal boundary is a lift-off or touch-down: the flag
            // vector changes across it.
            let before = contact_flags(&gait, start - 1e-6);
            let after = contact_flags(&gait, start + 1e-6);
            assert_ne!(before, after, "no event at t = {start}");
        }
    }

    #[test]
    fn crawl_has_at_most_one_swing_leg() {
        let gait = GaitPattern::crawl(1.0, 0.85).unwrap();
        for i in 0..100 {
            let flags = contact_flags(&gait, i as f64 * 0.01);
            let swinging = flags.iter().filter(|c| !**c).count();
            assert!(swinging <= 1);
        }
    }

    #[test]
    fn swing_interval_current_and_next() {
        let gait = GaitPattern::trot(0.8, 0.5).unwrap();
        // LF swings during [0, 0.4) of each stride.
        let (lo, td) = gait.swing_interval(Leg::LeftFront, 0.1).unwrap();
        assert_relative_eq!(lo, 0.0, epsilon = 1e-12);
        assert_relative_eq!(td, 0.4, epsilon = 1e-12);
        // After touchdown the next swing starts a stride later.
        let (lo, td) = gait.swing_interval(Leg::LeftFront, 0.5).unwrap();
        assert_relative_eq!(lo, 0.8, epsilon = 1e-12);
        assert_relative_eq!(td, 1.2, epsilon = 1e-12);
        // RF swings during [0.4, 0.8).
        let (lo, td) = gait.swing_interval(Leg::RightFront, 0.5).unwrap();
        assert_relative_eq!(lo, 0.4, epsilon = 1e-12);
        assert_relative_eq!(td, 0.8, epsilon = 1e-12);
        assert!(GaitPattern::drive().swing_interval(Leg::LeftFront, 0.0).is_none());
    }

    #[test]
    fn invalid_duty_rejected() {
        assert!(GaitPattern::trot(0.8, 0.4).is_err());
        assert!(GaitPattern::trot(0.0, 0.5).is_err());
    }
}
