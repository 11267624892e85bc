//! Receding-horizon COM motion optimization on quintic splines with the
//! zero-moment-point stability constraint.
//!
//! All planning happens in the terrain-aligned plan frame, whose z axis is
//! the estimated terrain normal; the gravity vector is rotated into that
//! frame so slopes are handled without special cases.

mod sqp;

pub use sqp::{solve_motion_plan, MotionProblem, PlannerConfig, PlannerError};

use nalgebra::{Unit, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::foothold::expected_foothold;
use crate::gait::ContactSchedule;
use crate::terrain::PlanFrame;

#[derive(Debug, Clone, Error)]
pub enum ZmpError {
    #[error("gravito-inertial force is orthogonal to the terrain normal (free-fall-like acceleration)")]
    VanishingDenominator,
    #[error("support polygon needs at least 2 stance legs, got {0}")]
    TooFewStanceLegs(usize),
    #[error("evaluation time {t} outside plan horizon [{start}, {end}]")]
    OutsideHorizon { t: f64, start: f64, end: f64 },
    #[error("plan has no segments")]
    EmptyPlan,
}

/// Gravito-inertial model: the angular-momentum rate is taken as zero.
#[derive(Debug, Clone, Copy)]
pub struct GravitoInertial {
    pub mass: f64,
    pub gravity: Vector3<f64>,
}

/// ZMP position p = n × m_O / (nᵀ f) with m_O = m p_COM × (g - p̈) and
/// f = m (g - p̈). The inputs and the result share one frame whose origin
/// lies on the support plane.
pub fn zmp_position(
    p_com: &Vector3<f64>,
    p_ddot: &Vector3<f64>,
    normal: &Unit<Vector3<f64>>,
    gi: &GravitoInertial,
) -> Result<Vector3<f64>, ZmpError> {
    let w = gi.gravity - p_ddot;
    let f = gi.mass * w;
    let denom = normal.dot(&f);
    if denom.abs() <= 1e-6 * gi.mass * gi.gravity.norm() {
        return Err(ZmpError::VanishingDenominator);
    }
    let moment = gi.mass * p_com.cross(&w);
    Ok(normal.cross(&moment) / denom)
}

/// Support-polygon edge line coefficients d = [p, q, r] with p² + q² = 1 and
/// positive margin inside: p·x + q·y + r >= 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub p: f64,
    pub q: f64,
    pub r: f64,
}

impl Edge {
    pub fn normalized(p: f64, q: f64, r: f64) -> Edge {
        let n = (p * p + q * q).sqrt();
        Edge {
            p: p / n,
            q: q / n,
            r: r / n,
        }
    }

    /// Signed distance of an xy point to the edge, positive inside.
    pub fn margin(&self, xy: &Vector2<f64>) -> f64 {
        self.p * xy.x + self.q * xy.y + self.r
    }
}

/// Linear interpolation of edge coefficients over a driving phase, with
/// d(t̄) = start and d(t̄ + τ) = end, renormalized to p² + q² = 1.
pub fn deformed_edge(start: &Edge, end: &Edge, t: f64, t_bar: f64, tau: f64) -> Edge {
    let s = ((t - t_bar) / tau).clamp(0.0, 1.0);
    Edge::normalized(
        (1.0 - s) * start.p + s * end.p,
        (1.0 - s) * start.q + s * end.q,
        (1.0 - s) * start.r + s * end.r,
    )
}

/// One edge of a support polygon phase; driving phases carry the predicted
/// end-of-horizon coefficients for deformation.
#[derive(Debug, Clone, Copy)]
pub struct EdgePair {
    pub start: Edge,
    pub end: Option<Edge>,
}

#[derive(Debug, Clone)]
pub struct SupportPolygonPhase {
    pub duration: f64,
    pub edges: Vec<EdgePair>,
}

impl SupportPolygonPhase {
    /// Edge coefficients at local phase time s ∈ [0, duration].
    pub fn edge_at(&self, index: usize, s: f64) -> Edge {
        let pair = &self.edges[index];
        match &pair.end {
            Some(end) => deformed_edge(&pair.start, end, s, 0.0, self.duration),
            None => pair.start,
        }
    }

    /// Minimum edge margin at an xy point and local time.
    pub fn margin_at(&self, xy: &Vector2<f64>, s: f64) -> f64 {
        (0..self.edges.len())
            .map(|i| self.edge_at(i, s).margin(xy))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Convex hull edges of up to four labelled points, counter-clockwise, with
/// the polygon interior on the positive side of every edge. Two-point (or
/// collinear) footprints degenerate to a band of width `line_width` around
/// the support line.
pub fn footprint_edges(
    points: &[(usize, Vector2<f64>)],
    line_width: f64,
) -> Result<Vec<Edge>, ZmpError> {
    hull_pairs(points, line_width).map(|pairs| pairs_to_edges(points, &pairs, line_width))
}

/// Hull structure as index pairs into the labelled points. An empty second
/// entry marks the degenerate band case: (i, j) are the extreme points.
fn hull_pairs(
    points: &[(usize, Vector2<f64>)],
    _line_width: f64,
) -> Result<Vec<(usize, usize)>, ZmpError> {
    if points.len() < 2 {
        return Err(ZmpError::TooFewStanceLegs(points.len()));
    }
    // Work on indices into `points`.
    let idx: Vec<usize> = (0..points.len()).collect();
    // Degenerate (2 points or collinear) → band between extreme points.
    let area2 = |a: &Vector2<f64>, b: &Vector2<f64>, c: &Vector2<f64>| -> f64 {
        (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
    };
    let collinear = points.len() == 2 || {
        let mut max_area: f64 = 0.0;
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                for k in j + 1..points.len() {
                    max_area =
                        max_area.max(area2(&points[i].1, &points[j].1, &points[k].1).abs());
                }
            }
        }
        max_area < 1e-8
    };
    if collinear {
        // Extreme pair: maximum pairwise distance.
        let mut best = (0, 1);
        let mut best_d = -1.0;
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                let d = (points[i].1 - points[j].1).norm();
                if d > best_d {
                    best_d = d;
                    best = (i, j);
                }
            }
        }
        if best_d < 1e-9 {
            return Err(ZmpError::TooFewStanceLegs(1));
        }
        return Ok(vec![best]);
    }
    // Gift wrapping over at most 4 points, counter-clockwise.
    let start = idx
        .iter()
        .copied()
        .min_by(|&a, &b| {
            (points[a].1.x, points[a].1.y)
                .partial_cmp(&(points[b].1.x, points[b].1.y))
                .unwrap()
        })
        .unwrap();
    let mut hull = vec![start];
    loop {
        let current = *hull.last().unwrap();
        let mut next = usize::MAX;
        for &cand in &idx {
            if cand == current {
                continue;
            }
            if next == usize::MAX {
                next = cand;
                continue;
            }
            let cross = area2(&points[current].1, &points[next].1, &points[cand].1);
            let further = cross.abs() < 1e-12
                && (points[cand].1 - points[current].1).norm()
                    > (points[next].1 - points[current].1).norm();
            if cross > 1e-12 || further {
                next = cand;
            }
        }
        if next == start || hull.len() > points.len() {
            break;
        }
        hull.push(next);
    }
    Ok(hull
        .iter()
        .zip(hull.iter().cycle().skip(1))
        .map(|(&a, &b)| (a, b))
        .collect())
}

fn pairs_to_edges(
    points: &[(usize, Vector2<f64>)],
    pairs: &[(usize, usize)],
    line_width: f64,
) -> Vec<Edge> {
    if pairs.len() == 1 {
        // Band around the support line, ± line_width / 2.
        let (i, j) = pairs[0];
        let (a, b) = (points[i].1, points[j].1);
        let u = (b - a).normalize();
        let n = Vector2::new(-u.y, u.x);
        let offset = n.dot(&a);
        return vec![
            Edge::normalized(n.x, n.y, -offset + line_width / 2.0),
            Edge::normalized(-n.x, -n.y, offset + line_width / 2.0),
        ];
    }
    let centroid: Vector2<f64> =
        points.iter().map(|(_, p)| *p).sum::<Vector2<f64>>() / points.len() as f64;
    pairs
        .iter()
        .map(|&(i, j)| {
            let (a, b) = (points[i].1, points[j].1);
            let u = (b - a).normalize();
            let n = Vector2::new(-u.y, u.x);
            let mut e = Edge::normalized(n.x, n.y, -n.dot(&a));
            if e.margin(&centroid) < 0.0 {
                e = Edge {
                    p: -e.p,
                    q: -e.q,
                    r: -e.r,
                };
            }
            e
        })
        .collect()
}

/// Build the support-polygon sequence for a schedule.
///
/// Walking gaits produce one static polygon per schedule phase, taking each
/// leg's position from the current foothold map and replacing it with the
/// optimized target when the leg touches down inside the horizon. A driving
/// schedule (single all-contact phase) produces one phase whose edges deform
/// from the current hull to the hull of the velocity-predicted footholds.
pub fn build_polygon_sequence(
    schedule: &ContactSchedule,
    footholds_now: &[Option<Vector2<f64>>; 4],
    upcoming_targets: &[Option<Vector2<f64>>; 4],
    driving: bool,
    v_ref: &Vector2<f64>,
    yaw_rate: f64,
    line_width: f64,
) -> Result<Vec<SupportPolygonPhase>, ZmpError> {
    if driving && schedule.phases.len() == 1 {
        let tau = schedule.horizon;
        let mut current: Vec<(usize, Vector2<f64>)> = Vec::new();
        for (leg, xy) in footholds_now.iter().enumerate() {
            if let Some(xy) = xy {
                current.push((leg, *xy));
            }
        }
        let pairs = hull_pairs(&current, line_width)?;
        let predicted: Vec<(usize, Vector2<f64>)> = current
            .iter()
            .map(|(leg, xy)| {
                let p = expected_foothold(
                    &Vector3::new(xy.x, xy.y, 0.0),
                    &Vector3::new(v_ref.x, v_ref.y, 0.0),
                    yaw_rate,
                    tau,
                );
                (*leg, Vector2::new(p.x, p.y))
            })
            .collect();
        let start_edges = pairs_to_edges(&current, &pairs, line_width);
        let end_edges = pairs_to_edges(&predicted, &pairs, line_width);
        let edges = start_edges
            .into_iter()
            .zip(end_edges)
            .map(|(start, end)| EdgePair {
                start,
                end: Some(end),
            })
            .collect();
        return Ok(vec![SupportPolygonPhase {
            duration: tau,
            edges,
        }]);
    }

    let mut map = *footholds_now;
    let mut phases = Vec::with_capacity(schedule.phases.len());
    let mut previous_flags: Option<[bool; 4]> = None;
    for phase in &schedule.phases {
        if let Some(prev) = previous_flags {
            for leg in 0..4 {
                if !prev[leg] && phase.flags[leg] {
                    // Touch-down: the leg lands on its optimized target.
                    if let Some(target) = upcoming_targets[leg] {
                        map[leg] = Some(target);
                    }
                }
            }
        }
        let stance: Vec<(usize, Vector2<f64>)> = (0..4)
            .filter(|&leg| phase.flags[leg])
            .filter_map(|leg| map[leg].map(|xy| (leg, xy)))
            .collect();
        if stance.len() < 2 {
            return Err(ZmpError::TooFewStanceLegs(stance.len()));
        }
        let edges = footprint_edges(&stance, line_width)?
            .into_iter()
            .map(|start| EdgePair { start, end: None })
            .collect();
        phases.push(SupportPolygonPhase {
            duration: phase.duration,
            edges,
        });
        previous_flags = Some(phase.flags);
    }
    Ok(phases)
}

// ---------------------------------------------------------------------------
// Motion plan

pub const SPLINE_COEFFS: usize = 18;

/// Quintic basis η(t) = [t⁵, t⁴, t³, t², t, 1] and its derivatives; spline
/// coefficients use the global plan time.
pub fn eta(t: f64, derivative: usize) -> Vector6<f64> {
    let powers = [5i32, 4, 3, 2, 1, 0];
    let mut out = Vector6::zeros();
    for (i, &p) in powers.iter().enumerate() {
        let mut coeff = 1.0;
        let mut power = p;
        for _ in 0..derivative {
            coeff *= power as f64;
            power -= 1;
        }
        if power >= 0 {
            out[i] = coeff * t.powi(power);
        }
    }
    out
}

/// Per-segment coefficients α ∈ R¹⁸ laid out as [αx; αy; αz].
pub type SplineCoefficients = nalgebra::SVector<f64, SPLINE_COEFFS>;

pub fn evaluate_spline(
    coeffs: &SplineCoefficients,
    t: f64,
) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    let b0 = eta(t, 0);
    let b1 = eta(t, 1);
    let b2 = eta(t, 2);
    let mut p = Vector3::zeros();
    let mut v = Vector3::zeros();
    let mut a = Vector3::zeros();
    for axis in 0..3 {
        let alpha = coeffs.fixed_rows::<6>(6 * axis);
        p[axis] = alpha.dot(&b0);
        v[axis] = alpha.dot(&b1);
        a[axis] = alpha.dot(&b2);
    }
    (p, v, a)
}

/// Gradient of the denominator-multiplied ZMP edge constraint with respect
/// to one segment's 18 coefficients, evaluated at plan time t.
pub fn zmp_gradient(
    edge: &Edge,
    coeffs: &SplineCoefficients,
    t: f64,
    gravity: &Vector3<f64>,
) -> SplineCoefficients {
    let (p, _, a) = evaluate_spline(coeffs, t);
    sqp::zmp_constraint_gradient(edge, &p, &a, gravity, t)
}

/// Diagnostics recorded when a plan is accepted.
#[derive(Debug, Clone, Default)]
pub struct PlanDiagnostics {
    pub sqp_iterations: usize,
    pub converged: bool,
    pub degraded: bool,
    /// Worst position/velocity/acceleration jump across junctions.
    pub max_junction_residual: f64,
    /// Minimum recomputed ZMP margin over the hard samples.
    pub min_hard_margin: f64,
    /// Minimum recomputed ZMP margin over all samples including softened.
    pub min_sample_margin: f64,
    /// Maximum slack used by the softened initial ZMP constraints.
    pub max_soft_slack: f64,
    /// Merit values across accepted SQP iterations.
    pub merit_history: Vec<f64>,
    pub wall_time_ms: f64,
}

/// Receding-horizon COM plan: a sequence of quintic splines in the plan
/// frame, one per support phase.
#[derive(Debug, Clone)]
pub struct MotionPlan {
    pub start_time: f64,
    pub horizon: f64,
    pub durations: Vec<f64>,
    pub coefficients: Vec<SplineCoefficients>,
    pub plan_frame: PlanFrame,
    pub polygons: Vec<SupportPolygonPhase>,
    /// Stacked coefficient copy of the previous solution this plan warm
    /// started from.
    pub previous_solution: Option<Vec<SplineCoefficients>>,
    pub mass: f64,
    /// Gravity in plan-frame coordinates.
    pub gravity_plan: Vector3<f64>,
    pub diagnostics: PlanDiagnostics,
}

impl MotionPlan {
    /// Segment index and plan-local time for an absolute time.
    fn locate(&self, t: f64) -> Result<(usize, f64), ZmpError> {
        if self.coefficients.is_empty() {
            return Err(ZmpError::EmptyPlan);
        }
        let tp = t - self.start_time;
        let tol = 1e-9;
        if tp < -tol || tp > self.horizon + tol {
            return Err(ZmpError::OutsideHorizon {
                t,
                start: self.start_time,
                end: self.start_time + self.horizon,
            });
        }
        let tp = tp.clamp(0.0, self.horizon);
        let mut acc = 0.0;
        for (k, d) in self.durations.iter().enumerate() {
            if tp <= acc + d || k == self.durations.len() - 1 {
                return Ok((k, tp));
            }
            acc += d;
        }
        unreachable!()
    }

    /// COM position, velocity and acceleration (plan frame) at absolute time t.
    pub fn evaluate(&self, t: f64) -> Result<(Vector3<f64>, Vector3<f64>, Vector3<f64>), ZmpError> {
        let (k, tp) = self.locate(t)?;
        Ok(evaluate_spline(&self.coefficients[k], tp))
    }

    /// Evaluate a specific segment at plan-local time (junction tests).
    pub fn evaluate_segment(
        &self,
        segment: usize,
        t_plan: f64,
    ) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        evaluate_spline(&self.coefficients[segment], t_plan)
    }

    /// Start time (plan-local) of each segment.
    pub fn segment_starts(&self) -> Vec<f64> {
        let mut starts = Vec::with_capacity(self.durations.len());
        let mut acc = 0.0;
        for d in &self.durations {
            starts.push(acc);
            acc += d;
        }
        starts
    }

    /// Active polygon phase index at plan-local time.
    fn polygon_at(&self, tp: f64) -> (usize, f64) {
        let mut acc = 0.0;
        for (k, phase) in self.polygons.iter().enumerate() {
            if tp <= acc + phase.duration || k == self.polygons.len() - 1 {
                return (k, tp - acc);
            }
            acc += phase.duration;
        }
        (0, tp)
    }

    /// ZMP position (plan frame) and its minimum edge margin at time t.
    pub fn zmp_at(&self, t: f64) -> Result<(Vector3<f64>, f64), ZmpError> {
        let (p, _, a) = self.evaluate(t)?;
        let gi = GravitoInertial {
            mass: self.mass,
            gravity: self.gravity_plan,
        };
        let zmp = zmp_position(&p, &a, &Vector3::z_axis(), &gi)?;
        let (k, s) = self.polygon_at(t - self.start_time);
        let margin = self.polygons[k].margin_at(&Vector2::new(zmp.x, zmp.y), s);
        Ok((zmp, margin))
    }
}

#[cfg(test)]
mod tests;
