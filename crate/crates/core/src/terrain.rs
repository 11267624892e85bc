//! Local terrain-plane estimation from recent wheel contacts and the
//! terrain-aligned frames built on top of it.

use nalgebra::{Isometry3, Matrix3, Translation3, Unit, UnitQuaternion, Vector3};
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum TerrainError {
    #[error("need at least 3 contact samples, got {0}")]
    TooFewSamples(usize),
    #[error("contact samples are degenerate (collinear or worse)")]
    DegenerateSamples,
    #[error("wheel axle is parallel to the terrain normal")]
    AxleParallelToNormal,
    #[error("heading direction is parallel to the terrain normal")]
    HeadingParallelToNormal,
    #[error("plan frame needs at least one foothold")]
    NoFootholds,
}

/// Local terrain plane: unit upward normal and a point on the plane.
#[derive(Debug, Clone)]
pub struct TerrainPlane {
    pub normal: Unit<Vector3<f64>>,
    pub point: Vector3<f64>,
    /// Time of the last successful update (s).
    pub updated_at: f64,
}

impl TerrainPlane {
    pub fn horizontal(height: f64) -> TerrainPlane {
        TerrainPlane {
            normal: Vector3::z_axis(),
            point: Vector3::new(0.0, 0.0, height),
            updated_at: 0.0,
        }
    }

    /// Signed distance of a point above the plane.
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(&(p - self.point))
    }

    /// Orthogonal projection onto the plane.
    pub fn project(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p - self.normal.into_inner() * self.signed_distance(p)
    }
}

/// One wheel-contact sample: wheel-center position and axle direction.
#[derive(Debug, Clone)]
pub struct ContactSample {
    pub wheel_center: Vector3<f64>,
    pub axle: Unit<Vector3<f64>>,
}

/// Least-squares plane through the wheel centers, shifted along each wheel's
/// projected negative normal by the wheel radius so it passes through the rim
/// contact points.
pub fn estimate_plane(
    samples: &[ContactSample],
    wheel_radius: f64,
    now: f64,
) -> Result<TerrainPlane, TerrainError> {
    if samples.len() < 3 {
        return Err(TerrainError::TooFewSamples(samples.len()));
    }
    let centroid: Vector3<f64> =
        samples.iter().map(|s| s.wheel_center).sum::<Vector3<f64>>() / samples.len() as f64;
    let mut scatter = Matrix3::zeros();
    for s in samples {
        let d = s.wheel_center - centroid;
        scatter += d * d.transpose();
    }
    let eig = scatter.symmetric_eigen();
    let mut min_idx = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] < eig.eigenvalues[min_idx] {
            min_idx = i;
        }
    }
    // Collinear samples leave two near-zero eigenvalues; compare against the
    // largest one for a scale-free condition test.
    let max_eig = eig.eigenvalues.max();
    let mut mid = f64::INFINITY;
    for i in 0..3 {
        if i != min_idx {
            mid = mid.min(eig.eigenvalues[i]);
        }
    }
    if !(mid > 1e-8 * max_eig.max(1e-12)) {
        return Err(TerrainError::DegenerateSamples);
    }
    let mut normal = eig.eigenvectors.column(min_idx).into_owned();
    if normal.z < 0.0 {
        normal = -normal;
    }
    let normal = Unit::new_normalize(normal);

    // Shift from wheel centers to rim contact points: r0 times the
    // normalized projection of -n onto each wheel plane, averaged.
    let mut shift = Vector3::zeros();
    let mut count = 0usize;
    for s in samples {
        let n = normal.into_inner();
        let proj = -(n - s.axle.into_inner() * n.dot(&s.axle));
        if let Some(dir) = Unit::try_new(proj, 1e-9) {
            shift += dir.into_inner() * wheel_radius;
            count += 1;
        }
    }
    if count > 0 {
        shift /= count as f64;
    }
    Ok(TerrainPlane {
        normal,
        point: centroid + shift,
        updated_at: now,
    })
}

/// Rolling estimator: keeps the most recent contact sample per leg and blends
/// consecutive normals to avoid support-polygon chatter.
#[derive(Debug, Clone)]
pub struct TerrainEstimator {
    samples: [Option<ContactSample>; 4],
    plane: TerrainPlane,
    /// Exponential smoothing factor applied to the normal (1 = no smoothing).
    pub smoothing: f64,
    pub stale: bool,
}

impl TerrainEstimator {
    pub fn new(initial: TerrainPlane, smoothing: f64) -> TerrainEstimator {
        TerrainEstimator {
            samples: [None, None, None, None],
            plane: initial,
            smoothing,
            stale: false,
        }
    }

    pub fn record(&mut self, leg: crate::Leg, sample: ContactSample) {
        self.samples[leg.index()] = Some(sample);
    }

    /// Refit the plane from the stored samples; on degenerate input the
    /// previous plane is kept and flagged stale.
    pub fn update(&mut self, wheel_radius: f64, now: f64) -> &TerrainPlane {
        let samples: Vec<ContactSample> = self.samples.iter().flatten().cloned().collect();
        match estimate_plane(&samples, wheel_radius, now) {
            Ok(new_plane) => {
                let blended = self.plane.normal.into_inner() * (1.0 - self.smoothing)
                    + new_plane.normal.into_inner() * self.smoothing;
                self.plane = TerrainPlane {
                    normal: Unit::new_normalize(blended),
                    point: new_plane.point,
                    updated_at: now,
                };
                self.stale = false;
            }
            Err(_) => {
                self.stale = true;
            }
        }
        &self.plane
    }

    pub fn plane(&self) -> &TerrainPlane {
        &self.plane
    }
}

/// Terrain-aligned contact frame: x along the wheel rolling direction,
/// z along the terrain normal, origin on the terrain plane.
#[derive(Debug, Clone)]
pub struct ContactFrameInfo {
    pub origin: Vector3<f64>,
    /// Columns: rolling direction c_x, lateral c_y, normal n.
    pub rotation: Matrix3<f64>,
}

impl ContactFrameInfo {
    pub fn rolling_direction(&self) -> Vector3<f64> {
        self.rotation.column(0).into_owned()
    }

    pub fn lateral(&self) -> Vector3<f64> {
        self.rotation.column(1).into_owned()
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }
}

/// Contact frame of a wheel: rolling direction c_x = w_y × n / |w_y × n|,
/// z axis along the terrain normal, origin at the rim contact point projected
/// onto the plane.
pub fn contact_frame(
    plane: &TerrainPlane,
    axle: &Unit<Vector3<f64>>,
    wheel_center: &Vector3<f64>,
    wheel_radius: f64,
) -> Result<ContactFrameInfo, TerrainError> {
    let n = plane.normal.into_inner();
    let cx = Unit::try_new(axle.cross(&n), 1e-6).ok_or(TerrainError::AxleParallelToNormal)?;
    let cy = n.cross(&cx.into_inner());
    // Lowest rim point: wheel center plus r0 along the projection of -n onto
    // the wheel plane, dropped onto the terrain plane.
    let proj = -(n - axle.into_inner() * n.dot(axle));
    let dir = Unit::try_new(proj, 1e-9).ok_or(TerrainError::AxleParallelToNormal)?;
    let rim = wheel_center + dir.into_inner() * wheel_radius;
    Ok(ContactFrameInfo {
        origin: plane.project(&rim),
        rotation: Matrix3::from_columns(&[cx.into_inner(), cy, n]),
    })
}

/// Terrain-aligned planning frame at the footprint center.
#[derive(Debug, Clone)]
pub struct PlanFrame {
    pub pose: Isometry3<f64>,
}

impl PlanFrame {
    pub fn rotation(&self) -> Matrix3<f64> {
        *self.pose.rotation.to_rotation_matrix().matrix()
    }

    pub fn origin(&self) -> Vector3<f64> {
        self.pose.translation.vector
    }

    pub fn to_world(&self, p_plan: &Vector3<f64>) -> Vector3<f64> {
        self.pose
            .transform_point(&nalgebra::Point3::from(*p_plan))
            .coords
    }

    pub fn to_plan(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.pose
            .inverse_transform_point(&nalgebra::Point3::from(*p_world))
            .coords
    }

    pub fn rotate_to_world(&self, v_plan: &Vector3<f64>) -> Vector3<f64> {
        self.pose.rotation * v_plan
    }

    pub fn rotate_to_plan(&self, v_world: &Vector3<f64>) -> Vector3<f64> {
        self.pose.rotation.inverse() * v_world
    }

    /// Gravity vector expressed in plan-frame coordinates.
    pub fn gravity(&self, gravity_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotate_to_plan(gravity_world)
    }
}

/// Plan frame P: origin at the foothold centroid projected onto the terrain
/// plane along n, z axis along n, x axis along the heading direction
/// projected perpendicular to n.
pub fn plan_frame(
    plane: &TerrainPlane,
    footholds: &[Vector3<f64>],
    heading: &Vector3<f64>,
) -> Result<PlanFrame, TerrainError> {
    if footholds.is_empty() {
        return Err(TerrainError::NoFootholds);
    }
    let n = plane.normal.into_inner();
    let x_raw = heading - n * heading.dot(&n);
    let x = Unit::try_new(x_raw, 1e-6).ok_or(TerrainError::HeadingParallelToNormal)?;
    let y = n.cross(&x.into_inner());
    let centroid = footholds.iter().sum::<Vector3<f64>>() / footholds.len() as f64;
    let origin = plane.project(&centroid);
    let rot = Matrix3::from_columns(&[x.into_inner(), y, n]);
    Ok(PlanFrame {
        pose: Isometry3::from_parts(
            Translation3::from(origin),
            UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(rot)),
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn upright(center: [f64; 3]) -> ContactSample {
        ContactSample {
            wheel_center: Vector3::from(center),
            axle: Vector3::y_axis(),
        }
    }

    #[test]
    fn flat_ground_plane_shifted_down_by_wheel_radius() {
        let samples = vec![
            upright([0.3, 0.2, 0.1]),
            upright([-0.3, 0.2, 0.1]),
            upright([-0.3, -0.2, 0.1]),
            upright([0.3, -0.2, 0.1]),
        ];
        let plane = estimate_plane(&samples, 0.1, 0.0).unwrap();
        assert_relative_eq!(plane.normal.into_inner(), Vector3::z(), epsilon = 1e-12);
        // Wheel centers at z = 0.1 with r0 = 0.1: the plane passes through
        // the rim contact points at z = 0.
        assert_relative_eq!(plane.point.z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn incline_recovered_exactly() {
        let angle = 15f64.to_radians();
        let normal = Vector3::new(-angle.sin(), 0.0, angle.cos());
        let r0 = 0.08;
        // Points on the plane n·x = 0, displaced by r0·n so wheel centers sit
        // one radius above it; axles perpendicular to the slope direction.
        let axle = Unit::new_normalize(normal.cross(&Vector3::x()));
        let mut samples = Vec::new();
        for (a, b) in [(0.4, 0.2), (-0.4, 0.2), (-0.4, -0.2), (0.4, -0.2)] {
            let t1 = Vector3::new(angle.cos(), 0.0, angle.sin());
            let t2 = Vector3::y();
            // The projection of -n onto these wheels' planes is exactly -n,
            // so centers at p + r0 n give contact points exactly on the plane.
            samples.push(ContactSample {
                wheel_center: t1 * a + t2 * b + normal * r0,
                axle,
            });
        }
        let plane = estimate_plane(&samples, r0, 0.0).unwrap();
        assert_relative_eq!(plane.normal.into_inner(), normal, epsilon = 1e-9);
        assert!(plane.normal.dot(&plane.point).abs() < 1e-9);
    }

    #[test]
    fn collinear_points_rejected() {
        let samples = vec![
            upright([0.0, 0.0, 0.0]),
            upright([0.1, 0.1, 0.0]),
            upright([0.2, 0.2, 0.0]),
        ];
        assert!(matches!(
            estimate_plane(&samples, 0.1, 0.0),
            Err(TerrainError::DegenerateSamples)
        ));
    }

    #[test]
    fn estimator_keeps_previous_plane_when_degenerate() {
        let mut est = TerrainEstimator::new(TerrainPlane::horizontal(0.0), 1.0);
        est.record(crate::Leg::LeftFront, upright([0.0, 0.0, 0.5]));
        est.record(crate::Leg::RightFront, upright([0.1, 0.1, 0.5]));
        est.record(crate::Leg::LeftHind, upright([0.2, 0.2, 0.5]));
        est.update(0.1, 1.0);
        assert!(est.stale);
        assert_relative_eq!(est.plane().point.z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn noisy_flat_plane_normal_within_half_degree() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let sigma = 1e-3;
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let mut samples = Vec::new();
            for (x, y) in [(0.35, 0.21), (-0.35, 0.21), (-0.35, -0.21), (0.35, -0.21)] {
                let noise = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ) * sigma;
                samples.push(upright([x + noise.x, y + noise.y, 0.1 + noise.z]));
            }
            let plane = estimate_plane(&samples, 0.1, 0.0).unwrap();
            let angle = plane.normal.dot(&Vector3::z()).clamp(-1.0, 1.0).acos();
            worst = worst.max(angle.to_degrees());
        }
        assert!(worst < 0.5, "worst normal error {worst:.3} deg");
    }

    #[test]
    fn contact_frame_axes() {
        let plane = TerrainPlane::horizontal(0.0);
        // Upright wheel, axle along +y: rolling direction is +x.
        let f = contact_frame(&plane, &Vector3::y_axis(), &Vector3::new(0.0, 0.0, 0.1), 0.1)
            .unwrap();
        assert_relative_eq!(f.rolling_direction(), Vector3::x(), epsilon = 1e-12);
        assert_relative_eq!(f.origin, Vector3::zeros(), epsilon = 1e-12);
        // Wheel yawed 90 degrees: axle along -x, rolling direction +y.
        let f = contact_frame(
            &plane,
            &Unit::new_normalize(-Vector3::x()),
            &Vector3::new(0.0, 0.0, 0.1),
            0.1,
        )
        .unwrap();
        assert_relative_eq!(f.rolling_direction(), Vector3::y(), epsilon = 1e-12);
    }

    #[test]
    fn contact_frame_flat_wheel_rejected() {
        let plane = TerrainPlane::horizontal(0.0);
        assert!(matches!(
            contact_frame(&plane, &Vector3::z_axis(), &Vector3::zeros(), 0.1),
            Err(TerrainError::AxleParallelToNormal)
        ));
    }

    #[test]
    fn contact_frame_orthonormal_over_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let n = Unit::new_normalize(Vector3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(0.5..1.5),
            ));
            let axle = Unit::new_normalize(Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-0.3..0.3),
            ));
            let plane = TerrainPlane {
                normal: n,
                point: Vector3::zeros(),
                updated_at: 0.0,
            };
            let Ok(f) = contact_frame(&plane, &axle, &Vector3::new(0.1, 0.2, 0.3), 0.1) else {
                continue;
            };
            let cx = f.rolling_direction();
            assert!(cx.dot(&n).abs() < 1e-12);
            assert!((cx.norm() - 1.0).abs() < 1e-12);
            let gram = f.rotation.transpose() * f.rotation;
            assert!((gram - Matrix3::identity()).abs().max() < 1e-12);
            assert!((f.rotation.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn plan_frame_flat_ground() {
        let plane = TerrainPlane::horizontal(0.0);
        let footholds = vec![
            Vector3::new(0.4, 0.3, 0.0),
            Vector3::new(-0.4, 0.3, 0.0),
            Vector3::new(-0.4, -0.3, 0.0),
            Vector3::new(0.4, -0.3, 0.0),
        ];
        let p = plan_frame(&plane, &footholds, &Vector3::x()).unwrap();
        assert_relative_eq!(p.rotation(), Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(p.origin(), Vector3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn plan_frame_on_incline() {
        let angle = 0.3f64;
        let normal = Unit::new_normalize(Vector3::new(-angle.sin(), 0.0, angle.cos()));
        let plane = TerrainPlane {
            normal,
            point: Vector3::zeros(),
            updated_at: 0.0,
        };
        let footholds = vec![Vector3::new(0.2, 0.1, 0.5), Vector3::new(-0.2, -0.1, 0.1)];
        let p = plan_frame(&plane, &footholds, &Vector3::x()).unwrap();
        assert_relative_eq!(
            p.rotation().column(2).into_owned(),
            normal.into_inner(),
            epsilon = 1e-12
        );
        // Origin is the centroid projected along n onto the plane.
        let centroid = (footholds[0] + footholds[1]) / 2.0;
        let expected = centroid - normal.into_inner() * normal.dot(&centroid);
        assert_relative_eq!(p.origin(), expected, epsilon = 1e-12);
        assert!(p.origin().dot(&normal) < 1e-9);
    }

    #[test]
    fn plan_frame_heading_parallel_to_normal_rejected() {
        let plane = TerrainPlane::horizontal(0.0);
        assert!(plan_frame(&plane, &[Vector3::zeros()], &Vector3::z()).is_err());
    }
}
