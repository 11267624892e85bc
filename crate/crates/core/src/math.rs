//! Small geometry helpers shared across the stack.

use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Vector3};

/// Skew-symmetric matrix such that `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation error as a world-frame rotation vector taking `from` onto `to`.
pub fn rotation_error(from: &UnitQuaternion<f64>, to: &UnitQuaternion<f64>) -> Vector3<f64> {
    (to * from.inverse()).scaled_axis()
}

/// Intrinsic z-x'-y'' Euler angles: yaw about z, then roll about the new x,
/// then pitch about the resulting y.
#[derive(Debug, Clone, Copy)]
pub struct EulerZxy {
    pub yaw: f64,
    pub roll: f64,
    pub pitch: f64,
}

impl EulerZxy {
    /// Decompose a rotation, failing near the roll = ±π/2 singularity.
    ///
    /// `margin` is the minimum distance of |roll| from π/2 in radians.
    pub fn from_rotation(r: &Rotation3<f64>, margin: f64) -> Option<EulerZxy> {
        let m = r.matrix();
        // R = Rz(yaw) Rx(roll) Ry(pitch):
        //   m21 = sin(roll), m01 = -sin(yaw) cos(roll), m11 = cos(yaw) cos(roll)
        //   m20 = -cos(roll) sin(pitch), m22 = cos(roll) cos(pitch)
        let s_roll = m[(2, 1)].clamp(-1.0, 1.0);
        let roll = s_roll.asin();
        if (std::f64::consts::FRAC_PI_2 - roll.abs()) < margin {
            return None;
        }
        let yaw = (-m[(0, 1)]).atan2(m[(1, 1)]);
        let pitch = (-m[(2, 0)]).atan2(m[(2, 2)]);
        Some(EulerZxy { yaw, roll, pitch })
    }

    pub fn to_rotation(&self) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Vector3::z_axis(), self.yaw)
            * Rotation3::from_axis_angle(&Vector3::x_axis(), self.roll)
            * Rotation3::from_axis_angle(&Vector3::y_axis(), self.pitch)
    }

    /// Map a world-frame angular velocity to (yaw, roll, pitch) rates.
    ///
    /// ω = yaẇ·ẑ + roḷ̇l·(Rz x̂) + pitcḣ·(Rz Rx ŷ); the map is singular at
    /// |roll| = π/2 which callers must exclude beforehand.
    pub fn rates_from_world(&self, omega_world: &Vector3<f64>) -> Vector3<f64> {
        let (sy, cy) = self.yaw.sin_cos();
        let (sr, cr) = self.roll.sin_cos();
        let e = Matrix3::from_columns(&[
            Vector3::z(),
            Vector3::new(cy, sy, 0.0),
            Vector3::new(-sy * cr, cy * cr, sr),
        ]);
        e.try_inverse()
            .expect("Euler rate map is invertible away from the roll singularity")
            * omega_world
    }
}

/// Orthonormal frame built from a primary axis and a hint for the second one.
/// Returns None if `primary` and `hint` are parallel within `tol`.
pub fn frame_from_axes(
    primary_z: &Vector3<f64>,
    hint_x: &Vector3<f64>,
    tol: f64,
) -> Option<Rotation3<f64>> {
    let z = Unit::try_new(*primary_z, tol)?;
    let x_raw = hint_x - z.as_ref() * hint_x.dot(&z);
    let x = Unit::try_new(x_raw, tol)?;
    let y = z.cross(&x);
    Some(Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[
        *x.as_ref(),
        y,
        *z.as_ref(),
    ])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn euler_zxy_roundtrip() {
        let angles = EulerZxy {
            yaw: 0.7,
            roll: -0.4,
            pitch: 1.1,
        };
        let r = angles.to_rotation();
        let back = EulerZxy::from_rotation(&r, 1e-3).unwrap();
        assert_relative_eq!(back.yaw, angles.yaw, epsilon = 1e-12);
        assert_relative_eq!(back.roll, angles.roll, epsilon = 1e-12);
        assert_relative_eq!(back.pitch, angles.pitch, epsilon = 1e-12);
        assert_relative_eq!(back.to_rotation().matrix(), r.matrix(), epsilon = 1e-12);
    }

    #[test]
    fn euler_singularity_rejected() {
        let r = Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::FRAC_PI_2);
        assert!(EulerZxy::from_rotation(&r, 1e-3).is_none());
    }

    #[test]
    fn euler_rates_match_finite_difference() {
        let a = EulerZxy {
            yaw: 0.3,
            roll: 0.2,
            pitch: -0.5,
        };
        let rates = Vector3::new(0.7, -1.3, 0.4); // yaw, roll, pitch rates
        let h = 1e-6;
        let at = |s: f64| {
            EulerZxy {
                yaw: a.yaw + rates.x * s,
                roll: a.roll + rates.y * s,
                pitch: a.pitch + rates.z * s,
            }
            .to_rotation()
        };
        let r0 = at(0.0);
        let rdot = (at(h).matrix() - at(-h).matrix()) / (2.0 * h);
        let omega_hat = rdot * r0.matrix().transpose();
        let omega = Vector3::new(omega_hat[(2, 1)], omega_hat[(0, 2)], omega_hat[(1, 0)]);
        let recovered = a.rates_from_world(&omega);
        assert_relative_eq!(recovered, rates, epsilon = 1e-6);
    }

    #[test]
    fn skew_matches_cross() {
        let a = Vector3::new(1.0, -2.0, 0.5);
        let b = Vector3::new(0.3, 0.7, -1.1);
        assert_relative_eq!(skew(&a) * b, a.cross(&b), epsilon = 1e-15);
    }
}
