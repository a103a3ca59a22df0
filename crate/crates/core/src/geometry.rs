//! Rigid transforms in SE(3) and their twist parameterization.
//!
//! Twists are ordered `[rotation; translation]`. Pose updates during
//! registration are left-multiplicative: `T <- exp(delta) * T`.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Below this angle the closed-form coefficients switch to series expansions.
const SERIES_ANGLE: f64 = 1e-2;

/// Rigid body transform mapping points from a source frame into a target frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

/// Tangent vector of SE(3).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub rotation: Vec3,
    pub translation: Vec3,
}

impl Twist {
    pub fn new(rotation: Vec3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            rotation: Vec3::new(v[0], v[1], v[2]),
            translation: Vec3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let (w, v) = (self.rotation, self.translation);
        Vector6::new(w.x, w.y, w.z, v.x, v.y, v.z)
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|x| x.is_finite())
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(UnitQuaternion::identity(), t)
    }

    /// Rotation about `axis_angle` (scaled axis, radians) followed by translation.
    pub fn from_axis_angle(axis_angle: Vec3, translation: Vec3) -> Self {
        Self::new(UnitQuaternion::from_scaled_axis(axis_angle), translation)
    }

    /// Builds a pose from a homogeneous matrix, checking that the rotation
    /// block is orthonormal within `1e-6`.
    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Self> {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite transform".into()));
        }
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if ortho > 1e-6 || r.determinant() < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "rotation block is not a proper rotation (orthogonality error {ortho:.3e})"
            )));
        }
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidArgument(
                "last row of a rigid transform must be [0 0 0 1]".into(),
            ));
        }
        let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix(&r));
        Ok(Self::new(rotation, Vec3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)])))
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.to_rotation_matrix().matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    #[inline]
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        let q = self.rotation * other.rotation;
        Pose {
            rotation: UnitQuaternion::new_normalize(q.into_inner()),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    /// Rotation angle in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        self.rotation.angle()
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.coords.iter().all(|x| x.is_finite())
            && self.translation.iter().all(|x| x.is_finite())
    }

    /// `(translation distance, rotation angle)` between two poses.
    pub fn distance_to(&self, other: &Pose) -> (f64, f64) {
        let rel = self.inverse().compose(other);
        (rel.translation.norm(), rel.rotation_angle())
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;

    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

#[inline]
pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `(1 - cos t) / t^2`
fn coeff_b(theta: f64) -> f64 {
    if theta < SERIES_ANGLE {
        let t2 = theta * theta;
        0.5 - t2 / 24.0 + t2 * t2 / 720.0
    } else {
        (1.0 - theta.cos()) / (theta * theta)
    }
}

/// `(t - sin t) / t^3`
fn coeff_c(theta: f64) -> f64 {
    if theta < SERIES_ANGLE {
        let t2 = theta * theta;
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0 - t2 * t2 * t2 / 362_880.0
    } else {
        (theta - theta.sin()) / (theta * theta * theta)
    }
}

/// `(1 - (t/2) cot(t/2)) / t^2`, the quadratic coefficient of the inverse
/// left Jacobian of SO(3).
fn coeff_d(theta: f64) -> f64 {
    if theta < SERIES_ANGLE {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30_240.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half / half.tan()) / (theta * theta)
    }
}

/// Left Jacobian of SO(3) evaluated at the rotation vector `w`.
pub fn so3_left_jacobian(w: &Vec3) -> Matrix3<f64> {
    let theta = w.norm();
    let k = skew(w);
    Matrix3::identity() + coeff_b(theta) * k + coeff_c(theta) * k * k
}

fn so3_left_jacobian_inv(w: &Vec3) -> Matrix3<f64> {
    let theta = w.norm();
    let k = skew(w);
    Matrix3::identity() - 0.5 * k + coeff_d(theta) * k * k
}

/// Exponential map from a twist to a pose.
pub fn se3_exp(t: &Twist) -> Pose {
    let rotation = UnitQuaternion::from_scaled_axis(t.rotation);
    let translation = so3_left_jacobian(&t.rotation) * t.translation;
    Pose {
        rotation,
        translation,
    }
}

/// Logarithm map; the returned rotational part has norm in `[0, pi]`.
pub fn se3_log(p: &Pose) -> Twist {
    let q = p.rotation.quaternion();
    // take the representative with non-negative scalar part
    let (w, v) = if q.w < 0.0 {
        (-q.w, -q.imag())
    } else {
        (q.w, q.imag())
    };
    let vn = v.norm();
    let scale = if vn < 1e-12 {
        2.0 / w
    } else {
        2.0 * vn.atan2(w) / vn
    };
    let rotation = v * scale;
    let translation = so3_left_jacobian_inv(&rotation) * p.translation;
    Twist {
        rotation,
        translation,
    }
}
