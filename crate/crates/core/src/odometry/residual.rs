//! Point-to-edge and point-to-plane residuals and their Jacobians with
//! respect to a left-multiplied twist `[rotation; translation]`.

use nalgebra::{Matrix3, Matrix3x6, RowVector6};

use crate::geometry::{skew, Vec3};

/// Degenerate-geometry threshold for line and plane supports (meters, or
/// square meters for the plane cross product).
pub const DEGENERACY_EPS: f64 = 1e-6;

/// Distance from `p` to the line through `a` and `b`, or `None` when the
/// two support points coincide.
pub fn residual_edge(p: &Vec3, a: &Vec3, b: &Vec3) -> Option<f64> {
    let ab = (a - b).norm();
    if ab <= DEGENERACY_EPS {
        return None;
    }
    Some((p - a).cross(&(p - b)).norm() / ab)
}

/// Signed distance from `p` to the plane through `a`, `b`, `c`, or `None`
/// when the three points are (nearly) collinear.
pub fn residual_plane(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<f64> {
    let n = (a - b).cross(&(a - c));
    let nn = n.norm();
    if nn <= DEGENERACY_EPS {
        return None;
    }
    Some((p - a).dot(&(n / nn)))
}

/// Derivative of `exp(delta) * p` at `delta = 0`.
#[inline]
pub fn point_jacobian(p: &Vec3) -> Matrix3x6<f64> {
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(p)));
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
    j
}

/// Vector form of the edge residual, `w = (p - a) x u` with `u` the unit
/// line direction, so that `|w|` equals [`residual_edge`]. Returns `w` and
/// its Jacobian.
pub fn edge_residual_vector(p: &Vec3, a: &Vec3, b: &Vec3) -> Option<(Vec3, Matrix3x6<f64>)> {
    let d = a - b;
    let len = d.norm();
    if len <= DEGENERACY_EPS {
        return None;
    }
    let u = d / len;
    let w = (p - a).cross(&u);
    let dw_dp = -skew(&u);
    Some((w, dw_dp * point_jacobian(p)))
}

/// Gradient of the scalar edge residual; undefined (returns `None`) on the
/// line itself.
pub fn edge_jacobian(p: &Vec3, a: &Vec3, b: &Vec3) -> Option<RowVector6<f64>> {
    let (w, j) = edge_residual_vector(p, a, b)?;
    let f = w.norm();
    if f == 0.0 {
        return None;
    }
    Some((w / f).transpose() * j)
}

/// Unit normal of the plane through `a`, `b`, `c` (orientation as in the
/// residual definition).
pub fn plane_normal(a: &Vec3, b: &Vec3, c: &Vec3) -> Option<Vec3> {
    let n = (a - b).cross(&(a - c));
    let nn = n.norm();
    (nn > DEGENERACY_EPS).then(|| n / nn)
}

/// Signed plane residual and its gradient.
pub fn plane_residual_and_jacobian(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<(f64, RowVector6<f64>)> {
    let n = plane_normal(a, b, c)?;
    let r = (p - a).dot(&n);
    let pn = p.cross(&n);
    Some((r, RowVector6::new(pn.x, pn.y, pn.z, n.x, n.y, n.z)))
}
