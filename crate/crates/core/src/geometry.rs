//! SE(2) poses, planar twists and the small fixed-size linear algebra shared by
//! registration and pose-graph optimization.

use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Wraps an angle into `(-pi, pi]`.
#[inline]
pub fn wrap_angle<T: Scalar>(a: T) -> T {
    let two_pi = T::PI() + T::PI();
    let r = a - two_pi * ((a - T::PI()) / two_pi).ceil();
    // ceil() can land exactly on -pi for inputs like -pi - 2k*pi
    if r <= -T::PI() {
        r + two_pi
    } else {
        r
    }
}

/// Planar rigid transform: rotation by `theta` followed by translation `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2<T = f64> {
    pub x: T,
    pub y: T,
    pub theta: T,
}

impl<T: Scalar> Pose2<T> {
    /// Builds a pose, normalizing the heading into `(-pi, pi]`.
    pub fn new(x: T, y: T, theta: T) -> Self {
        Self { x, y, theta: wrap_angle(theta) }
    }

    pub fn identity() -> Self {
        Self { x: T::zero(), y: T::zero(), theta: T::zero() }
    }

    pub fn from_array(v: [T; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_array(&self) -> [T; 3] {
        [self.x, self.y, self.theta]
    }

    pub fn translation(&self) -> [T; 2] {
        [self.x, self.y]
    }

    pub fn translation_norm(&self) -> T {
        self.x.hypot(self.y)
    }

    /// Group composition `self ⊗ other`.
    pub fn compose(&self, other: &Self) -> Self {
        let (s, c) = self.theta.sin_cos();
        Self::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> Self {
        let (s, c) = self.theta.sin_cos();
        Self::new(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.theta)
    }

    /// Relative pose `self⁻¹ ⊗ other`, i.e. `other` expressed in the frame of `self`.
    pub fn between(&self, other: &Self) -> Self {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: [T; 2]) -> [T; 2] {
        let (s, c) = self.theta.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    pub fn rotate_vector(&self, v: [T; 2]) -> [T; 2] {
        let (s, c) = self.theta.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    }

    /// SE(2) exponential of the tangent vector `(u, v, w)`.
    pub fn exp(u: T, v: T, w: T) -> Self {
        let (a, b) = se2_v_coeffs(w);
        // V = [[a, -b], [b, a]]
        Self::new(a * u - b * v, b * u + a * v, w)
    }

    /// SE(2) logarithm, inverse of [`Pose2::exp`].
    pub fn log(&self) -> [T; 3] {
        let w = self.theta;
        let (a, b) = se2_v_coeffs(w);
        let det = a * a + b * b;
        // V⁻¹ = [[a, b], [-b, a]] / det
        [(a * self.x + b * self.y) / det, (-b * self.x + a * self.y) / det, w]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    pub fn cast<U: Scalar>(&self) -> Pose2<U> {
        Pose2 { x: U::lit(self.x.as_f64()), y: U::lit(self.y.as_f64()), theta: U::lit(self.theta.as_f64()) }
    }
}

/// Coefficients `(sin w / w, (1 - cos w) / w)` of the SE(2) left Jacobian.
fn se2_v_coeffs<T: Scalar>(w: T) -> (T, T) {
    if w.abs() < T::lit(1e-6) {
        let w2 = w * w;
        (T::one() - w2 / T::lit(6.0), w / T::lit(2.0) - w * w2 / T::lit(24.0))
    } else {
        (w.sin() / w, (T::one() - w.cos()) / w)
    }
}

/// Body-frame planar velocity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist2<T = f64> {
    pub vx: T,
    pub vy: T,
    pub omega: T,
}

impl<T: Scalar> Twist2<T> {
    pub fn new(vx: T, vy: T, omega: T) -> Self {
        Self { vx, vy, omega }
    }

    pub fn zero() -> Self {
        Self { vx: T::zero(), vy: T::zero(), omega: T::zero() }
    }

    /// Rigid motion produced by holding this twist constant for `dt` seconds.
    pub fn integrate(&self, dt: T) -> Pose2<T> {
        Pose2::exp(self.vx * dt, self.vy * dt, self.omega * dt)
    }

    /// Constant twist that carries `from` onto `to` in `dt` seconds.
    pub fn between(from: &Pose2<T>, to: &Pose2<T>, dt: T) -> Self {
        let l = from.between(to).log();
        Self { vx: l[0] / dt, vy: l[1] / dt, omega: l[2] / dt }
    }

    pub fn is_finite(&self) -> bool {
        self.vx.is_finite() && self.vy.is_finite() && self.omega.is_finite()
    }
}

/// Row-major 3×3 matrix.
pub type Mat3<T = f64> = [[T; 3]; 3];

pub fn mat3_zero<T: Scalar>() -> Mat3<T> {
    [[T::zero(); 3]; 3]
}

pub fn mat3_identity<T: Scalar>() -> Mat3<T> {
    let mut m = mat3_zero();
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = T::one();
    }
    m
}

pub fn mat3_diag<T: Scalar>(d: [T; 3]) -> Mat3<T> {
    let mut m = mat3_zero();
    for i in 0..3 {
        m[i][i] = d[i];
    }
    m
}

pub fn mat3_scale<T: Scalar>(m: &Mat3<T>, s: T) -> Mat3<T> {
    let mut r = *m;
    r.iter_mut().flatten().for_each(|v| *v *= s);
    r
}

pub fn mat3_mul<T: Scalar>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut r = mat3_zero();
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                r[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    r
}

pub fn mat3_transpose<T: Scalar>(a: &Mat3<T>) -> Mat3<T> {
    let mut r = mat3_zero();
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = a[j][i];
        }
    }
    r
}

pub fn mat3_vec<T: Scalar>(a: &Mat3<T>, v: &[T; 3]) -> [T; 3] {
    let mut r = [T::zero(); 3];
    for i in 0..3 {
        for k in 0..3 {
            r[i] += a[i][k] * v[k];
        }
    }
    r
}

pub fn mat3_det<T: Scalar>(m: &Mat3<T>) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Inverse by cofactors; `None` when the determinant vanishes.
pub fn mat3_inverse<T: Scalar>(m: &Mat3<T>) -> Option<Mat3<T>> {
    let det = mat3_det(m);
    if det == T::zero() || !det.is_finite() {
        return None;
    }
    let mut r = mat3_zero();
    for i in 0..3 {
        for j in 0..3 {
            let (i1, i2) = ((j + 1) % 3, (j + 2) % 3);
            let (j1, j2) = ((i + 1) % 3, (i + 2) % 3);
            r[i][j] = (m[i1][j1] * m[i2][j2] - m[i1][j2] * m[i2][j1]) / det;
        }
    }
    Some(r)
}

pub fn mat3_symmetrize<T: Scalar>(m: &Mat3<T>) -> Mat3<T> {
    let mut r = *m;
    let half = T::lit(0.5);
    for i in 0..3 {
        for j in (i + 1)..3 {
            let v = (m[i][j] + m[j][i]) * half;
            r[i][j] = v;
            r[j][i] = v;
        }
    }
    r
}

/// Eigenvalues of a symmetric 3×3 matrix in ascending order (trigonometric method).
pub fn sym3_eigenvalues<T: Scalar>(m: &Mat3<T>) -> [T; 3] {
    let p1 = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
    let three = T::lit(3.0);
    if p1 == T::zero() {
        let mut e = [m[0][0], m[1][1], m[2][2]];
        e.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        return e;
    }
    let q = (m[0][0] + m[1][1] + m[2][2]) / three;
    let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + T::lit(2.0) * p1;
    let p = (p2 / T::lit(6.0)).sqrt();
    let mut b = *m;
    for (i, row) in b.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - if i == j { q } else { T::zero() }) / p;
        }
    }
    let r = (mat3_det(&b) / T::lit(2.0)).max(-T::one()).min(T::one());
    let phi = r.acos() / three;
    let two_pi_3 = T::lit(2.0 * std::f64::consts::PI / 3.0);
    let e_max = q + T::lit(2.0) * p * phi.cos();
    let e_min = q + T::lit(2.0) * p * (phi + two_pi_3).cos();
    let e_mid = three * q - e_max - e_min;
    [e_min, e_mid, e_max]
}

/// Symmetric 2×2 covariance summary of a point neighbourhood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cov2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Cov2 {
    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    /// Unit eigenvector of the smallest eigenvalue.
    pub fn minor_axis(&self) -> [f64; 2] {
        let phi = 0.5 * (2.0 * self.xy).atan2(self.xx - self.yy);
        [-phi.sin(), phi.cos()]
    }
}

/// Mean and maximum-likelihood covariance of a set of 2D points.
pub fn mean_cov2<I>(points: I) -> Option<([f64; 2], Cov2)>
where
    I: IntoIterator<Item = [f64; 2]>,
    I::IntoIter: Clone,
{
    let it = points.into_iter();
    let mut n = 0usize;
    let (mut sx, mut sy) = (0.0, 0.0);
    for p in it.clone() {
        sx += p[0];
        sy += p[1];
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let nf = n as f64;
    let mean = [sx / nf, sy / nf];
    let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
    for p in it {
        let dx = p[0] - mean[0];
        let dy = p[1] - mean[1];
        xx += dx * dx;
        xy += dx * dy;
        yy += dy * dy;
    }
    Some((mean, Cov2 { xx: xx / nf, xy: xy / nf, yy: yy / nf }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn wrap_angle_range() {
        assert_relative_eq!(wrap_angle(PI), PI);
        assert_relative_eq!(wrap_angle(-PI), PI);
        assert_relative_eq!(wrap_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(2.0 * PI), 0.0, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(-0.5f64), -0.5);
        assert!((wrap_angle(-3.0 * PI) - PI).abs() < 1e-12);
    }

    #[test]
    fn f32_pose_composes() {
        let a = Pose2::<f32>::new(1.0, 0.0, std::f32::consts::FRAC_PI_2);
        let p = a.transform_point([1.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-6 && (p[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn eigenvalues_of_diagonal_and_rotated() {
        let m = mat3_diag([3.0, 1.0, 2.0]);
        let e = sym3_eigenvalues(&m);
        assert_relative_eq!(e[0], 1.0);
        assert_relative_eq!(e[1], 2.0);
        assert_relative_eq!(e[2], 3.0);
        let m = [[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 5.0]];
        let e = sym3_eigenvalues(&m);
        assert_relative_eq!(e[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(e[1], 3.0, epsilon = 1e-12);
        assert_relative_eq!(e[2], 5.0, epsilon = 1e-12);
    }

    #[test]
    fn inverse_roundtrip() {
        let m = [[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let inv = mat3_inverse(&m).unwrap();
        let id = mat3_mul(&m, &inv);
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(id[i][j], if i == j { 1.0 } else { 0.0 }, epsilon = 1e-12);
            }
        }
        assert!(mat3_inverse(&mat3_zero::<f64>()).is_none());
    }

    fn pose() -> impl Strategy<Value = Pose2> {
        (-50.0..50.0f64, -50.0..50.0f64, -3.1..3.1f64).prop_map(|(x, y, t)| Pose2::new(x, y, t))
    }

    proptest! {
        #[test]
        fn group_laws(a in pose(), b in pose(), c in pose()) {
            let ab_c = a.compose(&b).compose(&c);
            let a_bc = a.compose(&b.compose(&c));
            prop_assert!((ab_c.x - a_bc.x).abs() < 1e-9);
            prop_assert!((ab_c.y - a_bc.y).abs() < 1e-9);
            prop_assert!(wrap_angle(ab_c.theta - a_bc.theta).abs() < 1e-9);
            let id = a.compose(&a.inverse());
            prop_assert!(id.x.abs() < 1e-9 && id.y.abs() < 1e-9 && id.theta.abs() < 1e-12);
            prop_assert!(a.theta > -PI && a.theta <= PI);
        }

        #[test]
        fn exp_log_roundtrip(u in -5.0..5.0f64, v in -5.0..5.0f64, w in -3.0..3.0f64) {
            let l = Pose2::exp(u, v, w).log();
            prop_assert!((l[0] - u).abs() < 1e-9 && (l[1] - v).abs() < 1e-9 && (l[2] - w).abs() < 1e-12);
        }
    }
}
