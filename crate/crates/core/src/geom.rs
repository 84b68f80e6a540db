//! Vector, quaternion and rotation algebra plus capsule collision geometry.
//!
//! Conventions: quaternions are scalar-first `(w, x, y, z)` with the Hamilton
//! product; a capsule's core segment lies on its local z-axis with endpoints
//! at `±length / 2`.

use std::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub, SubAssign};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Vec3::new(s[0], s[1], s[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(self.y * o.z - self.z * o.y, self.z * o.x - self.x * o.z, self.x * o.y - self.y * o.x)
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Unit vector in the same direction, or `None` for (near) zero input.
    pub fn try_normalize(self, eps: f64) -> Option<Vec3> {
        let n = self.norm();
        (n > eps).then(|| self / n)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Component-wise product.
    pub fn hadamard(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    /// Two unit vectors spanning the plane orthogonal to `self` (assumed unit).
    pub fn orthonormal_basis(self) -> (Vec3, Vec3) {
        let helper = if self.x.abs() < 0.57 { Vec3::X } else { Vec3::Y };
        let t1 = self.cross(helper).try_normalize(0.0).unwrap_or(Vec3::Y);
        let t2 = self.cross(t1);
        (t1, t2)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Quaternion `(w, x, y, z)`, scalar first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quat {
    fn default() -> Self {
        Quat::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat::new(1.0, 0.0, 0.0, 0.0);
    /// The all-zero 4-vector, used as the "no joint target" sentinel.
    pub const ZERO: Quat = Quat::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Quat::new(s[0], s[1], s[2], s[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Pure quaternion `(0, v)`.
    pub fn pure(v: Vec3) -> Self {
        Quat::new(0.0, v.x, v.y, v.z)
    }

    pub fn vec(self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    /// Rotation of `angle` radians about `axis` (need not be unit, must be nonzero).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let a = axis / axis.norm();
        let (s, c) = (0.5 * angle).sin_cos();
        Quat::new(c, a.x * s, a.y * s, a.z * s)
    }

    /// Rotation by the vector `rv` (direction = axis, length = angle).
    pub fn from_rotation_vector(rv: Vec3) -> Self {
        let angle = rv.norm();
        if angle < 1e-12 {
            return Quat::new(1.0, 0.5 * rv.x, 0.5 * rv.y, 0.5 * rv.z).normalize();
        }
        Quat::from_axis_angle(rv, angle)
    }

    /// Rotation vector of the shortest rotation represented by `self` (unit).
    pub fn to_rotation_vector(self) -> Vec3 {
        let q = if self.w < 0.0 { -self } else { self };
        let s = q.vec().norm();
        if s < 1e-12 {
            return q.vec() * 2.0;
        }
        let angle = 2.0 * s.atan2(q.w);
        q.vec() * (angle / s)
    }

    pub fn dot(self, o: Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalize(self) -> Quat {
        self * (1.0 / self.norm())
    }

    pub fn conj(self) -> Quat {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn is_zero(self) -> bool {
        self.w == 0.0 && self.x == 0.0 && self.y == 0.0 && self.z == 0.0
    }

    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Rotate `v` by this (unit) quaternion.
    pub fn rotate(self, v: Vec3) -> Vec3 {
        // v' = v + 2w (u x v) + 2 u x (u x v)
        let u = self.vec();
        let t = u.cross(v) * 2.0;
        v + t * self.w + u.cross(t)
    }

    pub fn to_mat(self) -> Mat3 {
        quat_to_mat(self)
    }
}

impl Mul for Quat {
    type Output = Quat;
    fn mul(self, b: Quat) -> Quat {
        quat_mul(self, b)
    }
}

impl Mul<f64> for Quat {
    type Output = Quat;
    fn mul(self, s: f64) -> Quat {
        Quat::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }
}

impl Add for Quat {
    type Output = Quat;
    fn add(self, o: Quat) -> Quat {
        Quat::new(self.w + o.w, self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Neg for Quat {
    type Output = Quat;
    fn neg(self) -> Quat {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }
}

/// Row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3(pub [f64; 9]);

impl Index<(usize, usize)> for Mat3 {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.0[3 * r + c]
    }
}

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);

    pub fn diag(d: Vec3) -> Mat3 {
        Mat3([d.x, 0.0, 0.0, 0.0, d.y, 0.0, 0.0, 0.0, d.z])
    }

    /// Matrix `S` with `S v = a x v`.
    pub fn skew(a: Vec3) -> Mat3 {
        Mat3([0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0])
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]])
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z,
        )
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                out[3 * r + c] = (0..3).map(|k| self[(r, k)] * o[(k, c)]).sum();
            }
        }
        Mat3(out)
    }

    pub fn add(&self, o: &Mat3) -> Mat3 {
        let mut out = self.0;
        out.iter_mut().zip(o.0.iter()).for_each(|(a, b)| *a += b);
        Mat3(out)
    }

    pub fn sub(&self, o: &Mat3) -> Mat3 {
        let mut out = self.0;
        out.iter_mut().zip(o.0.iter()).for_each(|(a, b)| *a -= b);
        Mat3(out)
    }

    pub fn scale(&self, s: f64) -> Mat3 {
        Mat3(self.0.map(|a| a * s))
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) + m[2] * (m[3] * m[7] - m[4] * m[6])
    }

    /// Inverse via the adjugate; `None` when singular.
    pub fn inverse(&self) -> Option<Mat3> {
        let det = self.determinant();
        if det.abs() < 1e-300 || !det.is_finite() {
            return None;
        }
        let m = &self.0;
        let inv = [
            m[4] * m[8] - m[5] * m[7],
            m[2] * m[7] - m[1] * m[8],
            m[1] * m[5] - m[2] * m[4],
            m[5] * m[6] - m[3] * m[8],
            m[0] * m[8] - m[2] * m[6],
            m[2] * m[3] - m[0] * m[5],
            m[3] * m[7] - m[4] * m[6],
            m[1] * m[6] - m[0] * m[7],
            m[0] * m[4] - m[1] * m[3],
        ];
        Some(Mat3(inv.map(|a| a / det)))
    }
}

/// Hamilton product `a ⊗ b`.
pub fn quat_mul(a: Quat, b: Quat) -> Quat {
    Quat::new(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )
}

/// Rotation matrix of a unit quaternion: `quat_to_mat(q).mul_vec(v) == q.rotate(v)`.
pub fn quat_to_mat(q: Quat) -> Mat3 {
    let Quat { w, x, y, z } = q;
    Mat3([
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ])
}

/// Time derivative of orientation `q` under world angular velocity `omega`:
/// `0.5 * (0, omega) ⊗ q`. Not a unit quaternion.
pub fn quat_derivative(omega: Vec3, q: Quat) -> Quat {
    quat_mul(Quat::pure(omega), q) * 0.5
}

/// One explicit Euler step of an orientation followed by renormalization.
pub fn integrate_orientation(q: Quat, omega: Vec3, dt: f64) -> Quat {
    (q + quat_derivative(omega, q) * dt).normalize()
}

/// Rigid pose of a link: world position and orientation.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Quat,
}

impl Pose {
    pub fn new(position: Vec3, orientation: Quat) -> Self {
        Pose { position, orientation }
    }

    pub fn transform_point(&self, p: Vec3) -> Vec3 {
        self.position + self.orientation.rotate(p)
    }

    pub fn inverse_transform_point(&self, p: Vec3) -> Vec3 {
        self.orientation.conj().rotate(p - self.position)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Capsule {
    /// Distance between the two hemisphere centers.
    pub length: f64,
    pub radius: f64,
}

impl Capsule {
    pub fn new(length: f64, radius: f64) -> Self {
        Capsule { length, radius }
    }

    /// World endpoints of the core segment.
    pub fn segment(&self, pose: &Pose) -> (Vec3, Vec3) {
        let half = pose.orientation.rotate(Vec3::new(0.0, 0.0, 0.5 * self.length));
        (pose.position - half, pose.position + half)
    }

    pub fn volume(&self) -> f64 {
        let r = self.radius;
        std::f64::consts::PI * r * r * (self.length + 4.0 / 3.0 * r)
    }
}

/// Result of the contact function for an ordered link pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactInfo {
    /// Contact point on the first capsule's surface, in the first link's frame.
    pub point_a: Vec3,
    /// Contact point on the second capsule's surface, in the second link's frame.
    pub point_b: Vec3,
    /// World unit normal pointing from the second toward the first link.
    pub normal: Vec3,
    /// Overlap depth; negative values are the separation distance.
    pub penetration: f64,
}

impl ContactInfo {
    pub fn to_array(&self) -> [f64; 10] {
        [
            self.point_a.x,
            self.point_a.y,
            self.point_a.z,
            self.point_b.x,
            self.point_b.y,
            self.point_b.z,
            self.normal.x,
            self.normal.y,
            self.normal.z,
            self.penetration,
        ]
    }
}

pub(crate) const DEGENERATE_DIST: f64 = 1e-9;
pub(crate) const PARALLEL_EPS: f64 = 1e-12;

/// Closest points between segments `p1..q1` and `p2..q2`, as segment
/// parameters `(s, t)` in `[0, 1]`.
///
/// Parallel segments resolve to the midpoint of the overlap of their
/// projections, or to the nearest endpoints when they do not overlap.
pub fn closest_segment_params(p1: Vec3, q1: Vec3, p2: Vec3, q2: Vec3) -> (f64, f64) {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(r);

    if a <= PARALLEL_EPS && e <= PARALLEL_EPS {
        return (0.5, 0.5);
    }
    if a <= PARALLEL_EPS {
        return (0.5, (f / e).clamp(0.0, 1.0));
    }
    let c = d1.dot(r);
    if e <= PARALLEL_EPS {
        return ((-c / a).clamp(0.0, 1.0), 0.5);
    }
    let b = d1.dot(d2);
    let denom = a * e - b * b;
    if denom <= PARALLEL_EPS * a * e {
        return parallel_params(p1, d1, a, p2, d2);
    }
    let mut s = ((b * f - c * e) / denom).clamp(0.0, 1.0);
    let mut t = (b * s + f) / e;
    if t < 0.0 {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((b - c) / a).clamp(0.0, 1.0);
    }
    (s, t)
}

fn parallel_params(p1: Vec3, d1: Vec3, a: f64, p2: Vec3, d2: Vec3) -> (f64, f64) {
    // Project the second segment onto the first segment's parameter line.
    let t0 = (p2 - p1).dot(d1) / a;
    let t1 = (p2 + d2 - p1).dot(d1) / a;
    let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
    let s = if hi < 0.0 {
        0.0
    } else if lo > 1.0 {
        1.0
    } else {
        0.5 * (lo.max(0.0) + hi.min(1.0))
    };
    let point = p1 + d1 * s;
    let e = d2.norm_squared();
    let t = ((point - p2).dot(d2) / e).clamp(0.0, 1.0);
    (s, t)
}

/// Signed contact between two capsules. The first capsule is `a`.
pub fn capsule_capsule_contact(pose_a: &Pose, cap_a: &Capsule, pose_b: &Pose, cap_b: &Capsule) -> ContactInfo {
    let (p1, q1) = cap_a.segment(pose_a);
    let (p2, q2) = cap_b.segment(pose_b);
    let (s, t) = closest_segment_params(p1, q1, p2, q2);
    let ca = p1 + (q1 - p1) * s;
    let cb = p2 + (q2 - p2) * t;
    let diff = ca - cb;
    let dist = diff.norm();
    let normal = if dist < DEGENERATE_DIST { Vec3::Z } else { diff / dist };
    let world_a = ca - normal * cap_a.radius;
    let world_b = cb + normal * cap_b.radius;
    ContactInfo {
        point_a: pose_a.inverse_transform_point(world_a),
        point_b: pose_b.inverse_transform_point(world_b),
        normal,
        penetration: cap_a.radius + cap_b.radius - dist,
    }
}

/// Signed contact between a capsule (first) and the ground plane `z = 0`
/// (second, whose frame is the world frame).
pub fn capsule_ground_contact(pose: &Pose, cap: &Capsule) -> ContactInfo {
    let (p, q) = cap.segment(pose);
    let low = if p.z <= q.z { p } else { q };
    let world_a = low - Vec3::Z * cap.radius;
    ContactInfo {
        point_a: pose.inverse_transform_point(world_a),
        point_b: Vec3::new(low.x, low.y, 0.0),
        normal: Vec3::Z,
        penetration: cap.radius - low.z,
    }
}
