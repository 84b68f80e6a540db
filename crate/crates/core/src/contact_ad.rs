//! Capsule-capsule contact with forward-mode derivatives with respect to
//! both links' positions and orientations.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::geom::{Capsule, DEGENERATE_DIST, PARALLEL_EPS};

/// Input layout: `x_a (3), q_a (4), x_b (3), q_b (4)`.
pub(crate) const N_IN: usize = 14;

#[derive(Clone, Copy, Debug)]
struct D {
    v: f64,
    d: [f64; N_IN],
}

impl D {
    fn c(v: f64) -> D {
        D { v, d: [0.0; N_IN] }
    }

    fn var(v: f64, k: usize) -> D {
        let mut d = [0.0; N_IN];
        d[k] = 1.0;
        D { v, d }
    }

    fn sqrt(self) -> D {
        let v = self.v.sqrt();
        if v == 0.0 {
            return D::c(0.0);
        }
        let k = 0.5 / v;
        D { v, d: self.d.map(|x| x * k) }
    }

    fn clamp01(self) -> D {
        if self.v < 0.0 {
            D::c(0.0)
        } else if self.v > 1.0 {
            D::c(1.0)
        } else {
            self
        }
    }
}

impl Add for D {
    type Output = D;
    fn add(self, o: D) -> D {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d) {
            *a += b;
        }
        D { v: self.v + o.v, d }
    }
}

impl Sub for D {
    type Output = D;
    fn sub(self, o: D) -> D {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d) {
            *a -= b;
        }
        D { v: self.v - o.v, d }
    }
}

impl Mul for D {
    type Output = D;
    fn mul(self, o: D) -> D {
        let mut d = [0.0; N_IN];
        for k in 0..N_IN {
            d[k] = self.d[k] * o.v + self.v * o.d[k];
        }
        D { v: self.v * o.v, d }
    }
}

impl Div for D {
    type Output = D;
    fn div(self, o: D) -> D {
        let v = self.v / o.v;
        let mut d = [0.0; N_IN];
        for k in 0..N_IN {
            d[k] = (self.d[k] - v * o.d[k]) / o.v;
        }
        D { v, d }
    }
}

impl Neg for D {
    type Output = D;
    fn neg(self) -> D {
        D { v: -self.v, d: self.d.map(|x| -x) }
    }
}

#[derive(Clone, Copy, Debug)]
struct V3 {
    x: D,
    y: D,
    z: D,
}

impl V3 {
    fn c(x: f64, y: f64, z: f64) -> V3 {
        V3 { x: D::c(x), y: D::c(y), z: D::c(z) }
    }

    fn dot(self, o: V3) -> D {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    fn cross(self, o: V3) -> V3 {
        V3 { x: self.y * o.z - self.z * o.y, y: self.z * o.x - self.x * o.z, z: self.x * o.y - self.y * o.x }
    }

    fn scale(self, s: D) -> V3 {
        V3 { x: self.x * s, y: self.y * s, z: self.z * s }
    }

    fn div(self, s: D) -> V3 {
        V3 { x: self.x / s, y: self.y / s, z: self.z / s }
    }
}

impl Add for V3 {
    type Output = V3;
    fn add(self, o: V3) -> V3 {
        V3 { x: self.x + o.x, y: self.y + o.y, z: self.z + o.z }
    }
}

impl Sub for V3 {
    type Output = V3;
    fn sub(self, o: V3) -> V3 {
        V3 { x: self.x - o.x, y: self.y - o.y, z: self.z - o.z }
    }
}

#[derive(Clone, Copy, Debug)]
struct Q {
    w: D,
    u: V3,
}

impl Q {
    fn rotate(self, v: V3) -> V3 {
        let t = self.u.cross(v).scale(D::c(2.0));
        v + t.scale(self.w) + self.u.cross(t)
    }

    fn conj(self) -> Q {
        Q { w: self.w, u: V3 { x: -self.u.x, y: -self.u.y, z: -self.u.z } }
    }
}

fn segment(x: V3, q: Q, cap: &Capsule) -> (V3, V3) {
    let half = q.rotate(V3::c(0.0, 0.0, 0.5 * cap.length));
    (x - half, x + half)
}

fn closest_params(p1: V3, q1: V3, p2: V3, q2: V3) -> (D, D) {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(d1);
    let e = d2.dot(d2);
    let f = d2.dot(r);
    let half = D::c(0.5);
    if a.v <= PARALLEL_EPS && e.v <= PARALLEL_EPS {
        return (half, half);
    }
    if a.v <= PARALLEL_EPS {
        return (half, (f / e).clamp01());
    }
    let c = d1.dot(r);
    if e.v <= PARALLEL_EPS {
        return ((-c / a).clamp01(), half);
    }
    let b = d1.dot(d2);
    let denom = a * e - b * b;
    if denom.v <= PARALLEL_EPS * a.v * e.v {
        return parallel_params(p1, d1, a, p2, d2);
    }
    let mut s = ((b * f - c * e) / denom).clamp01();
    let mut t = (b * s + f) / e;
    if t.v < 0.0 {
        t = D::c(0.0);
        s = (-c / a).clamp01();
    } else if t.v > 1.0 {
        t = D::c(1.0);
        s = ((b - c) / a).clamp01();
    }
    (s, t)
}

fn parallel_params(p1: V3, d1: V3, a: D, p2: V3, d2: V3) -> (D, D) {
    let t0 = (p2 - p1).dot(d1) / a;
    let t1 = (p2 + d2 - p1).dot(d1) / a;
    let (lo, hi) = if t0.v <= t1.v { (t0, t1) } else { (t1, t0) };
    let s = if hi.v < 0.0 {
        D::c(0.0)
    } else if lo.v > 1.0 {
        D::c(1.0)
    } else {
        let lo = if lo.v >= 0.0 { lo } else { D::c(0.0) };
        let hi = if hi.v <= 1.0 { hi } else { D::c(1.0) };
        D::c(0.5) * (lo + hi)
    };
    let point = p1 + d1.scale(s);
    let e = d2.dot(d2);
    let t = ((point - p2).dot(d2) / e).clamp01();
    (s, t)
}

/// Contact array of [`crate::geom::capsule_capsule_contact`] and its
/// Jacobian (10 × [`N_IN`], row-major) at `inputs`.
pub(crate) fn contact_with_jacobian(inputs: &[f64], cap_a: &Capsule, cap_b: &Capsule) -> ([f64; 10], Vec<f64>) {
    assert_eq!(inputs.len(), N_IN, "contact input layout");
    let v = |k: usize| D::var(inputs[k], k);
    let xa = V3 { x: v(0), y: v(1), z: v(2) };
    let qa = Q { w: v(3), u: V3 { x: v(4), y: v(5), z: v(6) } };
    let xb = V3 { x: v(7), y: v(8), z: v(9) };
    let qb = Q { w: v(10), u: V3 { x: v(11), y: v(12), z: v(13) } };
    let (p1, q1) = segment(xa, qa, cap_a);
    let (p2, q2) = segment(xb, qb, cap_b);
    let (s, t) = closest_params(p1, q1, p2, q2);
    let ca = p1 + (q1 - p1).scale(s);
    let cb = p2 + (q2 - p2).scale(t);
    let diff = ca - cb;
    let dist = diff.dot(diff).sqrt();
    let normal = if dist.v < DEGENERATE_DIST { V3::c(0.0, 0.0, 1.0) } else { diff.div(dist) };
    let world_a = ca - normal.scale(D::c(cap_a.radius));
    let world_b = cb + normal.scale(D::c(cap_b.radius));
    let pa = qa.conj().rotate(world_a - xa);
    let pb = qb.conj().rotate(world_b - xb);
    let pen = D::c(cap_a.radius + cap_b.radius) - dist;
    let outs = [pa.x, pa.y, pa.z, pb.x, pb.y, pb.z, normal.x, normal.y, normal.z, pen];
    let mut jac = Vec::with_capacity(10 * N_IN);
    for o in &outs {
        jac.extend_from_slice(&o.d);
    }
    (outs.map(|o| o.v), jac)
}
