use crate::body::{world_inverse_inertia, BodySpec, ControlInput, LinkState, SceneState};
use crate::geom::{capsule_capsule_contact, integrate_orientation, Mat3, Pose, Quat, Vec3};

use super::{pd_torque, SimConfig};

/// Flattened per-link working state for one step.
pub(super) struct World {
    /// `offsets[b] + i` indexes link `i` of body `b`.
    offsets: Vec<usize>,
    x: Vec<Vec3>,
    q: Vec<Quat>,
    v: Vec<Vec3>,
    w: Vec<Vec3>,
    inv_mass: Vec<f64>,
    inv_inertia: Vec<Mat3>,
}

struct JointRow {
    parent: usize,
    child: usize,
    r_parent: Vec3,
    r_child: Vec3,
    inv_k: Mat3,
    bias: Vec3,
}

/// Contact between link `a` and link `b` (`None` = static ground).
struct ContactRow {
    a: usize,
    b: Option<usize>,
    r_a: Vec3,
    r_b: Vec3,
    normal: Vec3,
    tangents: [Vec3; 2],
    mass_n: f64,
    mass_t: [f64; 2],
    target_vn: f64,
    lambda_n: f64,
    lambda_t: [f64; 2],
}

impl World {
    pub(super) fn new(specs: &[BodySpec], state: &SceneState) -> Self {
        let mut offsets = Vec::with_capacity(specs.len());
        let n: usize = specs.iter().map(BodySpec::n_links).sum();
        let mut world = World {
            offsets: Vec::new(),
            x: Vec::with_capacity(n),
            q: Vec::with_capacity(n),
            v: Vec::with_capacity(n),
            w: Vec::with_capacity(n),
            inv_mass: Vec::with_capacity(n),
            inv_inertia: Vec::with_capacity(n),
        };
        for (spec, links) in specs.iter().zip(state) {
            offsets.push(world.x.len());
            for (link, s) in spec.links.iter().zip(links) {
                world.x.push(s.x);
                world.q.push(s.q);
                world.v.push(s.v);
                world.w.push(s.w);
                world.inv_mass.push(1.0 / link.mass);
                world.inv_inertia.push(world_inverse_inertia(link, s.q));
            }
        }
        world.offsets = offsets;
        world
    }

    pub(super) fn into_state(self, specs: &[BodySpec]) -> SceneState {
        specs
            .iter()
            .zip(&self.offsets)
            .map(|(spec, &o)| {
                (o..o + spec.n_links())
                    .map(|k| LinkState { x: self.x[k], q: self.q[k], v: self.v[k], w: self.w[k] })
                    .collect()
            })
            .collect()
    }

    pub(super) fn apply_forces(&mut self, specs: &[BodySpec], control: &ControlInput, cfg: &SimConfig) {
        let mut torque = vec![Vec3::ZERO; self.x.len()];
        for ((spec, u), &o) in specs.iter().zip(control).zip(&self.offsets) {
            for (i, (link, c)) in spec.links.iter().zip(u).enumerate() {
                torque[o + i] += c.torque;
                let Some(p) = link.parent else { continue };
                let (kp, kc) = (o + p, o + i);
                let q_rel = self.q[kp].conj() * self.q[kc];
                let w_rel = self.q[kp].conj().rotate(self.w[kc] - self.w[kp]);
                let tau = self.q[kp].rotate(pd_torque(q_rel, c.target, w_rel, cfg));
                torque[kc] += tau;
                torque[kp] -= tau;
            }
        }
        for k in 0..self.x.len() {
            self.v[k] += cfg.gravity * cfg.dt;
            self.w[k] += self.inv_inertia[k].mul_vec(torque[k]) * cfg.dt;
        }
    }

    fn velocity_at(&self, k: usize, r: Vec3) -> Vec3 {
        self.v[k] + self.w[k].cross(r)
    }

    fn apply_impulse(&mut self, k: usize, r: Vec3, p: Vec3) {
        self.v[k] += p * self.inv_mass[k];
        self.w[k] += self.inv_inertia[k].mul_vec(r.cross(p));
    }

    /// `m^-1 I - [r]x I^-1 [r]x` for one body.
    fn point_mass_matrix(&self, k: usize, r: Vec3) -> Mat3 {
        let s = Mat3::skew(r);
        Mat3::IDENTITY.scale(self.inv_mass[k]).sub(&s.mul_mat(&self.inv_inertia[k]).mul_mat(&s))
    }

    fn effective_inv_mass(&self, k: usize, r: Vec3, dir: Vec3) -> f64 {
        let rn = r.cross(dir);
        self.inv_mass[k] + rn.dot(self.inv_inertia[k].mul_vec(rn))
    }

    fn joint_rows(&self, specs: &[BodySpec], cfg: &SimConfig) -> Vec<JointRow> {
        let mut rows = Vec::new();
        for (spec, &o) in specs.iter().zip(&self.offsets) {
            for (i, link) in spec.links.iter().enumerate() {
                let Some(p) = link.parent else { continue };
                let (parent, child) = (o + p, o + i);
                let r_parent = self.q[parent].rotate(link.anchor_parent);
                let r_child = self.q[child].rotate(link.anchor_child);
                let k = self.point_mass_matrix(parent, r_parent).add(&self.point_mass_matrix(child, r_child));
                let Some(inv_k) = k.inverse() else { continue };
                let err = (self.x[parent] + r_parent) - (self.x[child] + r_child);
                rows.push(JointRow {
                    parent,
                    child,
                    r_parent,
                    r_child,
                    inv_k,
                    bias: err * (cfg.baumgarte_beta / cfg.dt),
                });
            }
        }
        rows
    }

    fn contact_row(
        &self,
        a: usize,
        b: Option<usize>,
        point: Vec3,
        normal: Vec3,
        penetration: f64,
        cfg: &SimConfig,
    ) -> ContactRow {
        let r_a = point - self.x[a];
        let r_b = b.map_or(Vec3::ZERO, |b| point - self.x[b]);
        let pair_inv =
            |dir: Vec3| self.effective_inv_mass(a, r_a, dir) + b.map_or(0.0, |b| self.effective_inv_mass(b, r_b, dir));
        let (t1, t2) = normal.orthonormal_basis();
        let mut target_vn = if penetration < 0.0 {
            penetration / cfg.dt
        } else {
            cfg.baumgarte_beta / cfg.dt * (penetration - cfg.contact_slop).max(0.0)
        };
        let vn0 = self.relative_velocity(a, b, r_a, r_b).dot(normal);
        if cfg.restitution > 0.0 && vn0 < -1.0 {
            target_vn = target_vn.max(-cfg.restitution * vn0);
        }
        ContactRow {
            a,
            b,
            r_a,
            r_b,
            normal,
            tangents: [t1, t2],
            mass_n: 1.0 / pair_inv(normal),
            mass_t: [1.0 / pair_inv(t1), 1.0 / pair_inv(t2)],
            target_vn,
            lambda_n: 0.0,
            lambda_t: [0.0; 2],
        }
    }

    fn relative_velocity(&self, a: usize, b: Option<usize>, r_a: Vec3, r_b: Vec3) -> Vec3 {
        self.velocity_at(a, r_a) - b.map_or(Vec3::ZERO, |b| self.velocity_at(b, r_b))
    }

    fn contact_rows(&self, specs: &[BodySpec], cfg: &SimConfig) -> Vec<ContactRow> {
        let mut rows = Vec::new();
        let links: Vec<(usize, usize, usize)> = specs
            .iter()
            .enumerate()
            .flat_map(|(b, spec)| (0..spec.n_links()).map(move |i| (b, i, self.offsets[b] + i)))
            .collect();
        // Ground: one contact per hemisphere center.
        for &(b, i, k) in &links {
            let cap = specs[b].links[i].capsule;
            let (e0, e1) = cap.segment(&Pose::new(self.x[k], self.q[k]));
            for e in [e0, e1] {
                let penetration = cap.radius - e.z;
                if penetration > -cfg.contact_margin {
                    let point = Vec3::new(e.x, e.y, e.z - cap.radius);
                    rows.push(self.contact_row(k, None, point, Vec3::Z, penetration, cfg));
                }
            }
        }
        // Capsule pairs: all inter-body pairs, non-adjacent intra-body pairs.
        for (ia, &(ba, la, ka)) in links.iter().enumerate() {
            for &(bb, lb, kb) in &links[ia + 1..] {
                if ba == bb && specs[ba].adjacent(la, lb) {
                    continue;
                }
                let (ca, cb) = (specs[ba].links[la].capsule, specs[bb].links[lb].capsule);
                let pa = Pose::new(self.x[ka], self.q[ka]);
                let pb = Pose::new(self.x[kb], self.q[kb]);
                let c = capsule_capsule_contact(&pa, &ca, &pb, &cb);
                if c.penetration > -cfg.contact_margin {
                    let point = 0.5 * (pa.transform_point(c.point_a) + pb.transform_point(c.point_b));
                    rows.push(self.contact_row(ka, Some(kb), point, c.normal, c.penetration, cfg));
                }
            }
        }
        rows
    }

    pub(super) fn solve_velocities(&mut self, specs: &[BodySpec], cfg: &SimConfig) {
        let joints = self.joint_rows(specs, cfg);
        let mut contacts = self.contact_rows(specs, cfg);
        for _ in 0..cfg.solver_iterations {
            for j in &joints {
                let vel = self.velocity_at(j.parent, j.r_parent) - self.velocity_at(j.child, j.r_child);
                let p = j.inv_k.mul_vec(-(vel + j.bias));
                self.apply_impulse(j.parent, j.r_parent, p);
                self.apply_impulse(j.child, j.r_child, -p);
            }
            for c in contacts.iter_mut() {
                let vn = self.relative_velocity(c.a, c.b, c.r_a, c.r_b).dot(c.normal);
                let new_n = (c.lambda_n + c.mass_n * (c.target_vn - vn)).max(0.0);
                let dn = new_n - c.lambda_n;
                c.lambda_n = new_n;
                self.apply_contact(c.a, c.b, c.r_a, c.r_b, c.normal * dn);

                let limit = cfg.friction_mu * c.lambda_n;
                for d in 0..2 {
                    let t = c.tangents[d];
                    let vt = self.relative_velocity(c.a, c.b, c.r_a, c.r_b).dot(t);
                    let new_t = (c.lambda_t[d] - c.mass_t[d] * vt).clamp(-limit, limit);
                    let dt = new_t - c.lambda_t[d];
                    c.lambda_t[d] = new_t;
                    self.apply_contact(c.a, c.b, c.r_a, c.r_b, t * dt);
                }
            }
        }
    }

    fn apply_contact(&mut self, a: usize, b: Option<usize>, r_a: Vec3, r_b: Vec3, p: Vec3) {
        self.apply_impulse(a, r_a, p);
        if let Some(b) = b {
            self.apply_impulse(b, r_b, -p);
        }
    }

    pub(super) fn integrate(&mut self, dt: f64) {
        for k in 0..self.x.len() {
            self.x[k] += self.v[k] * dt;
            self.q[k] = integrate_orientation(self.q[k], self.w[k], dt);
        }
    }

    /// Nonlinear Gauss-Seidel projection of joint anchors; velocities untouched.
    pub(super) fn project_joints(&mut self, specs: &[BodySpec], iterations: usize) {
        for _ in 0..iterations {
            for (b, spec) in specs.iter().enumerate() {
                let o = self.offsets[b];
                for (i, link) in spec.links.iter().enumerate() {
                    let Some(p) = link.parent else { continue };
                    let (parent, child) = (o + p, o + i);
                    let r_parent = self.q[parent].rotate(link.anchor_parent);
                    let r_child = self.q[child].rotate(link.anchor_child);
                    let err = (self.x[parent] + r_parent) - (self.x[child] + r_child);
                    let k = self.point_mass_matrix(parent, r_parent).add(&self.point_mass_matrix(child, r_child));
                    let Some(inv_k) = k.inverse() else { continue };
                    let corr = inv_k.mul_vec(-err);
                    self.shift(parent, r_parent, corr);
                    self.shift(child, r_child, -corr);
                }
            }
        }
    }

    fn shift(&mut self, k: usize, r: Vec3, p: Vec3) {
        self.x[k] += p * self.inv_mass[k];
        let dtheta = self.inv_inertia[k].mul_vec(r.cross(p));
        self.q[k] = integrate_orientation(self.q[k], dtheta, 1.0);
    }
}
