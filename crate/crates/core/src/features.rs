//! Encoding of scene states into dynamics-network and contact-network
//! inputs, per-dimension standardization, and z-axis rotation augmentation.
//!
//! Dynamics layout per link (37 values):
//! `x_rrel(3) x_z(1) R(9) v(3) ω(3) l(1) r(1) d(3) Q(4) τ(3) p̂(6)`.
//!
//! Contact pair layout (42 values): `φ_j(16) φ_i(16) c(10)` where
//! `φ = x(3) q(4) v(3) ω(3) l(1) r(1) m(1)` and
//! `c = point_j(3) point_i(3) normal(3) penetration(1)` with both points in
//! their own link frames and the normal pointing from link i toward link j.

use crate::adnn::{Graph, Real, Tensor, Var};
use crate::body::{joint_displacement, BodySpec, LinkControl, LinkSpec, LinkState, Trajectory};
use crate::error::{Error, Result};
use crate::geom::{capsule_capsule_contact, quat_mul, quat_to_mat, ContactInfo, Mat3, Quat, Vec3};

pub const FEATURE_LAYOUT_VERSION: &str = "larp-features/1";

pub const DYN_PER_LINK: usize = 37;
pub const PHI_DIM: usize = 16;
pub const CONTACT_DIM: usize = 10;
pub const PAIR_DIM: usize = 2 * PHI_DIM + CONTACT_DIM;
pub const PHAT_DIM: usize = 6;
/// Network outputs per link: linear then angular velocity.
pub const OUT_PER_LINK: usize = 6;

/// Column offsets inside one link's dynamics block.
pub mod dyn_offsets {
    pub const X_RREL: usize = 0;
    pub const X_Z: usize = 3;
    pub const ROT: usize = 4;
    pub const V: usize = 13;
    pub const W: usize = 16;
    pub const LENGTH: usize = 19;
    pub const RADIUS: usize = 20;
    pub const DISP: usize = 21;
    pub const TARGET: usize = 24;
    pub const TORQUE: usize = 28;
    pub const PHAT: usize = 31;
}

pub const NORM_FLOOR: f64 = 1e-6;

/// Per-dimension mean and standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        NormStats { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Population statistics of the rows; σ floored at [`NORM_FLOOR`].
    pub fn compute<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut rows_kept: Vec<&[f64]> = Vec::new();
        for row in rows {
            if row.len() != dim {
                return Err(Error::Shape(format!("statistics row of length {} (expected {dim})", row.len())));
            }
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
            rows_kept.push(row);
            n += 1;
        }
        if n == 0 {
            return Err(Error::InvalidConfig("normalization statistics need at least one row".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut var = vec![0.0; dim];
        for row in rows_kept {
            for ((acc, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / n as f64).sqrt().max(NORM_FLOOR)).collect();
        Ok(NormStats { mean, std })
    }

    /// Forces `μ = 0, σ = 1` on `cols`.
    pub fn passthrough(&mut self, cols: impl IntoIterator<Item = usize>) {
        for c in cols {
            self.mean[c] = 0.0;
            self.std[c] = 1.0;
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn denormalize(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| v * s + m).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() {
            return Err(Error::Shape("mean and std lengths differ".into()));
        }
        if self.std.iter().any(|s| !(*s >= NORM_FLOOR)) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidConfig("normalization statistics must be finite with σ ≥ 1e-6".into()));
        }
        Ok(())
    }

    /// Graph node computing `(x − μ) / σ`.
    pub fn normalize_var<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let scale: Vec<T> = self.std.iter().map(|s| T::from_f64(1.0 / s)).collect();
        let shift: Vec<T> = self.mean.iter().zip(&self.std).map(|(m, s)| T::from_f64(-m / s)).collect();
        g.col_affine(x, scale.into(), &shift)
    }

    /// Graph node computing `σ·y + μ`.
    pub fn denormalize_var<T: Real>(&self, g: &mut Graph<T>, y: Var) -> Var {
        let scale: Vec<T> = self.std.iter().map(|&s| T::from_f64(s)).collect();
        let shift: Vec<T> = self.mean.iter().map(|&m| T::from_f64(m)).collect();
        g.col_affine(y, scale.into(), &shift)
    }
}

/// Dynamics features of one body. `contact_feats` holds p̂ per link.
pub fn encode_dynamics(
    spec: &BodySpec,
    states: &[LinkState],
    control: &[LinkControl],
    contact_feats: &[[f64; PHAT_DIM]],
) -> Vec<f64> {
    let n = spec.n_links();
    assert!(states.len() == n && control.len() == n && contact_feats.len() == n, "encode_dynamics: link counts");
    let root = states[0].x;
    let mut out = Vec::with_capacity(DYN_PER_LINK * n);
    for i in 0..n {
        let s = &states[i];
        out.extend((s.x - root).to_array());
        out.push(s.x.z);
        out.extend(quat_to_mat(s.q).0);
        out.extend(s.v.to_array());
        out.extend(s.w.to_array());
        out.push(spec.links[i].capsule.length);
        out.push(spec.links[i].capsule.radius);
        out.extend(joint_displacement(spec, states, i).to_array());
        out.extend(control[i].target.to_array());
        out.extend(control[i].torque.to_array());
        out.extend(contact_feats[i]);
    }
    out
}

/// Fields recovered from a dynamics feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedLink {
    pub x_rrel: Vec3,
    pub x_z: f64,
    pub rot: Mat3,
    pub v: Vec3,
    pub w: Vec3,
}

pub fn decode_dynamics(features: &[f64]) -> Result<Vec<DecodedLink>> {
    if !features.len().is_multiple_of(DYN_PER_LINK) {
        return Err(Error::Shape(format!("{} is not a multiple of {DYN_PER_LINK}", features.len())));
    }
    use dyn_offsets::*;
    Ok(features
        .chunks(DYN_PER_LINK)
        .map(|f| DecodedLink {
            x_rrel: Vec3::from_slice(&f[X_RREL..X_RREL + 3]),
            x_z: f[X_Z],
            rot: Mat3(f[ROT..ROT + 9].try_into().expect("9 entries")),
            v: Vec3::from_slice(&f[V..V + 3]),
            w: Vec3::from_slice(&f[W..W + 3]),
        })
        .collect())
}

/// Contact-network descriptor of one link.
pub fn phi(link: &LinkSpec, s: &LinkState) -> [f64; PHI_DIM] {
    let mut out = [0.0; PHI_DIM];
    out[0..3].copy_from_slice(&s.x.to_array());
    out[3..7].copy_from_slice(&s.q.to_array());
    out[7..10].copy_from_slice(&s.v.to_array());
    out[10..13].copy_from_slice(&s.w.to_array());
    out[13] = link.capsule.length;
    out[14] = link.capsule.radius;
    out[15] = link.mass;
    out
}

/// Geometric contact between link j (first) and link i (second).
pub fn pair_contact(link_j: &LinkSpec, s_j: &LinkState, link_i: &LinkSpec, s_i: &LinkState) -> ContactInfo {
    capsule_capsule_contact(&s_j.pose(), &link_j.capsule, &s_i.pose(), &link_i.capsule)
}

/// `[φ_j, φ_i, c]`, standardized by `stats` when given.
pub fn encode_contact_pair(
    phi_j: &[f64; PHI_DIM],
    phi_i: &[f64; PHI_DIM],
    contact: &ContactInfo,
    stats: Option<&NormStats>,
) -> Vec<f64> {
    let mut raw = Vec::with_capacity(PAIR_DIM);
    raw.extend_from_slice(phi_j);
    raw.extend_from_slice(phi_i);
    raw.extend(contact.to_array());
    match stats {
        Some(s) => s.normalize(&raw),
        None => raw,
    }
}

/// Rotation about world z by `theta`.
pub fn z_rotation(theta: f64) -> Quat {
    Quat::from_axis_angle(Vec3::Z, theta)
}

/// Rotates a link state about the world z axis through the origin.
pub fn rotate_state_z(s: &LinkState, rz: Quat) -> LinkState {
    LinkState { x: rz.rotate(s.x), q: quat_mul(rz, s.q), v: rz.rotate(s.v), w: rz.rotate(s.w) }
}

/// Rotates the world-frame torque; parent-relative targets are unchanged.
pub fn rotate_control_z(u: &LinkControl, rz: Quat) -> LinkControl {
    LinkControl { target: u.target, torque: rz.rotate(u.torque) }
}

/// Rotates every state and control of a trajectory about world z.
pub fn augment_rotate_z(traj: &Trajectory, theta: f64) -> Trajectory {
    let rz = z_rotation(theta);
    Trajectory {
        specs: traj.specs.clone(),
        dt: traj.dt,
        states: traj
            .states
            .iter()
            .map(|s| s.iter().map(|b| b.iter().map(|l| rotate_state_z(l, rz)).collect()).collect())
            .collect(),
        controls: traj
            .controls
            .iter()
            .map(|u| u.iter().map(|b| b.iter().map(|l| rotate_control_z(l, rz)).collect()).collect())
            .collect(),
    }
}

/// Per-link state nodes with the batch along rows.
#[derive(Clone, Copy, Debug)]
pub struct LinkVars {
    pub x: Var,
    pub q: Var,
    pub v: Var,
    pub w: Var,
}

/// Per-link constants with the batch along rows.
#[derive(Clone, Copy, Debug)]
pub struct LinkConsts {
    pub parent: Option<usize>,
    pub length: Var,
    pub radius: Var,
    pub mass: Var,
    pub anchor_parent: Var,
    pub anchor_child: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct ControlVars {
    pub target: Var,
    pub torque: Var,
}

/// Builds a constant column or block from per-row values.
pub fn rows_const<T: Real>(g: &mut Graph<T>, rows: &[&[f64]]) -> Var {
    let cols = rows.first().map_or(0, |r| r.len());
    let t = Tensor::from_fn(rows.len(), cols, |r, c| T::from_f64(rows[r][c]));
    g.constant(t)
}

/// Link constants for a batch of bodies sharing one topology.
pub fn link_consts<T: Real>(g: &mut Graph<T>, specs: &[&BodySpec]) -> Vec<LinkConsts> {
    let n = specs[0].n_links();
    (0..n)
        .map(|i| {
            let col = |g: &mut Graph<T>, f: &dyn Fn(&LinkSpec) -> f64| {
                let t = Tensor::from_fn(specs.len(), 1, |r, _| T::from_f64(f(&specs[r].links[i])));
                g.constant(t)
            };
            let length = col(g, &|l| l.capsule.length);
            let radius = col(g, &|l| l.capsule.radius);
            let mass = col(g, &|l| l.mass);
            let vec3 = |g: &mut Graph<T>, f: &dyn Fn(&LinkSpec) -> Vec3| {
                let t = Tensor::from_fn(specs.len(), 3, |r, c| T::from_f64(f(&specs[r].links[i]).to_array()[c]));
                g.constant(t)
            };
            let anchor_parent = vec3(g, &|l| l.anchor_parent);
            let anchor_child = vec3(g, &|l| l.anchor_child);
            LinkConsts { parent: specs[0].links[i].parent, length, radius, mass, anchor_parent, anchor_child }
        })
        .collect()
}

/// Graph form of [`joint_displacement`]; `None` for the root.
pub fn joint_displacement_var<T: Real>(
    g: &mut Graph<T>,
    links: &[LinkVars],
    consts: &[LinkConsts],
    i: usize,
) -> Option<Var> {
    let p = consts[i].parent?;
    let ap = g.rotate(links[p].q, consts[i].anchor_parent);
    let parent_side = g.add(links[p].x, ap);
    let ac = g.rotate(links[i].q, consts[i].anchor_child);
    let child_side = g.add(links[i].x, ac);
    Some(g.sub(parent_side, child_side))
}

/// Graph form of [`encode_dynamics`] for a batch; with `disp_feature` off
/// the d block is fed zeros.
pub fn encode_dynamics_var<T: Real>(
    g: &mut Graph<T>,
    links: &[LinkVars],
    consts: &[LinkConsts],
    control: &[ControlVars],
    phat: &[Var],
    disp_feature: bool,
) -> Var {
    let rows = g.shape(links[0].x)[0];
    let zero3 = g.constant(Tensor::zeros(rows, 3));
    let mut parts = Vec::with_capacity(11 * links.len());
    for i in 0..links.len() {
        let l = links[i];
        let rrel = g.sub(l.x, links[0].x);
        let xz = g.slice_cols(l.x, 2, 1);
        let rot = g.quat_to_mat(l.q);
        let d = if disp_feature { joint_displacement_var(g, links, consts, i).unwrap_or(zero3) } else { zero3 };
        parts.extend([
            rrel,
            xz,
            rot,
            l.v,
            l.w,
            consts[i].length,
            consts[i].radius,
            d,
            control[i].target,
            control[i].torque,
            phat[i],
        ]);
    }
    g.concat_cols(&parts)
}

/// Graph form of [`phi`].
pub fn phi_var<T: Real>(g: &mut Graph<T>, l: LinkVars, c: &LinkConsts) -> Var {
    g.concat_cols(&[l.x, l.q, l.v, l.w, c.length, c.radius, c.mass])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::assemble_chain;
    use crate::geom::Pose;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn chain_scene(seed: u64) -> (BodySpec, Vec<LinkState>, Vec<LinkControl>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (spec, mut states) = assemble_chain(
            "chain3",
            &[0.3, 0.25, 0.4],
            &[0.05, 0.06, 0.04],
            Pose::new(Vec3::new(0.5, -1.0, 1.5), Quat::from_axis_angle(Vec3::new(1.0, 2.0, 0.5), 0.7)),
        )
        .unwrap();
        for s in states.iter_mut() {
            s.v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            s.w = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            s.x += Vec3::new(rng.gen_range(-0.01..0.01), 0.0, rng.gen_range(-0.01..0.01));
        }
        let control = (0..3)
            .map(|i| LinkControl {
                target: if i == 0 { Quat::ZERO } else { Quat::from_axis_angle(Vec3::X, 0.3 * i as f64) },
                torque: Vec3::new(0.1 * i as f64, -0.2, 0.3),
            })
            .collect();
        (spec, states, control)
    }

    fn zeros(n: usize) -> Vec<[f64; 6]> {
        vec![[0.0; 6]; n]
    }

    #[test]
    fn layout_size_and_root_offset() {
        let (spec, states, control) = chain_scene(1);
        let f = encode_dynamics(&spec, &states, &control, &zeros(3));
        assert_eq!(f.len(), 3 * DYN_PER_LINK);
        assert_eq!(&f[0..3], &[0.0, 0.0, 0.0]);
        assert_eq!(&f[dyn_offsets::DISP..dyn_offsets::DISP + 3], &[0.0, 0.0, 0.0]);
        assert_eq!(f[DYN_PER_LINK + dyn_offsets::LENGTH], 0.25);
    }

    #[test]
    fn decode_recovers_fields_bit_exactly() {
        let (spec, states, control) = chain_scene(2);
        let f = encode_dynamics(&spec, &states, &control, &zeros(3));
        let back = decode_dynamics(&f).unwrap();
        for (i, d) in back.iter().enumerate() {
            assert_eq!(d.x_rrel, states[i].x - states[0].x);
            assert_eq!(d.x_z, states[i].x.z);
            assert_eq!(d.rot, quat_to_mat(states[i].q));
            assert_eq!(d.v, states[i].v);
            assert_eq!(d.w, states[i].w);
        }
        assert!(decode_dynamics(&f[1..]).is_err());
    }

    #[test]
    fn vertical_shift_moves_only_heights() {
        let (spec, states, control) = chain_scene(3);
        let a = encode_dynamics(&spec, &states, &control, &zeros(3));
        let up: Vec<LinkState> = states.iter().map(|s| LinkState { x: s.x + Vec3::Z, ..*s }).collect();
        let b = encode_dynamics(&spec, &up, &control, &zeros(3));
        for k in 0..a.len() {
            if k % DYN_PER_LINK == dyn_offsets::X_Z {
                assert!((b[k] - a[k] - 1.0).abs() < 1e-12);
            } else {
                assert!((b[k] - a[k]).abs() < 1e-12, "feature {k}");
            }
        }
    }

    #[test]
    fn dyadic_horizontal_shift_is_bit_exact() {
        // Positions on a coarse binary grid make every sum exact.
        let (spec, mut states, control) = chain_scene(4);
        let snap = |v: f64| (v * 64.0).round() / 64.0;
        for s in states.iter_mut() {
            s.x = Vec3::new(snap(s.x.x), snap(s.x.y), snap(s.x.z));
        }
        let shift = Vec3::new(5.0, -3.0, 0.0);
        let moved: Vec<LinkState> = states.iter().map(|s| LinkState { x: s.x + shift, ..*s }).collect();
        let a = encode_dynamics(&spec, &states, &control, &zeros(3));
        let b = encode_dynamics(&spec, &moved, &control, &zeros(3));
        for (k, (p, q)) in a.iter().zip(&b).enumerate() {
            if k % DYN_PER_LINK >= dyn_offsets::DISP && k % DYN_PER_LINK < dyn_offsets::DISP + 3 {
                assert!((p - q).abs() < 1e-12);
            } else {
                assert_eq!(p, q, "feature {k}");
            }
        }
    }

    #[test]
    fn norm_stats_examples() {
        let rows = [[0.0, 5.0], [2.0, 5.0]];
        let s = NormStats::compute(rows.iter().map(|r| r.as_slice()), 2).unwrap();
        assert_eq!(s.mean, vec![1.0, 5.0]);
        assert_eq!(s.std, vec![1.0, NORM_FLOOR]);
        assert_eq!(s.normalize(&[5.0, 5.0])[1], 0.0);
        assert!(NormStats::compute(std::iter::empty::<&[f64]>(), 2).is_err());
        assert!(NormStats::compute([[1.0].as_slice()], 2).is_err());
    }

    #[test]
    fn contact_pair_identity_stats_and_mirror() {
        let (spec, states, _) = chain_scene(5);
        let (l0, l2) = (&spec.links[0], &spec.links[2]);
        let (pj, pi) = (phi(l0, &states[0]), phi(l2, &states[2]));
        let c = pair_contact(l0, &states[0], l2, &states[2]);
        let raw = encode_contact_pair(&pj, &pi, &c, None);
        assert_eq!(raw, encode_contact_pair(&pj, &pi, &c, Some(&NormStats::identity(PAIR_DIM))));
        assert_eq!(raw.len(), PAIR_DIM);
        let c2 = pair_contact(l2, &states[2], l0, &states[0]);
        let swapped = encode_contact_pair(&pi, &pj, &c2, None);
        assert_eq!(&swapped[0..16], &raw[16..32]);
        assert_eq!(&swapped[16..32], &raw[0..16]);
        assert!((swapped[41] - raw[41]).abs() < 1e-12);
        for k in 0..3 {
            assert!((swapped[32 + k] - raw[35 + k]).abs() < 1e-12);
            assert!((swapped[38 + k] + raw[38 + k]).abs() < 1e-12);
        }
    }

    #[test]
    fn rotate_half_turn() {
        let s = LinkState { x: Vec3::new(1.0, 2.0, 3.0), ..Default::default() };
        let r = rotate_state_z(&s, z_rotation(PI));
        assert!((r.x - Vec3::new(-1.0, -2.0, 3.0)).norm() < 1e-12);
        let id = rotate_state_z(&s, z_rotation(0.0));
        assert_eq!(id, s);
    }

    #[test]
    fn graph_encoding_matches_direct_encoding() {
        let (spec, states, control) = chain_scene(6);
        let phat: Vec<[f64; 6]> = (0..3).map(|i| [i as f64, 0.5, -0.5, 1.0, 2.0, 3.0]).collect();
        let direct = encode_dynamics(&spec, &states, &control, &phat);
        let mut g: Graph<f64> = Graph::new();
        let consts = link_consts(&mut g, &[&spec]);
        let links: Vec<LinkVars> = states
            .iter()
            .map(|s| LinkVars {
                x: g.constant(Tensor::row(&s.x.to_array())),
                q: g.constant(Tensor::row(&s.q.to_array())),
                v: g.constant(Tensor::row(&s.v.to_array())),
                w: g.constant(Tensor::row(&s.w.to_array())),
            })
            .collect();
        let ctrl: Vec<ControlVars> = control
            .iter()
            .map(|u| ControlVars {
                target: g.constant(Tensor::row(&u.target.to_array())),
                torque: g.constant(Tensor::row(&u.torque.to_array())),
            })
            .collect();
        let ph: Vec<Var> = phat.iter().map(|p| g.constant(Tensor::row(p))).collect();
        let f = encode_dynamics_var(&mut g, &links, &consts, &ctrl, &ph, true);
        for (a, b) in g.value(f).data().iter().zip(&direct) {
            assert!((a - b).abs() < 1e-14);
        }
        let p = phi_var(&mut g, links[1], &consts[1]);
        assert_eq!(g.value(p).data(), &phi(&spec.links[1], &states[1]));
    }

    proptest! {
        #[test]
        fn horizontal_shift_invariance(seed in 0u64..500, dx in -10.0f64..10.0, dy in -10.0f64..10.0) {
            let (spec, states, control) = chain_scene(seed);
            let moved: Vec<LinkState> = states.iter().map(|s| LinkState { x: s.x + Vec3::new(dx, dy, 0.0), ..*s }).collect();
            let a = encode_dynamics(&spec, &states, &control, &zeros(3));
            let b = encode_dynamics(&spec, &moved, &control, &zeros(3));
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }

        #[test]
        fn z_rotation_equivariance(seed in 0u64..500, theta in 0.0f64..(2.0 * PI)) {
            let (spec, states, control) = chain_scene(seed);
            let rz = z_rotation(theta);
            let rot: Vec<LinkState> = states.iter().map(|s| rotate_state_z(s, rz)).collect();
            let ctl: Vec<LinkControl> = control.iter().map(|u| rotate_control_z(u, rz)).collect();
            let a = encode_dynamics(&spec, &states, &control, &zeros(3));
            let b = encode_dynamics(&spec, &rot, &ctl, &zeros(3));
            let m = quat_to_mat(rz);
            use dyn_offsets::*;
            for i in 0..3 {
                let fa = &a[i * DYN_PER_LINK..(i + 1) * DYN_PER_LINK];
                let fb = &b[i * DYN_PER_LINK..(i + 1) * DYN_PER_LINK];
                for off in [X_RREL, V, W, DISP, TORQUE] {
                    let va = m.mul_vec(Vec3::from_slice(&fa[off..off + 3]));
                    prop_assert!((va - Vec3::from_slice(&fb[off..off + 3])).norm() < 1e-9);
                }
                let ra = m.mul_mat(&Mat3(fa[ROT..ROT + 9].try_into().unwrap()));
                for k in 0..9 {
                    prop_assert!((ra.0[k] - fb[ROT + k]).abs() < 1e-9);
                }
                for k in [X_Z, LENGTH, RADIUS, TARGET, TARGET + 1, TARGET + 2, TARGET + 3] {
                    prop_assert!((fa[k] - fb[k]).abs() < 1e-12);
                }
                // d of the rotated state equals the rotated d
                let d = joint_displacement(&spec, &rot, i);
                prop_assert!((d - m.mul_vec(joint_displacement(&spec, &states, i))).norm() < 1e-12);
            }
        }
    }
}
