//! Articulated bodies: capsule link trees, per-link dynamic state, control
//! inputs and trajectories.

use crate::error::{Error, Result};
use crate::geom::{Capsule, Mat3, Pose, Quat, Vec3};

/// Default link density (kg/m^3) used when masses are derived from geometry.
pub const DEFAULT_DENSITY: f64 = 1000.0;

#[derive(Clone, Debug, PartialEq)]
pub struct LinkSpec {
    pub capsule: Capsule,
    pub mass: f64,
    /// `None` for the root link.
    pub parent: Option<usize>,
    /// Joint point in the parent's local frame.
    pub anchor_parent: Vec3,
    /// Joint point in this link's local frame.
    pub anchor_child: Vec3,
}

impl LinkSpec {
    pub fn root(capsule: Capsule, mass: f64) -> Self {
        LinkSpec { capsule, mass, parent: None, anchor_parent: Vec3::ZERO, anchor_child: Vec3::ZERO }
    }

    /// Principal moments of inertia about the center, in the local frame.
    pub fn inertia_diag(&self) -> Vec3 {
        capsule_inertia(self.mass, &self.capsule)
    }
}

/// Principal moments of a solid capsule of total mass `mass` about its center
/// (local z is the symmetry axis).
pub fn capsule_inertia(mass: f64, cap: &Capsule) -> Vec3 {
    let (l, r) = (cap.length, cap.radius);
    let cyl = std::f64::consts::PI * r * r * l;
    let hemis = 4.0 / 3.0 * std::f64::consts::PI * r * r * r;
    let density = mass / (cyl + hemis);
    let m_cyl = density * cyl;
    let m_hemis = density * hemis;
    let axial = m_cyl * r * r / 2.0 + m_hemis * 2.0 * r * r / 5.0;
    let transverse =
        m_cyl * (l * l / 12.0 + r * r / 4.0) + m_hemis * (2.0 * r * r / 5.0 + l * l / 4.0 + 3.0 * l * r / 8.0);
    Vec3::new(transverse, transverse, axial)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BodySpec {
    pub name: String,
    pub links: Vec<LinkSpec>,
}

impl BodySpec {
    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    /// Checks the tree invariants: one root at index 0, parents precede
    /// children, positive masses and radii.
    pub fn validate(&self) -> Result<()> {
        if self.links.is_empty() {
            return Err(Error::InvalidBody(format!("body '{}' has no links", self.name)));
        }
        for (i, link) in self.links.iter().enumerate() {
            match (i, link.parent) {
                (0, None) => {}
                (0, Some(_)) => {
                    return Err(Error::InvalidBody(format!("body '{}': link 0 must be the root", self.name)))
                }
                (_, None) => return Err(Error::InvalidBody(format!("body '{}': link {i} has no parent", self.name))),
                (_, Some(p)) if p >= i => {
                    return Err(Error::InvalidBody(format!(
                        "body '{}': link {i} has parent {p}, links must be topologically ordered",
                        self.name
                    )))
                }
                _ => {}
            }
            let c = &link.capsule;
            if !(link.mass > 0.0 && c.radius > 0.0 && c.length >= 0.0) {
                return Err(Error::InvalidBody(format!(
                    "body '{}': link {i} needs mass > 0, radius > 0, length >= 0",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// True when links `a` and `b` share a joint.
    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.links[a].parent == Some(b) || self.links[b].parent == Some(a)
    }
}

/// Dynamic state of one link in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LinkState {
    pub x: Vec3,
    pub q: Quat,
    pub v: Vec3,
    pub w: Vec3,
}

impl LinkState {
    pub fn at_rest(pose: Pose) -> Self {
        LinkState { x: pose.position, q: pose.orientation, v: Vec3::ZERO, w: Vec3::ZERO }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.q)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.q.is_finite() && self.v.is_finite() && self.w.is_finite()
    }

    /// Fields in storage order: x(3) q(4) v(3) w(3).
    pub fn to_array(&self) -> [f64; 13] {
        let mut out = [0.0; 13];
        out[0..3].copy_from_slice(&self.x.to_array());
        out[3..7].copy_from_slice(&self.q.to_array());
        out[7..10].copy_from_slice(&self.v.to_array());
        out[10..13].copy_from_slice(&self.w.to_array());
        out
    }

    pub fn from_array(a: &[f64]) -> Self {
        LinkState {
            x: Vec3::from_slice(&a[0..3]),
            q: Quat::from_slice(&a[3..7]),
            v: Vec3::from_slice(&a[7..10]),
            w: Vec3::from_slice(&a[10..13]),
        }
    }
}

/// Per-body list of link states.
pub type SceneState = Vec<Vec<LinkState>>;

/// Actuation of one link for one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkControl {
    /// Target orientation relative to the parent; [`Quat::ZERO`] when absent.
    pub target: Quat,
    /// External world-frame torque (N m).
    pub torque: Vec3,
}

impl Default for LinkControl {
    fn default() -> Self {
        LinkControl { target: Quat::ZERO, torque: Vec3::ZERO }
    }
}

impl LinkControl {
    pub fn to_array(&self) -> [f64; 7] {
        let mut out = [0.0; 7];
        out[0..4].copy_from_slice(&self.target.to_array());
        out[4..7].copy_from_slice(&self.torque.to_array());
        out
    }

    pub fn from_array(a: &[f64]) -> Self {
        LinkControl { target: Quat::from_slice(&a[0..4]), torque: Vec3::from_slice(&a[4..7]) }
    }
}

/// Per-body list of link controls.
pub type ControlInput = Vec<Vec<LinkControl>>;

/// Zero control for every link of `specs`.
pub fn idle_control(specs: &[BodySpec]) -> ControlInput {
    specs.iter().map(|s| vec![LinkControl::default(); s.n_links()]).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub specs: Vec<BodySpec>,
    pub dt: f64,
    /// `T + 1` scene states.
    pub states: Vec<SceneState>,
    /// `T` controls; `controls[t]` drives `states[t] -> states[t + 1]`.
    pub controls: Vec<ControlInput>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidTrajectory("dt must be positive".into()));
        }
        if self.states.len() != self.controls.len() + 1 {
            return Err(Error::InvalidTrajectory(format!(
                "{} states for {} controls",
                self.states.len(),
                self.controls.len()
            )));
        }
        let counts: Vec<usize> = self.specs.iter().map(BodySpec::n_links).collect();
        let ok = |lens: Vec<usize>| lens == counts;
        let states_ok = self.states.iter().all(|s| ok(s.iter().map(Vec::len).collect()));
        let controls_ok = self.controls.iter().all(|u| ok(u.iter().map(Vec::len).collect()));
        if !states_ok || !controls_ok {
            return Err(Error::InvalidTrajectory("link counts disagree with body specs".into()));
        }
        Ok(())
    }
}

/// World positions of joint `i` as seen from the parent and from the child.
///
/// # Panics
/// If `i` is the root link.
pub fn joint_world_positions(spec: &BodySpec, states: &[LinkState], i: usize) -> (Vec3, Vec3) {
    let link = &spec.links[i];
    let p = link.parent.expect("joint_world_positions called on a root link");
    let parent_side = states[p].x + states[p].q.rotate(link.anchor_parent);
    let child_side = states[i].x + states[i].q.rotate(link.anchor_child);
    (parent_side, child_side)
}

/// Parent-side minus child-side joint position; zero for the root.
pub fn joint_displacement(spec: &BodySpec, states: &[LinkState], i: usize) -> Vec3 {
    if spec.links[i].parent.is_none() {
        return Vec3::ZERO;
    }
    let (p, c) = joint_world_positions(spec, states, i);
    p - c
}

/// Largest joint displacement norm over all joints of a body.
pub fn max_joint_displacement(spec: &BodySpec, states: &[LinkState]) -> f64 {
    (0..spec.n_links()).map(|i| joint_displacement(spec, states, i).norm()).fold(0.0, f64::max)
}

/// Serial chain hanging from link 0 along its local -z axis, assembled with
/// zero joint displacement. Masses follow from [`DEFAULT_DENSITY`].
pub fn assemble_chain(
    name: &str,
    lengths: &[f64],
    radii: &[f64],
    root_pose: Pose,
) -> Result<(BodySpec, Vec<LinkState>)> {
    assemble_chain_with_density(name, lengths, radii, root_pose, DEFAULT_DENSITY)
}

pub fn assemble_chain_with_density(
    name: &str,
    lengths: &[f64],
    radii: &[f64],
    root_pose: Pose,
    density: f64,
) -> Result<(BodySpec, Vec<LinkState>)> {
    if lengths.is_empty() || lengths.len() != radii.len() {
        return Err(Error::InvalidBody("chain needs one length and one radius per link".into()));
    }
    if lengths.iter().chain(radii).any(|d| !(*d > 0.0)) || !(density > 0.0) {
        return Err(Error::InvalidBody("chain dimensions and density must be positive".into()));
    }
    let mut links = Vec::with_capacity(lengths.len());
    let mut states = Vec::with_capacity(lengths.len());
    let axis = root_pose.orientation.rotate(Vec3::Z);
    let mut center = root_pose.position;
    for (i, (&l, &r)) in lengths.iter().zip(radii).enumerate() {
        let capsule = Capsule::new(l, r);
        let mass = density * capsule.volume();
        if i == 0 {
            links.push(LinkSpec::root(capsule, mass));
        } else {
            let lp = lengths[i - 1];
            center -= axis * (0.5 * lp + 0.5 * l);
            links.push(LinkSpec {
                capsule,
                mass,
                parent: Some(i - 1),
                anchor_parent: Vec3::new(0.0, 0.0, -0.5 * lp),
                anchor_child: Vec3::new(0.0, 0.0, 0.5 * l),
            });
        }
        states.push(LinkState::at_rest(Pose::new(center, root_pose.orientation)));
    }
    let spec = BodySpec { name: name.to_string(), links };
    spec.validate()?;
    Ok((spec, states))
}

/// World-frame inverse inertia of a link in orientation `q`.
pub fn world_inverse_inertia(link: &LinkSpec, q: Quat) -> Mat3 {
    let d = link.inertia_diag();
    let r = q.to_mat();
    r.mul_mat(&Mat3::diag(Vec3::new(1.0 / d.x, 1.0 / d.y, 1.0 / d.z))).mul_mat(&r.transpose())
}

/// World-frame inertia of a link in orientation `q`.
pub fn world_inertia(link: &LinkSpec, q: Quat) -> Mat3 {
    let r = q.to_mat();
    r.mul_mat(&Mat3::diag(link.inertia_diag())).mul_mat(&r.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chain4() -> (BodySpec, Vec<LinkState>) {
        let pose = Pose::new(Vec3::new(0.3, -0.2, 2.0), Quat::new(0.9, 0.2, -0.1, 0.3).normalize());
        assemble_chain("chain4", &[0.3; 4], &[0.05; 4], pose).unwrap()
    }

    #[test]
    fn single_link_chain_is_free_capsule() {
        let (spec, states) = assemble_chain("c1", &[0.3], &[0.05], Pose::default()).unwrap();
        assert_eq!(spec.n_links(), 1);
        assert_eq!(spec.links[0].parent, None);
        assert_eq!(states[0].x, Vec3::ZERO);
        assert_eq!(joint_displacement(&spec, &states, 0), Vec3::ZERO);
    }

    #[test]
    fn assembled_extent() {
        let (spec, states) = assemble_chain("c4", &[0.3; 4], &[0.05; 4], Pose::default()).unwrap();
        // Along the axis: from top hemisphere tip to bottom tip.
        let top = states[0].x.z + 0.15 + 0.05;
        let bottom = states[3].x.z - 0.15 - 0.05;
        assert!((top - bottom - (4.0 * 0.3 + 2.0 * 0.05)).abs() < 1e-12);
        assert!(max_joint_displacement(&spec, &states) < 1e-15);
    }

    #[test]
    fn translated_child_shows_displacement() {
        let (spec, mut states) = chain4();
        states[2].x += Vec3::new(0.01, 0.0, 0.0);
        let (p, c) = joint_world_positions(&spec, &states, 2);
        assert!((c - p - Vec3::new(0.01, 0.0, 0.0)).norm() < 1e-12);
        assert!((joint_displacement(&spec, &states, 2) + Vec3::new(0.01, 0.0, 0.0)).norm() < 1e-12);
        assert_eq!(joint_displacement(&spec, &states, 0), Vec3::ZERO);
    }

    #[test]
    #[should_panic]
    fn root_has_no_joint() {
        let (spec, states) = chain4();
        let _ = joint_world_positions(&spec, &states, 0);
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(assemble_chain("bad", &[0.3, -0.1], &[0.05, 0.05], Pose::default()).is_err());
        assert!(assemble_chain("bad", &[0.3], &[0.0], Pose::default()).is_err());
        assert!(assemble_chain("bad", &[], &[], Pose::default()).is_err());
    }

    #[test]
    fn validate_rejects_out_of_order_parent() {
        let (mut spec, _) = chain4();
        spec.links[1].parent = Some(2);
        assert!(spec.validate().is_err());
        spec.links[1].parent = Some(0);
        spec.links[0].parent = Some(0);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn capsule_inertia_limits() {
        // Zero-length capsule is a solid sphere.
        let m = 2.0;
        let sphere = capsule_inertia(m, &Capsule::new(0.0, 0.1));
        let expect = 0.4 * m * 0.01;
        assert!((sphere.x - expect).abs() < 1e-12 && (sphere.z - expect).abs() < 1e-12);
        let rod = capsule_inertia(m, &Capsule::new(10.0, 1e-4));
        assert!((rod.x - m * 100.0 / 12.0).abs() / rod.x < 1e-3);
    }

    fn arb_unit_quat() -> impl Strategy<Value = Quat> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("nonzero", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
            .prop_map(|(w, x, y, z)| Quat::new(w, x, y, z).normalize())
    }

    proptest! {
        #[test]
        fn displacement_matches_matrix_recomputation(
            dq in proptest::collection::vec(arb_unit_quat(), 4),
            dx in proptest::collection::vec((-0.02..0.02f64, -0.02..0.02f64, -0.02..0.02f64), 4),
        ) {
            let (spec, mut states) = chain4();
            for i in 0..4 {
                let small = Quat::new(30.0, dq[i].x, dq[i].y, dq[i].z).normalize();
                states[i].q = (small * states[i].q).normalize();
                states[i].x += Vec3::new(dx[i].0, dx[i].1, dx[i].2);
            }
            for i in 1..4 {
                let link = &spec.links[i];
                let p = link.parent.unwrap();
                let pm = states[p].q.to_mat();
                let cm = states[i].q.to_mat();
                let expect = (states[p].x + pm.mul_vec(link.anchor_parent)) - (states[i].x + cm.mul_vec(link.anchor_child));
                prop_assert!((joint_displacement(&spec, &states, i) - expect).norm() < 1e-12);
            }
        }

        #[test]
        fn displacement_invariant_under_rigid_motion(
            g in arb_unit_quat(),
            shift in (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64),
            jitter in proptest::collection::vec(arb_unit_quat(), 4),
        ) {
            let (spec, mut states) = chain4();
            for (s, j) in states.iter_mut().zip(&jitter) {
                s.q = (Quat::new(10.0, j.x, j.y, j.z).normalize() * s.q).normalize();
            }
            let shift = Vec3::new(shift.0, shift.1, shift.2);
            let moved: Vec<LinkState> = states
                .iter()
                .map(|s| LinkState { x: g.rotate(s.x) + shift, q: g * s.q, ..*s })
                .collect();
            for i in 0..4 {
                let d0 = g.rotate(joint_displacement(&spec, &states, i));
                let d1 = joint_displacement(&spec, &moved, i);
                prop_assert!((d0 - d1).norm() < 1e-9);
                prop_assert!((d0.norm() - d1.norm()).abs() < 1e-9);
            }
        }
    }
}
