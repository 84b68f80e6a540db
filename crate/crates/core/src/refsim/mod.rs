//! Classical maximal-coordinate rigid-body simulator used as ground truth.
//!
//! Each step applies gravity, external and PD motor torques (semi-implicit
//! Euler), then resolves spherical joints and contacts with sequential
//! impulses (Baumgarte-stabilized), integrates poses and finally projects the
//! joint anchors back together at the position level.

mod dataset;
mod solver;

pub use dataset::{generate_dataset, GenReport, Randomization, Scenario};

use crate::body::{BodySpec, ControlInput, SceneState};
use crate::error::{Error, Result};
use crate::geom::{Quat, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub gravity: Vec3,
    pub solver_iterations: usize,
    pub baumgarte_beta: f64,
    pub friction_mu: f64,
    pub restitution: f64,
    pub pd_kp: f64,
    pub pd_kd: f64,
    /// Nonlinear joint projection sweeps after pose integration.
    pub position_iterations: usize,
    /// Penetration tolerated before the contact bias kicks in (m).
    pub contact_slop: f64,
    /// Pairs closer than this are solved as speculative contacts (m).
    pub contact_margin: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.01,
            gravity: Vec3::new(0.0, 0.0, -9.81),
            solver_iterations: 20,
            baumgarte_beta: 0.2,
            friction_mu: 0.8,
            restitution: 0.0,
            pd_kp: 10.0,
            pd_kd: 0.2,
            position_iterations: 10,
            contact_slop: 0.001,
            contact_margin: 0.05,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dt > 0.0
            && self.solver_iterations >= 1
            && (0.0..=1.0).contains(&self.baumgarte_beta)
            && self.friction_mu >= 0.0
            && self.restitution >= 0.0
            && self.contact_slop >= 0.0
            && self.contact_margin >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad simulator configuration: {self:?}")))
        }
    }
}

/// PD motor torque in the parent frame for a joint whose child currently has
/// relative orientation `q_rel` (parent-to-child) and relative angular
/// velocity `w_rel` (parent frame). A zero `target` disables the motor.
pub fn pd_torque(q_rel: Quat, target: Quat, w_rel: Vec3, cfg: &SimConfig) -> Vec3 {
    if target.is_zero() {
        return Vec3::ZERO;
    }
    // Error rotation in the child frame, re-expressed in the parent frame.
    let err = (q_rel.conj() * target.normalize()).to_rotation_vector();
    q_rel.rotate(err) * cfg.pd_kp - w_rel * cfg.pd_kd
}

/// Advance a scene by one step.
pub fn ref_step(specs: &[BodySpec], state: &SceneState, control: &ControlInput, cfg: &SimConfig) -> Result<SceneState> {
    let finite = state.iter().flatten().all(|s| s.is_finite())
        && control.iter().flatten().all(|c| c.target.is_finite() && c.torque.is_finite());
    if !finite {
        return Err(Error::Diverged { step: 0, reason: "non-finite input state".into() });
    }
    let mut world = solver::World::new(specs, state);
    world.apply_forces(specs, control, cfg);
    world.solve_velocities(specs, cfg);
    world.integrate(cfg.dt);
    world.project_joints(specs, cfg.position_iterations);
    let next = world.into_state(specs);
    if !next.iter().flatten().all(|s| s.is_finite()) {
        return Err(Error::Diverged { step: 0, reason: "non-finite output state".into() });
    }
    Ok(next)
}

/// Roll out `controls.len()` steps from `initial`.
pub fn simulate(
    specs: &[BodySpec],
    initial: &SceneState,
    controls: &[ControlInput],
    cfg: &SimConfig,
) -> Result<Vec<SceneState>> {
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(initial.clone());
    for (t, u) in controls.iter().enumerate() {
        let next = ref_step(specs, &states[t], u, cfg).map_err(|e| match e {
            Error::Diverged { reason, .. } => Error::Diverged { step: t, reason },
            other => other,
        })?;
        states.push(next);
    }
    Ok(states)
}

/// Kinetic plus gravitational potential energy.
pub fn total_energy(specs: &[BodySpec], state: &SceneState, gravity: Vec3) -> f64 {
    let mut e = 0.0;
    for (spec, links) in specs.iter().zip(state) {
        for (link, s) in spec.links.iter().zip(links) {
            let inertia = crate::body::world_inertia(link, s.q);
            e += 0.5 * link.mass * s.v.norm_squared() + 0.5 * s.w.dot(inertia.mul_vec(s.w));
            e -= link.mass * gravity.dot(s.x);
        }
    }
    e
}

/// Total linear momentum of the scene.
pub fn linear_momentum(specs: &[BodySpec], state: &SceneState) -> Vec3 {
    let mut p = Vec3::ZERO;
    for (spec, links) in specs.iter().zip(state) {
        for (link, s) in spec.links.iter().zip(links) {
            p += s.v * link.mass;
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{assemble_chain, idle_control, max_joint_displacement, LinkControl, LinkState};
    use crate::geom::{capsule_ground_contact, Capsule, Pose};

    fn horizontal() -> Quat {
        Quat::from_axis_angle(Vec3::X, std::f64::consts::FRAC_PI_2)
    }

    #[test]
    fn pd_examples() {
        let cfg = SimConfig { pd_kp: 50.0, pd_kd: 5.0, ..Default::default() };
        let q = Quat::new(0.8, 0.1, -0.5, 0.3).normalize();
        assert!(pd_torque(q, q, Vec3::ZERO, &cfg).norm() < 1e-12);
        assert_eq!(pd_torque(q, Quat::ZERO, Vec3::new(1.0, 2.0, 3.0), &cfg), Vec3::ZERO);
        let target = Quat::from_axis_angle(Vec3::X, std::f64::consts::FRAC_PI_2);
        let tau = pd_torque(Quat::IDENTITY, target, Vec3::ZERO, &cfg);
        assert!((tau.norm() - 50.0 * std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!((tau - Vec3::X * (50.0 * std::f64::consts::FRAC_PI_2)).norm() < 1e-12);
        let damped = pd_torque(q, q, Vec3::new(0.0, 2.0, 0.0), &cfg);
        assert!((damped - Vec3::new(0.0, -10.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn free_fall_matches_closed_form() {
        let (spec, states) =
            assemble_chain("c1", &[0.1], &[0.02], Pose::new(Vec3::new(0.0, 0.0, 5.0), horizontal())).unwrap();
        let specs = vec![spec];
        let cfg = SimConfig::default();
        let controls = vec![idle_control(&specs); 100];
        let out = simulate(&specs, &vec![states.clone()], &controls, &cfg).unwrap();
        let last = out[100][0][0];
        let expected_dz = -9.81 * 0.01 * 0.01 * (100.0 * 101.0 / 2.0);
        assert!((expected_dz - -4.95405f64).abs() < 1e-12);
        assert!((last.x.z - 5.0 - expected_dz).abs() < 1e-9, "{}", last.x.z - 5.0);
        assert!((last.v.z + 9.81).abs() < 1e-9);
        assert_eq!(last.x.x, 0.0);
    }

    #[test]
    fn resting_capsule_settles() {
        let cap_r = 0.05;
        let (spec, states) =
            assemble_chain("c1", &[0.3], &[cap_r], Pose::new(Vec3::new(0.0, 0.0, cap_r + 0.02), horizontal())).unwrap();
        let specs = vec![spec];
        let cfg = SimConfig::default();
        let mut s = vec![states];
        let idle = idle_control(&specs);
        for _ in 0..300 {
            s = ref_step(&specs, &s, &idle, &cfg).unwrap();
        }
        let link = s[0][0];
        let pen = capsule_ground_contact(&link.pose(), &specs[0].links[0].capsule).penetration;
        assert!(pen <= 0.002, "penetration {pen}");
        assert!(link.v.norm() <= 1e-3 && link.w.norm() <= 1e-3, "v {:?} w {:?}", link.v, link.w);
    }

    #[test]
    fn momentum_conserved_under_internal_torques() {
        let pose = Pose::new(Vec3::new(0.0, 0.0, 50.0), Quat::new(0.9, 0.3, 0.1, -0.2).normalize());
        let (spec, mut states) = assemble_chain("c4", &[0.3, 0.25, 0.4, 0.3], &[0.05; 4], pose).unwrap();
        states[1].w = Vec3::new(1.0, -2.0, 0.5);
        states[2].v = Vec3::new(0.3, 0.0, -0.2);
        let specs = vec![spec];
        let cfg = SimConfig { gravity: Vec3::ZERO, ..Default::default() };
        let mut u = idle_control(&specs);
        u[0][2] = LinkControl { target: Quat::from_axis_angle(Vec3::Y, 1.0), torque: Vec3::ZERO };
        u[0][3] = LinkControl { target: Quat::from_axis_angle(Vec3::X, -0.7), torque: Vec3::ZERO };
        let mut s = vec![states];
        let mut p0 = linear_momentum(&specs, &s);
        for _ in 0..200 {
            s = ref_step(&specs, &s, &u, &cfg).unwrap();
            let p1 = linear_momentum(&specs, &s);
            assert!((p1 - p0).norm() < 1e-6, "{:?} -> {:?}", p0, p1);
            p0 = p1;
        }
    }

    #[test]
    fn pd_motor_drives_joint_toward_target() {
        let pose = Pose::new(Vec3::new(0.0, 0.0, 50.0), Quat::IDENTITY);
        let (spec, states) = assemble_chain("c2", &[0.3, 0.3], &[0.05; 2], pose).unwrap();
        let specs = vec![spec];
        let cfg = SimConfig { gravity: Vec3::ZERO, ..Default::default() };
        let target = Quat::from_axis_angle(Vec3::X, 0.5);
        let mut u = idle_control(&specs);
        u[0][1].target = target;
        let mut s = vec![states];
        for _ in 0..400 {
            s = ref_step(&specs, &s, &u, &cfg).unwrap();
        }
        let rel = s[0][0].q.conj() * s[0][1].q;
        assert!(rel.dot(target).abs() > 0.999, "{rel:?}");
    }

    #[test]
    fn rejects_non_finite_state() {
        let (spec, mut states) = assemble_chain("c1", &[0.1], &[0.02], Pose::default()).unwrap();
        states[0].v.x = f64::NAN;
        let specs = vec![spec];
        let err = ref_step(&specs, &vec![states], &idle_control(&specs), &SimConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }

    #[test]
    fn chain_drop_keeps_joints_together() {
        let pose = Pose::new(Vec3::new(0.0, 0.0, 1.5), Quat::new(0.7, 0.5, -0.3, 0.4).normalize());
        let (spec, mut states) = assemble_chain("c4", &[0.45, 0.2, 0.5, 0.3], &[0.08, 0.04, 0.06, 0.05], pose).unwrap();
        for s in states.iter_mut() {
            s.w = Vec3::new(4.0, -3.0, 5.0);
        }
        let specs = vec![spec];
        let cfg = SimConfig::default();
        let mut u = idle_control(&specs);
        let mut s = vec![states];
        let mut worst: f64 = 0.0;
        for t in 0..200 {
            u[0][0].torque = if t < 10 { Vec3::new(10.0, -10.0, 8.0) } else { Vec3::ZERO };
            s = ref_step(&specs, &s, &u, &cfg).unwrap();
            worst = worst.max(max_joint_displacement(&specs[0], &s[0]));
        }
        assert!(worst < 1e-3, "max joint displacement {worst}");
        let lowest = s[0]
            .iter()
            .zip(&specs[0].links)
            .map(|(l, k)| capsule_ground_contact(&l.pose(), &k.capsule).penetration)
            .fold(f64::MIN, f64::max);
        assert!(lowest < 0.005, "penetration {lowest}");
    }

    #[test]
    fn two_capsules_collide_and_separate() {
        let lie = Quat::from_axis_angle(Vec3::Y, std::f64::consts::FRAC_PI_2);
        let cap = Capsule::new(0.3, 0.1);
        let a =
            LinkState { v: Vec3::new(2.0, 0.0, 0.0), ..LinkState::at_rest(Pose::new(Vec3::new(-0.5, 0.0, 5.0), lie)) };
        let b =
            LinkState { v: Vec3::new(-2.0, 0.0, 0.0), ..LinkState::at_rest(Pose::new(Vec3::new(0.5, 0.0, 5.0), lie)) };
        let specs = vec![
            BodySpec { name: "a".into(), links: vec![crate::body::LinkSpec::root(cap, 1.0)] },
            BodySpec { name: "b".into(), links: vec![crate::body::LinkSpec::root(cap, 1.0)] },
        ];
        let cfg = SimConfig { gravity: Vec3::ZERO, ..Default::default() };
        let mut s = vec![vec![a], vec![b]];
        let idle = idle_control(&specs);
        let mut min_gap = f64::MAX;
        for _ in 0..100 {
            s = ref_step(&specs, &s, &idle, &cfg).unwrap();
            let c = crate::geom::capsule_capsule_contact(&s[0][0].pose(), &cap, &s[1][0].pose(), &cap);
            min_gap = min_gap.min(-c.penetration);
        }
        assert!(min_gap > -0.01, "deep interpenetration {min_gap}");
        assert!(s[0][0].v.x <= 1e-6 && s[1][0].v.x >= -1e-6);
        assert!(linear_momentum(&specs, &s).norm() < 1e-9);
    }
}
