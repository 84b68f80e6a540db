use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::body::{
    assemble_chain, max_joint_displacement, BodySpec, ControlInput, LinkControl, LinkState, SceneState, Trajectory,
};
use crate::error::{Error, Result};
use crate::geom::{capsule_ground_contact, Pose, Quat, Vec3};

use super::{simulate, SimConfig};

/// Steps during which the random torque acts on the top link.
pub const TORQUE_STEPS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    /// One 4-link chain falling on the ground.
    Chain4,
    /// Two 2-link chains thrown at each other.
    Chain2x2,
    /// Two single-capsule chains thrown at each other.
    Chain1v2,
}

impl Scenario {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "chain4" => Ok(Scenario::Chain4),
            "chain2x2" => Ok(Scenario::Chain2x2),
            "chain1v2" => Ok(Scenario::Chain1v2),
            _ => Err(Error::InvalidConfig(format!("unknown scenario '{s}' (chain4, chain2x2, chain1v2)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Chain4 => "chain4",
            Scenario::Chain2x2 => "chain2x2",
            Scenario::Chain1v2 => "chain1v2",
        }
    }

    /// `(links per body, number of bodies)`.
    pub fn layout(self) -> (usize, usize) {
        match self {
            Scenario::Chain4 => (4, 1),
            Scenario::Chain2x2 => (2, 2),
            Scenario::Chain1v2 => (1, 2),
        }
    }
}

/// Sampling ranges for initial conditions, dimensions and torques.
#[derive(Clone, Debug, PartialEq)]
pub struct Randomization {
    pub root_height: (f64, f64),
    pub linear_velocity: f64,
    pub angular_velocity: f64,
    pub link_length: (f64, f64),
    pub link_radius: (f64, f64),
    pub torque: f64,
    /// Initial horizontal gap between colliding bodies (m).
    pub approach_gap: (f64, f64),
    /// Closing speed of colliding bodies (m/s).
    pub approach_speed: (f64, f64),
    /// Minimum initial ground clearance of the lowest capsule (m).
    pub clearance: f64,
}

impl Default for Randomization {
    fn default() -> Self {
        Randomization {
            root_height: (0.5, 2.0),
            linear_velocity: 2.0,
            angular_velocity: 5.0,
            link_length: (0.2, 0.5),
            link_radius: (0.04, 0.08),
            torque: 1.0,
            approach_gap: (0.8, 1.4),
            approach_speed: (2.0, 4.0),
            clearance: 0.01,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GenReport {
    pub sequences: usize,
    /// Rollouts discarded for diverging and regenerated.
    pub discarded: usize,
}

const MAX_ATTEMPTS: u64 = 64;
const DIVERGED_SPEED: f64 = 100.0;
const DIVERGED_JOINT_GAP: f64 = 0.05;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of attempt `attempt` of sequence `index`.
fn sequence_seed(master: u64, index: u64, attempt: u64) -> u64 {
    splitmix(splitmix(master ^ splitmix(index)) ^ attempt.wrapping_mul(0xA24B_AED4_963E_E407))
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn symmetric(rng: &mut impl Rng, half: f64) -> Vec3 {
    let mut c = || if half > 0.0 { rng.gen_range(-half..half) } else { 0.0 };
    Vec3::new(c(), c(), c())
}

/// Uniformly distributed rotation (Shoemake).
pub fn random_rotation(rng: &mut impl Rng) -> Quat {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    Quat::new(b * (tau * u3).cos(), a * (tau * u2).sin(), a * (tau * u2).cos(), b * (tau * u3).sin())
}

/// Dimensions are rounded to `f32` so stored specs equal simulated ones.
fn random_chain(
    rng: &mut impl Rng,
    name: &str,
    n: usize,
    r: &Randomization,
    pose: Pose,
) -> Result<(BodySpec, Vec<LinkState>)> {
    let lengths: Vec<f64> = (0..n).map(|_| uniform(rng, r.link_length) as f32 as f64).collect();
    let radii: Vec<f64> = (0..n).map(|_| uniform(rng, r.link_radius) as f32 as f64).collect();
    let (mut spec, states) = assemble_chain(name, &lengths, &radii, pose)?;
    for link in spec.links.iter_mut() {
        link.mass = link.mass as f32 as f64;
        link.anchor_parent = Vec3::new(0.0, 0.0, link.anchor_parent.z as f32 as f64);
        link.anchor_child = Vec3::new(0.0, 0.0, link.anchor_child.z as f32 as f64);
    }
    Ok((spec, states))
}

/// Give all links the velocity field of one rigid motion about the root.
fn set_rigid_velocity(states: &mut [LinkState], v: Vec3, w: Vec3) {
    let root = states[0].x;
    for s in states.iter_mut() {
        s.v = v + w.cross(s.x - root);
        s.w = w;
    }
}

/// Lift the body so that its lowest surface point clears the ground.
fn lift_clear(spec: &BodySpec, states: &mut [LinkState], clearance: f64) {
    let deepest = spec
        .links
        .iter()
        .zip(states.iter())
        .map(|(l, s)| capsule_ground_contact(&s.pose(), &l.capsule).penetration)
        .fold(f64::MIN, f64::max);
    let lift = deepest + clearance;
    if lift > 0.0 {
        states.iter_mut().for_each(|s| s.x.z += lift);
    }
}

fn sample_scene(
    rng: &mut impl Rng,
    scenario: Scenario,
    r: &Randomization,
) -> Result<(Vec<BodySpec>, SceneState, Vec<Vec3>)> {
    let (n_links, n_bodies) = scenario.layout();
    let name = format!("chain{n_links}");
    if n_bodies == 1 {
        let pose = Pose::new(Vec3::new(0.0, 0.0, uniform(rng, r.root_height)), random_rotation(rng));
        let (spec, mut states) = random_chain(rng, &name, n_links, r, pose)?;
        set_rigid_velocity(&mut states, symmetric(rng, r.linear_velocity), symmetric(rng, r.angular_velocity));
        lift_clear(&spec, &mut states, r.clearance);
        let torque = symmetric(rng, r.torque);
        return Ok((vec![spec], vec![states], vec![torque]));
    }
    // Two bodies on opposite sides of the origin, closing along a random heading.
    let heading = rng.gen_range(0.0..std::f64::consts::TAU);
    let dir = Vec3::new(heading.cos(), heading.sin(), 0.0);
    let gap = uniform(rng, r.approach_gap);
    let speed = uniform(rng, r.approach_speed);
    let base = uniform(rng, r.root_height);
    let mut specs = Vec::new();
    let mut scene = Vec::new();
    let mut torques = Vec::new();
    for side in [-1.0, 1.0] {
        let height = base + rng.gen_range(-0.2..0.2);
        let center = dir * (0.5 * gap * side) + Vec3::new(0.0, 0.0, height);
        let orientation = random_rotation(rng);
        let (spec, mut states) = random_chain(rng, &name, n_links, r, Pose::new(center, orientation))?;
        // Center the chain on its sampled location.
        let mid = states.iter().fold(Vec3::ZERO, |a, s| a + s.x) / states.len() as f64;
        states.iter_mut().for_each(|s| s.x += center - mid);
        let v = dir * (-0.5 * speed * side) + symmetric(rng, 0.25 * r.linear_velocity);
        set_rigid_velocity(&mut states, v, symmetric(rng, r.angular_velocity));
        lift_clear(&spec, &mut states, r.clearance);
        specs.push(spec);
        scene.push(states);
        torques.push(symmetric(rng, r.torque));
    }
    Ok((specs, scene, torques))
}

fn controls_for(specs: &[BodySpec], torques: &[Vec3], seq_len: usize) -> Vec<ControlInput> {
    (0..seq_len)
        .map(|t| {
            specs
                .iter()
                .zip(torques)
                .map(|(spec, tau)| {
                    let mut u = vec![LinkControl::default(); spec.n_links()];
                    if t < TORQUE_STEPS {
                        u[0].torque = *tau;
                    }
                    u
                })
                .collect()
        })
        .collect()
}

fn diverged(specs: &[BodySpec], states: &[SceneState]) -> bool {
    states.iter().any(|scene| {
        scene.iter().zip(specs).any(|(links, spec)| {
            links.iter().any(|s| s.v.norm() > DIVERGED_SPEED)
                || max_joint_displacement(spec, links) > DIVERGED_JOINT_GAP
        })
    })
}

/// Generate one sequence; returns the trajectory and the number of discarded attempts.
pub fn generate_sequence(
    cfg: &SimConfig,
    randomization: &Randomization,
    scenario: Scenario,
    seq_len: usize,
    master_seed: u64,
    index: u64,
) -> Result<(Trajectory, usize)> {
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(sequence_seed(master_seed, index, attempt));
        let (specs, initial, torques) = sample_scene(&mut rng, scenario, randomization)?;
        let controls = controls_for(&specs, &torques, seq_len);
        match simulate(&specs, &initial, &controls, cfg) {
            Ok(states) if !diverged(&specs, &states) => {
                let traj = Trajectory {
                    specs,
                    dt: cfg.dt,
                    states: narrow_states(states),
                    controls: narrow_controls(controls),
                };
                return Ok((traj, attempt as usize));
            }
            Ok(_) | Err(Error::Diverged { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Diverged { step: 0, reason: format!("sequence {index}: every attempt diverged") })
}

/// Round states to the `f32` storage precision.
fn narrow_states(states: Vec<SceneState>) -> Vec<SceneState> {
    let narrow = |a: [f64; 13]| LinkState::from_array(&a.map(|v| v as f32 as f64));
    states
        .into_iter()
        .map(|s| s.into_iter().map(|b| b.into_iter().map(|l| narrow(l.to_array())).collect()).collect())
        .collect()
}

fn narrow_controls(controls: Vec<ControlInput>) -> Vec<ControlInput> {
    let narrow = |a: [f64; 7]| LinkControl::from_array(&a.map(|v| v as f32 as f64));
    controls
        .into_iter()
        .map(|s| s.into_iter().map(|b| b.into_iter().map(|l| narrow(l.to_array())).collect()).collect())
        .collect()
}

/// Randomized rollouts of `scenario`, deterministic in `seed` and identical
/// whether sequences are generated in parallel or sequentially.
pub fn generate_dataset(
    cfg: &SimConfig,
    randomization: &Randomization,
    scenario: Scenario,
    n_sequences: usize,
    seq_len: usize,
    seed: u64,
    parallel: bool,
) -> Result<(Vec<Trajectory>, GenReport)> {
    cfg.validate()?;
    if seq_len < 2 {
        return Err(Error::InvalidConfig("sequence length must be at least 2".into()));
    }
    let one = |i: usize| generate_sequence(cfg, randomization, scenario, seq_len, seed, i as u64);
    let results: Vec<Result<(Trajectory, usize)>> = if parallel {
        (0..n_sequences).into_par_iter().map(one).collect()
    } else {
        (0..n_sequences).map(one).collect()
    };
    let mut report = GenReport { sequences: n_sequences, discarded: 0 };
    let mut out = Vec::with_capacity(n_sequences);
    for r in results {
        let (traj, discarded) = r?;
        report.discarded += discarded;
        out.push(traj);
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_parallel_agrees() {
        let cfg = SimConfig::default();
        let r = Randomization::default();
        let (a, _) = generate_dataset(&cfg, &r, Scenario::Chain4, 4, 20, 7, false).unwrap();
        let (b, _) = generate_dataset(&cfg, &r, Scenario::Chain4, 4, 20, 7, true).unwrap();
        assert_eq!(a, b);
        let (c, _) = generate_dataset(&cfg, &r, Scenario::Chain4, 4, 20, 8, false).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn torque_only_in_first_steps() {
        let cfg = SimConfig::default();
        let (d, _) = generate_dataset(&cfg, &Randomization::default(), Scenario::Chain2x2, 3, 30, 1, false).unwrap();
        for traj in &d {
            traj.validate().unwrap();
            assert_eq!(traj.states.len(), 31);
            for (t, u) in traj.controls.iter().enumerate() {
                for body in u {
                    assert!(body[1..].iter().all(|c| c.torque == Vec3::ZERO && c.target.is_zero()));
                    assert_eq!(body[0].torque == Vec3::ZERO, t >= TORQUE_STEPS);
                }
            }
        }
    }

    #[test]
    fn initial_state_clears_ground_and_joints() {
        let cfg = SimConfig::default();
        let (d, _) = generate_dataset(&cfg, &Randomization::default(), Scenario::Chain4, 8, 2, 3, false).unwrap();
        for traj in &d {
            let spec = &traj.specs[0];
            let s0 = &traj.states[0][0];
            for (l, s) in spec.links.iter().zip(s0) {
                assert!(capsule_ground_contact(&s.pose(), &l.capsule).penetration <= -0.009);
            }
            assert!(max_joint_displacement(spec, s0) < 1e-6);
        }
    }

    #[test]
    fn rejects_short_sequences() {
        let cfg = SimConfig::default();
        assert!(generate_dataset(&cfg, &Randomization::default(), Scenario::Chain4, 1, 1, 0, false).is_err());
    }

    #[test]
    fn rotations_are_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            assert!((random_rotation(&mut rng).norm() - 1.0).abs() < 1e-12);
        }
    }
}
