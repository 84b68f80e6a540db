use std::sync::Arc;

use super::*;
use crate::body::{assemble_chain, idle_control, LinkControl};
use crate::geom::Pose;

fn two_chains() -> (Vec<BodySpec>, SceneState) {
    let (a, sa) = assemble_chain(
        "chain2",
        &[0.3, 0.25],
        &[0.05, 0.06],
        Pose::new(Vec3::new(0.0, 0.0, 1.0), Quat::from_axis_angle(Vec3::X, 0.3)),
    )
    .unwrap();
    let (b, sb) = assemble_chain(
        "chain2",
        &[0.35, 0.2],
        &[0.04, 0.05],
        Pose::new(Vec3::new(0.2, 0.05, 1.1), Quat::from_axis_angle(Vec3::Y, 1.2)),
    )
    .unwrap();
    let mut scene = vec![sa, sb];
    for (k, s) in scene.iter_mut().flatten().enumerate() {
        s.v = Vec3::new(0.1 * k as f64, -0.2, 0.3);
        s.w = Vec3::new(0.5, 0.1 * k as f64, -1.0);
    }
    (vec![a, b], scene)
}

fn small_config() -> ModelConfig {
    ModelConfig { hidden_width: 8, dyn_layers: 3, contact_layers: 2, ..Default::default() }
}

fn model_for(specs: &[BodySpec], cfg: ModelConfig, seed: u64) -> ModelParams<f64> {
    ModelParams::init(cfg, 0.01, &body_types(specs), specs.len() > 1, seed).unwrap()
}

fn controls(specs: &[BodySpec], n: usize) -> Vec<ControlInput> {
    (0..n)
        .map(|t| {
            let mut u = idle_control(specs);
            u[0][1] = LinkControl {
                target: Quat::from_axis_angle(Vec3::Z, 0.1 * t as f64),
                torque: Vec3::new(0.0, 0.1, 0.0),
            };
            u
        })
        .collect()
}

#[test]
fn zero_output_layer_moves_with_mean_velocity() {
    let (specs, scene) = two_chains();
    let mut model = model_for(&specs, small_config(), 1);
    let mean: Vec<f64> = (0..12).map(|k| 0.1 * k as f64 - 0.5).collect();
    model.bodies[0].output = NormStats { mean: mean.clone(), std: vec![3.0; 12] };
    let last = model.bodies[0].mlp.weights.len() - 1;
    let [r, c] = model.bodies[0].mlp.weights[last].shape();
    model.bodies[0].mlp.weights[last] = Arc::new(Tensor::zeros(r, c));
    let next = larp_step(&model, &specs, &scene, &controls(&specs, 1)[0]).unwrap();
    for m in 0..2 {
        for i in 0..2 {
            let v = Vec3::from_slice(&mean[6 * i..6 * i + 3]);
            let w = Vec3::from_slice(&mean[6 * i + 3..6 * i + 6]);
            assert!((next[m][i].v - v).norm() < 1e-12);
            assert!((next[m][i].w - w).norm() < 1e-12);
            assert!((next[m][i].x - (scene[m][i].x + v * 0.01)).norm() < 1e-12);
            let q = crate::geom::integrate_orientation(scene[m][i].q, w, 0.01);
            assert!((next[m][i].q + (-q)).norm() < 1e-12);
        }
    }
}

#[test]
fn quaternions_stay_unit() {
    let (specs, scene) = two_chains();
    let model = model_for(&specs, small_config(), 2);
    let states = rollout(&model, &specs, &scene, &controls(&specs, 10), 10).unwrap();
    assert_eq!(states.len(), 11);
    for s in states.iter().flatten().flatten() {
        assert!((s.q.norm() - 1.0).abs() < 1e-6);
    }
    let none = rollout(&model, &specs, &scene, &[], 0).unwrap();
    assert_eq!(none, vec![scene]);
}

#[test]
fn horizontal_translation_commutes_with_step() {
    // Contact descriptors carry absolute positions, so the property is
    // stated for a single body.
    let (specs, scene) = two_chains();
    let (specs, scene) = (specs[..1].to_vec(), scene[..1].to_vec());
    let model = model_for(&specs, small_config(), 3);
    let shift = Vec3::new(5.0, -3.0, 0.0);
    let moved: SceneState =
        scene.iter().map(|b| b.iter().map(|s| LinkState { x: s.x + shift, ..*s }).collect()).collect();
    let u = &controls(&specs, 1)[0];
    let a = larp_step(&model, &specs, &scene, u).unwrap();
    let b = larp_step(&model, &specs, &moved, u).unwrap();
    for (p, q) in a.iter().flatten().zip(b.iter().flatten()) {
        assert!((p.x + shift - q.x).norm() < 1e-12);
        assert!((p.q + (-q.q)).norm() < 1e-12);
        assert!((p.v - q.v).norm() < 1e-9);
        assert!((p.w - q.w).norm() < 1e-9);
    }
}

#[test]
fn batched_rows_equal_single_rollouts() {
    let (specs, scene) = two_chains();
    let model = model_for(&specs, small_config(), 4);
    let ctl = controls(&specs, 5);
    let scenes: Vec<SceneState> = (0..7)
        .map(|k| {
            scene
                .iter()
                .map(|b| b.iter().map(|s| LinkState { x: s.x + Vec3::new(0.0, 0.0, 0.05 * k as f64), ..*s }).collect())
                .collect()
        })
        .collect();
    let inputs: Vec<RolloutInput> =
        scenes.iter().map(|s| RolloutInput { specs: &specs, initial: s, controls: &ctl }).collect();
    let batched = rollout_batch(&model, &inputs, 5).unwrap();
    for (k, s) in scenes.iter().enumerate() {
        let single = rollout(&model, &specs, s, &ctl, 5).unwrap();
        assert_eq!(single, batched[k], "row {k}");
    }
}

#[test]
fn contact_features_vanish_with_zero_net_or_single_body() {
    let (specs, scene) = two_chains();
    let mut model = model_for(&specs, small_config(), 5);
    let c = model.contact.as_mut().unwrap();
    for t in c.mlp.tensors_mut() {
        let [r, cc] = t.shape();
        *t = Arc::new(Tensor::zeros(r, cc));
    }
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let ctx = StepContext::new(&mut g, &model, vec![&specs[..]]).unwrap();
    let st = state_consts(&mut g, &[&scene]);
    let ph = contact_features_var(&mut g, &model, &bound, &ctx, &st);
    assert!(ph.iter().flatten().all(|&v| g.value(v).data().iter().all(|&x| x == 0.0)));

    let single = &specs[..1];
    let model1 = model_for(single, small_config(), 5);
    assert!(model1.contact.is_none());
    let mut g = Graph::new();
    let bound = model1.bind(&mut g, false);
    let ctx = StepContext::new(&mut g, &model1, vec![single]).unwrap();
    let st = state_consts(&mut g, &[&scene[..1].to_vec()]);
    let ph = contact_features_var(&mut g, &model1, &bound, &ctx, &st);
    assert!(ph[0].iter().all(|&v| g.value(v).data().iter().all(|&x| x == 0.0)));
}

fn phat_values(model: &ModelParams, specs: &[BodySpec], scene: &SceneState) -> Vec<Vec<Vec<f64>>> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let ctx = StepContext::new(&mut g, model, vec![specs]).unwrap();
    let st = state_consts(&mut g, &[scene]);
    let ph = contact_features_var(&mut g, model, &bound, &ctx, &st);
    ph.iter().map(|b| b.iter().map(|&v| g.value(v).data().to_vec()).collect()).collect()
}

#[test]
fn pooling_ignores_link_order_of_other_body() {
    let (specs, scene) = two_chains();
    let model = model_for(&specs, small_config(), 6);
    let base = phat_values(&model, &specs, &scene);
    // Reverse body 1's link order (re-rooting is irrelevant to φ and c).
    let mut specs2 = specs.clone();
    specs2[1].links.reverse();
    specs2[1].links[0].parent = None;
    specs2[1].links[1].parent = Some(0);
    let mut scene2 = scene.clone();
    scene2[1].reverse();
    let perm = phat_values(&model, &specs2, &scene2);
    for i in 0..2 {
        for (a, b) in base[0][i].iter().zip(&perm[0][i]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn stop_gradient_blocks_state_but_not_contact_weights() {
    let (specs, scene) = two_chains();
    for stop in [true, false] {
        let cfg = ModelConfig { stop_grad: stop, ..small_config() };
        let model = model_for(&specs, cfg, 7);
        let mut g = Graph::new();
        let bound = model.bind(&mut g, true);
        let ctx = StepContext::new(&mut g, &model, vec![&specs[..]]).unwrap();
        let consts = state_consts(&mut g, &[&scene]);
        // Leaf state nodes that receive gradients.
        let st: Vec<Vec<LinkVars>> = consts
            .iter()
            .map(|b| {
                b.iter()
                    .map(|l| LinkVars {
                        x: g.param(g.shared(l.x)),
                        q: g.param(g.shared(l.q)),
                        v: g.param(g.shared(l.v)),
                        w: g.param(g.shared(l.w)),
                    })
                    .collect()
            })
            .collect();
        let ph = contact_features_var(&mut g, &model, &bound, &ctx, &st);
        let all: Vec<Var> = ph.iter().flatten().copied().collect();
        let cat = g.concat_cols(&all);
        let loss = g.sum_all(cat);
        let grads = g.backward(loss);
        let state_flow: f64 = st.iter().flatten().map(|l| grads.get(l.v).map_or(0.0, |t| t.sum_sq())).sum();
        let theta_c = bound.contact.as_ref().unwrap().vars();
        let weight_flow: f64 = theta_c.iter().map(|&v| grads.get(v).map_or(0.0, |t| t.sum_sq())).sum();
        assert!(weight_flow > 0.0);
        if stop {
            assert!(st.iter().flatten().all(|l| [l.x, l.q, l.v, l.w].iter().all(|&v| grads.get(v).is_none())));
        } else {
            assert!(state_flow > 0.0);
        }
    }
}

#[test]
fn mismatched_scene_is_rejected_and_blowup_is_reported() {
    let (specs, scene) = two_chains();
    let mut model = model_for(&specs, small_config(), 8);
    let mut other = specs.clone();
    other[1].name = "ball".into();
    assert!(matches!(larp_step(&model, &other, &scene, &controls(&other, 1)[0]), Err(Error::ModelMismatch(_))));
    model.bodies[0].output.std = vec![f64::INFINITY; 12];
    let err = rollout(&model, &specs, &scene, &controls(&specs, 3), 3).unwrap_err();
    assert!(matches!(err, Error::Diverged { step: 1, .. }), "{err}");
}

#[test]
fn f32_inference_tracks_f64() {
    let (specs, scene) = two_chains();
    let model = model_for(&specs, small_config(), 9);
    let ctl = controls(&specs, 5);
    let a = rollout(&model, &specs, &scene, &ctl, 5).unwrap();
    let b = rollout(&model.cast::<f32>(), &specs, &scene, &ctl, 5).unwrap();
    for (p, q) in a.iter().flatten().flatten().zip(b.iter().flatten().flatten()) {
        assert!((p.x - q.x).norm() < 1e-4);
    }
}
