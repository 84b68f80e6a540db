//! The learned simulator: a dynamics MLP per body type, a pairwise contact
//! MLP sum-pooled over links of other bodies, and explicit integration.

use std::fmt;
use std::str::FromStr;

use crate::adnn::{Activation, Graph, Mlp, MlpSpec, MlpVars, Real, Tensor, Var};
use crate::body::{BodySpec, ControlInput, LinkState, SceneState};
use crate::contact_ad::contact_with_jacobian;
use crate::error::{Error, Result};
use crate::features::{
    encode_dynamics_var, link_consts, pair_contact, phi_var, ControlVars, LinkConsts, LinkVars, NormStats,
    DYN_PER_LINK, OUT_PER_LINK, PAIR_DIM, PHAT_DIM,
};
use crate::geom::{Quat, Vec3};

/// Gain applied to the output-layer init range.
const OUT_GAIN: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContactVariant {
    /// p̂ is an input feature of the dynamics network.
    Feature,
    /// p̂ is added to the predicted linear and angular velocity.
    Impulse,
}

impl fmt::Display for ContactVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContactVariant::Feature => "feature",
            ContactVariant::Impulse => "impulse",
        })
    }
}

impl FromStr for ContactVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feature" => Ok(ContactVariant::Feature),
            "impulse" => Ok(ContactVariant::Impulse),
            _ => Err(Error::InvalidConfig(format!("unknown contact variant '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub hidden_width: usize,
    pub dyn_layers: usize,
    pub contact_layers: usize,
    pub activation: Activation,
    pub contact_variant: ContactVariant,
    pub stop_grad: bool,
    pub disp_feature: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_width: 256,
            dyn_layers: 12,
            contact_layers: 6,
            activation: Activation::Elu,
            contact_variant: ContactVariant::Feature,
            stop_grad: true,
            disp_feature: true,
        }
    }
}

/// Dynamics network of one body type with its standardization.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyNet<T: Real = f64> {
    pub name: String,
    pub n_links: usize,
    pub mlp: Mlp<T>,
    pub input: NormStats,
    pub output: NormStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContactNet<T: Real = f64> {
    pub mlp: Mlp<T>,
    pub input: NormStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Real = f64> {
    pub config: ModelConfig,
    pub dt: f64,
    pub bodies: Vec<BodyNet<T>>,
    pub contact: Option<ContactNet<T>>,
}

/// Body types (name, link count) in first-seen order.
pub fn body_types(specs: &[BodySpec]) -> Vec<(String, usize)> {
    let mut out: Vec<(String, usize)> = Vec::new();
    for s in specs {
        if !out.iter().any(|(n, _)| *n == s.name) {
            out.push((s.name.clone(), s.n_links()));
        }
    }
    out
}

impl<T: Real> ModelParams<T> {
    /// Fresh parameters with identity statistics. A contact network is
    /// created when `contact` is set.
    pub fn init(config: ModelConfig, dt: f64, types: &[(String, usize)], contact: bool, seed: u64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidConfig("dt must be positive".into()));
        }
        let mut bodies = Vec::new();
        for (k, (name, n)) in types.iter().enumerate() {
            let spec = MlpSpec {
                n_layers: config.dyn_layers,
                hidden_width: config.hidden_width,
                in_dim: DYN_PER_LINK * n,
                out_dim: OUT_PER_LINK * n,
                activation: config.activation,
            };
            bodies.push(BodyNet {
                name: name.clone(),
                n_links: *n,
                mlp: Mlp::init(spec, seed.wrapping_add(k as u64 + 1), OUT_GAIN)?,
                input: NormStats::identity(DYN_PER_LINK * n),
                output: NormStats::identity(OUT_PER_LINK * n),
            });
        }
        let contact = if contact {
            let spec = MlpSpec {
                n_layers: config.contact_layers,
                hidden_width: config.hidden_width,
                in_dim: PAIR_DIM,
                out_dim: PHAT_DIM,
                activation: config.activation,
            };
            Some(ContactNet {
                mlp: Mlp::init(spec, seed.wrapping_add(0x5eed), OUT_GAIN)?,
                input: NormStats::identity(PAIR_DIM),
            })
        } else {
            None
        };
        Ok(ModelParams { config, dt, bodies, contact })
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            dt: self.dt,
            bodies: self
                .bodies
                .iter()
                .map(|b| BodyNet {
                    name: b.name.clone(),
                    n_links: b.n_links,
                    mlp: b.mlp.cast(),
                    input: b.input.clone(),
                    output: b.output.clone(),
                })
                .collect(),
            contact: self.contact.as_ref().map(|c| ContactNet { mlp: c.mlp.cast(), input: c.input.clone() }),
        }
    }

    pub fn body_index(&self, name: &str) -> Option<usize> {
        self.bodies.iter().position(|b| b.name == name)
    }

    /// Network index of every body of the scene.
    pub fn check_scene(&self, specs: &[BodySpec]) -> Result<Vec<usize>> {
        specs
            .iter()
            .map(|s| {
                let k = self
                    .body_index(&s.name)
                    .ok_or_else(|| Error::ModelMismatch(format!("no dynamics network for body type '{}'", s.name)))?;
                if self.bodies[k].n_links != s.n_links() {
                    return Err(Error::ModelMismatch(format!(
                        "body type '{}' has {} links, the network expects {}",
                        s.name,
                        s.n_links(),
                        self.bodies[k].n_links
                    )));
                }
                Ok(k)
            })
            .collect()
    }

    /// All trainable tensors: each body network, then the contact network.
    pub fn tensors_mut(&mut self) -> Vec<&mut std::sync::Arc<Tensor<T>>> {
        let mut out = Vec::new();
        for b in self.bodies.iter_mut() {
            out.extend(b.mlp.tensors_mut());
        }
        if let Some(c) = self.contact.as_mut() {
            out.extend(c.mlp.tensors_mut());
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.bodies.iter().map(|b| b.mlp.spec.n_params()).sum::<usize>()
            + self.contact.as_ref().map_or(0, |c| c.mlp.spec.n_params())
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundModel {
        BoundModel {
            bodies: self.bodies.iter().map(|b| b.mlp.bind(g, trainable)).collect(),
            contact: self.contact.as_ref().map(|c| c.mlp.bind(g, trainable)),
        }
    }
}

/// Parameters of a [`ModelParams`] registered on a graph.
pub struct BoundModel {
    pub bodies: Vec<MlpVars>,
    pub contact: Option<MlpVars>,
}

impl BoundModel {
    /// Parameter nodes in the order of [`ModelParams::tensors_mut`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.bodies.iter().flat_map(MlpVars::vars).collect();
        if let Some(c) = &self.contact {
            out.extend(c.vars());
        }
        out
    }
}

/// Batch description shared by every step of a rollout: one row per scene.
pub struct StepContext<'a> {
    pub specs: Vec<&'a [BodySpec]>,
    pub consts: Vec<Vec<LinkConsts>>,
    pub nets: Vec<usize>,
}

impl<'a> StepContext<'a> {
    pub fn new<T: Real>(g: &mut Graph<T>, model: &ModelParams<T>, specs: Vec<&'a [BodySpec]>) -> Result<Self> {
        let first = *specs.first().ok_or_else(|| Error::InvalidConfig("empty batch".into()))?;
        let nets = model.check_scene(first)?;
        for s in &specs {
            let same = s.len() == first.len()
                && s.iter().zip(first).all(|(a, b)| a.name == b.name && a.n_links() == b.n_links());
            if !same {
                return Err(Error::ModelMismatch("scenes in one batch must share body types".into()));
            }
        }
        let consts = (0..first.len())
            .map(|m| {
                let rows: Vec<&BodySpec> = specs.iter().map(|s| &s[m]).collect();
                link_consts(g, &rows)
            })
            .collect();
        Ok(StepContext { specs, consts, nets })
    }

    pub fn rows(&self) -> usize {
        self.specs.len()
    }

    pub fn n_bodies(&self) -> usize {
        self.nets.len()
    }
}

fn read_link<T: Real>(g: &Graph<T>, l: &LinkVars, r: usize) -> LinkState {
    let v3 = |v: Var| {
        let s = g.value(v).row_slice(r);
        Vec3::new(s[0].as_f64(), s[1].as_f64(), s[2].as_f64())
    };
    let q = g.value(l.q).row_slice(r);
    LinkState {
        x: v3(l.x),
        q: Quat::new(q[0].as_f64(), q[1].as_f64(), q[2].as_f64(), q[3].as_f64()),
        v: v3(l.v),
        w: v3(l.w),
    }
}

/// Per-link p̂ for every body (zeros without a contact network or with a
/// single body). Without stop-gradient the pair geometry is differentiated
/// through as well.
pub fn contact_features_var<T: Real>(
    g: &mut Graph<T>,
    model: &ModelParams<T>,
    bound: &BoundModel,
    ctx: &StepContext,
    state: &[Vec<LinkVars>],
) -> Vec<Vec<Var>> {
    let rows = ctx.rows();
    let zero = g.constant(Tensor::zeros(rows, PHAT_DIM));
    let (Some(net), Some(vars)) = (&model.contact, &bound.contact) else {
        return state.iter().map(|b| vec![zero; b.len()]).collect();
    };
    if state.len() < 2 {
        return state.iter().map(|b| vec![zero; b.len()]).collect();
    }
    let view: Vec<Vec<LinkVars>> = if model.config.stop_grad {
        state
            .iter()
            .map(|b| {
                b.iter()
                    .map(|l| LinkVars {
                        x: g.stop_grad(l.x),
                        q: g.stop_grad(l.q),
                        v: g.stop_grad(l.v),
                        w: g.stop_grad(l.w),
                    })
                    .collect()
            })
            .collect()
    } else {
        state.to_vec()
    };
    let phis: Vec<Vec<Var>> = view
        .iter()
        .enumerate()
        .map(|(m, b)| b.iter().enumerate().map(|(i, l)| phi_var(g, *l, &ctx.consts[m][i])).collect())
        .collect();
    let values: Vec<Vec<Vec<LinkState>>> =
        (0..rows).map(|r| view.iter().map(|b| b.iter().map(|l| read_link(g, l, r)).collect()).collect()).collect();
    let mut pairs = Vec::new();
    let mut owners = Vec::new();
    for m in 0..state.len() {
        for b in 0..state.len() {
            if b == m {
                continue;
            }
            for i in 0..state[m].len() {
                for j in 0..state[b].len() {
                    let (lj, li) = (view[b][j], view[m][i]);
                    let c = if [lj.x, lj.q, li.x, li.q].iter().any(|&v| g.requires_grad(v)) {
                        g.row_fn(&[lj.x, lj.q, li.x, li.q], 10, |r, input| {
                            let sp = ctx.specs[r];
                            let (c, jac) =
                                contact_with_jacobian(input, &sp[b].links[j].capsule, &sp[m].links[i].capsule);
                            (c.to_vec(), jac)
                        })
                    } else {
                        let c = Tensor::from_fn(rows, 10, |r, k| {
                            let sp = ctx.specs[r];
                            let info =
                                pair_contact(&sp[b].links[j], &values[r][b][j], &sp[m].links[i], &values[r][m][i]);
                            T::from_f64(info.to_array()[k])
                        });
                        g.constant(c)
                    };
                    pairs.push(g.concat_cols(&[phis[b][j], phis[m][i], c]));
                    owners.push((m, i));
                }
            }
        }
    }
    let stacked = g.concat_rows(&pairs);
    let x = net.input.normalize_var(g, stacked);
    let out = vars.forward(g, x);
    let mut acc: Vec<Vec<Option<Var>>> = state.iter().map(|b| vec![None; b.len()]).collect();
    for (k, &(m, i)) in owners.iter().enumerate() {
        let part = g.slice_rows(out, k * rows, rows);
        acc[m][i] = Some(match acc[m][i] {
            None => part,
            Some(prev) => g.add(prev, part),
        });
    }
    acc.into_iter().map(|b| b.into_iter().map(|v| v.unwrap_or(zero)).collect()).collect()
}

/// One recurrent step on a graph: contact features, dynamics networks,
/// denormalization and integration of every link.
pub fn step_var<T: Real>(
    g: &mut Graph<T>,
    model: &ModelParams<T>,
    bound: &BoundModel,
    ctx: &StepContext,
    state: &[Vec<LinkVars>],
    control: &[Vec<ControlVars>],
) -> Vec<Vec<LinkVars>> {
    let rows = ctx.rows();
    let phat = contact_features_var(g, model, bound, ctx, state);
    let impulse = model.config.contact_variant == ContactVariant::Impulse;
    let zero6 = g.constant(Tensor::zeros(rows, PHAT_DIM));
    let mut vel: Vec<Option<Var>> = vec![None; state.len()];
    for net in 0..model.bodies.len() {
        let members: Vec<usize> = (0..state.len()).filter(|&m| ctx.nets[m] == net).collect();
        if members.is_empty() {
            continue;
        }
        let feats: Vec<Var> = members
            .iter()
            .map(|&m| {
                let ph: Vec<Var> = if impulse { vec![zero6; state[m].len()] } else { phat[m].clone() };
                encode_dynamics_var(g, &state[m], &ctx.consts[m], &control[m], &ph, model.config.disp_feature)
            })
            .collect();
        let x = if feats.len() == 1 { feats[0] } else { g.concat_rows(&feats) };
        let body = &model.bodies[net];
        let xn = body.input.normalize_var(g, x);
        let y = bound.bodies[net].forward(g, xn);
        let y = body.output.denormalize_var(g, y);
        for (k, &m) in members.iter().enumerate() {
            vel[m] = Some(if members.len() == 1 { y } else { g.slice_rows(y, k * rows, rows) });
        }
    }
    let dt = T::from_f64(model.dt);
    state
        .iter()
        .enumerate()
        .map(|(m, links)| {
            let y = vel[m].expect("every body has a network");
            links
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    let mut v = g.slice_cols(y, OUT_PER_LINK * i, 3);
                    let mut w = g.slice_cols(y, OUT_PER_LINK * i + 3, 3);
                    if impulse {
                        let dv = g.slice_cols(phat[m][i], 0, 3);
                        let dw = g.slice_cols(phat[m][i], 3, 3);
                        v = g.add(v, dv);
                        w = g.add(w, dw);
                    }
                    let step = g.scale(v, dt);
                    let x = g.add(l.x, step);
                    let q = g.quat_step(l.q, w, dt);
                    LinkVars { x, q, v, w }
                })
                .collect()
        })
        .collect()
}

/// Constant state nodes for a batch of scenes.
pub fn state_consts<T: Real>(g: &mut Graph<T>, scenes: &[&SceneState]) -> Vec<Vec<LinkVars>> {
    let first = scenes[0];
    (0..first.len())
        .map(|m| {
            (0..first[m].len())
                .map(|i| {
                    let mk = |g: &mut Graph<T>, cols: usize, off: usize| {
                        let t = Tensor::from_fn(scenes.len(), cols, |r, c| {
                            T::from_f64(scenes[r][m][i].to_array()[off + c])
                        });
                        g.constant(t)
                    };
                    LinkVars { x: mk(g, 3, 0), q: mk(g, 4, 3), v: mk(g, 3, 7), w: mk(g, 3, 10) }
                })
                .collect()
        })
        .collect()
}

/// Constant control nodes for a batch.
pub fn control_consts<T: Real>(g: &mut Graph<T>, controls: &[&ControlInput]) -> Vec<Vec<ControlVars>> {
    let first = controls[0];
    (0..first.len())
        .map(|m| {
            (0..first[m].len())
                .map(|i| {
                    let mk = |g: &mut Graph<T>, cols: usize, off: usize| {
                        let t = Tensor::from_fn(controls.len(), cols, |r, c| {
                            T::from_f64(controls[r][m][i].to_array()[off + c])
                        });
                        g.constant(t)
                    };
                    ControlVars { target: mk(g, 4, 0), torque: mk(g, 3, 4) }
                })
                .collect()
        })
        .collect()
}

/// Reads the scene of batch row `r`.
pub fn read_scene<T: Real>(g: &Graph<T>, vars: &[Vec<LinkVars>], r: usize) -> SceneState {
    vars.iter().map(|b| b.iter().map(|l| read_link(g, l, r)).collect()).collect()
}

/// One scene to roll out.
#[derive(Clone, Copy, Debug)]
pub struct RolloutInput<'a> {
    pub specs: &'a [BodySpec],
    pub initial: &'a SceneState,
    /// At least `steps` controls.
    pub controls: &'a [ControlInput],
}

/// Rolls out every scene for `steps` steps with one network evaluation per
/// step over the stacked batch. Returns `steps + 1` states per scene.
pub fn rollout_batch<T: Real>(
    model: &ModelParams<T>,
    inputs: &[RolloutInput],
    steps: usize,
) -> Result<Vec<Vec<SceneState>>> {
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    for inp in inputs {
        if inp.controls.len() < steps {
            return Err(Error::InvalidTrajectory(format!("{} controls for {steps} steps", inp.controls.len())));
        }
    }
    let mut out: Vec<Vec<SceneState>> = inputs.iter().map(|i| vec![i.initial.clone()]).collect();
    let mut g: Graph<T> = Graph::new();
    for t in 0..steps {
        g.clear();
        let bound = model.bind(&mut g, false);
        let ctx = StepContext::new(&mut g, model, inputs.iter().map(|i| i.specs).collect())?;
        let current: Vec<&SceneState> = out.iter().map(|s| s.last().expect("initial state")).collect();
        let state = state_consts(&mut g, &current);
        let ctl: Vec<&ControlInput> = inputs.iter().map(|i| &i.controls[t]).collect();
        let control = control_consts(&mut g, &ctl);
        let next = step_var(&mut g, model, &bound, &ctx, &state, &control);
        for (r, traj) in out.iter_mut().enumerate() {
            let scene = read_scene(&g, &next, r);
            if !scene.iter().flatten().all(LinkState::is_finite) {
                return Err(Error::Diverged { step: t + 1, reason: format!("non-finite prediction in scene {r}") });
            }
            traj.push(scene);
        }
    }
    Ok(out)
}

/// Single-scene rollout.
pub fn rollout<T: Real>(
    model: &ModelParams<T>,
    specs: &[BodySpec],
    initial: &SceneState,
    controls: &[ControlInput],
    steps: usize,
) -> Result<Vec<SceneState>> {
    let mut all = rollout_batch(model, &[RolloutInput { specs, initial, controls }], steps)?;
    Ok(all.pop().expect("one scene"))
}

pub fn larp_step<T: Real>(
    model: &ModelParams<T>,
    specs: &[BodySpec],
    state: &SceneState,
    control: &ControlInput,
) -> Result<SceneState> {
    let states = rollout(model, specs, state, std::slice::from_ref(control), 1)?;
    Ok(states.into_iter().nth(1).expect("two states"))
}

#[cfg(test)]
mod tests;
