//! Unrolled training: windowing, augmentation, the position/rotation/joint
//! loss, gradient-norm gating and Adam updates.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adnn::{global_grad_norm, Adam, Graph, LrSchedule, Tensor, Var};
use crate::body::{joint_displacement, BodySpec, ControlInput, SceneState, Trajectory};
use crate::error::{Error, Result};
use crate::features::{
    dyn_offsets, encode_contact_pair, encode_dynamics, joint_displacement_var, pair_contact, phi, rotate_control_z,
    rotate_state_z, z_rotation, NormStats, DYN_PER_LINK, OUT_PER_LINK, PAIR_DIM, PHAT_DIM,
};
use crate::model::{body_types, control_consts, state_consts, step_var, ModelConfig, ModelParams, StepContext};

pub const METRICS_SCHEMA: &str = "larp-metrics/1";
pub const METRICS_HEADER: &str =
    "epoch,train_loss,train_pos,train_rot,train_disp,val_loss,val_pos,val_rot,val_disp,dropped,batches,lr,grad_norm";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossMode {
    /// Squared position error.
    Position,
    /// Squared linear plus angular velocity error in place of the position term.
    Velocity,
}

impl FromStr for LossMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "position" => Ok(LossMode::Position),
            "velocity" => Ok(LossMode::Velocity),
            _ => Err(Error::InvalidConfig(format!("unknown loss mode '{s}'"))),
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Position => "position",
            LossMode::Velocity => "velocity",
        })
    }
}

/// What happens when the global gradient norm exceeds the threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradRule {
    Drop,
    Rescale,
}

impl FromStr for GradRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drop" => Ok(GradRule::Drop),
            "rescale" => Ok(GradRule::Rescale),
            _ => Err(Error::InvalidConfig(format!("unknown gradient rule '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub w_p: f64,
    pub w_r: f64,
    pub w_d: f64,
    pub mode: LossMode,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { w_p: 1.0, w_r: 1.0, w_d: 0.1, mode: LossMode::Position }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub n_h: usize,
    /// Window stride; `None` means `n_h` (non-overlapping).
    pub stride: Option<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: LrSchedule,
    pub weights: LossWeights,
    pub grad_threshold: f64,
    pub grad_rule: GradRule,
    /// Lower bound on the standard deviation of the joint-displacement
    /// input columns (m).
    pub disp_std_floor: f64,
    pub augment: bool,
    pub val_fraction: f64,
    /// Rows per worker graph; results do not depend on the thread count.
    pub chunk_rows: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            n_h: 20,
            stride: None,
            batch_size: 512,
            epochs: 50,
            lr: LrSchedule::default(),
            weights: LossWeights::default(),
            grad_threshold: 0.3,
            grad_rule: GradRule::Drop,
            disp_std_floor: 1e-3,
            augment: true,
            val_fraction: 0.05,
            chunk_rows: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.n_h == 0 {
            return bad("unroll length must be at least 1");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.chunk_rows == 0 || self.stride == Some(0) {
            return bad("batch size, epochs, chunk size and stride must be positive");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("validation fraction must be in [0, 1)");
        }
        if !(self.grad_threshold > 0.0) {
            return bad("gradient threshold must be positive");
        }
        if !(self.disp_std_floor >= 0.0 && self.disp_std_floor.is_finite()) {
            return bad("displacement std floor must be finite and non-negative");
        }
        Ok(())
    }
}

/// Window start indices of a sequence with `n_states` states: windows of
/// `n_h + 1` states every `stride` steps, never crossing the end.
pub fn make_subsequences(n_states: usize, n_h: usize, stride: usize) -> Vec<usize> {
    if n_states < n_h + 1 || stride == 0 {
        return Vec::new();
    }
    (0..=n_states - (n_h + 1)).step_by(stride).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub seq: usize,
    pub start: usize,
}

pub fn make_windows(data: &[Trajectory], seqs: &[usize], n_h: usize, stride: usize) -> Vec<Window> {
    seqs.iter()
        .flat_map(|&seq| {
            make_subsequences(data[seq].states.len(), n_h, stride).into_iter().map(move |start| Window { seq, start })
        })
        .collect()
}

/// States and controls of one window, optionally rotated about world z.
#[derive(Clone, Debug)]
pub struct WindowData<'a> {
    pub specs: &'a [BodySpec],
    pub states: Vec<SceneState>,
    pub controls: Vec<ControlInput>,
}

pub fn window_data<'a>(traj: &'a Trajectory, w: Window, n_h: usize, theta: Option<f64>) -> WindowData<'a> {
    let states = &traj.states[w.start..=w.start + n_h];
    let controls = &traj.controls[w.start..w.start + n_h];
    match theta {
        None => WindowData { specs: &traj.specs, states: states.to_vec(), controls: controls.to_vec() },
        Some(th) => {
            let rz = z_rotation(th);
            WindowData {
                specs: &traj.specs,
                states: states
                    .iter()
                    .map(|s| s.iter().map(|b| b.iter().map(|l| rotate_state_z(l, rz)).collect()).collect())
                    .collect(),
                controls: controls
                    .iter()
                    .map(|u| u.iter().map(|b| b.iter().map(|l| rotate_control_z(l, rz)).collect()).collect())
                    .collect(),
            }
        }
    }
}

/// Loss components; `pos` holds the velocity term in velocity mode.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub pos: f64,
    pub rot: f64,
    pub disp: f64,
}

/// Loss of predicted states against targets (both excluding the initial state).
pub fn loss(pred: &[SceneState], target: &[SceneState], specs: &[BodySpec], w: &LossWeights) -> LossTerms {
    assert_eq!(pred.len(), target.len(), "loss: horizon mismatch");
    let (mut p, mut r, mut d, mut n) = (0.0, 0.0, 0.0, 0usize);
    for (ps, ts) in pred.iter().zip(target) {
        for (m, spec) in specs.iter().enumerate() {
            for i in 0..spec.n_links() {
                let (a, b) = (&ps[m][i], &ts[m][i]);
                p += match w.mode {
                    LossMode::Position => (a.x - b.x).norm_squared(),
                    LossMode::Velocity => (a.v - b.v).norm_squared() + (a.w - b.w).norm_squared(),
                };
                r += 1.0 - a.q.dot(b.q).abs();
                d += joint_displacement(spec, &ps[m], i).norm_squared();
                n += 1;
            }
        }
    }
    let n = n.max(1) as f64;
    let (pos, rot, disp) = (p / n, r / n, d / n);
    LossTerms { total: w.w_p * pos + w.w_r * rot + w.w_d * disp, pos, rot, disp }
}

struct ChunkOut {
    /// Sums of the per-link-step terms.
    sums: [f64; 3],
    grads: Option<Vec<Tensor<f64>>>,
    bad_row: Option<usize>,
}

/// Builds the unrolled graph for `rows` and returns term sums and, when
/// `with_grad`, gradients of the chunk's share of the batch loss.
fn run_chunk(
    model: &ModelParams,
    rows: &[WindowData],
    w: &LossWeights,
    count: f64,
    with_grad: bool,
) -> Result<ChunkOut> {
    let mut g: Graph<f64> = Graph::new();
    let bound = model.bind(&mut g, with_grad);
    let ctx = StepContext::new(&mut g, model, rows.iter().map(|r| r.specs).collect())?;
    let n_h = rows[0].controls.len();
    let first: Vec<&SceneState> = rows.iter().map(|r| &r.states[0]).collect();
    let mut state = state_consts(&mut g, &first);
    let (mut pos, mut rot, mut disp) = (Vec::new(), Vec::new(), Vec::new());
    for t in 1..=n_h {
        let ctl: Vec<&ControlInput> = rows.iter().map(|r| &r.controls[t - 1]).collect();
        let control = control_consts(&mut g, &ctl);
        state = step_var(&mut g, model, &bound, &ctx, &state, &control);
        let tgt: Vec<&SceneState> = rows.iter().map(|r| &r.states[t]).collect();
        let target = state_consts(&mut g, &tgt);
        for (m, links) in state.iter().enumerate() {
            for (i, l) in links.iter().enumerate() {
                let tl = target[m][i];
                let e = match w.mode {
                    LossMode::Position => {
                        let dx = g.sub(l.x, tl.x);
                        g.mul(dx, dx)
                    }
                    LossMode::Velocity => {
                        let dv = g.sub(l.v, tl.v);
                        let dw = g.sub(l.w, tl.w);
                        let both = g.concat_cols(&[dv, dw]);
                        g.mul(both, both)
                    }
                };
                pos.push(g.sum_all(e));
                let qq = g.mul(l.q, tl.q);
                let dot = g.sum_cols(qq);
                let a = g.abs(dot);
                rot.push(g.sum_all(a));
                if let Some(d) = joint_displacement_var(&mut g, links, &ctx.consts[m], i) {
                    let dd = g.mul(d, d);
                    disp.push(g.sum_all(dd));
                }
            }
        }
    }
    let total = |g: &mut Graph<f64>, parts: &[Var]| -> Option<Var> {
        if parts.is_empty() {
            None
        } else {
            let c = g.concat_rows(parts);
            Some(g.sum_all(c))
        }
    };
    let sp = total(&mut g, &pos).expect("at least one link");
    let sr = total(&mut g, &rot).expect("at least one link");
    let sd = total(&mut g, &disp);
    let value = |g: &Graph<f64>, v: Option<Var>| v.map_or(0.0, |v| g.value(v).data()[0]);
    let sums = [value(&g, Some(sp)), value(&g, Some(sr)), value(&g, sd)];
    let bad_row = (0..rows.len()).find(|&r| {
        state
            .iter()
            .flatten()
            .any(|l| [l.x, l.q, l.v, l.w].iter().any(|&v| g.value(v).row_slice(r).iter().any(|x| !x.is_finite())))
    });
    let grads = if with_grad {
        // chunk share of w_p·L_p − w_r·Σ|q·q̂|/n + w_d·L_d
        let a = g.scale(sp, w.w_p / count);
        let b = g.scale(sr, -w.w_r / count);
        let mut l = g.add(a, b);
        if let Some(sd) = sd {
            let c = g.scale(sd, w.w_d / count);
            l = g.add(l, c);
        }
        let gr = g.backward(l);
        Some(bound.vars().iter().map(|&v| gr.get_or_zeros(v, g.value(v))).collect())
    } else {
        None
    };
    Ok(ChunkOut { sums, grads, bad_row })
}

fn terms_from_sums(sums: [f64; 3], count: f64, w: &LossWeights) -> LossTerms {
    let pos = sums[0] / count;
    let rot = 1.0 - sums[1] / count;
    let disp = sums[2] / count;
    LossTerms { total: w.w_p * pos + w.w_r * rot + w.w_d * disp, pos, rot, disp }
}

/// Loss (and optionally gradient) of a batch, computed in fixed-size chunks
/// reduced in chunk order.
pub fn batch_loss(
    model: &ModelParams,
    rows: &[WindowData],
    w: &LossWeights,
    chunk_rows: usize,
    with_grad: bool,
) -> Result<(LossTerms, Option<Vec<Tensor<f64>>>, Option<usize>)> {
    let links: usize = rows[0].specs.iter().map(BodySpec::n_links).sum();
    let count = (rows.len() * links * rows[0].controls.len()) as f64;
    let outs: Vec<Result<ChunkOut>> =
        rows.par_chunks(chunk_rows).map(|c| run_chunk(model, c, w, count, with_grad)).collect();
    let mut sums = [0.0; 3];
    let mut grads: Option<Vec<Tensor<f64>>> = None;
    let mut bad = None;
    for (k, o) in outs.into_iter().enumerate() {
        let o = o?;
        for j in 0..3 {
            sums[j] += o.sums[j];
        }
        if bad.is_none() {
            bad = o.bad_row.map(|r| k * chunk_rows + r);
        }
        if let Some(gs) = o.grads {
            grads = Some(match grads {
                None => gs,
                Some(mut acc) => {
                    for (a, b) in acc.iter_mut().zip(&gs) {
                        for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                            *x += y;
                        }
                    }
                    acc
                }
            });
        }
    }
    Ok((terms_from_sums(sums, count, w), grads, bad))
}

/// Freezes standardization statistics from one batch of windows.
pub fn compute_stats(model: &mut ModelParams, rows: &[WindowData], disp_std_floor: f64) -> Result<()> {
    let nets = model.check_scene(rows[0].specs)?;
    let zero_phat = |n: usize| vec![[0.0; PHAT_DIM]; n];
    for (k, net) in model.bodies.iter_mut().enumerate() {
        let n = net.n_links;
        let mut inputs: Vec<Vec<f64>> = Vec::new();
        let mut outputs: Vec<Vec<f64>> = Vec::new();
        for r in rows {
            for (m, spec) in r.specs.iter().enumerate().filter(|(m, _)| nets[*m] == k) {
                for t in 0..r.controls.len() {
                    let mut f = encode_dynamics(spec, &r.states[t][m], &r.controls[t][m], &zero_phat(n));
                    if !model.config.disp_feature {
                        for i in 0..n {
                            let o = i * DYN_PER_LINK + dyn_offsets::DISP;
                            f[o..o + 3].fill(0.0);
                        }
                    }
                    inputs.push(f);
                    let next = &r.states[t + 1][m];
                    outputs.push(next.iter().flat_map(|l| l.v.to_array().into_iter().chain(l.w.to_array())).collect());
                }
            }
        }
        let mut input = NormStats::compute(inputs.iter().map(Vec::as_slice), DYN_PER_LINK * n)?;
        input.passthrough((0..n).flat_map(|i| {
            let o = i * DYN_PER_LINK + dyn_offsets::PHAT;
            o..o + PHAT_DIM
        }));
        for i in 0..n {
            let o = i * DYN_PER_LINK + dyn_offsets::DISP;
            for sd in &mut input.std[o..o + 3] {
                *sd = sd.max(disp_std_floor);
            }
        }
        net.input = input;
        net.output = NormStats::compute(outputs.iter().map(Vec::as_slice), OUT_PER_LINK * n)?;
    }
    if let Some(c) = model.contact.as_mut() {
        let mut pairs: Vec<Vec<f64>> = Vec::new();
        for r in rows {
            for t in 0..r.controls.len() {
                let s = &r.states[t];
                for m in 0..s.len() {
                    for b in (0..s.len()).filter(|&b| b != m) {
                        for i in 0..s[m].len() {
                            for j in 0..s[b].len() {
                                let (lj, li) = (&r.specs[b].links[j], &r.specs[m].links[i]);
                                let info = pair_contact(lj, &s[b][j], li, &s[m][i]);
                                pairs.push(encode_contact_pair(&phi(lj, &s[b][j]), &phi(li, &s[m][i]), &info, None));
                            }
                        }
                    }
                }
            }
        }
        if !pairs.is_empty() {
            c.input = NormStats::compute(pairs.iter().map(Vec::as_slice), PAIR_DIM)?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train: LossTerms,
    pub val: Option<LossTerms>,
    pub dropped: usize,
    pub batches: usize,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub train_sequences: Vec<usize>,
    pub val_sequences: Vec<usize>,
}

impl TrainReport {
    pub fn dropped(&self) -> usize {
        self.epochs.iter().map(|e| e.dropped).sum()
    }

    pub fn final_val_loss(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.val).map(|v| v.total)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# {METRICS_SCHEMA}\n{METRICS_HEADER}\n");
        for e in &self.epochs {
            let v = e.val.unwrap_or(LossTerms { total: f64::NAN, pos: f64::NAN, rot: f64::NAN, disp: f64::NAN });
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{},{:e},{:e}\n",
                e.epoch,
                e.train.total,
                e.train.pos,
                e.train.rot,
                e.train.disp,
                v.total,
                v.pos,
                v.rot,
                v.disp,
                e.dropped,
                e.batches,
                e.lr,
                e.grad_norm
            ));
        }
        out
    }
}

/// Deterministic train/validation split of sequence indices.
pub fn split_sequences(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5B17));
    let n_val = if n >= 2 { ((n as f64 * val_fraction).ceil() as usize).min(n - 1) } else { 0 };
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Trains a fresh model on `data`. `on_epoch` sees each epoch's metrics.
pub fn train(
    data: &[Trajectory],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(ModelParams, TrainReport)> {
    cfg.validate()?;
    let first = data.first().ok_or_else(|| Error::InvalidConfig("empty training set".into()))?;
    let types = body_types(&first.specs);
    let mut model: ModelParams =
        ModelParams::init(cfg.model.clone(), first.dt, &types, first.specs.len() > 1, cfg.seed)?;
    for t in data {
        if t.dt != first.dt {
            return Err(Error::InvalidConfig("sequences disagree on dt".into()));
        }
        model.check_scene(&t.specs)?;
    }
    let stride = cfg.stride.unwrap_or(cfg.n_h);
    let (train_seqs, val_seqs) = split_sequences(data.len(), cfg.val_fraction, cfg.seed);
    let mut windows = make_windows(data, &train_seqs, cfg.n_h, stride);
    let val_windows = make_windows(data, &val_seqs, cfg.n_h, stride);
    if windows.is_empty() {
        return Err(Error::InvalidConfig(format!("no training window of {} steps fits the sequences", cfg.n_h)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    windows.shuffle(&mut rng);
    let stat_rows: Vec<WindowData> = windows[..cfg.batch_size.min(windows.len())]
        .iter()
        .map(|&w| window_data(&data[w.seq], w, cfg.n_h, cfg.augment.then(|| rng.gen_range(0.0..std::f64::consts::TAU))))
        .collect();
    compute_stats(&mut model, &stat_rows, cfg.disp_std_floor)?;
    drop(stat_rows);

    let weights = cfg.weights;
    let mut adam = Adam::new();
    let mut report = TrainReport { epochs: Vec::new(), train_sequences: train_seqs, val_sequences: val_seqs };
    for epoch in 0..cfg.epochs {
        windows.shuffle(&mut rng);
        let lr = cfg.lr.lr(epoch, cfg.epochs);
        let (mut sum, mut n_rows, mut dropped, mut batches, mut norms) = ([0.0; 4], 0usize, 0, 0, 0.0);
        for (b, batch) in windows.chunks(cfg.batch_size).enumerate() {
            let theta = cfg.augment.then(|| rng.gen_range(0.0..std::f64::consts::TAU));
            let rows: Vec<WindowData> = batch.iter().map(|&w| window_data(&data[w.seq], w, cfg.n_h, theta)).collect();
            let (terms, grads, bad) = batch_loss(&model, &rows, &weights, cfg.chunk_rows, true)?;
            if !terms.total.is_finite() {
                let w = batch[bad.unwrap_or(0)];
                return Err(Error::NonFiniteLoss { epoch, batch: b, sequence: w.seq, start: w.start });
            }
            let mut grads = grads.expect("gradients requested");
            let norm = global_grad_norm(&grads);
            batches += 1;
            norms += norm;
            for (s, v) in sum.iter_mut().zip([terms.total, terms.pos, terms.rot, terms.disp]) {
                *s += v * rows.len() as f64;
            }
            n_rows += rows.len();
            if !(norm <= cfg.grad_threshold) {
                match cfg.grad_rule {
                    GradRule::Drop => {
                        dropped += 1;
                        continue;
                    }
                    GradRule::Rescale => {
                        let k = cfg.grad_threshold / norm;
                        for g in grads.iter_mut() {
                            *g = g.map(|v| v * k);
                        }
                    }
                }
            }
            adam.update(&mut model.tensors_mut(), &grads, lr)?;
        }
        let n = n_rows.max(1) as f64;
        let train_terms = LossTerms { total: sum[0] / n, pos: sum[1] / n, rot: sum[2] / n, disp: sum[3] / n };
        let val = if val_windows.is_empty() {
            None
        } else {
            Some(evaluate_windows(&model, data, &val_windows, cfg.n_h, &weights, cfg.batch_size, cfg.chunk_rows)?)
        };
        let m = EpochMetrics {
            epoch,
            train: train_terms,
            val,
            dropped,
            batches,
            lr,
            grad_norm: norms / batches.max(1) as f64,
        };
        on_epoch(&m);
        report.epochs.push(m);
    }
    Ok((model, report))
}

/// Mean loss over windows without augmentation.
pub fn evaluate_windows(
    model: &ModelParams,
    data: &[Trajectory],
    windows: &[Window],
    n_h: usize,
    w: &LossWeights,
    batch_size: usize,
    chunk_rows: usize,
) -> Result<LossTerms> {
    let mut sum = [0.0; 4];
    for batch in windows.chunks(batch_size) {
        let rows: Vec<WindowData> = batch.iter().map(|&win| window_data(&data[win.seq], win, n_h, None)).collect();
        let (t, _, _) = batch_loss(model, &rows, w, chunk_rows, false)?;
        for (s, v) in sum.iter_mut().zip([t.total, t.pos, t.rot, t.disp]) {
            *s += v * rows.len() as f64;
        }
    }
    let n = windows.len().max(1) as f64;
    Ok(LossTerms { total: sum[0] / n, pos: sum[1] / n, rot: sum[2] / n, disp: sum[3] / n })
}

/// Trains `k` models with seeds `seed, seed + 1, …` and keeps the one with
/// the lowest final validation loss.
pub fn train_best_of(data: &[Trajectory], cfg: &TrainConfig, k: usize) -> Result<(ModelParams, Vec<TrainReport>)> {
    let mut best: Option<(f64, ModelParams)> = None;
    let mut reports = Vec::new();
    for i in 0..k.max(1) {
        let c = TrainConfig { seed: cfg.seed.wrapping_add(i as u64), ..cfg.clone() };
        let (model, report) = train(data, &c, |_| {})?;
        let score = report.final_val_loss().unwrap_or(report.epochs.last().map_or(f64::INFINITY, |e| e.train.total));
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, model));
        }
        reports.push(report);
    }
    Ok((best.expect("at least one run").1, reports))
}
