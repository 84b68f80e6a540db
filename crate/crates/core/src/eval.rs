//! Horizon error curves and throughput measurement.

use std::time::Instant;

use crate::adnn::Real;
use crate::body::{max_joint_displacement, BodySpec, ControlInput, SceneState, Trajectory};
use crate::error::{Error, Result};
use crate::model::{rollout_batch, ModelParams, RolloutInput};
use crate::refsim::{simulate, SimConfig};

pub const EVAL_SCHEMA: &str = "larp-eval/1";
pub const EVAL_HEADER: &str = "horizon,sequences,pos_mean,pos_std,rot_mean,rot_std,disp_mean,disp_std";
pub const BENCH_SCHEMA: &str = "larp-bench/1";
pub const BENCH_HEADER: &str = "engine,batch,steps,repeats,ms_per_step,env_steps_per_sec,us_per_env_step";

/// Horizons of the two-chain collision protocol.
pub const COLLISION_HORIZONS: [usize; 4] = [10, 40, 80, 190];

/// Errors averaged over steps `1..=horizon`, then over sequences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HorizonStats {
    pub horizon: usize,
    pub sequences: usize,
    /// Link position error (m).
    pub pos_mean: f64,
    pub pos_std: f64,
    /// `1 − |q·q̂|`.
    pub rot_mean: f64,
    pub rot_std: f64,
    /// Largest joint displacement of the predicted state (m).
    pub disp_mean: f64,
    pub disp_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Per-step errors of one predicted trajectory: `(pos, rot, disp)` for
/// `t = 1..pred.len()`.
pub fn step_errors(pred: &[SceneState], truth: &[SceneState], specs: &[BodySpec]) -> Vec<(f64, f64, f64)> {
    (1..pred.len())
        .map(|t| {
            let (mut p, mut r, mut n) = (0.0, 0.0, 0.0);
            for (a, b) in pred[t].iter().flatten().zip(truth[t].iter().flatten()) {
                p += (a.x - b.x).norm();
                r += 1.0 - a.q.dot(b.q).abs();
                n += 1.0;
            }
            let d = specs.iter().zip(&pred[t]).map(|(s, st)| max_joint_displacement(s, st)).fold(0.0, f64::max);
            (p / n, r / n, d)
        })
        .collect()
}

/// Horizon statistics from predicted and reference trajectories.
pub fn horizon_stats(
    preds: &[Vec<SceneState>],
    truth: &[&Trajectory],
    horizons: &[usize],
) -> Result<Vec<HorizonStats>> {
    if preds.is_empty() || preds.len() != truth.len() {
        return Err(Error::InvalidConfig("need one prediction per reference sequence".into()));
    }
    let errs: Vec<Vec<(f64, f64, f64)>> =
        preds.iter().zip(truth).map(|(p, t)| step_errors(p, &t.states, &t.specs)).collect();
    let longest = errs.iter().map(Vec::len).min().unwrap_or(0);
    horizons
        .iter()
        .map(|&h| {
            if h == 0 || h > longest {
                return Err(Error::InvalidConfig(format!("horizon {h} outside 1..={longest}")));
            }
            let per_seq = |f: fn(&(f64, f64, f64)) -> f64| -> Vec<f64> {
                errs.iter().map(|e| e[..h].iter().map(f).sum::<f64>() / h as f64).collect()
            };
            let (pos_mean, pos_std) = mean_std(&per_seq(|e| e.0));
            let (rot_mean, rot_std) = mean_std(&per_seq(|e| e.1));
            let (disp_mean, disp_std) = mean_std(&per_seq(|e| e.2));
            Ok(HorizonStats {
                horizon: h,
                sequences: errs.len(),
                pos_mean,
                pos_std,
                rot_mean,
                rot_std,
                disp_mean,
                disp_std,
            })
        })
        .collect()
}

/// Open-loop rollouts of `model` from each sequence's first state, scored
/// against the sequence at every horizon.
pub fn evaluate<T: Real>(
    model: &ModelParams<T>,
    data: &[Trajectory],
    horizons: &[usize],
    batch: usize,
) -> Result<Vec<HorizonStats>> {
    let steps = horizons.iter().copied().max().unwrap_or(0);
    if data.iter().any(|t| t.len() < steps) {
        return Err(Error::InvalidConfig(format!("sequences shorter than the largest horizon {steps}")));
    }
    let mut preds = Vec::with_capacity(data.len());
    for chunk in data.chunks(batch.max(1)) {
        let inputs: Vec<RolloutInput> = chunk
            .iter()
            .map(|t| RolloutInput { specs: &t.specs, initial: &t.states[0], controls: &t.controls })
            .collect();
        preds.extend(rollout_batch(model, &inputs, steps)?);
    }
    let truth: Vec<&Trajectory> = data.iter().collect();
    horizon_stats(&preds, &truth, horizons)
}

pub fn eval_csv(stats: &[HorizonStats]) -> String {
    let mut out = format!("# {EVAL_SCHEMA}\n{EVAL_HEADER}\n");
    for s in stats {
        out.push_str(&format!(
            "{},{},{:e},{:e},{:e},{:e},{:e},{:e}\n",
            s.horizon, s.sequences, s.pos_mean, s.pos_std, s.rot_mean, s.rot_std, s.disp_mean, s.disp_std
        ));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Engine {
    Larp,
    Refsim,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Larp => "larp",
            Engine::Refsim => "refsim",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchRow {
    pub engine: Engine,
    pub batch: usize,
    pub steps: usize,
    pub repeats: usize,
    /// Wall time to advance every environment by one step.
    pub ms_per_step: f64,
    pub env_steps_per_sec: f64,
    pub us_per_env_step: f64,
}

impl BenchRow {
    fn from_seconds(engine: Engine, batch: usize, steps: usize, repeats: usize, secs: f64) -> Self {
        let per_step = secs / steps as f64;
        BenchRow {
            engine,
            batch,
            steps,
            repeats,
            ms_per_step: per_step * 1e3,
            env_steps_per_sec: batch as f64 / per_step,
            us_per_env_step: per_step * 1e6 / batch as f64,
        }
    }
}

/// Scenes to advance in a benchmark; controls must cover the step count.
pub struct BenchScenes<'a> {
    pub specs: Vec<&'a [BodySpec]>,
    pub initial: Vec<&'a SceneState>,
    pub controls: Vec<&'a [ControlInput]>,
}

impl<'a> BenchScenes<'a> {
    /// `batch` scenes cycling through `data`.
    pub fn cycle(data: &'a [Trajectory], batch: usize) -> Self {
        let pick = |k: usize| &data[k % data.len()];
        BenchScenes {
            specs: (0..batch).map(|k| &pick(k).specs[..]).collect(),
            initial: (0..batch).map(|k| &pick(k).states[0]).collect(),
            controls: (0..batch).map(|k| &pick(k).controls[..]).collect(),
        }
    }

    fn len(&self) -> usize {
        self.initial.len()
    }
}

/// Batched LARP rollouts; one untimed warm-up run precedes the timed ones.
pub fn bench_larp<T: Real>(
    model: &ModelParams<T>,
    scenes: &BenchScenes,
    steps: usize,
    repeats: usize,
) -> Result<BenchRow> {
    let inputs: Vec<RolloutInput> = (0..scenes.len())
        .map(|k| RolloutInput { specs: scenes.specs[k], initial: scenes.initial[k], controls: scenes.controls[k] })
        .collect();
    rollout_batch(model, &inputs, steps.min(2))?;
    let t = Instant::now();
    for _ in 0..repeats.max(1) {
        rollout_batch(model, &inputs, steps)?;
    }
    let secs = t.elapsed().as_secs_f64() / repeats.max(1) as f64;
    Ok(BenchRow::from_seconds(Engine::Larp, scenes.len(), steps, repeats, secs))
}

/// Reference simulator advancing the scenes one after another on the
/// calling thread.
pub fn bench_refsim(cfg: &SimConfig, scenes: &BenchScenes, steps: usize, repeats: usize) -> Result<BenchRow> {
    let run = |n: usize| -> Result<()> {
        for k in 0..scenes.len() {
            simulate(scenes.specs[k], scenes.initial[k], &scenes.controls[k][..n], cfg)?;
        }
        Ok(())
    };
    if scenes.controls.iter().any(|c| c.len() < steps) {
        return Err(Error::InvalidConfig(format!("benchmark scenes need {steps} controls")));
    }
    run(steps.min(2))?;
    let t = Instant::now();
    for _ in 0..repeats.max(1) {
        run(steps)?;
    }
    let secs = t.elapsed().as_secs_f64() / repeats.max(1) as f64;
    Ok(BenchRow::from_seconds(Engine::Refsim, scenes.len(), steps, repeats, secs))
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = format!("# {BENCH_SCHEMA}\n{BENCH_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:e},{:e},{:e}\n",
            r.engine.name(),
            r.batch,
            r.steps,
            r.repeats,
            r.ms_per_step,
            r.env_steps_per_sec,
            r.us_per_env_step
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{body_types, ModelConfig};
    use crate::refsim::{generate_dataset, Randomization, Scenario};
    use crate::{LinkState, Vec3};

    fn data(n: usize, len: usize) -> Vec<Trajectory> {
        generate_dataset(&SimConfig::default(), &Randomization::default(), Scenario::Chain2x2, n, len, 3, false)
            .unwrap()
            .0
    }

    #[test]
    fn oracle_passthrough_has_zero_error() {
        let d = data(3, 12);
        let preds: Vec<Vec<SceneState>> = d.iter().map(|t| t.states.clone()).collect();
        let truth: Vec<&Trajectory> = d.iter().collect();
        for s in horizon_stats(&preds, &truth, &[1, 5, 12]).unwrap() {
            assert_eq!(s.pos_mean, 0.0);
            assert!(s.rot_mean.abs() < 1e-7);
            assert_eq!(s.pos_std, 0.0);
            assert_eq!(s.sequences, 3);
        }
        assert!(horizon_stats(&preds, &truth, &[13]).is_err());
        assert!(horizon_stats(&preds, &truth, &[0]).is_err());
    }

    #[test]
    fn constant_offset_and_spread() {
        let d = data(2, 4);
        let shift = |t: &Trajectory, dz: f64| -> Vec<SceneState> {
            t.states
                .iter()
                .map(|s| {
                    s.iter()
                        .map(|b| b.iter().map(|l| LinkState { x: l.x + Vec3::new(0.0, 0.0, dz), ..*l }).collect())
                        .collect()
                })
                .collect()
        };
        let preds = vec![shift(&d[0], 0.1), shift(&d[1], 0.3)];
        let truth: Vec<&Trajectory> = d.iter().collect();
        let s = horizon_stats(&preds, &truth, &[4]).unwrap()[0];
        assert!((s.pos_mean - 0.2).abs() < 1e-12);
        assert!((s.pos_std - 0.1).abs() < 1e-12);
    }

    #[test]
    fn model_errors_are_finite_and_csv_is_versioned() {
        let d = data(3, 20);
        let cfg = ModelConfig { hidden_width: 8, dyn_layers: 2, contact_layers: 2, ..Default::default() };
        let model: ModelParams = ModelParams::init(cfg, d[0].dt, &body_types(&d[0].specs), true, 1).unwrap();
        let stats = evaluate(&model, &d, &[1, 10, 20], 2).unwrap();
        assert!(stats.iter().all(|s| s.pos_mean.is_finite() && s.pos_mean > 0.0));
        let csv = eval_csv(&stats);
        assert!(csv.starts_with("# larp-eval/1\nhorizon,"));
        assert_eq!(csv.lines().count(), 5);
        assert!(evaluate(&model, &d, &[21], 2).is_err());
    }

    #[test]
    fn bench_rows_are_consistent() {
        let d = data(2, 5);
        let scenes = BenchScenes::cycle(&d, 3);
        let r = bench_refsim(&SimConfig::default(), &scenes, 4, 1).unwrap();
        assert_eq!((r.batch, r.steps), (3, 4));
        assert!((r.env_steps_per_sec * r.us_per_env_step - 1e6).abs() < 1e-3);
        let cfg = ModelConfig { hidden_width: 8, dyn_layers: 2, contact_layers: 2, ..Default::default() };
        let model: ModelParams = ModelParams::init(cfg, d[0].dt, &body_types(&d[0].specs), true, 1).unwrap();
        let l = bench_larp(&model.cast::<f32>(), &scenes, 4, 1).unwrap();
        assert_eq!(l.engine, Engine::Larp);
        assert!(bench_csv(&[r, l]).lines().nth(2).unwrap().starts_with("refsim,3,4,1,"));
        assert!(bench_refsim(&SimConfig::default(), &scenes, 9, 1).is_err());
    }
}
