//! `larp`: generate datasets, train, evaluate and benchmark.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use larp::adnn::{Activation, LrSchedule};
use larp::dataio::{load_checkpoint, read_dataset, save_checkpoint, write_dataset};
use larp::eval::{bench_csv, bench_larp, bench_refsim, eval_csv, evaluate, BenchScenes, COLLISION_HORIZONS};
use larp::model::{ContactVariant, ModelConfig};
use larp::refsim::{generate_dataset, Randomization, Scenario, SimConfig};
use larp::train::{train, train_best_of, GradRule, LossMode, LossWeights, TrainConfig};
use larp::{Error, Result};

#[derive(Parser)]
#[command(name = "larp", version, about = "Learned articulated rigid-body physics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset with the reference simulator.
    Gen(GenArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Error curves of a model on held-out sequences.
    Eval(EvalArgs),
    /// Throughput of batched model rollouts against the reference simulator.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, env = "LARP_SCENARIO", default_value = "chain4")]
    scenario: String,
    /// Number of sequences.
    #[arg(long, env = "LARP_N", default_value_t = 1000)]
    n: usize,
    /// Steps per sequence.
    #[arg(long, env = "LARP_LEN", default_value_t = 100)]
    len: usize,
    #[arg(long, env = "LARP_SEED", default_value_t = 0)]
    seed: u64,
    /// Half-width of the random root torque (N·m).
    #[arg(long, env = "LARP_TORQUE", default_value_t = 1.0)]
    torque: f64,
    #[arg(long, env = "LARP_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, env = "LARP_DATA")]
    data: PathBuf,
    /// Unroll length.
    #[arg(long, env = "LARP_NH", default_value_t = 20)]
    nh: usize,
    #[arg(long, env = "LARP_EPOCHS", default_value_t = 50)]
    epochs: usize,
    #[arg(long, env = "LARP_BATCH", default_value_t = 512)]
    batch: usize,
    #[arg(long, env = "LARP_WIDTH", default_value_t = 256)]
    width: usize,
    #[arg(long, env = "LARP_DYN_LAYERS", default_value_t = 12)]
    dyn_layers: usize,
    #[arg(long, env = "LARP_CONTACT_LAYERS", default_value_t = 6)]
    contact_layers: usize,
    #[arg(long, env = "LARP_ACTIVATION", default_value = "elu")]
    activation: String,
    #[arg(long, env = "LARP_LOSS_MODE", default_value = "position")]
    loss_mode: String,
    #[arg(long, env = "LARP_NO_DISP_FEATURE")]
    no_disp_feature: bool,
    #[arg(long, env = "LARP_NO_DISP_LOSS")]
    no_disp_loss: bool,
    #[arg(long, env = "LARP_CONTACT_VARIANT", default_value = "feature")]
    contact_variant: String,
    #[arg(long, env = "LARP_NO_STOPGRAD")]
    no_stopgrad: bool,
    /// Initial learning rate of the cosine schedule.
    #[arg(long, env = "LARP_LR", default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, env = "LARP_LR_END", default_value_t = 1e-5)]
    lr_end: f64,
    /// `drop` skips batches above the threshold, `rescale` clips them.
    #[arg(long, env = "LARP_GRAD_RULE", default_value = "drop")]
    grad_rule: String,
    #[arg(long, env = "LARP_GRAD_THRESHOLD", default_value_t = 0.3)]
    grad_threshold: f64,
    #[arg(long, env = "LARP_NO_AUGMENT")]
    no_augment: bool,
    #[arg(long, env = "LARP_VAL_FRACTION", default_value_t = 0.05)]
    val_fraction: f64,
    /// Train this many seeds and keep the best validation loss.
    #[arg(long, env = "LARP_RETRAIN", default_value_t = 1)]
    retrain: usize,
    #[arg(long, env = "LARP_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "LARP_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, env = "LARP_MODEL")]
    model: PathBuf,
    #[arg(long, env = "LARP_DATA")]
    data: PathBuf,
    /// Comma-separated horizons; defaults depend on the scene.
    #[arg(long, env = "LARP_HORIZONS", value_delimiter = ',')]
    horizons: Vec<usize>,
    #[arg(long, env = "LARP_BATCH", default_value_t = 256)]
    batch: usize,
    /// CSV destination; stdout when absent.
    #[arg(long, env = "LARP_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, env = "LARP_MODEL")]
    model: PathBuf,
    /// Scenes to simulate; generated from `--scenario` when absent.
    #[arg(long, env = "LARP_DATA")]
    data: Option<PathBuf>,
    #[arg(long, env = "LARP_SCENARIO", default_value = "chain4")]
    scenario: String,
    #[arg(long, env = "LARP_BATCH_SIZES", value_delimiter = ',', default_value = "1,16,256,1024,4096")]
    batch_sizes: Vec<usize>,
    /// Batch sizes for the reference simulator; defaults to `--batch-sizes`.
    #[arg(long, env = "LARP_REFSIM_BATCH_SIZES", value_delimiter = ',')]
    refsim_batch_sizes: Vec<usize>,
    #[arg(long, env = "LARP_STEPS", default_value_t = 100)]
    steps: usize,
    #[arg(long, env = "LARP_REPEATS", default_value_t = 5)]
    repeats: usize,
    #[arg(long, env = "LARP_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "LARP_OUT")]
    out: Option<PathBuf>,
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T> {
    s.parse()
}

fn gen(a: GenArgs) -> Result<()> {
    let scenario = Scenario::parse(&a.scenario)?;
    let rnd = Randomization { torque: a.torque, ..Default::default() };
    let (data, report) = generate_dataset(&SimConfig::default(), &rnd, scenario, a.n, a.len, a.seed, true)?;
    write_dataset(&data, &a.out)?;
    eprintln!("wrote {} sequences ({} regenerated) to {}", report.sequences, report.discarded, a.out.display());
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut weights = LossWeights { mode: parse::<LossMode>(&a.loss_mode)?, ..Default::default() };
    if a.no_disp_loss {
        weights.w_d = 0.0;
    }
    Ok(TrainConfig {
        model: ModelConfig {
            hidden_width: a.width,
            dyn_layers: a.dyn_layers,
            contact_layers: a.contact_layers,
            activation: parse::<Activation>(&a.activation)?,
            contact_variant: parse::<ContactVariant>(&a.contact_variant)?,
            stop_grad: !a.no_stopgrad,
            disp_feature: !a.no_disp_feature,
        },
        n_h: a.nh,
        batch_size: a.batch,
        epochs: a.epochs,
        lr: LrSchedule::Cosine { start: a.lr, end: a.lr_end },
        weights,
        grad_threshold: a.grad_threshold,
        grad_rule: parse::<GradRule>(&a.grad_rule)?,
        augment: !a.no_augment,
        val_fraction: a.val_fraction,
        seed: a.seed,
        ..Default::default()
    })
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = train_config(&a)?;
    let data = read_dataset(&a.data)?;
    let (model, reports) = if a.retrain > 1 {
        train_best_of(&data, &cfg, a.retrain)?
    } else {
        let (m, r) = train(&data, &cfg, |e| {
            let val = e.val.map_or("-".to_string(), |v| format!("{:.6e}", v.total));
            eprintln!(
                "epoch {:>4}  train {:.6e}  val {val}  dropped {}/{}",
                e.epoch, e.train.total, e.dropped, e.batches
            );
        })?;
        (m, vec![r])
    };
    save_checkpoint(&model, &a.out)?;
    for (k, r) in reports.iter().enumerate() {
        let name = if reports.len() == 1 {
            "metrics.csv".to_string()
        } else {
            format!("metrics_seed{}.csv", cfg.seed + k as u64)
        };
        fs::write(a.out.join(name), r.to_csv())?;
    }
    Ok(())
}

fn default_horizons(n_bodies: usize, len: usize) -> Vec<usize> {
    let base: &[usize] = if n_bodies > 1 { &COLLISION_HORIZONS } else { &[1, 10, 20, 50, 100] };
    let mut h: Vec<usize> = base.iter().copied().filter(|&h| h <= len).collect();
    if h.is_empty() {
        h.push(len);
    }
    h
}

fn emit(out: Option<&Path>, csv: &str) -> Result<()> {
    match out {
        Some(p) => Ok(fs::write(p, csv)?),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let data = read_dataset(&a.data)?;
    let first = data.first().ok_or_else(|| Error::InvalidConfig("empty evaluation set".into()))?;
    let model = load_checkpoint(&a.model, Some(first.dt))?;
    let len = data.iter().map(|t| t.len()).min().unwrap_or(0);
    let horizons = if a.horizons.is_empty() { default_horizons(first.specs.len(), len) } else { a.horizons };
    let stats = evaluate(&model, &data, &horizons, a.batch)?;
    emit(a.out.as_deref(), &eval_csv(&stats))
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let model = load_checkpoint(&a.model, None)?;
    let largest = a.batch_sizes.iter().chain(&a.refsim_batch_sizes).copied().max().unwrap_or(1);
    let data = match &a.data {
        Some(p) => read_dataset(p)?,
        None => {
            let scenario = Scenario::parse(&a.scenario)?;
            let cfg = SimConfig { dt: model.dt, ..Default::default() };
            generate_dataset(&cfg, &Randomization::default(), scenario, largest.min(256), a.steps, a.seed, true)?.0
        }
    };
    if data.is_empty() {
        return Err(Error::InvalidConfig("no scenes to benchmark".into()));
    }
    let fast = model.cast::<f32>();
    let mut rows = Vec::new();
    for &b in &a.batch_sizes {
        rows.push(bench_larp(&fast, &BenchScenes::cycle(&data, b), a.steps, a.repeats)?);
    }
    let sim = SimConfig { dt: model.dt, ..Default::default() };
    let refsim_sizes = if a.refsim_batch_sizes.is_empty() { &a.batch_sizes } else { &a.refsim_batch_sizes };
    for &b in refsim_sizes {
        rows.push(bench_refsim(&sim, &BenchScenes::cycle(&data, b), a.steps, a.repeats)?);
    }
    emit(a.out.as_deref(), &bench_csv(&rows))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Bench(a) => bench_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("larp-error kind={} message={:?}", e.kind(), e.to_string());
            ExitCode::FAILURE
        }
    }
}
