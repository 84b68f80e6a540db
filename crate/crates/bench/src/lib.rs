//! Shared fixtures for the benchmarks.

use larp::model::{body_types, ModelConfig, ModelParams};
use larp::refsim::{generate_dataset, Randomization, Scenario, SimConfig};
use larp::train::{compute_stats, make_windows, window_data, TrainConfig, WindowData};
use larp::Trajectory;

/// Short reference-simulated scenes.
pub fn scenes(scenario: Scenario, n: usize, len: usize) -> Vec<Trajectory> {
    generate_dataset(&SimConfig::default(), &Randomization::default(), scenario, n, len, 11, true)
        .expect("reference simulation")
        .0
}

/// Untrained model with statistics fitted to `data`.
pub fn model(data: &[Trajectory], config: ModelConfig) -> ModelParams {
    let types = body_types(&data[0].specs);
    let mut m = ModelParams::init(config, data[0].dt, &types, data[0].specs.len() > 1, 0).expect("model init");
    let n_h = 4;
    let seqs: Vec<usize> = (0..data.len()).collect();
    let windows = make_windows(data, &seqs, n_h, n_h);
    let rows: Vec<WindowData> = windows.iter().map(|&w| window_data(&data[w.seq], w, n_h, None)).collect();
    compute_stats(&mut m, &rows, TrainConfig::default().disp_std_floor).expect("stats");
    m
}
