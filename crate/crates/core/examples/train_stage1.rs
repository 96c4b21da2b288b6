//! Motion-supervised training on rigid sprites, then channel selection
//! with the tuner and evaluation against ground truth.
//!
//! cargo run --release --example train_stage1 -- [iterations]

use motionseg::config::ExperimentConfig;
use motionseg::eval::channel_jaccards;
use motionseg::pipeline::{evaluate_state, tune};
use motionseg::trainer::{load_clips, smoothed_ends, step_stage1, RunOptions, Stage, TrainState, TrainingData};

fn main() -> motionseg::Result<()> {
    let iters: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let mut config = ExperimentConfig::default();
    config.net.num_channels = 2;
    config.net.lambda = 0.5;
    config.data.synthetic.clips = 4;
    config.train.stage1_iters = iters;
    let data = TrainingData::new(load_clips(&config)?, &config.net, false)?;
    let mut state = TrainState::new(config)?;
    println!("{} parameters, {} frame pairs", state.model.num_params(), data.pairs.len());
    let opts = RunOptions::default();
    while state.stage1_iter < iters {
        let rec = step_stage1(&mut state, &data, &opts)?;
        if rec.iteration % 50 == 0 {
            println!("iter {:>4}  loss {:.4}  lr {:.2e}", rec.iteration, rec.loss, rec.lr);
        }
    }
    if let Some((start, end)) = smoothed_ends(&state.losses(Stage::One), 50) {
        println!("smoothed loss {start:.4} -> {end:.4}");
    }
    let report = tune(&mut state, &data.clips)?;
    print!("{}", report.to_text());
    println!("ground-truth Jaccard per channel: {:.3?}", channel_jaccards(&mut state.model, &data.clips)?);
    print!("{}", evaluate_state(&mut state, &data.clips, false)?.to_text());
    Ok(())
}
