//! Full pipeline on reflection clips: stage 1, tuning, frozen refinement
//! targets with the semantic constraint, stage 2, and evaluation with and
//! without the post-processing CRF.
//!
//! cargo run --release --example two_stage -- [stage1 iterations]

use motionseg::config::ExperimentConfig;
use motionseg::eval::confounder_false_positive_area;
use motionseg::pipeline::{evaluate_state, run_stage1, run_stage2};
use motionseg::synth::DatasetKind;
use motionseg::trainer::{load_clips, RunOptions, TrainingData};

fn main() -> motionseg::Result<()> {
    let iters: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let mut config = ExperimentConfig::default();
    config.net.num_channels = 2;
    config.net.lambda = 0.5;
    config.data.synthetic.kind = DatasetKind::Reflection;
    config.data.synthetic.clips = 4;
    config.train.stage1_iters = iters;
    config.train.stage2_iters = 50;
    let data = TrainingData::new(load_clips(&config)?, &config.net, false)?;
    let opts = RunOptions::default();
    let (mut state, tuning) = run_stage1(config, &data, &opts)?;
    let c_o = tuning.selected_channel;
    let fp1 = confounder_false_positive_area(&mut state.model, &data.clips, c_o)?;
    let j1 = evaluate_state(&mut state, &data.clips, false)?.frame_average;
    let targets = run_stage2(&mut state, &data, true, None, &opts)?;
    let fp2 = confounder_false_positive_area(&mut state.model, &data.clips, c_o)?;
    let j2 = evaluate_state(&mut state, &data.clips, false)?.frame_average;
    let j2_crf = evaluate_state(&mut state, &data.clips, true)?.frame_average;
    println!("object channel {c_o}, targets {}", &targets.key[..16]);
    println!("stage 1:   J {j1:.3}  reflection false positives {fp1:.3}");
    println!("stage 1+2: J {j2:.3}  reflection false positives {fp2:.3}  (with post CRF: J {j2_crf:.3})");
    Ok(())
}
