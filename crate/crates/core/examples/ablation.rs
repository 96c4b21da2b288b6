//! Residual-pathway ablation on articulated sprites over two seeds.
//!
//! cargo run --release --example ablation -- [iterations]

use motionseg::ablation::{run_ablation, AblationAxis};
use motionseg::config::ExperimentConfig;
use motionseg::synth::DatasetKind;
use motionseg::trainer::{load_clips, RunOptions};

fn main() -> motionseg::Result<()> {
    let iters: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(150);
    let mut config = ExperimentConfig::default();
    config.net.num_channels = 2;
    config.net.lambda = 0.5;
    config.data.synthetic.kind = DatasetKind::Articulated;
    config.data.synthetic.clips = 4;
    config.train.stage1_iters = iters;
    let clips = load_clips(&config)?;
    let report = run_ablation(&config, clips, AblationAxis::Residual, &[0, 1], &RunOptions::default())?;
    print!("{}", report.to_text());
    Ok(())
}
