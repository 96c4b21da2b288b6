//! Annotation-free selection of the object channel, and of the channel
//! count, by motion-semantic alignment.
//!
//! cargo run --release --example tune_channels -- [iterations]

use motionseg::config::ExperimentConfig;
use motionseg::eval::channel_jaccards;
use motionseg::net::ColorStatistics;
use motionseg::trainer::{load_clips, train_stage1, RunOptions, TrainState, TrainingData};
use motionseg::tuner::{select_object_channel, sweep_num_channels};

fn main() -> motionseg::Result<()> {
    let iters: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let mut base = ExperimentConfig::default();
    base.net.lambda = 0.5;
    base.data.synthetic.clips = 4;
    base.train.stage1_iters = iters;
    let clips = load_clips(&base)?;
    let provider = ColorStatistics::default();
    let report = sweep_num_channels(
        &[2, 3, 4],
        |c| {
            let mut cfg = base.clone();
            cfg.net.num_channels = c;
            let mut st = TrainState::new(cfg)?;
            let data = TrainingData::new(clips.clone(), &st.config.net, false)?;
            train_stage1(&mut st, &data, &RunOptions::default())?;
            let align = select_object_channel(&mut st.model, &clips, &provider, &st.config.tuner)?;
            let gt = channel_jaccards(&mut st.model, &clips)?;
            println!("C={c}: alignment {:.3?}  ground truth {:.3?}", align.per_channel_mean_iou, gt);
            Ok(st.model)
        },
        &clips,
        &provider,
        &base.tuner,
    )?;
    print!("{}", report.to_text());
    Ok(())
}
