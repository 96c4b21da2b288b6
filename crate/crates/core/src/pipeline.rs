//! Glue between training, tuning and evaluation shared by the CLI, the
//! ablation harness and the examples.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::eval::{evaluate, EvalReport};
use crate::net::{AuxFeatureProvider, ColorStatistics};
use crate::synth::VideoClip;
use crate::trainer::{
    aux_provider, build_refinement_targets, train_stage1, train_stage2, RefinementTargets, RunOptions, TrainState,
    TrainingData,
};
use crate::tuner::{select_object_channel, AlignmentReport};

/// The configured frozen feature provider, or color statistics when none
/// is configured (tuning always needs one).
pub fn tuning_provider(config: &ExperimentConfig) -> Box<dyn AuxFeatureProvider> {
    aux_provider(config.aux).unwrap_or_else(|| {
        warn!("no auxiliary feature provider configured; tuning with color statistics");
        Box::new(ColorStatistics::default())
    })
}

/// Runs the tuner on `clips` and stores the selected object channel.
pub fn tune(state: &mut TrainState, clips: &[VideoClip]) -> Result<AlignmentReport> {
    let provider = tuning_provider(&state.config);
    let report = select_object_channel(&mut state.model, clips, provider.as_ref(), &state.config.tuner)?;
    state.object_channel = Some(report.selected_channel);
    Ok(report)
}

pub fn report_flags(config: &ExperimentConfig, stage2: bool, post_crf: bool) -> BTreeMap<String, String> {
    let mut f = BTreeMap::new();
    f.insert("residual".into(), config.net.residual.name().to_string());
    f.insert("feature_merging".into(), config.net.feature_merging.to_string());
    f.insert("num_channels".into(), config.net.num_channels.to_string());
    f.insert("stage2".into(), stage2.to_string());
    f.insert("semantic_constraint".into(), config.flags.semantic_constraint.to_string());
    f.insert("post_crf".into(), post_crf.to_string());
    f
}

/// Evaluates the state's object channel, optionally with CRF post-processing.
pub fn evaluate_state(state: &mut TrainState, clips: &[VideoClip], post_crf: bool) -> Result<EvalReport> {
    let c_o = state.object_channel.ok_or(crate::Error::ObjectChannelUnset)?;
    let stage2 = state.stage2_iter > 0;
    let flags = report_flags(&state.config, stage2, post_crf);
    let crf = post_crf.then(|| state.config.crf.clone());
    evaluate(&mut state.model, clips, c_o, crf.as_ref(), state.config.hash(), flags)
}

/// Stage 1 followed by tuning.
pub fn run_stage1(config: ExperimentConfig, data: &TrainingData, opts: &RunOptions) -> Result<(TrainState, AlignmentReport)> {
    let mut state = TrainState::new(config)?;
    train_stage1(&mut state, data, opts)?;
    let report = tune(&mut state, &data.clips)?;
    Ok((state, report))
}

/// Builds refinement targets with the given constraint setting and runs
/// stage 2 on a tuned stage-1 state.
pub fn run_stage2(
    state: &mut TrainState,
    data: &TrainingData,
    semantic_constraint: bool,
    cache_dir: Option<&Path>,
    opts: &RunOptions,
) -> Result<RefinementTargets> {
    let targets = build_refinement_targets(state, data, semantic_constraint, cache_dir)?;
    train_stage2(state, data, &targets, opts)?;
    Ok(targets)
}
