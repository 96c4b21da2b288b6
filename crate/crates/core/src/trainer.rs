//! Two-stage training: motion-only stage 1, then frozen refined targets
//! with the combined appearance and motion objective. Also owns the
//! optimizer, the learning-rate schedule and checkpoint files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use ndarray::{s, Array2, Array3, Array4, ArrayD, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::appearance::{refine_target, ConstraintParams, CrfParams};
use crate::config::{sha256_hex, AuxProvider, ExperimentConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::motion::{backward_model, forward_model, MotionSample};
use crate::net::{align_features, AuxFeatureProvider, ColorStatistics, NetConfig, SegmentationModel};
use crate::nn::Module;
use crate::synth::{downsample_flow, VideoClip};

pub const CHECKPOINT_FORMAT: &str = "motionseg-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Adam with L2 weight decay folded into the gradient.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Adam {
    pub step: u64,
    pub moments: BTreeMap<String, AdamMoments>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamMoments {
    pub m: ArrayD<f64>,
    pub v: ArrayD<f64>,
}

impl Adam {
    pub fn update(&mut self, model: &mut impl Module, lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let moments = &mut self.moments;
        model.visit_params("", &mut |name, p| {
            if !p.trainable {
                return;
            }
            let st = moments.entry(name.to_string()).or_insert_with(|| AdamMoments {
                m: ArrayD::zeros(p.value.raw_dim()),
                v: ArrayD::zeros(p.value.raw_dim()),
            });
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(&mut st.m)
                .and(&mut st.v)
                .for_each(|w, &g, m, v| {
                    let g = g + cfg.weight_decay * *w;
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + cfg.adam_eps);
                });
        });
    }
}

/// Polynomial decay from `base` to `min` over `total` iterations.
pub fn poly_lr(base: f64, min: f64, power: f64, iter: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let frac = (1.0 - iter as f64 / total as f64).max(0.0);
    (base - min) * frac.powf(power) + min
}

/// Learning rate of a stage-1 iteration. The decay horizon spans both
/// stages so that stage 2 continues from the tail of the same schedule.
pub fn stage1_lr(cfg: &TrainConfig, iter: usize) -> f64 {
    poly_lr(cfg.lr, cfg.min_lr, cfg.poly_power, iter, cfg.stage1_iters + cfg.stage2_iters)
}

pub fn stage2_lr(cfg: &TrainConfig, iter: usize) -> f64 {
    cfg.stage2_lr.unwrap_or_else(|| {
        poly_lr(
            cfg.lr,
            cfg.min_lr,
            cfg.poly_power,
            cfg.stage1_iters + iter,
            cfg.stage1_iters + cfg.stage2_iters,
        )
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    One,
    Two,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub stage: Stage,
    pub iteration: usize,
    /// Optimized objective.
    pub loss: f64,
    /// Symmetric motion loss averaged over pairs.
    pub motion: f64,
    pub appearance: Option<f64>,
    pub lr: f64,
}

/// Clips prepared for training: flows downsampled to the mask grid.
pub struct TrainingData {
    pub clips: Vec<VideoClip>,
    /// `(clip, t)` for every consecutive frame pair.
    pub pairs: Vec<(usize, usize)>,
    flows_fwd: Vec<Vec<Array3<f64>>>,
    flows_bwd: Option<Vec<Vec<Array3<f64>>>>,
    pub image_hw: (usize, usize),
    pub feature_hw: (usize, usize),
}

impl TrainingData {
    pub fn new(clips: Vec<VideoClip>, net: &NetConfig, forward_only: bool) -> Result<Self> {
        let first = clips
            .first()
            .ok_or_else(|| Error::Empty("training dataset has no clips".into()))?;
        let (h, w) = (first.height(), first.width());
        if h % NetConfig::LATE_STRIDE != 0 || w % NetConfig::LATE_STRIDE != 0 {
            return Err(Error::Shape(format!(
                "frame size {h}x{w} is not a multiple of the encoder stride {}",
                NetConfig::LATE_STRIDE
            )));
        }
        let (fh, fw) = net.feature_size(h, w);
        let mut pairs = Vec::new();
        let mut flows_fwd = Vec::new();
        let mut flows_bwd = Vec::new();
        let mut have_bwd = !forward_only;
        for (ci, clip) in clips.iter().enumerate() {
            if clip.len() < 2 {
                return Err(Error::Empty(format!("clip {} has fewer than 2 frames", clip.name)));
            }
            if (clip.height(), clip.width()) != (h, w) {
                return Err(Error::Shape(format!(
                    "clip {} is {}x{}, expected {h}x{w}",
                    clip.name,
                    clip.height(),
                    clip.width()
                )));
            }
            if clip.gt_flow.len() != clip.len() - 1 {
                return Err(Error::Empty(format!(
                    "clip {} has {} flows for {} frames",
                    clip.name,
                    clip.gt_flow.len(),
                    clip.len()
                )));
            }
            let fwd = clip
                .gt_flow
                .iter()
                .map(|f| downsample_flow(f, fh, fw).map(|d| d.to_f64()))
                .collect::<Result<Vec<_>>>()?;
            flows_fwd.push(fwd);
            if clip.gt_flow_backward.len() == clip.len() - 1 {
                flows_bwd.push(
                    clip.gt_flow_backward
                        .iter()
                        .map(|f| downsample_flow(f, fh, fw).map(|d| d.to_f64()))
                        .collect::<Result<Vec<_>>>()?,
                );
            } else if have_bwd {
                warn!("clip {} has no backward flow; training on forward flow only", clip.name);
                have_bwd = false;
            }
            pairs.extend((0..clip.len() - 1).map(|t| (ci, t)));
        }
        Ok(TrainingData {
            clips,
            pairs,
            flows_fwd,
            flows_bwd: have_bwd.then_some(flows_bwd),
            image_hw: (h, w),
            feature_hw: (fh, fw),
        })
    }

    pub fn symmetric(&self) -> bool {
        self.flows_bwd.is_some()
    }

    pub fn flow_fwd(&self, clip: usize, t: usize) -> &Array3<f64> {
        &self.flows_fwd[clip][t]
    }

    pub fn flow_bwd(&self, clip: usize, t: usize) -> Option<&Array3<f64>> {
        self.flows_bwd.as_ref().map(|b| &b[clip][t])
    }

    pub fn num_frames(&self) -> usize {
        self.clips.iter().map(|c| c.len()).sum()
    }
}

/// Loads the configured dataset directory or generates the synthetic one.
pub fn load_clips(config: &ExperimentConfig) -> Result<Vec<VideoClip>> {
    match &config.data.path {
        Some(p) => crate::synth::load_dataset(p),
        None => crate::synth::generate_dataset(&config.data.synthetic, config.seed),
    }
}

/// Everything needed to continue training or run inference.
#[derive(Clone)]
pub struct TrainState {
    pub config: ExperimentConfig,
    pub model: SegmentationModel,
    pub optimizer: Adam,
    pub stage: Stage,
    pub stage1_iter: usize,
    pub stage2_iter: usize,
    pub history: Vec<LossRecord>,
    /// Object channel chosen by the tuner (0-based).
    pub object_channel: Option<usize>,
    /// Hash of the frozen stage-2 targets in use.
    pub target_hash: Option<String>,
}

impl TrainState {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let model = SegmentationModel::new(config.net.clone(), config.seed)?;
        Ok(TrainState {
            config,
            model,
            optimizer: Adam::default(),
            stage: Stage::One,
            stage1_iter: 0,
            stage2_iter: 0,
            history: Vec::new(),
            object_channel: None,
            target_hash: None,
        })
    }

    pub fn losses(&self, stage: Stage) -> Vec<f64> {
        self.history.iter().filter(|r| r.stage == stage).map(|r| r.loss).collect()
    }
}

fn iteration_rng(seed: u64, stage: Stage, iter: usize) -> ChaCha8Rng {
    let tag = match stage {
        Stage::One => 1u64,
        Stage::Two => 2u64,
    };
    let mixed = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(tag << 56)
        .wrapping_add(iter as u64);
    ChaCha8Rng::seed_from_u64(mixed)
}

/// A sampled batch: `2B` frames (`I_t` block then `I_{t+1}` block) and the
/// direction-samples over them.
struct Batch {
    pairs: Vec<(usize, usize)>,
    frames: Array4<f64>,
    samples: Vec<MotionSample>,
    targets: Array4<f64>,
}

fn sample_batch(data: &TrainingData, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Batch {
    let b = cfg.batch_size;
    let (h, w) = data.image_hw;
    let (fh, fw) = data.feature_hw;
    let pairs: Vec<(usize, usize)> = (0..b)
        .map(|_| data.pairs[rng.random_range(0..data.pairs.len())])
        .collect();
    let mut frames = Array4::zeros((2 * b, 3, h, w));
    for (j, &(ci, t)) in pairs.iter().enumerate() {
        let (bright, contrast) = if cfg.jitter > 0.0 {
            (
                rng.random_range(-cfg.jitter..cfg.jitter),
                1.0 + rng.random_range(-cfg.jitter..cfg.jitter),
            )
        } else {
            (0.0, 1.0)
        };
        let jit = |v: f64| ((v - 0.5) * contrast + 0.5 + bright).clamp(0.0, 1.0);
        let clip = &data.clips[ci];
        frames.index_axis_mut(Axis(0), j).assign(&clip.frames[t].mapv(jit));
        frames.index_axis_mut(Axis(0), j + b).assign(&clip.frames[t + 1].mapv(jit));
    }
    let mut samples: Vec<MotionSample> = (0..b).map(|j| MotionSample { frame: j, partner: j + b }).collect();
    let n = if data.symmetric() { 2 * b } else { b };
    let mut targets = Array4::zeros((n, 2, fh, fw));
    for (j, &(ci, t)) in pairs.iter().enumerate() {
        targets.index_axis_mut(Axis(0), j).assign(data.flow_fwd(ci, t));
        if let Some(bwd) = data.flow_bwd(ci, t) {
            targets.index_axis_mut(Axis(0), j + b).assign(bwd);
        }
    }
    if data.symmetric() {
        samples.extend((0..b).map(|j| MotionSample { frame: j + b, partner: j }));
    }
    Batch {
        pairs,
        frames,
        samples,
        targets,
    }
}

fn diverged(stage: Stage, iteration: usize, batch: &Batch, losses: &[f64], dump_dir: Option<&Path>) -> Error {
    let dump = serde_json::json!({
        "stage": stage,
        "iteration": iteration,
        "pairs": batch.pairs,
        "sample_losses": losses.iter().map(|l| l.to_string()).collect::<Vec<_>>(),
    });
    let mut detail = dump.to_string();
    if let Some(dir) = dump_dir {
        let path = dir.join(format!("diverged-{iteration}.json"));
        if fs::create_dir_all(dir).and_then(|_| fs::write(&path, &detail)).is_ok() {
            detail = format!("{detail} (written to {})", path.display());
        }
    }
    Error::Diverged { iteration, detail }
}

/// Options shared by both stages.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Where to write a diagnostic dump on divergence.
    pub dump_dir: Option<PathBuf>,
    /// Log every this many iterations (0 disables).
    pub log_every: usize,
}

/// One stage-1 optimization step.
pub fn step_stage1(state: &mut TrainState, data: &TrainingData, opts: &RunOptions) -> Result<LossRecord> {
    let iter = state.stage1_iter;
    let cfg = state.config.train.clone();
    let mut rng = iteration_rng(state.config.seed, Stage::One, iter);
    let batch = sample_batch(data, &cfg, &mut rng);
    state.model.zero_grad();
    let pass = forward_model(&mut state.model, &batch.frames, &batch.samples, &batch.targets, true)?;
    let b = cfg.batch_size as f64;
    let motion = pass.losses.iter().sum::<f64>() / b;
    if !motion.is_finite() {
        return Err(diverged(Stage::One, iter, &batch, &pass.losses, opts.dump_dir.as_deref()));
    }
    let d_total = &pass.d_total_unit / b;
    backward_model(&mut state.model, &pass, &d_total, None);
    let lr = stage1_lr(&cfg, iter);
    state.optimizer.update(&mut state.model, lr, &cfg);
    state.stage1_iter += 1;
    state.stage = Stage::One;
    let rec = LossRecord {
        stage: Stage::One,
        iteration: iter,
        loss: motion,
        motion,
        appearance: None,
        lr,
    };
    state.history.push(rec.clone());
    Ok(rec)
}

/// Runs stage 1 until `config.train.stage1_iters` steps have been taken.
pub fn train_stage1(state: &mut TrainState, data: &TrainingData, opts: &RunOptions) -> Result<()> {
    if data.pairs.is_empty() {
        return Err(Error::Empty("no frame pairs to train on".into()));
    }
    while state.stage1_iter < state.config.train.stage1_iters {
        let rec = step_stage1(state, data, opts)?;
        if opts.log_every > 0 && rec.iteration % opts.log_every == 0 {
            info!("stage 1 iter {} loss {:.4} lr {:.2e}", rec.iteration, rec.loss, rec.lr);
        }
    }
    Ok(())
}

/// Frozen per-frame stage-2 targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementTargets {
    /// Cache key: model parameters, refinement settings and object channel.
    pub key: String,
    pub object_channel: usize,
    pub semantic_constraint: bool,
    /// `targets[clip][t]`, each `H × W`.
    pub targets: Vec<Vec<Array2<f64>>>,
    #[serde(skip)]
    pub from_cache: bool,
}

impl RefinementTargets {
    /// SHA-256 over the target values.
    pub fn content_hash(&self) -> String {
        let mut bytes = Vec::new();
        for clip in &self.targets {
            for t in clip {
                bytes.extend(t.iter().flat_map(|v| v.to_le_bytes()));
            }
        }
        sha256_hex(&bytes)
    }
}

/// SHA-256 over every parameter and buffer, in visiting order.
pub fn params_hash(model: &mut SegmentationModel) -> String {
    let mut bytes = Vec::new();
    model.visit_params("", &mut |name, p| {
        bytes.extend(name.as_bytes());
        bytes.extend(p.value.iter().flat_map(|v| v.to_le_bytes()));
    });
    sha256_hex(&bytes)
}

pub fn aux_provider(kind: AuxProvider) -> Option<Box<dyn AuxFeatureProvider>> {
    match kind {
        AuxProvider::None => None,
        AuxProvider::ColorStatistics => Some(Box::new(ColorStatistics::default())),
    }
}

fn target_key(
    params: &str,
    crf: &CrfParams,
    constraint: &ConstraintParams,
    semantic: bool,
    aux: AuxProvider,
    object_channel: usize,
) -> String {
    let desc = serde_json::json!({
        "params": params,
        "crf": crf,
        "constraint": constraint,
        "semantic": semantic,
        "aux": aux,
        "object_channel": object_channel,
    });
    sha256_hex(desc.to_string().as_bytes())
}

/// Computes (or loads from `cache_dir`) the frozen refinement targets:
/// object-channel prediction → CRF → optional semantic constraint.
pub fn build_refinement_targets(
    state: &mut TrainState,
    data: &TrainingData,
    semantic_constraint: bool,
    cache_dir: Option<&Path>,
) -> Result<RefinementTargets> {
    let c_o = state.object_channel.ok_or(Error::ObjectChannelUnset)?;
    let cfg = &state.config;
    let provider = if semantic_constraint {
        Some(aux_provider(cfg.aux).ok_or_else(|| {
            Error::Config("semantic constraint requested but no auxiliary feature provider configured".into())
        })?)
    } else {
        None
    };
    let key = target_key(
        &params_hash(&mut state.model),
        &cfg.crf,
        &cfg.constraint,
        semantic_constraint,
        cfg.aux,
        c_o,
    );
    let cache_path = cache_dir.map(|d| d.join(format!("targets-{}.json", &key[..16])));
    if let Some(p) = cache_path.as_ref().filter(|p| p.exists()) {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let mut t: RefinementTargets = serde_json::from_str(&text)?;
        if t.key == key {
            t.from_cache = true;
            return Ok(t);
        }
    }
    let (fh, fw) = data.feature_hw;
    let (h, _) = data.image_hw;
    let pixel_scale = h as f64 / fh as f64;
    let crf = cfg.crf.clone();
    let constraint = cfg.constraint.clone();
    let mut targets = Vec::with_capacity(data.clips.len());
    for clip in &data.clips {
        let frames = ndarray::stack(Axis(0), &clip.frames.iter().map(|f| f.view()).collect::<Vec<_>>())
            .map_err(|e| Error::Shape(e.to_string()))?;
        let probs = state.model.predict_batch(&frames)?;
        let mut per_frame = Vec::with_capacity(clip.len());
        for (t, frame) in clip.frames.iter().enumerate() {
            let small = align_features(frame, fh, fw)?;
            let aux = match &provider {
                Some(p) => Some(align_features(&p.features(frame), fh, fw)?),
                None => None,
            };
            let refined = refine_target(
                probs.slice(s![t, c_o, .., ..]),
                small.view(),
                aux.as_ref(),
                &crf,
                &constraint,
                pixel_scale,
            )?;
            per_frame.push(refined.probs);
        }
        targets.push(per_frame);
    }
    let out = RefinementTargets {
        key,
        object_channel: c_o,
        semantic_constraint,
        targets,
        from_cache: false,
    };
    if let Some(p) = cache_path {
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&p, serde_json::to_string(&out)?).map_err(|e| Error::io(&p, e))?;
    }
    Ok(out)
}

/// One stage-2 optimization step against frozen targets.
pub fn step_stage2(
    state: &mut TrainState,
    data: &TrainingData,
    targets: &RefinementTargets,
    opts: &RunOptions,
) -> Result<LossRecord> {
    let iter = state.stage2_iter;
    let cfg = state.config.train.clone();
    let weights = state.config.losses;
    let c_o = targets.object_channel;
    let mut rng = iteration_rng(state.config.seed, Stage::Two, iter);
    let batch = sample_batch(data, &cfg, &mut rng);
    state.model.zero_grad();
    let pass = forward_model(&mut state.model, &batch.frames, &batch.samples, &batch.targets, true)?;
    let b = cfg.batch_size;
    let motion = pass.losses.iter().sum::<f64>() / b as f64;

    let (nf, _, fh, fw) = pass.probs.dim();
    let hw = (fh * fw) as f64;
    let mut d_probs = Array4::zeros(pass.probs.dim());
    let mut app = 0.0;
    for f in 0..nf {
        let (ci, t) = batch.pairs[f % b];
        let target = &targets.targets[ci][if f < b { t } else { t + 1 }];
        let pred = pass.probs.slice(s![f, c_o, .., ..]);
        let diff = &pred - target;
        app += diff.iter().map(|d| d * d).sum::<f64>() / hw;
        d_probs
            .slice_mut(s![f, c_o, .., ..])
            .assign(&(&diff * (2.0 * weights.appearance / (hw * nf as f64))));
    }
    app /= nf as f64;
    let loss = weights.appearance * app + weights.motion * motion;
    if !loss.is_finite() {
        return Err(diverged(Stage::Two, iter, &batch, &pass.losses, opts.dump_dir.as_deref()));
    }
    let d_total = &pass.d_total_unit * (weights.motion / b as f64);
    backward_model(&mut state.model, &pass, &d_total, Some(&d_probs));
    let lr = stage2_lr(&cfg, iter);
    state.optimizer.update(&mut state.model, lr, &cfg);
    state.stage2_iter += 1;
    state.stage = Stage::Two;
    let rec = LossRecord {
        stage: Stage::Two,
        iteration: iter,
        loss,
        motion,
        appearance: Some(app),
        lr,
    };
    state.history.push(rec.clone());
    Ok(rec)
}

/// Runs stage 2 until `config.train.stage2_iters` steps have been taken,
/// verifying once per epoch that the targets are unchanged.
pub fn train_stage2(
    state: &mut TrainState,
    data: &TrainingData,
    targets: &RefinementTargets,
    opts: &RunOptions,
) -> Result<()> {
    if targets.targets.len() != data.clips.len() {
        return Err(Error::Shape("refinement targets do not match the dataset".into()));
    }
    let hash = targets.content_hash();
    match &state.target_hash {
        Some(h) if *h != hash && state.stage2_iter > 0 => {
            return Err(Error::Checkpoint(
                "stage-2 targets differ from the ones training started with".into(),
            ))
        }
        _ => state.target_hash = Some(hash.clone()),
    }
    let epoch = (data.pairs.len() / state.config.train.batch_size).max(1);
    while state.stage2_iter < state.config.train.stage2_iters {
        if state.stage2_iter % epoch == 0 && targets.content_hash() != hash {
            return Err(Error::Checkpoint("stage-2 targets changed during training".into()));
        }
        let rec = step_stage2(state, data, targets, opts)?;
        if opts.log_every > 0 && rec.iteration % opts.log_every == 0 {
            info!(
                "stage 2 iter {} loss {:.4} (app {:.4}, motion {:.4})",
                rec.iteration,
                rec.loss,
                rec.appearance.unwrap_or(0.0),
                rec.motion
            );
        }
    }
    Ok(())
}

/// Mean of the first and last `window` values.
pub fn smoothed_ends(values: &[f64], window: usize) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let w = window.min(values.len()).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&values[..w]), mean(&values[values.len() - w..])))
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ExperimentConfig,
    config_hash: String,
    stage: Stage,
    stage1_iter: usize,
    stage2_iter: usize,
    object_channel: Option<usize>,
    target_hash: Option<String>,
    params: BTreeMap<String, ArrayD<f64>>,
    optimizer: Adam,
    history: Vec<LossRecord>,
}

pub fn save_checkpoint(state: &mut TrainState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut params = BTreeMap::new();
    state.model.visit_params("", &mut |name, p| {
        params.insert(name.to_string(), p.value.clone());
    });
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config_hash: state.config.hash(),
        config: state.config.clone(),
        stage: state.stage,
        stage1_iter: state.stage1_iter,
        stage2_iter: state.stage2_iter,
        object_channel: state.object_channel,
        target_hash: state.target_hash.clone(),
        params,
        optimizer: state.optimizer.clone(),
        history: state.history.clone(),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, serde_json::to_vec(&file)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainState> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile = serde_json::from_slice(&bytes)?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint file", path.display())));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            file.version
        )));
    }
    if file.config.hash() != file.config_hash {
        return Err(Error::Checkpoint("config hash mismatch".into()));
    }
    let mut state = TrainState::new(file.config)?;
    let mut missing = Vec::new();
    let mut params = file.params;
    state.model.visit_params("", &mut |name, p| match params.remove(name) {
        Some(v) if v.shape() == p.value.shape() => p.value = v,
        Some(v) => missing.push(format!("{name}: shape {:?} vs {:?}", v.shape(), p.value.shape())),
        None => missing.push(format!("{name}: missing")),
    });
    if !missing.is_empty() || !params.is_empty() {
        missing.extend(params.keys().map(|k| format!("{k}: unexpected")));
        return Err(Error::Checkpoint(format!("parameter mismatch: {}", missing.join(", "))));
    }
    state.model.zero_grad();
    state.optimizer = file.optimizer;
    state.stage = file.stage;
    state.stage1_iter = file.stage1_iter;
    state.stage2_iter = file.stage2_iter;
    state.object_channel = file.object_channel;
    state.target_hash = file.target_hash;
    state.history = file.history;
    Ok(state)
}

/// Writes the loss history as CSV.
pub fn write_loss_csv(history: &[LossRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("stage,iteration,loss,motion,appearance,lr\n");
    for r in history {
        let stage = match r.stage {
            Stage::One => 1,
            Stage::Two => 2,
        };
        let app = r.appearance.map(|a| a.to_string()).unwrap_or_default();
        out.push_str(&format!("{stage},{},{},{},{app},{}\n", r.iteration, r.loss, r.motion, r.lr));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
