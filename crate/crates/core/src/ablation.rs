//! Ablation harness: trains each variant of one axis for several seeds on
//! a fixed dataset and tabulates mean Jaccard.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::eval::confounder_false_positive_area;
use crate::net::ResidualMode;
use crate::pipeline::{evaluate_state, run_stage1, run_stage2};
use crate::synth::VideoClip;
use crate::trainer::{RunOptions, TrainState, TrainingData};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AblationAxis {
    /// Residual pathway variants, stage 1 only.
    Residual,
    /// Feature merging on and off, stage 1 only.
    Merging,
    /// Stage-1 checkpoint against the refined model.
    Refinement,
    /// Refinement with CRF-only targets against CRF plus semantic constraint.
    Constraint,
    /// Post-processing CRF on both stage-1 and stage-2 models.
    Postcrf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantScore {
    pub variant: String,
    pub seed: u64,
    pub jaccard: f64,
    pub object_channel: usize,
    /// Fraction of confounder pixels predicted as object.
    pub confounder_fp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub mean_confounder_fp: f64,
}

impl VariantSummary {
    pub fn spread(&self) -> f64 {
        self.max - self.min
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub axis: AblationAxis,
    pub seeds: Vec<u64>,
    pub scores: Vec<VariantScore>,
    pub summary: Vec<VariantSummary>,
}

impl AblationReport {
    fn from_scores(axis: AblationAxis, seeds: Vec<u64>, scores: Vec<VariantScore>) -> Self {
        let mut names: Vec<String> = Vec::new();
        for s in &scores {
            if !names.contains(&s.variant) {
                names.push(s.variant.clone());
            }
        }
        let summary = names
            .into_iter()
            .map(|variant| {
                let js: Vec<f64> = scores.iter().filter(|s| s.variant == variant).map(|s| s.jaccard).collect();
                let fps: Vec<f64> = scores
                    .iter()
                    .filter(|s| s.variant == variant)
                    .map(|s| s.confounder_fp)
                    .collect();
                VariantSummary {
                    mean: js.iter().sum::<f64>() / js.len() as f64,
                    min: js.iter().copied().fold(f64::INFINITY, f64::min),
                    max: js.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    mean_confounder_fp: fps.iter().sum::<f64>() / fps.len() as f64,
                    variant,
                }
            })
            .collect();
        AblationReport {
            axis,
            seeds,
            scores,
            summary,
        }
    }

    pub fn variant(&self, name: &str) -> Option<&VariantSummary> {
        self.summary.iter().find(|v| v.variant == name)
    }

    pub fn score(&self, name: &str, seed: u64) -> Option<&VariantScore> {
        self.scores.iter().find(|s| s.variant == name && s.seed == seed)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "axis: {:?}  seeds: {:?}", self.axis, self.seeds);
        let _ = writeln!(out, "{:<22}  {:>7}  {:>7}  {:>9}", "Variant", "J mean", "spread", "conf. FP");
        for v in &self.summary {
            let _ = writeln!(
                out,
                "{:<22}  {:>7.3}  {:>7.3}  {:>9.3}",
                v.variant,
                v.mean,
                v.spread(),
                v.mean_confounder_fp
            );
        }
        if self.axis == AblationAxis::Postcrf {
            let get = |n: &str| self.variant(n).map(|v| v.mean).unwrap_or(f64::NAN);
            let _ = writeln!(out);
            let _ = writeln!(out, "{:<14}  {:>8}  {:>8}  {:>7}", "", "no CRF", "CRF", "gain");
            for (label, base) in [("stage 1", "stage1"), ("stage 1+2", "stage1+2")] {
                let (a, b) = (get(base), get(&format!("{base}+crf")));
                let _ = writeln!(out, "{label:<14}  {a:>8.3}  {b:>8.3}  {:>+7.3}", b - a);
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))?;
        let txt = path.with_extension("txt");
        fs::write(&txt, self.to_text()).map_err(|e| Error::io(&txt, e))
    }
}

fn score(
    state: &mut TrainState,
    clips: &[VideoClip],
    variant: &str,
    seed: u64,
    post_crf: bool,
) -> Result<VariantScore> {
    let report = evaluate_state(state, clips, post_crf)?;
    let c_o = report.object_channel;
    Ok(VariantScore {
        variant: variant.to_string(),
        seed,
        jaccard: report.frame_average,
        object_channel: c_o,
        confounder_fp: confounder_false_positive_area(&mut state.model, clips, c_o)?,
    })
}

/// Trains and evaluates every variant of `axis` for each seed. The dataset
/// comes from `base` and stays fixed; the seed controls initialization and
/// batch sampling.
pub fn run_ablation(
    base: &ExperimentConfig,
    clips: Vec<VideoClip>,
    axis: AblationAxis,
    seeds: &[u64],
    opts: &RunOptions,
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::Empty("ablation needs at least one seed".into()));
    }
    let data = TrainingData::new(clips, &base.net, base.train.forward_only)?;
    let mut scores = Vec::new();
    for &seed in seeds {
        let mut cfg = base.clone();
        cfg.seed = seed;
        match axis {
            AblationAxis::Residual => {
                for mode in [
                    ResidualMode::None,
                    ResidualMode::Scaling,
                    ResidualMode::Affine,
                    ResidualMode::Pixelwise,
                ] {
                    let mut c = cfg.clone();
                    c.net.residual = mode;
                    let (mut st, _) = run_stage1(c, &data, opts)?;
                    scores.push(score(&mut st, &data.clips, mode.name(), seed, false)?);
                }
            }
            AblationAxis::Merging => {
                for merging in [false, true] {
                    let mut c = cfg.clone();
                    c.net.feature_merging = merging;
                    let data = TrainingData::new(data.clips.clone(), &c.net, c.train.forward_only)?;
                    let (mut st, _) = run_stage1(c, &data, opts)?;
                    let name = if merging { "merging" } else { "no-merging" };
                    scores.push(score(&mut st, &data.clips, name, seed, false)?);
                }
            }
            AblationAxis::Refinement => {
                let (mut st, _) = run_stage1(cfg.clone(), &data, opts)?;
                scores.push(score(&mut st, &data.clips, "stage1", seed, false)?);
                let semantic = st.config.flags.semantic_constraint;
                run_stage2(&mut st, &data, semantic, None, opts)?;
                scores.push(score(&mut st, &data.clips, "stage1+2", seed, false)?);
            }
            AblationAxis::Constraint => {
                let (mut st, _) = run_stage1(cfg.clone(), &data, opts)?;
                scores.push(score(&mut st, &data.clips, "stage1", seed, false)?);
                for (semantic, name) in [(false, "crf-only"), (true, "crf+constraint")] {
                    let mut s2 = st.clone();
                    s2.config.flags.semantic_constraint = semantic;
                    run_stage2(&mut s2, &data, semantic, None, opts)?;
                    scores.push(score(&mut s2, &data.clips, name, seed, false)?);
                }
            }
            AblationAxis::Postcrf => {
                let (mut st, _) = run_stage1(cfg.clone(), &data, opts)?;
                scores.push(score(&mut st, &data.clips, "stage1", seed, false)?);
                scores.push(score(&mut st, &data.clips, "stage1+crf", seed, true)?);
                let semantic = st.config.flags.semantic_constraint;
                run_stage2(&mut st, &data, semantic, None, opts)?;
                scores.push(score(&mut st, &data.clips, "stage1+2", seed, false)?);
                scores.push(score(&mut st, &data.clips, "stage1+2+crf", seed, true)?);
            }
        }
    }
    Ok(AblationReport::from_scores(axis, seeds.to_vec(), scores))
}
