//! Annotation-free channel and channel-count selection by motion-semantic
//! alignment: each channel's argmax region is compared with the pixels
//! whose frozen features resemble that region's pooled feature.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::appearance::{matches_background, similarity_region};
use crate::config::TunerConfig;
use crate::error::{Error, Result};
use crate::net::{align_features, AuxFeatureProvider, SegmentationModel};
use crate::synth::VideoClip;

/// Anything that maps a frame to a `C × H × W` soft segmentation.
pub trait MaskPredictor {
    fn predict_masks(&mut self, frame: &Array3<f64>) -> Result<Array3<f64>>;
}

impl MaskPredictor for SegmentationModel {
    fn predict_masks(&mut self, frame: &Array3<f64>) -> Result<Array3<f64>> {
        Ok(self.predict(frame)?.probs)
    }
}

impl<P: MaskPredictor + ?Sized> MaskPredictor for Box<P> {
    fn predict_masks(&mut self, frame: &Array3<f64>) -> Result<Array3<f64>> {
        (**self).predict_masks(frame)
    }
}

/// A channel's semantic response on one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticResponse {
    pub region: Array2<u8>,
    /// The response looks like a background match and the frame scores 0.
    pub discarded: bool,
    /// The channel claimed no pixels.
    pub degenerate: bool,
}

/// Thresholded cosine similarity between the features and the feature
/// pooled under `mask` (no dilation), with the background-match rule.
pub fn semantic_response(mask: ArrayView2<'_, f64>, aux: &Array3<f64>, threshold: f64) -> Result<SemanticResponse> {
    let (h, w) = mask.dim();
    Ok(match similarity_region(aux, mask, threshold)? {
        None => SemanticResponse {
            region: Array2::zeros((h, w)),
            discarded: false,
            degenerate: true,
        },
        Some(region) => {
            let discarded = matches_background(&region);
            SemanticResponse {
                region,
                discarded,
                degenerate: false,
            }
        }
    })
}

/// Set IoU of two binary masks; an empty union scores 0.
pub fn alignment_iou(mask: ArrayView2<'_, u8>, response: ArrayView2<'_, u8>) -> Result<f64> {
    if mask.dim() != response.dim() {
        return Err(Error::Shape(format!("mask {:?} vs response {:?}", mask.dim(), response.dim())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in mask.iter().zip(response.iter()) {
        let (a, b) = (a != 0, b != 0);
        inter += usize::from(a && b);
        union += usize::from(a || b);
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// Per-pixel argmax label; ties go to the lowest channel index.
pub fn argmax_labels(probs: &Array3<f64>) -> Array2<usize> {
    let (c, h, w) = probs.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let mut best = 0;
        for k in 1..c {
            if probs[[k, y, x]] > probs[[best, y, x]] {
                best = k;
            }
        }
        best
    })
}

/// Alignment IoU of every channel on one frame. The argmax mask guides the
/// pooling as well as the IoU: trained models can leave a third of their
/// probability on background, and a soft guide then pools mostly background.
pub fn frame_alignment(probs: &Array3<f64>, aux: &Array3<f64>, threshold: f64) -> Result<Vec<f64>> {
    let labels = argmax_labels(probs);
    (0..probs.shape()[0])
        .map(|c| {
            let bin = labels.mapv(|l| u8::from(l == c));
            let resp = semantic_response(bin.mapv(f64::from).view(), aux, threshold)?;
            if resp.degenerate || resp.discarded {
                return Ok(0.0);
            }
            alignment_iou(bin.view(), resp.region.view())
        })
        .collect()
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub per_channel_mean_iou: Vec<f64>,
    /// `<clip>:<frame>` identifiers.
    pub frames_used: Vec<String>,
    /// 0-based.
    pub selected_channel: usize,
}

impl AlignmentReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8}  {:>9}", "Channel", "Alignment");
        for (c, v) in self.per_channel_mean_iou.iter().enumerate() {
            let mark = if c == self.selected_channel { "  *" } else { "" };
            let _ = writeln!(out, "{c:<8}  {v:>9.3}{mark}");
        }
        let _ = writeln!(out, "frames: {}", self.frames_used.len());
        let _ = writeln!(out, "selected channel: {}", self.selected_channel);
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_pair(path.as_ref(), &self.to_json()?, &self.to_text())
    }
}

fn save_pair(path: &Path, json: &str, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, json).map_err(|e| Error::io(path, e))?;
    let txt = path.with_extension("txt");
    fs::write(&txt, text).map_err(|e| Error::io(&txt, e))
}

fn selected_frames(clip: &VideoClip, cfg: &TunerConfig) -> Vec<usize> {
    if cfg.first_frame_only {
        vec![0]
    } else {
        let n = cfg.frames_per_clip.unwrap_or(clip.len()).min(clip.len());
        (0..n).collect()
    }
}

/// Scores every channel over the selected frames and picks the best one.
pub fn select_object_channel(
    predictor: &mut dyn MaskPredictor,
    clips: &[VideoClip],
    provider: &dyn AuxFeatureProvider,
    cfg: &TunerConfig,
) -> Result<AlignmentReport> {
    if clips.is_empty() {
        return Err(Error::Empty("no clips to tune on".into()));
    }
    let mut sums: Vec<f64> = Vec::new();
    let mut frames_used = Vec::new();
    for clip in clips {
        for t in selected_frames(clip, cfg) {
            let frame = &clip.frames[t];
            let probs = predictor.predict_masks(frame)?;
            let (_, h, w) = probs.dim();
            let aux = align_features(&provider.features(frame), h, w)?;
            let scores = frame_alignment(&probs, &aux, cfg.threshold)?;
            if sums.is_empty() {
                sums = vec![0.0; scores.len()];
            } else if sums.len() != scores.len() {
                return Err(Error::Shape("predictor changed its channel count".into()));
            }
            for (s, v) in sums.iter_mut().zip(&scores) {
                *s += v;
            }
            frames_used.push(format!("{}:{t}", clip.name));
        }
    }
    let n = frames_used.len() as f64;
    let per_channel_mean_iou: Vec<f64> = sums.into_iter().map(|s| s / n).collect();
    let selected_channel = argmax_lowest(&per_channel_mean_iou);
    Ok(AlignmentReport {
        per_channel_mean_iou,
        frames_used,
        selected_channel,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub channels: usize,
    /// Alignment of the run's best channel; `None` when the run failed.
    pub score: Option<f64>,
    pub selected_channel: Option<usize>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub recommended: Option<usize>,
}

impl SweepReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<4}  {:>9}  {:>7}", "C", "Alignment", "Channel");
        for r in &self.rows {
            match (r.score, &r.error) {
                (Some(s), _) => {
                    let _ = writeln!(out, "{:<4}  {:>9.3}  {:>7}", r.channels, s, r.selected_channel.unwrap_or(0));
                }
                (None, e) => {
                    let _ = writeln!(out, "{:<4}  {:>9}  {}", r.channels, "failed", e.as_deref().unwrap_or(""));
                }
            }
        }
        match self.recommended {
            Some(c) => {
                let _ = writeln!(out, "recommended C: {c}");
            }
            None => {
                let _ = writeln!(out, "recommended C: none (all runs failed)");
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_pair(path.as_ref(), &serde_json::to_string_pretty(self)?, &self.to_text())
    }
}

/// Trains one model per candidate channel count and scores each by the
/// alignment of its best channel. Failed runs stay in the table.
pub fn sweep_num_channels<P, F>(
    candidates: &[usize],
    mut train_fn: F,
    clips: &[VideoClip],
    provider: &dyn AuxFeatureProvider,
    cfg: &TunerConfig,
) -> Result<SweepReport>
where
    P: MaskPredictor,
    F: FnMut(usize) -> Result<P>,
{
    if candidates.is_empty() {
        return Err(Error::Empty("no channel counts to sweep".into()));
    }
    let mut rows = Vec::with_capacity(candidates.len());
    for &c in candidates {
        let outcome = train_fn(c).and_then(|mut p| select_object_channel(&mut p, clips, provider, cfg));
        rows.push(match outcome {
            Ok(rep) => SweepRow {
                channels: c,
                score: Some(rep.per_channel_mean_iou[rep.selected_channel]),
                selected_channel: Some(rep.selected_channel),
                error: None,
            },
            Err(e) => SweepRow {
                channels: c,
                score: None,
                selected_channel: None,
                error: Some(e.to_string()),
            },
        });
    }
    let mut recommended: Option<(usize, f64)> = None;
    for r in &rows {
        if let Some(s) = r.score {
            if recommended.is_none_or(|(_, b)| s > b) {
                recommended = Some((r.channels, s));
            }
        }
    }
    Ok(SweepReport {
        rows,
        recommended: recommended.map(|(c, _)| c),
    })
}
