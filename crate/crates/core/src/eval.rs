//! Mean-Jaccard evaluation with optional CRF post-processing at image
//! resolution, and the per-sequence report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::appearance::{crf_refine, CrfParams};
use crate::error::{Error, Result};
use crate::net::SegmentationModel;
use crate::nn::resize_plane;
use crate::synth::VideoClip;

/// Foreground where channel `c_o` attains the per-pixel maximum; ties go
/// to the foreground.
pub fn binarize(probs: ArrayView3<'_, f64>, c_o: usize) -> Result<Array2<u8>> {
    let (c, h, w) = probs.dim();
    if c_o >= c {
        return Err(Error::Config(format!("object channel {c_o} out of range for {c} channels")));
    }
    Ok(Array2::from_shape_fn((h, w), |(y, x)| {
        let v = probs[[c_o, y, x]];
        u8::from((0..c).all(|k| probs[[k, y, x]] <= v))
    }))
}

/// Intersection over union; two empty masks score 1.
pub fn jaccard(pred: ArrayView2<'_, u8>, gt: ArrayView2<'_, u8>) -> Result<f64> {
    if pred.dim() != gt.dim() {
        return Err(Error::Shape(format!("prediction {:?} vs ground truth {:?}", pred.dim(), gt.dim())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in pred.iter().zip(gt.iter()) {
        let (a, b) = (a != 0, b != 0);
        inter += usize::from(a && b);
        union += usize::from(a || b);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Object-channel probability against its strongest competitor, after
/// bilinear upsampling of every channel to `h × w`. Thresholding at 0.5
/// reproduces argmax binarization with ties to the foreground.
pub fn upsampled_object_probability(probs: ArrayView3<'_, f64>, c_o: usize, h: usize, w: usize) -> Array2<f64> {
    let c = probs.shape()[0];
    let up: Vec<Array2<f64>> = (0..c)
        .map(|k| resize_plane(&probs.index_axis(Axis(0), k).to_owned(), (h, w)))
        .collect();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let fg = up[c_o][[y, x]];
        let other = (0..c).filter(|&k| k != c_o).map(|k| up[k][[y, x]]).fold(0.0, f64::max);
        if fg + other <= 0.0 {
            1.0
        } else {
            fg / (fg + other)
        }
    })
}

/// Binary object mask at image resolution. With `crf` set, one dense-CRF
/// pass at full resolution runs before thresholding.
pub fn post_crf(
    probs: ArrayView3<'_, f64>,
    c_o: usize,
    image: ArrayView3<'_, f64>,
    crf: Option<&CrfParams>,
) -> Result<Array2<u8>> {
    let (_, h, w) = image.dim();
    if c_o >= probs.shape()[0] {
        return Err(Error::Config(format!("object channel {c_o} out of range")));
    }
    let p = upsampled_object_probability(probs, c_o, h, w);
    let p = match crf {
        Some(params) => crf_refine(p.view(), image, params, 1.0)?.probs,
        None => p,
    };
    Ok(p.mapv(|v| u8::from(v >= 0.5)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    pub name: String,
    pub jaccard: f64,
    pub frames: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sequences: Vec<SequenceScore>,
    /// Mean over every evaluated frame.
    pub frame_average: f64,
    pub config_hash: String,
    pub object_channel: usize,
    pub flags: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn from_sequences(
        sequences: Vec<SequenceScore>,
        config_hash: String,
        object_channel: usize,
        flags: BTreeMap<String, String>,
    ) -> Self {
        let all: Vec<f64> = sequences.iter().flat_map(|s| s.frames.iter().copied()).collect();
        let frame_average = if all.is_empty() {
            0.0
        } else {
            all.iter().sum::<f64>() / all.len() as f64
        };
        EvalReport {
            sequences,
            frame_average,
            config_hash,
            object_channel,
            flags,
        }
    }

    /// Descriptions of violated report invariants (empty when consistent).
    pub fn check_invariants(&self) -> Vec<String> {
        let mut bad = Vec::new();
        let all: Vec<f64> = self.sequences.iter().flat_map(|s| s.frames.iter().copied()).collect();
        if all.is_empty() {
            bad.push("no frames evaluated".to_string());
        } else {
            let mean = all.iter().sum::<f64>() / all.len() as f64;
            if (mean - self.frame_average).abs() > 1e-12 {
                bad.push(format!("frame average {} differs from frame mean {mean}", self.frame_average));
            }
        }
        for s in &self.sequences {
            if s.frames.iter().any(|j| !(0.0..=1.0).contains(j)) {
                bad.push(format!("{}: Jaccard outside [0, 1]", s.name));
            }
            let m = s.frames.iter().sum::<f64>() / s.frames.len().max(1) as f64;
            if (m - s.jaccard).abs() > 1e-12 {
                bad.push(format!("{}: sequence mean mismatch", s.name));
            }
        }
        bad
    }

    pub fn to_text(&self) -> String {
        let width = self.sequences.iter().map(|s| s.name.len()).max().unwrap_or(8).max(9);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>6}", "Sequence", "J");
        for s in &self.sequences {
            let _ = writeln!(out, "{:<width$}  {:>6.1}", s.name, 100.0 * s.jaccard);
        }
        let _ = writeln!(out, "{:<width$}  {:>6.1}", "Frame Avg", 100.0 * self.frame_average);
        let _ = writeln!(out, "object channel: {}", self.object_channel);
        for (k, v) in &self.flags {
            let _ = writeln!(out, "{k}: {v}");
        }
        let _ = writeln!(out, "config: {}", self.config_hash);
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `<path>` (JSON) and `<path>.txt` (table).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))?;
        let txt = path.with_extension("txt");
        fs::write(&txt, self.to_text()).map_err(|e| Error::io(&txt, e))
    }
}

/// Per-frame object masks at image resolution for a clip.
pub fn predict_clip_masks(
    model: &mut SegmentationModel,
    clip: &VideoClip,
    c_o: usize,
    crf: Option<&CrfParams>,
) -> Result<Vec<Array2<u8>>> {
    let probs = predict_clip(model, clip)?;
    clip.frames
        .iter()
        .enumerate()
        .map(|(t, f)| post_crf(probs.index_axis(Axis(0), t), c_o, f.view(), crf))
        .collect()
}

/// Mask probabilities for every frame, `T × C × H × W`.
pub fn predict_clip(model: &mut SegmentationModel, clip: &VideoClip) -> Result<ndarray::Array4<f64>> {
    let frames = ndarray::stack(Axis(0), &clip.frames.iter().map(|f| f.view()).collect::<Vec<_>>())
        .map_err(|e| Error::Shape(e.to_string()))?;
    model.predict_batch(&frames)
}

/// Evaluates the object channel against ground-truth masks on every frame.
pub fn evaluate(
    model: &mut SegmentationModel,
    clips: &[VideoClip],
    c_o: usize,
    crf: Option<&CrfParams>,
    config_hash: String,
    flags: BTreeMap<String, String>,
) -> Result<EvalReport> {
    if clips.is_empty() {
        return Err(Error::Empty("no clips to evaluate".into()));
    }
    let mut sequences = Vec::with_capacity(clips.len());
    for clip in clips {
        let masks = predict_clip_masks(model, clip, c_o, crf)?;
        let frames = masks
            .iter()
            .zip(&clip.gt_masks)
            .map(|(m, g)| jaccard(m.view(), g.view()))
            .collect::<Result<Vec<_>>>()?;
        let jaccard = frames.iter().sum::<f64>() / frames.len() as f64;
        sequences.push(SequenceScore {
            name: clip.name.clone(),
            jaccard,
            frames,
        });
    }
    Ok(EvalReport::from_sequences(sequences, config_hash, c_o, flags))
}

/// Ground-truth Jaccard of every channel on every frame, averaged per
/// channel (argmax binarization at image resolution).
pub fn channel_jaccards(model: &mut SegmentationModel, clips: &[VideoClip]) -> Result<Vec<f64>> {
    let mut sums: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for clip in clips {
        let probs = predict_clip(model, clip)?;
        let c = probs.shape()[1];
        sums.resize(c, 0.0);
        for (t, gt) in clip.gt_masks.iter().enumerate() {
            for (k, s) in sums.iter_mut().enumerate() {
                let m = post_crf(probs.index_axis(Axis(0), t), k, clip.frames[t].view(), None)?;
                *s += jaccard(m.view(), gt.view())?;
            }
            n += 1;
        }
    }
    Ok(sums.into_iter().map(|s| s / n.max(1) as f64).collect())
}

/// Fraction of confounder pixels predicted as object, over all frames.
pub fn confounder_false_positive_area(
    model: &mut SegmentationModel,
    clips: &[VideoClip],
    c_o: usize,
) -> Result<f64> {
    let (mut fp, mut total) = (0usize, 0usize);
    for clip in clips {
        let masks = predict_clip_masks(model, clip, c_o, None)?;
        for (m, conf) in masks.iter().zip(&clip.confounder_masks) {
            for (&a, &b) in m.iter().zip(conf.iter()) {
                if b != 0 {
                    total += 1;
                    fp += usize::from(a != 0);
                }
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { fp as f64 / total as f64 })
}

/// Averages an image onto the mask grid, for display and CRF inputs.
pub fn image_at(frame: &Array3<f64>, h: usize, w: usize) -> Result<Array3<f64>> {
    crate::net::align_features(frame, h, w)
}
