//! On-disk layout for clips and datasets.
//!
//! ```text
//! <dataset>/dataset.json            list of clip directory names
//! <dataset>/<clip>/meta.json        name, frame count, size, sprite spec
//! <dataset>/<clip>/frame_000.png    RGB8
//! <dataset>/<clip>/mask_000.png     L8, 0/255
//! <dataset>/<clip>/confounder_000.png
//! <dataset>/<clip>/flow_fwd_000.flo flow t -> t+1
//! <dataset>/<clip>/flow_bwd_000.flo flow t+1 -> t (optional)
//! ```

use std::fs;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{load_flow_file, save_flow_file, SpriteSpec, VideoClip};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct ClipMeta {
    name: String,
    frames: usize,
    height: usize,
    width: usize,
    spec: Option<SpriteSpec>,
}

#[derive(Serialize, Deserialize)]
struct DatasetIndex {
    clips: Vec<String>,
}

pub fn save_frame_png(frame: &Array3<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = (frame.shape()[1], frame.shape()[2]);
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| (frame[[c, y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([px(0), px(1), px(2)])
    });
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_frame_png(path: impl AsRef<Path>) -> Result<Array3<f64>> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Array3::from_shape_fn((3, h, w), |(c, y, x)| {
        f64::from(img.get_pixel(x as u32, y as u32)[c]) / 255.0
    }))
}

pub fn save_mask_png(mask: &Array2<u8>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = mask.dim();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([if mask[[y as usize, x as usize]] != 0 { 255 } else { 0 }])
    });
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_mask_png(path: impl AsRef<Path>) -> Result<Array2<u8>> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Array2::from_shape_fn((h, w), |(y, x)| {
        u8::from(img.get_pixel(x as u32, y as u32)[0] >= 128)
    }))
}

pub fn save_clip(clip: &VideoClip, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = ClipMeta {
        name: clip.name.clone(),
        frames: clip.len(),
        height: clip.height(),
        width: clip.width(),
        spec: clip.spec.clone(),
    };
    let meta_path = dir.join("meta.json");
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)
        .map_err(|e| Error::io(&meta_path, e))?;
    for (t, frame) in clip.frames.iter().enumerate() {
        save_frame_png(frame, dir.join(format!("frame_{t:03}.png")))?;
        save_mask_png(&clip.gt_masks[t], dir.join(format!("mask_{t:03}.png")))?;
        if clip.confounder_masks[t].iter().any(|&v| v != 0) {
            save_mask_png(
                &clip.confounder_masks[t],
                dir.join(format!("confounder_{t:03}.png")),
            )?;
        }
    }
    for (t, f) in clip.gt_flow.iter().enumerate() {
        save_flow_file(f, dir.join(format!("flow_fwd_{t:03}.flo")))?;
    }
    for (t, f) in clip.gt_flow_backward.iter().enumerate() {
        save_flow_file(f, dir.join(format!("flow_bwd_{t:03}.flo")))?;
    }
    Ok(())
}

/// Loads a clip directory. Backward flow files are optional; when any is
/// missing the clip carries no backward flow and training falls back to
/// forward-only supervision.
pub fn load_clip(dir: impl AsRef<Path>) -> Result<VideoClip> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: ClipMeta = serde_json::from_str(&text)?;
    if meta.frames < 2 {
        return Err(Error::Empty(format!("clip {} has fewer than 2 frames", meta.name)));
    }
    let mut clip = VideoClip {
        name: meta.name,
        frames: Vec::new(),
        gt_flow: Vec::new(),
        gt_flow_backward: Vec::new(),
        gt_masks: Vec::new(),
        confounder_masks: Vec::new(),
        spec: meta.spec,
    };
    for t in 0..meta.frames {
        let frame = load_frame_png(dir.join(format!("frame_{t:03}.png")))?;
        if frame.shape()[1] != meta.height || frame.shape()[2] != meta.width {
            return Err(Error::Shape(format!(
                "frame {t} of {} is {:?}, expected {}x{}",
                clip.name,
                frame.shape(),
                meta.height,
                meta.width
            )));
        }
        clip.frames.push(frame);
        let mask_path = dir.join(format!("mask_{t:03}.png"));
        clip.gt_masks.push(if mask_path.exists() {
            load_mask_png(mask_path)?
        } else {
            Array2::zeros((meta.height, meta.width))
        });
        let conf_path = dir.join(format!("confounder_{t:03}.png"));
        clip.confounder_masks.push(if conf_path.exists() {
            load_mask_png(conf_path)?
        } else {
            Array2::zeros((meta.height, meta.width))
        });
    }
    for t in 0..meta.frames - 1 {
        clip.gt_flow
            .push(load_flow_file(dir.join(format!("flow_fwd_{t:03}.flo")))?);
    }
    let bwd: Vec<_> = (0..meta.frames - 1)
        .map(|t| dir.join(format!("flow_bwd_{t:03}.flo")))
        .collect();
    if bwd.iter().all(|p| p.exists()) {
        for p in bwd {
            clip.gt_flow_backward.push(load_flow_file(p)?);
        }
    }
    Ok(clip)
}

pub fn save_dataset(clips: &[VideoClip], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::with_capacity(clips.len());
    for clip in clips {
        let sub = sanitize(&clip.name);
        save_clip(clip, dir.join(&sub))?;
        names.push(sub);
    }
    let index_path = dir.join("dataset.json");
    let index = DatasetIndex { clips: names };
    fs::write(&index_path, serde_json::to_string_pretty(&index)?)
        .map_err(|e| Error::io(&index_path, e))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<VideoClip>> {
    let dir = dir.as_ref();
    let index_path = dir.join("dataset.json");
    let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let index: DatasetIndex = serde_json::from_str(&text)?;
    if index.clips.is_empty() {
        return Err(Error::Empty(format!("dataset {} lists no clips", dir.display())));
    }
    index.clips.iter().map(|c| load_clip(dir.join(c))).collect()
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}
