//! Synthetic sprite videos with analytic optical flow and exact masks.
//!
//! A clip is a textured background (optionally panning) with one sprite on
//! top. Every rendered pixel knows which material point it shows, so forward
//! and backward flow are computed from the motion model rather than estimated.
//! Frames are quantized to 8 bits at render time, which makes the PNG
//! round trip lossless.

mod flow;
mod io;

use std::f64::consts::{FRAC_PI_2, PI};

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use flow::{downsample_flow, load_flow_file, save_flow_file, FlowField, FLO_MAGIC};
pub use io::{
    load_clip, load_dataset, load_frame_png, load_mask_png, save_clip, save_dataset,
    save_frame_png, save_mask_png,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Rect,
    Ellipse,
    ArticulatedTwoPart,
    DeformableBlob,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Texture {
    Flat,
    Noise,
    Stripes,
}

/// A second region that moves exactly like the sprite but looks different.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Confounder {
    None,
    Reflection,
    Shadow,
}

/// Rigid limb hinged on the body of an articulated sprite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimbSpec {
    /// Pivot in body-local coordinates (relative to the body center).
    pub pivot: [f64; 2],
    pub length: f64,
    pub width: f64,
    /// Limb direction at frame 0, radians (0 points along +x).
    pub angle: f64,
}

impl Default for LimbSpec {
    fn default() -> Self {
        LimbSpec {
            pivot: [8.0, 0.0],
            length: 14.0,
            width: 5.0,
            angle: 0.0,
        }
    }
}

fn default_extent() -> f64 {
    0.5
}

/// Everything needed to render one sprite clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpriteSpec {
    pub shape_kind: ShapeKind,
    pub texture: Texture,
    /// Body width and height in pixels.
    pub size: [f64; 2],
    /// Body center `(x, y)` at frame 0.
    pub start: [f64; 2],
    /// Per-frame translation `(dx, dy)` in pixels.
    pub trajectory: [f64; 2],
    /// Limb angular velocity (rad/frame) for articulated sprites, phase
    /// velocity of the boundary wave for deformable blobs.
    #[serde(default)]
    pub part_motion: Option<f64>,
    #[serde(default)]
    pub limb: LimbSpec,
    pub confounder: Confounder,
    /// sRGB body color in `[0, 1]`.
    pub color: [f64; 3],
    /// Background translation per frame; must be integral.
    #[serde(default)]
    pub camera_pan: [f64; 2],
    /// Reflection mirror line (image row). Defaults to the frame middle.
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Fraction of the mirrored body height that stays visible below the horizon.
    #[serde(default = "default_extent")]
    pub reflection_extent: f64,
}

impl SpriteSpec {
    /// A flat-colored rectangle translating by `trajectory`.
    pub fn rect(size: [f64; 2], start: [f64; 2], trajectory: [f64; 2], color: [f64; 3]) -> Self {
        SpriteSpec {
            shape_kind: ShapeKind::Rect,
            texture: Texture::Flat,
            size,
            start,
            trajectory,
            part_motion: None,
            limb: LimbSpec::default(),
            confounder: Confounder::None,
            color,
            camera_pan: [0.0, 0.0],
            horizon: None,
            reflection_extent: default_extent(),
        }
    }
}

/// A rendered clip with its ground truth.
#[derive(Clone, Debug)]
pub struct VideoClip {
    pub name: String,
    /// `T` frames, each `3 × h × w` in `[0, 1]`.
    pub frames: Vec<Array3<f64>>,
    /// Flow from frame `t` to `t+1`, `T-1` entries at image resolution.
    pub gt_flow: Vec<FlowField>,
    /// Flow from frame `t+1` back to `t`, `T-1` entries.
    pub gt_flow_backward: Vec<FlowField>,
    /// Sprite masks (confounder pixels are 0).
    pub gt_masks: Vec<Array2<u8>>,
    /// Confounder masks, all-zero when the clip has none.
    pub confounder_masks: Vec<Array2<u8>>,
    pub spec: Option<SpriteSpec>,
}

impl VideoClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames[0].shape()[2]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Part {
    Body,
    Limb,
    Confounder,
}

#[derive(Clone, Copy, Debug)]
struct Hit {
    part: Part,
    /// Material coordinates used for texturing: body/limb/confounder-local
    /// position, or `(rho, theta)` for blob bodies.
    local: [f64; 2],
}

const BLOB_AMPLITUDE: f64 = 0.18;
const BLOB_LOBES: f64 = 3.0;
const SHADOW_GAP: f64 = 2.0;
const SHADOW_HEIGHT: f64 = 0.35;

struct Renderer<'a> {
    spec: &'a SpriteSpec,
    h: usize,
    w: usize,
    seed: u64,
    horizon: f64,
}

impl<'a> Renderer<'a> {
    fn center(&self, t: f64) -> [f64; 2] {
        let s = self.spec;
        [s.start[0] + t * s.trajectory[0], s.start[1] + t * s.trajectory[1]]
    }

    fn limb_angle(&self, t: f64) -> f64 {
        self.spec.limb.angle + t * self.spec.part_motion.unwrap_or(0.0)
    }

    fn pivot(&self, t: f64) -> [f64; 2] {
        let c = self.center(t);
        [c[0] + self.spec.limb.pivot[0], c[1] + self.spec.limb.pivot[1]]
    }

    fn blob_radius(&self, theta: f64, t: f64) -> f64 {
        let r0 = 0.5 * self.spec.size[0].min(self.spec.size[1]);
        let phase = t * self.spec.part_motion.unwrap_or(0.0);
        r0 * (1.0 + BLOB_AMPLITUDE * (BLOB_LOBES * theta + phase).sin())
    }

    fn inside_body_shape(&self, u: [f64; 2]) -> bool {
        let [w, h] = self.spec.size;
        match self.spec.shape_kind {
            ShapeKind::Rect | ShapeKind::ArticulatedTwoPart => {
                u[0] >= -w / 2.0 && u[0] < w / 2.0 && u[1] >= -h / 2.0 && u[1] < h / 2.0
            }
            ShapeKind::Ellipse => {
                let (a, b) = (w / 2.0, h / 2.0);
                (u[0] / a).powi(2) + (u[1] / b).powi(2) <= 1.0
            }
            ShapeKind::DeformableBlob => unreachable!("blob handled separately"),
        }
    }

    fn reflection_center(&self, t: f64) -> [f64; 2] {
        let s = self.spec;
        [
            s.start[0] + t * s.trajectory[0],
            2.0 * self.horizon - s.start[1] + t * s.trajectory[1],
        ]
    }

    fn shadow_center(&self, t: f64) -> [f64; 2] {
        let c = self.center(t);
        let sh = self.spec.size[1] * SHADOW_HEIGHT;
        [c[0], c[1] + self.spec.size[1] / 2.0 + SHADOW_GAP + sh / 2.0]
    }

    fn sprite_hit(&self, t: f64, q: [f64; 2]) -> Option<Hit> {
        let s = self.spec;
        if s.shape_kind == ShapeKind::ArticulatedTwoPart {
            let p = self.pivot(t);
            let a = self.limb_angle(t);
            let d = [q[0] - p[0], q[1] - p[1]];
            let (sin, cos) = a.sin_cos();
            let u = [cos * d[0] + sin * d[1], -sin * d[0] + cos * d[1]];
            if u[0] >= 0.0 && u[0] <= s.limb.length && u[1].abs() <= s.limb.width / 2.0 {
                return Some(Hit {
                    part: Part::Limb,
                    local: u,
                });
            }
        }
        let c = self.center(t);
        let u = [q[0] - c[0], q[1] - c[1]];
        if s.shape_kind == ShapeKind::DeformableBlob {
            let rho = (u[0] * u[0] + u[1] * u[1]).sqrt();
            let theta = u[1].atan2(u[0]);
            let r = self.blob_radius(theta, t);
            return (rho <= r).then_some(Hit {
                part: Part::Body,
                local: [rho / r, theta],
            });
        }
        self.inside_body_shape(u).then_some(Hit {
            part: Part::Body,
            local: u,
        })
    }

    fn confounder_hit(&self, t: f64, q: [f64; 2]) -> Option<Hit> {
        let s = self.spec;
        match s.confounder {
            Confounder::None => None,
            Confounder::Reflection => {
                let r = self.reflection_center(t);
                let mirrored = [q[0] - r[0], r[1] - q[1]];
                let visible = q[1] - r[1] < -s.size[1] / 2.0 + s.reflection_extent * s.size[1];
                (visible && q[1] > self.horizon && self.inside_body_shape(mirrored)).then_some(
                    Hit {
                        part: Part::Confounder,
                        local: mirrored,
                    },
                )
            }
            Confounder::Shadow => {
                let c = self.shadow_center(t);
                let u = [q[0] - c[0], q[1] - c[1]];
                let (a, b) = (s.size[0] / 2.0, s.size[1] * SHADOW_HEIGHT / 2.0);
                ((u[0] / a).powi(2) + (u[1] / b).powi(2) <= 1.0).then_some(Hit {
                    part: Part::Confounder,
                    local: u,
                })
            }
        }
    }

    /// Position of the material point seen at `q` (time `t`) at time `t + dt`,
    /// minus `q`.
    fn displacement(&self, hit: Hit, t: f64, dt: f64, q: [f64; 2]) -> [f64; 2] {
        let s = self.spec;
        match (hit.part, s.shape_kind) {
            (Part::Limb, _) => {
                let p0 = self.pivot(t);
                let p1 = self.pivot(t + dt);
                let da = s.part_motion.unwrap_or(0.0) * dt;
                let (sin, cos) = da.sin_cos();
                let d = [q[0] - p0[0], q[1] - p0[1]];
                let rotated = [cos * d[0] - sin * d[1], sin * d[0] + cos * d[1]];
                [p1[0] + rotated[0] - q[0], p1[1] + rotated[1] - q[1]]
            }
            (Part::Body, ShapeKind::DeformableBlob) => {
                let [rho_n, theta] = hit.local;
                let c1 = self.center(t + dt);
                let r1 = self.blob_radius(theta, t + dt);
                [
                    c1[0] + rho_n * r1 * theta.cos() - q[0],
                    c1[1] + rho_n * r1 * theta.sin() - q[1],
                ]
            }
            _ => [s.trajectory[0] * dt, s.trajectory[1] * dt],
        }
    }

    fn sprite_color(&self, hit: Hit) -> [f64; 3] {
        let s = self.spec;
        let base = match hit.part {
            Part::Confounder => match s.confounder {
                Confounder::Reflection => reflect_color(s.color),
                _ => [0.12, 0.12, 0.14],
            },
            _ => s.color,
        };
        let u = hit.local;
        match s.texture {
            Texture::Flat => base,
            Texture::Noise => {
                let (ix, iy) = (u[0].floor() as i64, u[1].floor() as i64);
                let mut out = base;
                for (ch, v) in out.iter_mut().enumerate() {
                    let n = hash01(self.seed ^ 0x5eed ^ ch as u64, ix, iy);
                    *v += 0.16 * (n - 0.5);
                }
                out
            }
            Texture::Stripes => {
                let on = (u[0] * PI / 3.0).sin() >= 0.0;
                let k = if on { 1.0 } else { 0.7 };
                [base[0] * k, base[1] * k, base[2] * k]
            }
        }
    }

    fn background(&self, t: f64, x: f64, y: f64) -> [f64; 3] {
        let s = self.spec;
        let bx = x - s.camera_pan[0] * t;
        let by = y - s.camera_pan[1] * t;
        let water = s.confounder == Confounder::Reflection && y > self.horizon;
        let base = if water {
            [0.40, 0.42, 0.45]
        } else {
            [0.50, 0.50, 0.47]
        };
        let mut out = base;
        for (ch, v) in out.iter_mut().enumerate() {
            let coarse = value_noise(self.seed.wrapping_add(ch as u64 * 7919), bx, by, 6.0);
            let fine = hash01(self.seed.wrapping_add(101 + ch as u64), bx as i64, by as i64);
            *v += 0.10 * (coarse - 0.5) + 0.04 * (fine - 0.5);
        }
        out
    }

    /// Conservative bounding box of everything drawn at time `t`.
    fn support_bbox(&self, t: f64) -> [f64; 4] {
        let s = self.spec;
        let c = self.center(t);
        let (hw, hh) = match s.shape_kind {
            ShapeKind::DeformableBlob => {
                let r = 0.5 * s.size[0].min(s.size[1]) * (1.0 + BLOB_AMPLITUDE);
                (r, r)
            }
            _ => (s.size[0] / 2.0, s.size[1] / 2.0),
        };
        let mut bb = [c[0] - hw, c[1] - hh, c[0] + hw, c[1] + hh];
        let mut include = |x: f64, y: f64| {
            bb[0] = bb[0].min(x);
            bb[1] = bb[1].min(y);
            bb[2] = bb[2].max(x);
            bb[3] = bb[3].max(y);
        };
        if s.shape_kind == ShapeKind::ArticulatedTwoPart {
            let p = self.pivot(t);
            let (sin, cos) = self.limb_angle(t).sin_cos();
            for (ux, uy) in [
                (0.0, -s.limb.width / 2.0),
                (0.0, s.limb.width / 2.0),
                (s.limb.length, -s.limb.width / 2.0),
                (s.limb.length, s.limb.width / 2.0),
            ] {
                include(p[0] + cos * ux - sin * uy, p[1] + sin * ux + cos * uy);
            }
        }
        match s.confounder {
            Confounder::None => {}
            Confounder::Reflection => {
                let r = self.reflection_center(t);
                include(r[0] - hw, r[1] - hh);
                include(r[0] + hw, r[1] + hh);
            }
            Confounder::Shadow => {
                let sc = self.shadow_center(t);
                let sh = s.size[1] * SHADOW_HEIGHT / 2.0;
                include(sc[0] - hw, sc[1] - sh);
                include(sc[0] + hw, sc[1] + sh);
            }
        }
        bb
    }
}

fn reflect_color(rgb: [f64; 3]) -> [f64; 3] {
    let (h, s, v) = rgb_to_hsv(rgb);
    hsv_to_rgb(((h + 0.5) % 1.0, s, v * 0.5))
}

pub(crate) fn rgb_to_hsv([r, g, b]: [f64; 3]) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

pub(crate) fn hsv_to_rgb((h, s, v): (f64, f64, f64)) -> [f64; 3] {
    let h6 = h * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match (i as i64).rem_euclid(6) {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash01(seed: u64, ix: i64, iy: i64) -> f64 {
    let k = splitmix(seed ^ splitmix(ix as u64 ^ splitmix(iy as u64)));
    (k >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(seed: u64, x: f64, y: f64, cell: f64) -> f64 {
    let (gx, gy) = (x / cell, y / cell);
    let (x0, y0) = (gx.floor(), gy.floor());
    let (fx, fy) = (gx - x0, gy - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let (sx, sy) = (smooth(fx), smooth(fy));
    let v00 = hash01(seed, x0, y0);
    let v10 = hash01(seed, x0 + 1, y0);
    let v01 = hash01(seed, x0, y0 + 1);
    let v11 = hash01(seed, x0 + 1, y0 + 1);
    let top = v00 + (v10 - v00) * sx;
    let bottom = v01 + (v11 - v01) * sx;
    top + (bottom - top) * sy
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn validate(spec: &SpriteSpec, frames: usize, h: usize, w: usize) -> Result<()> {
    if frames < 2 {
        return Err(Error::InvalidSprite(format!("need at least 2 frames, got {frames}")));
    }
    if h == 0 || w == 0 {
        return Err(Error::InvalidSprite("empty frame size".into()));
    }
    if spec.size.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidSprite("sprite size must be positive".into()));
    }
    if spec.camera_pan.iter().any(|v| v.fract() != 0.0) {
        return Err(Error::InvalidSprite("camera pan must be integral".into()));
    }
    if spec.confounder != Confounder::None && spec.shape_kind == ShapeKind::ArticulatedTwoPart
    {
        return Err(Error::InvalidSprite(
            "confounders are only supported for single-part sprites".into(),
        ));
    }
    if spec.confounder == Confounder::Reflection && spec.shape_kind == ShapeKind::DeformableBlob {
        return Err(Error::InvalidSprite(
            "reflections are only supported for rect and ellipse sprites".into(),
        ));
    }
    let horizon = spec.horizon.unwrap_or(h as f64 / 2.0);
    let r = Renderer {
        spec,
        h,
        w,
        seed: 0,
        horizon,
    };
    for t in 0..frames {
        let bb = r.support_bbox(t as f64);
        if bb[0] < 0.0 || bb[1] < 0.0 || bb[2] >= w as f64 || bb[3] >= h as f64 {
            return Err(Error::InvalidSprite(format!(
                "sprite leaves the {w}x{h} frame at frame {t}: bbox x {:.1}..{:.1}, y {:.1}..{:.1}",
                bb[0], bb[2], bb[1], bb[3]
            )));
        }
        if spec.confounder == Confounder::Reflection {
            let c = r.center(t as f64);
            let top_of_reflection = r.reflection_center(t as f64)[1] - spec.size[1] / 2.0;
            if c[1] + spec.size[1] / 2.0 > horizon || top_of_reflection < horizon {
                return Err(Error::InvalidSprite(format!(
                    "sprite must stay above the horizon at row {horizon} (frame {t})"
                )));
            }
        }
    }
    Ok(())
}

/// Renders a clip of `frames` frames at `h × w`.
///
/// Deterministic in `(spec, frames, h, w, seed)`.
pub fn generate_clip(
    spec: &SpriteSpec,
    frames: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<VideoClip> {
    validate(spec, frames, h, w)?;
    let r = Renderer {
        spec,
        h,
        w,
        seed: splitmix(seed),
        horizon: spec.horizon.unwrap_or(h as f64 / 2.0),
    };
    let mut clip = VideoClip {
        name: format!("clip-{seed}"),
        frames: Vec::with_capacity(frames),
        gt_flow: Vec::with_capacity(frames - 1),
        gt_flow_backward: Vec::with_capacity(frames - 1),
        gt_masks: Vec::with_capacity(frames),
        confounder_masks: Vec::with_capacity(frames),
        spec: Some(spec.clone()),
    };
    for t in 0..frames {
        let tf = t as f64;
        let mut img = Array3::<f64>::zeros((3, h, w));
        let mut mask = Array2::<u8>::zeros((h, w));
        let mut conf = Array2::<u8>::zeros((h, w));
        let mut fwd = FlowField::zeros(h, w);
        let mut bwd = FlowField::zeros(h, w);
        for y in 0..r.h {
            for x in 0..r.w {
                let q = [x as f64, y as f64];
                let sprite = r.sprite_hit(tf, q);
                let confounder = r.confounder_hit(tf, q);
                if sprite.is_some() && confounder.is_some() {
                    return Err(Error::InvalidSprite(format!(
                        "confounder overlaps the sprite at ({x}, {y}) in frame {t}"
                    )));
                }
                let (color, f, b) = match sprite.or(confounder) {
                    Some(hit) => {
                        if hit.part == Part::Confounder {
                            conf[[y, x]] = 1;
                        } else {
                            mask[[y, x]] = 1;
                        }
                        (
                            r.sprite_color(hit),
                            r.displacement(hit, tf, 1.0, q),
                            r.displacement(hit, tf, -1.0, q),
                        )
                    }
                    None => {
                        let p = spec.camera_pan;
                        (r.background(tf, q[0], q[1]), p, [-p[0], -p[1]])
                    }
                };
                for ch in 0..3 {
                    img[[ch, y, x]] = quantize(color[ch]);
                }
                fwd.values[[0, y, x]] = f[0] as f32;
                fwd.values[[1, y, x]] = f[1] as f32;
                bwd.values[[0, y, x]] = b[0] as f32;
                bwd.values[[1, y, x]] = b[1] as f32;
            }
        }
        clip.frames.push(img);
        clip.gt_masks.push(mask);
        clip.confounder_masks.push(conf);
        if t + 1 < frames {
            clip.gt_flow.push(fwd);
        }
        if t > 0 {
            clip.gt_flow_backward.push(bwd);
        }
    }
    Ok(clip)
}

/// Families of synthetic datasets used for training and the ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// Flat rectangles and ellipses translating over a static background.
    Rigid,
    /// Body plus a rotating limb of the same color.
    Articulated,
    /// Rigid sprite above a horizon with a hue-shifted partial reflection.
    Reflection,
    /// Nothing moves.
    Static,
}

/// Recipe for a whole synthetic dataset, readable from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    #[serde(default = "DatasetSpec::default_clips")]
    pub clips: usize,
    #[serde(default = "DatasetSpec::default_frames")]
    pub frames: usize,
    #[serde(default = "DatasetSpec::default_side")]
    pub height: usize,
    #[serde(default = "DatasetSpec::default_side")]
    pub width: usize,
}

impl DatasetSpec {
    fn default_clips() -> usize {
        24
    }
    fn default_frames() -> usize {
        8
    }
    fn default_side() -> usize {
        64
    }

    pub fn new(kind: DatasetKind, clips: usize) -> Self {
        DatasetSpec {
            kind,
            clips,
            frames: Self::default_frames(),
            height: Self::default_side(),
            width: Self::default_side(),
        }
    }
}

fn random_color(rng: &mut impl Rng) -> [f64; 3] {
    let hue = rng.random_range(0.0..1.0);
    hsv_to_rgb((hue, rng.random_range(0.7..0.95), rng.random_range(0.8..0.95)))
}

/// Draws a random sprite of the given family that fits the frame.
pub fn sample_sprite(
    kind: DatasetKind,
    frames: usize,
    h: usize,
    w: usize,
    rng: &mut impl Rng,
) -> Result<SpriteSpec> {
    let steps = (frames.max(2) - 1) as f64;
    for _ in 0..1000 {
        let color = random_color(rng);
        let spec = match kind {
            DatasetKind::Rigid | DatasetKind::Static => {
                let shape = if rng.random_bool(0.5) {
                    ShapeKind::Rect
                } else {
                    ShapeKind::Ellipse
                };
                let size = [
                    rng.random_range(18..=26) as f64,
                    rng.random_range(18..=26) as f64,
                ];
                let traj = if kind == DatasetKind::Static {
                    [0.0, 0.0]
                } else {
                    loop {
                        let v = [
                            rng.random_range(-3i32..=3) as f64,
                            rng.random_range(-2i32..=2) as f64,
                        ];
                        if v[0].abs() + v[1].abs() >= 2.0 {
                            break v;
                        }
                    }
                };
                let start = start_for(size, traj, steps, h, w, rng);
                SpriteSpec {
                    shape_kind: shape,
                    ..SpriteSpec::rect(size, start, traj, color)
                }
            }
            DatasetKind::Articulated => {
                // A leg hinged under the body swings backward against the
                // direction of travel, so its lower part moves slower than
                // the body, stands still or moves the other way.
                let size = [
                    rng.random_range(14..=18) as f64,
                    rng.random_range(14..=18) as f64,
                ];
                let vx = if rng.random_bool(0.5) { 2.0 } else { -2.0 };
                let traj = [vx, rng.random_range(-1i32..=1) as f64];
                let length = rng.random_range(18.0..22.0);
                let tip_speed = rng.random_range(3.0..3.6);
                let omega = vx.signum() * tip_speed / length;
                let limb = LimbSpec {
                    pivot: [0.0, size[1] / 2.0 - 1.0],
                    length,
                    width: 8.0,
                    angle: FRAC_PI_2 - omega * steps / 2.0,
                };
                let swing = (omega.abs() * steps / 2.0).sin() * length + limb.width / 2.0;
                let ext = [size[0].max(2.0 * swing), size[1] + 2.0 * length];
                let start = start_for(ext, traj, steps, h, w, rng);
                SpriteSpec {
                    shape_kind: ShapeKind::ArticulatedTwoPart,
                    part_motion: Some(omega),
                    limb,
                    ..SpriteSpec::rect(size, start, traj, color)
                }
            }
            DatasetKind::Reflection => {
                let shape = if rng.random_bool(0.5) {
                    ShapeKind::Rect
                } else {
                    ShapeKind::Ellipse
                };
                let size = [
                    rng.random_range(18..=24) as f64,
                    rng.random_range(14..=18) as f64,
                ];
                let vx = loop {
                    let v = rng.random_range(-3i32..=3);
                    if v != 0 {
                        break v as f64;
                    }
                };
                let horizon = (h / 2) as f64;
                let gap = rng.random_range(1..=4) as f64;
                let cy = horizon - gap - size[1] / 2.0;
                let span = vx.abs() * steps + size[0];
                let x0 = rng.random_range(1.0..(w as f64 - span - 1.0).max(1.5));
                let cx = if vx > 0.0 {
                    x0 + size[0] / 2.0
                } else {
                    x0 + span - size[0] / 2.0
                };
                SpriteSpec {
                    shape_kind: shape,
                    confounder: Confounder::Reflection,
                    horizon: Some(horizon),
                    ..SpriteSpec::rect(size, [cx.round(), cy.round()], [vx, 0.0], color)
                }
            }
        };
        if validate(&spec, frames, h, w).is_ok() {
            return Ok(spec);
        }
    }
    Err(Error::InvalidSprite(format!(
        "could not place a {kind:?} sprite in a {w}x{h} frame"
    )))
}

fn start_for(
    extent: [f64; 2],
    traj: [f64; 2],
    steps: f64,
    h: usize,
    w: usize,
    rng: &mut impl Rng,
) -> [f64; 2] {
    let mut start = [0.0; 2];
    for (axis, dim) in [w as f64, h as f64].into_iter().enumerate() {
        let travel = traj[axis] * steps;
        let lo = extent[axis] / 2.0 + 1.0 - travel.min(0.0);
        let hi = dim - extent[axis] / 2.0 - 1.0 - travel.max(0.0);
        start[axis] = if hi > lo {
            rng.random_range(lo..hi).round()
        } else {
            (dim / 2.0).round()
        };
    }
    start
}

/// Generates `spec.clips` clips of one family; clip `i` uses seed `seed + i`.
pub fn generate_dataset(spec: &DatasetSpec, seed: u64) -> Result<Vec<VideoClip>> {
    if spec.clips == 0 {
        return Err(Error::Empty("dataset with zero clips".into()));
    }
    (0..spec.clips)
        .map(|i| {
            let clip_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(clip_seed);
            let sprite = sample_sprite(spec.kind, spec.frames, spec.height, spec.width, &mut rng)?;
            let mut clip = generate_clip(&sprite, spec.frames, spec.height, spec.width, clip_seed)?;
            clip.name = format!("{}-{:03}", kind_name(spec.kind), i);
            Ok(clip)
        })
        .collect()
}

fn kind_name(kind: DatasetKind) -> &'static str {
    match kind {
        DatasetKind::Rigid => "rigid",
        DatasetKind::Articulated => "articulated",
        DatasetKind::Reflection => "reflection",
        DatasetKind::Static => "static",
    }
}
