//! Appearance supervision: dense-CRF refinement of the object channel,
//! the frozen-feature semantic constraint, and the stage-2 losses.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::guided_pool;
use crate::net::cosine_map;

/// Dense CRF kernel settings. Spatial sigmas are in image pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrfParams {
    pub appearance_sigma_spatial: f64,
    /// On `[0, 1]` intensities.
    pub appearance_sigma_color: f64,
    pub appearance_weight: f64,
    pub smoothness_sigma: f64,
    pub smoothness_weight: f64,
    pub iterations: usize,
    /// Kernels are truncated at this many sigmas.
    pub truncate: f64,
}

impl Default for CrfParams {
    fn default() -> Self {
        CrfParams {
            appearance_sigma_spatial: 8.0,
            appearance_sigma_color: 0.1,
            appearance_weight: 4.0,
            smoothness_sigma: 1.0,
            smoothness_weight: 1.0,
            iterations: 5,
            truncate: 3.0,
        }
    }
}

impl CrfParams {
    fn validate(&self) -> Result<()> {
        let ok = self.appearance_sigma_spatial > 0.0
            && self.appearance_sigma_color > 0.0
            && self.smoothness_sigma > 0.0
            && self.appearance_weight >= 0.0
            && self.smoothness_weight >= 0.0
            && self.truncate > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid CRF parameters {self:?}")))
        }
    }
}

/// Object-channel probabilities after refinement, `H × W` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinedMask {
    pub probs: Array2<f64>,
}

/// Pairwise weights above this are stored; the rest are dropped.
const WEIGHT_FLOOR: f64 = 1e-6;
/// Above this many candidate pairs weights are recomputed every iteration
/// instead of stored.
const MAX_STORED_PAIRS: usize = 10_000_000;

struct Kernel<'a> {
    image: ArrayView3<'a, f64>,
    h: usize,
    w: usize,
    radius: isize,
    spatial_app: Vec<f64>,
    spatial_smooth: Vec<f64>,
    inv_2sc2: f64,
}

impl<'a> Kernel<'a> {
    fn new(image: ArrayView3<'a, f64>, params: &CrfParams, pixel_scale: f64) -> Self {
        let (_, h, w) = image.dim();
        let sigma_max = params.appearance_sigma_spatial.max(params.smoothness_sigma);
        let radius = (params.truncate * sigma_max / pixel_scale).ceil() as isize;
        let side = (2 * radius + 1) as usize;
        let mut spatial_app = vec![0.0; side * side];
        let mut spatial_smooth = vec![0.0; side * side];
        let lim2 = (params.truncate * sigma_max).powi(2);
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let d2 = ((dx * dx + dy * dy) as f64) * pixel_scale * pixel_scale;
                let idx = ((dy + radius) as usize) * side + (dx + radius) as usize;
                if (dx == 0 && dy == 0) || d2 > lim2 {
                    continue;
                }
                spatial_app[idx] = params.appearance_weight
                    * (-d2 / (2.0 * params.appearance_sigma_spatial.powi(2))).exp();
                spatial_smooth[idx] =
                    params.smoothness_weight * (-d2 / (2.0 * params.smoothness_sigma.powi(2))).exp();
            }
        }
        Kernel {
            image,
            h,
            w,
            radius,
            spatial_app,
            spatial_smooth,
            inv_2sc2: 1.0 / (2.0 * params.appearance_sigma_color.powi(2)),
        }
    }

    fn side(&self) -> usize {
        (2 * self.radius + 1) as usize
    }

    /// Calls `f(j, k_ij)` for every neighbor `j` of pixel `(y, x)`.
    fn for_neighbors(&self, y: usize, x: usize, mut f: impl FnMut(usize, f64)) {
        let r = self.radius;
        let side = self.side();
        for dy in -r..=r {
            let yy = y as isize + dy;
            if yy < 0 || yy >= self.h as isize {
                continue;
            }
            for dx in -r..=r {
                let xx = x as isize + dx;
                if xx < 0 || xx >= self.w as isize {
                    continue;
                }
                let idx = ((dy + r) as usize) * side + (dx + r) as usize;
                let (sa, ss) = (self.spatial_app[idx], self.spatial_smooth[idx]);
                if sa == 0.0 && ss == 0.0 {
                    continue;
                }
                let (yu, xu) = (yy as usize, xx as usize);
                let mut c2 = 0.0;
                for c in 0..3 {
                    let d = self.image[[c, y, x]] - self.image[[c, yu, xu]];
                    c2 += d * d;
                }
                let k = sa * (-c2 * self.inv_2sc2).exp() + ss;
                if k > WEIGHT_FLOOR {
                    f(yu * self.w + xu, k);
                }
            }
        }
    }
}

/// Runs mean-field inference and returns the two-label marginals
/// (`[foreground, background]`, each `H × W`) after every iteration.
pub fn crf_mean_field(
    mask: ArrayView2<'_, f64>,
    image: ArrayView3<'_, f64>,
    params: &CrfParams,
    pixel_scale: f64,
) -> Result<Vec<Array3<f64>>> {
    params.validate()?;
    let (h, w) = mask.dim();
    if image.dim() != (3, h, w) {
        return Err(Error::Shape(format!(
            "image {:?} does not match mask {h}x{w}",
            image.dim()
        )));
    }
    if !mask.iter().chain(image.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("CRF input contains non-finite values".into()));
    }
    if !(pixel_scale > 0.0) {
        return Err(Error::Config(format!("pixel scale must be positive, got {pixel_scale}")));
    }
    let n = h * w;
    let clamp = |p: f64| p.clamp(1e-6, 1.0 - 1e-6);
    let unary_fg: Vec<f64> = mask.iter().map(|&p| clamp(p).ln()).collect();
    let unary_bg: Vec<f64> = mask.iter().map(|&p| (1.0 - clamp(p)).ln()).collect();
    let mut q: Vec<f64> = mask.iter().map(|&p| p.clamp(0.0, 1.0)).collect();

    let kernel = Kernel::new(image, params, pixel_scale);
    let side = kernel.side();
    let stored: Option<(Vec<usize>, Vec<u32>, Vec<f32>)> = if n * side * side <= MAX_STORED_PAIRS {
        let mut offsets = Vec::with_capacity(n + 1);
        let mut idx = Vec::new();
        let mut wts = Vec::new();
        offsets.push(0);
        for y in 0..h {
            for x in 0..w {
                kernel.for_neighbors(y, x, |j, k| {
                    idx.push(j as u32);
                    wts.push(k as f32);
                });
                offsets.push(idx.len());
            }
        }
        Some((offsets, idx, wts))
    } else {
        None
    };

    let mut trace = Vec::with_capacity(params.iterations);
    for _ in 0..params.iterations {
        let mut next = vec![0.0; n];
        for i in 0..n {
            // Potts compatibility: a label is penalized by the neighbors'
            // mass on the other label.
            let (mut to_fg, mut to_bg) = (0.0, 0.0);
            let mut acc = |j: usize, k: f64| {
                to_fg += k * q[j];
                to_bg += k * (1.0 - q[j]);
            };
            match &stored {
                Some((off, idx, wts)) => {
                    for e in off[i]..off[i + 1] {
                        acc(idx[e] as usize, f64::from(wts[e]));
                    }
                }
                None => kernel.for_neighbors(i / w, i % w, acc),
            }
            let e_fg = unary_fg[i] - to_bg;
            let e_bg = unary_bg[i] - to_fg;
            let m = e_fg.max(e_bg);
            let (a, b) = ((e_fg - m).exp(), (e_bg - m).exp());
            next[i] = a / (a + b);
        }
        q = next;
        let mut marg = Array3::zeros((2, h, w));
        for (i, &v) in q.iter().enumerate() {
            marg[[0, i / w, i % w]] = v;
            marg[[1, i / w, i % w]] = 1.0 - v;
        }
        trace.push(marg);
    }
    Ok(trace)
}

/// Dense-CRF refinement of a foreground probability map. `image` must be at
/// the mask's resolution; `pixel_scale` is the number of image pixels per
/// mask pixel, so kernel widths stay in image-pixel units.
pub fn crf_refine(
    mask: ArrayView2<'_, f64>,
    image: ArrayView3<'_, f64>,
    params: &CrfParams,
    pixel_scale: f64,
) -> Result<RefinedMask> {
    let trace = crf_mean_field(mask, image, params, pixel_scale)?;
    let probs = match trace.last() {
        Some(m) => m.index_axis(Axis(0), 0).to_owned(),
        None => mask.mapv(|p| p.clamp(0.0, 1.0)),
    };
    Ok(RefinedMask { probs })
}

/// Area-averages an image onto a grid that divides it.
pub fn downsample_image(image: &Array3<f64>, height: usize, width: usize) -> Result<Array3<f64>> {
    crate::net::align_features(image, height, width)
}

/// Semantic constraint settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintParams {
    pub threshold: f64,
    /// Side of the square dilation element (odd).
    pub dilation: usize,
}

impl Default for ConstraintParams {
    fn default() -> Self {
        ConstraintParams {
            threshold: 0.3,
            dilation: 3,
        }
    }
}

/// Binary mask of pixels whose frozen features match the foreground.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticConstraintMask {
    pub binary: Array2<u8>,
    /// The constraint was discarded for this frame; `binary` is all ones.
    pub disabled: bool,
}

impl SemanticConstraintMask {
    pub fn all_ones(h: usize, w: usize) -> Self {
        SemanticConstraintMask {
            binary: Array2::ones((h, w)),
            disabled: true,
        }
    }
}

/// Pixels whose cosine similarity to the guided-pooled query reaches
/// `threshold`. `None` when the guide mask is empty.
pub fn similarity_region(
    aux: &Array3<f64>,
    guide: ArrayView2<'_, f64>,
    threshold: f64,
) -> Result<Option<Array2<u8>>> {
    let (_, h, w) = aux.dim();
    if guide.dim() != (h, w) {
        return Err(Error::Shape(format!(
            "aux features {h}x{w} do not match mask {:?}",
            guide.dim()
        )));
    }
    let pooled = guided_pool(aux.view(), guide)?;
    if pooled.degenerate {
        return Ok(None);
    }
    let cos = cosine_map(aux, &pooled.value);
    Ok(Some(cos.mapv(|c| u8::from(c >= threshold))))
}

/// Binary dilation with a `size × size` square element.
pub fn dilate(mask: &Array2<u8>, size: usize) -> Array2<u8> {
    let r = (size / 2) as isize;
    let (h, w) = mask.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        for dy in -r..=r {
            for dx in -r..=r {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w && mask[[yy as usize, xx as usize]] != 0 {
                    return 1;
                }
            }
        }
        0
    })
}

/// True when the region's bounding box is wider than 80% of the frame or
/// taller than 90% of it.
pub fn matches_background(mask: &Array2<u8>) -> bool {
    let (h, w) = mask.dim();
    let mut ys = (usize::MAX, 0);
    let mut xs = (usize::MAX, 0);
    let mut any = false;
    for ((y, x), &v) in mask.indexed_iter() {
        if v != 0 {
            any = true;
            ys = (ys.0.min(y), ys.1.max(y));
            xs = (xs.0.min(x), xs.1.max(x));
        }
    }
    if !any {
        return false;
    }
    let bw = (xs.1 - xs.0 + 1) as f64;
    let bh = (ys.1 - ys.0 + 1) as f64;
    bw > 0.8 * w as f64 || bh > 0.9 * h as f64
}

/// Discards a constraint whose extent suggests it matched the background.
pub fn background_match_guard(s: SemanticConstraintMask) -> SemanticConstraintMask {
    if !s.disabled && matches_background(&s.binary) {
        let (h, w) = s.binary.dim();
        SemanticConstraintMask::all_ones(h, w)
    } else {
        s
    }
}

/// Builds the guarded, dilated semantic constraint for a refined mask.
/// Frames with an empty refined mask or an empty match are left
/// unconstrained.
pub fn semantic_constraint(
    refined: &RefinedMask,
    aux: &Array3<f64>,
    params: &ConstraintParams,
) -> Result<SemanticConstraintMask> {
    let (h, w) = refined.probs.dim();
    let Some(region) = similarity_region(aux, refined.probs.view(), params.threshold)? else {
        return Ok(SemanticConstraintMask::all_ones(h, w));
    };
    if region.iter().all(|&v| v == 0) {
        return Ok(SemanticConstraintMask::all_ones(h, w));
    }
    let s = SemanticConstraintMask {
        binary: dilate(&region, params.dilation),
        disabled: false,
    };
    Ok(background_match_guard(s))
}

/// Elementwise product of the refined mask with the constraint.
pub fn apply_constraint(crf_out: &RefinedMask, s: &SemanticConstraintMask) -> Result<RefinedMask> {
    if crf_out.probs.dim() != s.binary.dim() {
        return Err(Error::Shape("constraint and mask sizes differ".into()));
    }
    Ok(RefinedMask {
        probs: ndarray::Zip::from(&crf_out.probs)
            .and(&s.binary)
            .map_collect(|&p, &b| if b != 0 { p } else { 0.0 }),
    })
}

/// Mean squared error between prediction and refined target.
pub fn appearance_loss(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} and target {:?} differ",
            pred.dim(),
            target.dim()
        )));
    }
    let n = pred.len() as f64;
    Ok(pred.iter().zip(target.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// Gradient of [`appearance_loss`] w.r.t. the prediction.
pub fn appearance_loss_grad(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = pred.len() as f64;
    ndarray::Zip::from(pred)
        .and(target)
        .map_collect(|&a, &b| 2.0 * (a - b) / n)
}

/// Stage-2 loss weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Weights {
    pub appearance: f64,
    pub motion: f64,
}

impl Default for Stage2Weights {
    fn default() -> Self {
        Stage2Weights {
            appearance: 2.0,
            motion: 0.1,
        }
    }
}

pub fn stage2_loss(l_app: f64, l_motion: f64, weights: Stage2Weights) -> f64 {
    weights.appearance * l_app + weights.motion * l_motion
}

/// Full target pipeline for one frame: CRF on the object-channel map, then
/// the semantic constraint when `aux` is given.
pub fn refine_target(
    object_probs: ArrayView2<'_, f64>,
    image: ArrayView3<'_, f64>,
    aux: Option<&Array3<f64>>,
    crf: &CrfParams,
    constraint: &ConstraintParams,
    pixel_scale: f64,
) -> Result<RefinedMask> {
    let refined = crf_refine(object_probs, image, crf, pixel_scale)?;
    match aux {
        None => Ok(refined),
        Some(aux) => {
            let s = semantic_constraint(&refined, aux, constraint)?;
            apply_constraint(&refined, &s)
        }
    }
}
