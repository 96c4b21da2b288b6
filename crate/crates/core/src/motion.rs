//! Flow reconstruction from soft masks: guided pooling through the pointwise
//! MLPs, piecewise-constant broadcast, residual composition and the L1
//! motion loss, with manual backward passes for training.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{pair_features, unpair_gradient, ResidualFlowStack, ResidualMode, SegmentationModel};
use crate::nn::Mlp;

/// Mask mass at or below which a channel is treated as empty.
pub const POOL_EPS: f64 = 1e-6;

/// Result of pooling a field under one soft mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Pooled {
    pub value: Array1<f64>,
    /// The mask claimed no pixels; `value` is zero.
    pub degenerate: bool,
}

/// Mask-weighted spatial mean of every channel of `field` (`K × H × W`).
pub fn guided_pool(field: ArrayView3<'_, f64>, mask: ArrayView2<'_, f64>) -> Result<Pooled> {
    let (k, h, w) = field.dim();
    if mask.dim() != (h, w) {
        return Err(Error::Shape(format!(
            "mask {:?} does not match field {h}x{w}",
            mask.dim()
        )));
    }
    let total = mask.sum();
    if total <= POOL_EPS {
        return Ok(Pooled {
            value: Array1::zeros(k),
            degenerate: true,
        });
    }
    let value = Array1::from_shape_fn(k, |c| (&field.index_axis(Axis(0), c) * &mask).sum() / total);
    Ok(Pooled {
        value,
        degenerate: false,
    })
}

/// One pooled flow vector per mask channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PooledFlowVectors {
    /// `C × 2`.
    pub per_channel: Array2<f64>,
    pub degenerate: Vec<bool>,
}

fn field_rows(field: ArrayView3<'_, f64>) -> Array2<f64> {
    let (k, h, w) = field.dim();
    let mut rows = Array2::zeros((h * w, k));
    for c in 0..k {
        for (p, v) in field.index_axis(Axis(0), c).iter().enumerate() {
            rows[[p, c]] = *v;
        }
    }
    rows
}

fn rows_field(rows: &Array2<f64>, h: usize, w: usize) -> Array3<f64> {
    let k = rows.ncols();
    Array3::from_shape_fn((k, h, w), |(c, y, x)| rows[[y * w + x, c]])
}

/// Applies `phi1` pointwise to the flow, pools it under each channel and
/// maps every pooled vector through `phi2`. Empty channels yield zero.
pub fn pool_channel_flows(
    flow: ArrayView3<'_, f64>,
    masks: ArrayView3<'_, f64>,
    mut phi1: impl FnMut(&Array2<f64>) -> Array2<f64>,
    mut phi2: impl FnMut(&Array2<f64>) -> Array2<f64>,
) -> Result<PooledFlowVectors> {
    let (kc, h, w) = flow.dim();
    if kc != 2 {
        return Err(Error::Shape(format!("flow needs 2 channels, got {kc}")));
    }
    let (c, mh, mw) = masks.dim();
    if (mh, mw) != (h, w) {
        return Err(Error::Shape(format!(
            "masks {mh}x{mw} do not match flow {h}x{w}"
        )));
    }
    let g = rows_field(&phi1(&field_rows(flow)), h, w);
    let mut raw = Array2::zeros((c, 2));
    let mut degenerate = vec![false; c];
    for ch in 0..c {
        let p = guided_pool(g.view(), masks.index_axis(Axis(0), ch))?;
        raw.row_mut(ch).assign(&p.value);
        degenerate[ch] = p.degenerate;
    }
    let mut per_channel = phi2(&raw);
    for (ch, &d) in degenerate.iter().enumerate() {
        if d {
            per_channel.row_mut(ch).fill(0.0);
        }
    }
    Ok(PooledFlowVectors {
        per_channel,
        degenerate,
    })
}

/// `Σ_c pooled[c] ⊗ masks[c]`, a `2 × H × W` field.
pub fn broadcast_flows(pooled: &Array2<f64>, masks: ArrayView3<'_, f64>) -> Result<Array3<f64>> {
    let (c, h, w) = masks.dim();
    if pooled.dim() != (c, 2) {
        return Err(Error::Shape(format!(
            "pooled vectors {:?} do not match {c} mask channels",
            pooled.dim()
        )));
    }
    let mut out = Array3::zeros((2, h, w));
    for ch in 0..c {
        let m = masks.index_axis(Axis(0), ch);
        for k in 0..2 {
            out.index_axis_mut(Axis(0), k).scaled_add(pooled[[ch, k]], &m);
        }
    }
    Ok(out)
}

/// `Σ_c stack[c] ⊙ masks[c]`, a `2 × H × W` field.
pub fn compose_residual(stack: &ResidualFlowStack, masks: ArrayView3<'_, f64>) -> Result<Array3<f64>> {
    let (c, h, w) = masks.dim();
    if stack.values.dim() != (c, 2, h, w) {
        return Err(Error::Shape(format!(
            "residual stack {:?} does not match masks {:?}",
            stack.values.dim(),
            masks.dim()
        )));
    }
    let mut out = Array3::zeros((2, h, w));
    for ch in 0..c {
        let m = masks.index_axis(Axis(0), ch);
        for k in 0..2 {
            let r = stack.values.slice(s![ch, k, .., ..]);
            let mut o = out.index_axis_mut(Axis(0), k);
            o += &(&r * &m);
        }
    }
    Ok(out)
}

/// Piecewise, residual and total flow for one direction-sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructedFlow {
    pub piecewise: Array3<f64>,
    pub residual: Array3<f64>,
    pub total: Array3<f64>,
}

impl ReconstructedFlow {
    pub fn new(piecewise: Array3<f64>, residual: Array3<f64>) -> Self {
        let total = &piecewise + &residual;
        ReconstructedFlow {
            piecewise,
            residual,
            total,
        }
    }
}

/// Mean over pixels of `|Δdx| + |Δdy|`.
pub fn motion_loss(total: ArrayView3<'_, f64>, target: ArrayView3<'_, f64>) -> Result<f64> {
    if total.dim() != target.dim() || total.shape()[0] != 2 {
        return Err(Error::Shape(format!(
            "flow shapes {:?} and {:?} differ",
            total.dim(),
            target.dim()
        )));
    }
    let hw = (total.shape()[1] * total.shape()[2]) as f64;
    Ok(total
        .iter()
        .zip(target.iter())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / hw)
}

/// Per-sample L1 motion losses for a batch and the gradient of each
/// sample's loss w.r.t. its reconstruction.
pub fn motion_loss_batch(total: &Array4<f64>, target: &Array4<f64>) -> (Vec<f64>, Array4<f64>) {
    let (n, _, h, w) = total.dim();
    let hw = (h * w) as f64;
    let diff = total - target;
    let losses = (0..n)
        .map(|j| diff.index_axis(Axis(0), j).iter().map(|d| d.abs()).sum::<f64>() / hw)
        .collect();
    let grad = diff.mapv(|d| {
        if d > 0.0 {
            1.0 / hw
        } else if d < 0.0 {
            -1.0 / hw
        } else {
            0.0
        }
    });
    (losses, grad)
}

/// Batched reconstruction output; all flows are `N × 2 × H × W`.
#[derive(Clone, Debug)]
pub struct BatchReconstruction {
    pub piecewise: Array4<f64>,
    pub residual: Array4<f64>,
    pub total: Array4<f64>,
    /// `N × C × 2`.
    pub pooled: Array3<f64>,
    pub degenerate: Vec<Vec<bool>>,
}

/// Intermediate values kept for the backward pass.
pub struct DecoderCache {
    mode: ResidualMode,
    masks: Array4<f64>,
    g_rows: Array2<f64>,
    sums: Array2<f64>,
    raw: Array3<f64>,
    pooled: Array3<f64>,
    degenerate: Vec<Vec<bool>>,
    /// Per-channel stack in use (`N × 2C × H × W`): residual flows or
    /// scaling factors depending on the mode.
    stack: Option<Array4<f64>>,
}

fn coord_basis(h: usize, w: usize) -> Array2<f64> {
    let mut b = Array2::zeros((h * w, 3));
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            b[[p, 0]] = (x as f64 + 0.5) / w as f64 - 0.5;
            b[[p, 1]] = (y as f64 + 0.5) / h as f64 - 0.5;
            b[[p, 2]] = 1.0;
        }
    }
    b
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> [f64; 3] {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    if d.abs() < 1e-300 {
        return [0.0; 3];
    }
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        let mut m = a;
        for r in 0..3 {
            m[r][i] = b[r];
        }
        *o = det(m) / d;
    }
    out
}

/// Fits, per sample and channel, the 6-parameter affine flow that best
/// explains `target − pooled` under the channel's mask weights. The fit is
/// treated as a constant (no gradient flows through it).
pub fn fit_affine_residual(masks: &Array4<f64>, target: &Array4<f64>, pooled: &Array3<f64>) -> Array4<f64> {
    let (n, c, h, w) = masks.dim();
    let basis = coord_basis(h, w);
    let mut out = Array4::zeros((n, 2 * c, h, w));
    for j in 0..n {
        for ch in 0..c {
            let m = masks.slice(s![j, ch, .., ..]);
            let mut ata = [[0.0; 3]; 3];
            let mut atb = [[0.0; 3]; 2];
            for (p, &wt) in m.iter().enumerate() {
                let (y, x) = (p / w, p % w);
                for r in 0..3 {
                    for q in 0..3 {
                        ata[r][q] += wt * basis[[p, r]] * basis[[p, q]];
                    }
                    for k in 0..2 {
                        atb[k][r] += wt * basis[[p, r]] * (target[[j, k, y, x]] - pooled[[j, ch, k]]);
                    }
                }
            }
            for (r, row) in ata.iter_mut().enumerate() {
                row[r] += 1e-6;
            }
            for k in 0..2 {
                let coef = solve3(ata, atb[k]);
                for p in 0..h * w {
                    let v = coef[0] * basis[[p, 0]] + coef[1] * basis[[p, 1]] + coef[2];
                    out[[j, 2 * ch + k, p / w, p % w]] = v;
                }
            }
        }
    }
    out
}

/// Batched, differentiable flow reconstruction.
pub struct FlowDecoder {
    pub mode: ResidualMode,
}

impl FlowDecoder {
    pub fn new(mode: ResidualMode) -> Self {
        FlowDecoder { mode }
    }

    /// `masks` is `N × C × H × W`, `target` `N × 2 × H × W`, and `stack`
    /// (required for the pixelwise and scaling modes) `N × 2C × H × W`.
    /// With `train` set, the MLPs cache activations for [`Self::backward`].
    pub fn forward(
        &self,
        phi1: &mut Mlp,
        phi2: &mut Mlp,
        masks: &Array4<f64>,
        target: &Array4<f64>,
        stack: Option<&Array4<f64>>,
        train: bool,
    ) -> Result<(BatchReconstruction, DecoderCache)> {
        let (n, c, h, w) = masks.dim();
        if target.dim() != (n, 2, h, w) {
            return Err(Error::Shape(format!(
                "target flow {:?} does not match masks {:?}",
                target.dim(),
                masks.dim()
            )));
        }
        if self.mode.uses_head() {
            match stack {
                Some(s) if s.dim() == (n, 2 * c, h, w) => {}
                Some(s) => {
                    return Err(Error::Shape(format!(
                        "residual stack {:?} does not match masks {:?}",
                        s.dim(),
                        masks.dim()
                    )))
                }
                None => return Err(Error::Shape("residual stack required".into())),
            }
        }
        let hw = h * w;
        let mut pts = Array2::zeros((n * hw, 2));
        for j in 0..n {
            for k in 0..2 {
                for (p, v) in target.slice(s![j, k, .., ..]).iter().enumerate() {
                    pts[[j * hw + p, k]] = *v;
                }
            }
        }
        let g_rows = phi1.forward(&pts, train);
        let mut sums = Array2::zeros((n, c));
        let mut raw = Array3::zeros((n, c, 2));
        let mut degenerate = vec![vec![false; c]; n];
        for j in 0..n {
            for ch in 0..c {
                let m = masks.slice(s![j, ch, .., ..]);
                let total = m.sum();
                sums[[j, ch]] = total;
                if total <= POOL_EPS {
                    degenerate[j][ch] = true;
                    continue;
                }
                let mut acc = [0.0; 2];
                for (p, &mv) in m.iter().enumerate() {
                    acc[0] += mv * g_rows[[j * hw + p, 0]];
                    acc[1] += mv * g_rows[[j * hw + p, 1]];
                }
                raw[[j, ch, 0]] = acc[0] / total;
                raw[[j, ch, 1]] = acc[1] / total;
            }
        }
        let raw_rows = raw.clone().into_shape_with_order((n * c, 2)).expect("contiguous");
        let mut pooled = phi2
            .forward(&raw_rows, train)
            .into_shape_with_order((n, c, 2))
            .expect("contiguous");
        for j in 0..n {
            for ch in 0..c {
                if degenerate[j][ch] {
                    pooled[[j, ch, 0]] = 0.0;
                    pooled[[j, ch, 1]] = 0.0;
                }
            }
        }

        let mut piecewise = Array4::zeros((n, 2, h, w));
        for j in 0..n {
            for ch in 0..c {
                let m = masks.slice(s![j, ch, .., ..]);
                for k in 0..2 {
                    piecewise
                        .slice_mut(s![j, k, .., ..])
                        .scaled_add(pooled[[j, ch, k]], &m);
                }
            }
        }
        let stack: Option<Array4<f64>> = match self.mode {
            ResidualMode::None => None,
            ResidualMode::Affine => Some(fit_affine_residual(masks, target, &pooled)),
            ResidualMode::Pixelwise | ResidualMode::Scaling => stack.cloned(),
        };
        let total = match (&stack, self.mode) {
            (None, _) => piecewise.clone(),
            (Some(st), ResidualMode::Scaling) => {
                let mut t = Array4::zeros((n, 2, h, w));
                for j in 0..n {
                    for ch in 0..c {
                        for k in 0..2 {
                            let pk = pooled[[j, ch, k]];
                            let m = masks.slice(s![j, ch, .., ..]);
                            let sc = st.slice(s![j, 2 * ch + k, .., ..]);
                            let mut o = t.slice_mut(s![j, k, .., ..]);
                            o += &(&(&m * &sc) * pk);
                        }
                    }
                }
                t
            }
            (Some(st), _) => {
                let mut t = piecewise.clone();
                for j in 0..n {
                    for ch in 0..c {
                        let m = masks.slice(s![j, ch, .., ..]);
                        for k in 0..2 {
                            let r = st.slice(s![j, 2 * ch + k, .., ..]);
                            let mut o = t.slice_mut(s![j, k, .., ..]);
                            o += &(&m * &r);
                        }
                    }
                }
                t
            }
        };
        // re-add so that total = piecewise + residual holds exactly
        let residual = &total - &piecewise;
        let total = &piecewise + &residual;
        let recon = BatchReconstruction {
            piecewise,
            residual,
            total,
            pooled: pooled.clone(),
            degenerate: degenerate.clone(),
        };
        let cache = DecoderCache {
            mode: self.mode,
            masks: masks.clone(),
            g_rows,
            sums,
            raw,
            pooled,
            degenerate,
            stack,
        };
        Ok((recon, cache))
    }

    /// Given `∂L/∂total`, accumulates MLP gradients and returns gradients
    /// w.r.t. the masks and (pixelwise/scaling modes) the stack.
    pub fn backward(
        &self,
        phi1: &mut Mlp,
        phi2: &mut Mlp,
        cache: &DecoderCache,
        d_total: &Array4<f64>,
    ) -> (Array4<f64>, Option<Array4<f64>>) {
        let masks = &cache.masks;
        let (n, c, h, w) = masks.dim();
        let hw = h * w;
        let mut d_masks = Array4::zeros((n, c, h, w));
        let mut d_pooled = Array3::zeros((n, c, 2));
        let mut d_stack = match cache.mode {
            ResidualMode::Pixelwise | ResidualMode::Scaling => Some(Array4::zeros((n, 2 * c, h, w))),
            _ => None,
        };
        for j in 0..n {
            for ch in 0..c {
                let m = masks.slice(s![j, ch, .., ..]);
                for k in 0..2 {
                    let dt = d_total.slice(s![j, k, .., ..]);
                    let pk = cache.pooled[[j, ch, k]];
                    match (cache.mode, &cache.stack) {
                        (ResidualMode::Scaling, Some(st)) => {
                            let sc = st.slice(s![j, 2 * ch + k, .., ..]);
                            d_pooled[[j, ch, k]] = (&(&dt * &m) * &sc).sum();
                            let mut dm = d_masks.slice_mut(s![j, ch, .., ..]);
                            dm += &(&(&dt * &sc) * pk);
                            if let Some(ds) = d_stack.as_mut() {
                                ds.slice_mut(s![j, 2 * ch + k, .., ..]).assign(&(&(&dt * &m) * pk));
                            }
                        }
                        (_, stack) => {
                            d_pooled[[j, ch, k]] = (&dt * &m).sum();
                            let mut dm = d_masks.slice_mut(s![j, ch, .., ..]);
                            dm.scaled_add(pk, &dt);
                            if let Some(st) = stack {
                                let r = st.slice(s![j, 2 * ch + k, .., ..]);
                                dm += &(&dt * &r);
                            }
                            if let Some(ds) = d_stack.as_mut() {
                                ds.slice_mut(s![j, 2 * ch + k, .., ..]).assign(&(&dt * &m));
                            }
                        }
                    }
                }
                if cache.degenerate[j][ch] {
                    d_pooled[[j, ch, 0]] = 0.0;
                    d_pooled[[j, ch, 1]] = 0.0;
                }
            }
        }
        let d_raw = phi2
            .backward(&d_pooled.into_shape_with_order((n * c, 2)).expect("contiguous"))
            .into_shape_with_order((n, c, 2))
            .expect("contiguous");
        let mut d_g = Array2::zeros((n * hw, 2));
        for j in 0..n {
            for ch in 0..c {
                if cache.degenerate[j][ch] {
                    continue;
                }
                let inv = 1.0 / cache.sums[[j, ch]];
                let (dr0, dr1) = (d_raw[[j, ch, 0]] * inv, d_raw[[j, ch, 1]] * inv);
                let (r0, r1) = (cache.raw[[j, ch, 0]], cache.raw[[j, ch, 1]]);
                for p in 0..hw {
                    let (y, x) = (p / w, p % w);
                    let g0 = cache.g_rows[[j * hw + p, 0]];
                    let g1 = cache.g_rows[[j * hw + p, 1]];
                    d_masks[[j, ch, y, x]] += dr0 * (g0 - r0) + dr1 * (g1 - r1);
                    let mv = masks[[j, ch, y, x]];
                    d_g[[j * hw + p, 0]] += dr0 * mv;
                    d_g[[j * hw + p, 1]] += dr1 * mv;
                }
            }
        }
        phi1.backward(&d_g);
        (d_masks, d_stack)
    }
}

/// A direction-sample: masks come from `frame`, the residual head sees
/// `concat(features[frame], features[partner])`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MotionSample {
    pub frame: usize,
    pub partner: usize,
}

/// Everything the backward pass through the full model needs.
pub struct ModelPass {
    /// Per-frame mask probabilities, `F × C × H × W`.
    pub probs: Array4<f64>,
    pub recon: BatchReconstruction,
    pub losses: Vec<f64>,
    pub d_total_unit: Array4<f64>,
    samples: Vec<MotionSample>,
    late_shape: (usize, usize, usize, usize),
    decoder: DecoderCache,
}

/// Runs the model on a frame batch and reconstructs the target flow of
/// every direction-sample. Encoder features are computed once per frame.
pub fn forward_model(
    model: &mut SegmentationModel,
    frames: &Array4<f64>,
    samples: &[MotionSample],
    targets: &Array4<f64>,
    train: bool,
) -> Result<ModelPass> {
    if samples.is_empty() {
        return Err(Error::Empty("no direction-samples in batch".into()));
    }
    let feats = model.backbone.forward(frames, train)?;
    let probs = model.seg_head.forward(&feats.merged, train);
    let hw = (probs.shape()[2], probs.shape()[3]);
    let idx: Vec<usize> = samples.iter().map(|s| s.frame).collect();
    let partners: Vec<usize> = samples.iter().map(|s| s.partner).collect();
    let masks = probs.select(Axis(0), &idx);
    let stack = match model.residual_head.as_mut() {
        Some(head) => {
            let pair = pair_features(&feats.late, &idx, &partners);
            Some(head.forward(&pair, hw, train))
        }
        None => None,
    };
    let decoder = FlowDecoder::new(model.config.residual);
    let (recon, cache) = decoder.forward(
        &mut model.phi1,
        &mut model.phi2,
        &masks,
        targets,
        stack.as_ref(),
        train,
    )?;
    let (losses, d_total_unit) = motion_loss_batch(&recon.total, targets);
    Ok(ModelPass {
        probs,
        recon,
        losses,
        d_total_unit,
        samples: samples.to_vec(),
        late_shape: feats.late.dim(),
        decoder: cache,
    })
}

/// Backpropagates `d_total` (gradient w.r.t. each sample's reconstruction)
/// plus an optional direct gradient on the per-frame probabilities into
/// every parameter of `model`. Requires a pass made with `train = true`.
pub fn backward_model(
    model: &mut SegmentationModel,
    pass: &ModelPass,
    d_total: &Array4<f64>,
    d_probs_extra: Option<&Array4<f64>>,
) {
    let decoder = FlowDecoder::new(model.config.residual);
    let (d_masks, d_stack) = decoder.backward(&mut model.phi1, &mut model.phi2, &pass.decoder, d_total);
    let mut d_probs = match d_probs_extra {
        Some(d) => d.clone(),
        None => Array4::zeros(pass.probs.dim()),
    };
    for (j, s) in pass.samples.iter().enumerate() {
        let mut t = d_probs.index_axis_mut(Axis(0), s.frame);
        t += &d_masks.index_axis(Axis(0), j);
    }
    let d_late = match (model.residual_head.as_mut(), d_stack) {
        (Some(head), Some(ds)) => {
            let d_pair = head.backward(&ds);
            let idx: Vec<usize> = pass.samples.iter().map(|s| s.frame).collect();
            let partners: Vec<usize> = pass.samples.iter().map(|s| s.partner).collect();
            Some(unpair_gradient(&d_pair, &idx, &partners, pass.late_shape))
        }
        _ => None,
    };
    let d_merged = model.seg_head.backward(&d_probs);
    model.backbone.backward(&d_merged, d_late.as_ref());
}

/// Forward, backward and summed losses for one frame pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymmetricMotionLoss {
    pub forward: f64,
    pub backward: Option<f64>,
}

impl SymmetricMotionLoss {
    pub fn total(&self) -> f64 {
        self.forward + self.backward.unwrap_or(0.0)
    }
}

/// Evaluates the motion loss of a frame pair in both directions (eval
/// mode). Without a backward flow only the forward term is computed.
pub fn symmetric_motion_loss(
    model: &mut SegmentationModel,
    frame_t: &Array3<f64>,
    frame_t1: &Array3<f64>,
    flow_fwd: &Array3<f64>,
    flow_bwd: Option<&Array3<f64>>,
) -> Result<SymmetricMotionLoss> {
    let frames = ndarray::stack(Axis(0), &[frame_t.view(), frame_t1.view()])
        .map_err(|e| Error::Shape(e.to_string()))?;
    let mut samples = vec![MotionSample { frame: 0, partner: 1 }];
    let mut targets = vec![flow_fwd.view()];
    if let Some(b) = flow_bwd {
        samples.push(MotionSample { frame: 1, partner: 0 });
        targets.push(b.view());
    }
    let targets = ndarray::stack(Axis(0), &targets).map_err(|e| Error::Shape(e.to_string()))?;
    let pass = forward_model(model, &frames, &samples, &targets, false)?;
    Ok(SymmetricMotionLoss {
        forward: pass.losses[0],
        backward: pass.losses.get(1).copied(),
    })
}
