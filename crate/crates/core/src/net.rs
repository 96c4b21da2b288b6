//! Trainable networks: residual-style encoder, segmentation head, residual
//! flow head, pooling MLPs, and the frozen auxiliary feature provider.

use ndarray::{s, Array2, Array3, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    concat_channels, softmax_channels, softmax_channels_backward, split_channels, Bilinear,
    BatchNorm2d, Conv2d, ConvBnRelu, Init, Mlp, Module, Param, Relu,
};

/// Additional flow pathway on top of the piecewise-constant reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualMode {
    /// Piecewise-constant flow only.
    None,
    /// Per-pixel multiplicative factor in `(0, 2)` on the pooled flow.
    Scaling,
    /// Per-channel affine flow fitted to what the pooled flow leaves unexplained.
    Affine,
    /// Learned per-pixel, per-channel bounded residual.
    Pixelwise,
}

impl ResidualMode {
    pub fn uses_head(self) -> bool {
        matches!(self, ResidualMode::Scaling | ResidualMode::Pixelwise)
    }

    pub fn name(self) -> &'static str {
        match self {
            ResidualMode::None => "none",
            ResidualMode::Scaling => "scaling",
            ResidualMode::Affine => "affine",
            ResidualMode::Pixelwise => "pixelwise",
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Output channels of the four encoder blocks.
    pub block_channels: [usize; 4],
    pub head_hidden: usize,
    pub residual_hidden: usize,
    pub mlp_hidden: usize,
    pub num_channels: usize,
    /// Residual flow bound in pixels.
    pub lambda: f64,
    pub feature_merging: bool,
    pub residual: ResidualMode,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            block_channels: [12, 24, 32, 32],
            head_hidden: 32,
            residual_hidden: 32,
            mlp_hidden: 64,
            num_channels: 4,
            lambda: 10.0,
            feature_merging: true,
            residual: ResidualMode::Pixelwise,
        }
    }
}

impl NetConfig {
    /// Total stride of the late (lowest resolution) block.
    pub const LATE_STRIDE: usize = 8;
    pub const EARLY_STRIDE: usize = 4;

    pub fn stride(&self) -> usize {
        if self.feature_merging {
            Self::EARLY_STRIDE
        } else {
            Self::LATE_STRIDE
        }
    }

    pub fn feature_size(&self, h: usize, w: usize) -> (usize, usize) {
        (h / self.stride(), w / self.stride())
    }

    pub fn merged_channels(&self) -> usize {
        let [_, early, _, late] = self.block_channels;
        if self.feature_merging {
            early + late
        } else {
            late
        }
    }
}

#[derive(Clone)]
struct ResBlock {
    conv1: ConvBnRelu,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    shortcut: Conv2d,
    relu: Relu,
}

impl ResBlock {
    fn new(inp: usize, out: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        ResBlock {
            conv1: ConvBnRelu::new(inp, out, 3, stride, rng),
            conv2: Conv2d::new(out, out, 3, 1, Init::Relu, rng),
            bn2: BatchNorm2d::new(out),
            shortcut: Conv2d::new(inp, out, 1, stride, Init::Linear, rng),
            relu: Relu::default(),
        }
    }

    fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let a = self.conv1.forward(x, train);
        let b = self.bn2.forward(&self.conv2.forward(&a, train), train);
        let sc = self.shortcut.forward(x, train);
        self.relu.forward(&(b + sc), train)
    }

    fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let d = self.relu.backward(dy);
        let da = self.conv2.backward(&self.bn2.backward(&d));
        self.conv1.backward(&da) + self.shortcut.backward(&d)
    }
}

impl Module for ResBlock {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv1.visit_params(&format!("{prefix}.conv1"), f);
        self.conv2.visit_params(&format!("{prefix}.conv2"), f);
        self.bn2.visit_params(&format!("{prefix}.bn2"), f);
        self.shortcut.visit_params(&format!("{prefix}.shortcut"), f);
    }
}

/// Encoder output for a batch.
#[derive(Clone, Debug)]
pub struct BackboneFeatures {
    /// Segmentation-head input, `N × K × H × W`: the stride-4 block
    /// concatenated with the upsampled stride-8 block, or just the latter
    /// when merging is off.
    pub merged: Array4<f64>,
    /// Stride-8 block output, `N × K_late × H/2 × W/2` (merging on).
    pub late: Array4<f64>,
}

/// Four residual blocks with strides 2, 2, 2, 1.
#[derive(Clone)]
pub struct Backbone {
    blocks: Vec<ResBlock>,
    merging: bool,
    up: Option<Bilinear>,
    early_channels: usize,
}

impl Backbone {
    pub fn new(cfg: &NetConfig, rng: &mut ChaCha8Rng) -> Self {
        let ch = cfg.block_channels;
        let blocks = vec![
            ResBlock::new(3, ch[0], 2, rng),
            ResBlock::new(ch[0], ch[1], 2, rng),
            ResBlock::new(ch[1], ch[2], 2, rng),
            ResBlock::new(ch[2], ch[3], 1, rng),
        ];
        Backbone {
            blocks,
            merging: cfg.feature_merging,
            up: None,
            early_channels: ch[1],
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Result<BackboneFeatures> {
        let (_, c, h, w) = x.dim();
        if c != 3 {
            return Err(Error::Shape(format!("expected 3-channel frames, got {c}")));
        }
        if h % NetConfig::LATE_STRIDE != 0 || w % NetConfig::LATE_STRIDE != 0 || h == 0 || w == 0
        {
            return Err(Error::Shape(format!(
                "frame size {h}x{w} is not a multiple of the encoder stride {}",
                NetConfig::LATE_STRIDE
            )));
        }
        let x = x.as_standard_layout().into_owned();
        let b1 = self.blocks[0].forward(&x, train);
        let early = self.blocks[1].forward(&b1, train);
        let b3 = self.blocks[2].forward(&early, train);
        let late = self.blocks[3].forward(&b3, train);
        let merged = if self.merging {
            let (eh, ew) = (early.shape()[2], early.shape()[3]);
            let up = self
                .up
                .get_or_insert_with(|| Bilinear::new((late.shape()[2], late.shape()[3]), (eh, ew)));
            if up.dst() != (eh, ew) {
                *up = Bilinear::new((late.shape()[2], late.shape()[3]), (eh, ew));
            }
            concat_channels(&early, &up.forward(&late))
        } else {
            late.clone()
        };
        Ok(BackboneFeatures { merged, late })
    }

    /// Backpropagates gradients w.r.t. both outputs. The input gradient is
    /// not needed and is discarded.
    pub fn backward(&mut self, d_merged: &Array4<f64>, d_late: Option<&Array4<f64>>) {
        let (mut d_early, mut dl) = if self.merging {
            let (de, du) = split_channels(d_merged, self.early_channels);
            let up = self.up.as_ref().expect("forward ran");
            (Some(de), up.backward(&du))
        } else {
            (None, d_merged.clone())
        };
        if let Some(extra) = d_late {
            dl += extra;
        }
        let d3 = self.blocks[3].backward(&dl);
        let mut d2 = self.blocks[2].backward(&d3);
        if let Some(de) = d_early.take() {
            d2 += &de;
        }
        let d1 = self.blocks[1].backward(&d2);
        self.blocks[0].backward(&d1);
    }
}

impl Module for Backbone {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params(&format!("{prefix}.block{}", i + 1), f);
        }
    }
}

/// Three Conv-BN-ReLU layers followed by a 1×1 projection.
#[derive(Clone)]
pub struct ConvHead {
    layers: Vec<ConvBnRelu>,
    out: Conv2d,
}

impl ConvHead {
    pub fn new(inp: usize, hidden: usize, out: usize, out_init: Init, rng: &mut ChaCha8Rng) -> Self {
        let layers = vec![
            ConvBnRelu::new(inp, hidden, 3, 1, rng),
            ConvBnRelu::new(hidden, hidden, 3, 1, rng),
            ConvBnRelu::new(hidden, hidden, 3, 1, rng),
        ];
        ConvHead {
            layers,
            out: Conv2d::new(hidden, out, 1, 1, out_init, rng),
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let mut h = x.clone();
        for l in &mut self.layers {
            h = l.forward(&h, train);
        }
        self.out.forward(&h, train)
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let mut d = self.out.backward(dy);
        for l in self.layers.iter_mut().rev() {
            d = l.backward(&d);
        }
        d
    }
}

impl Module for ConvHead {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_params(&format!("{prefix}.layer{}", i + 1), f);
        }
        self.out.visit_params(&format!("{prefix}.out"), f);
    }
}

/// Segmentation head: logits followed by a channel softmax.
#[derive(Clone)]
pub struct SegHead {
    pub head: ConvHead,
    probs: Option<Array4<f64>>,
}

impl SegHead {
    pub fn new(cfg: &NetConfig, rng: &mut ChaCha8Rng) -> Self {
        SegHead {
            head: ConvHead::new(cfg.merged_channels(), cfg.head_hidden, cfg.num_channels, Init::Linear, rng),
            probs: None,
        }
    }

    /// Returns `N × C × H × W` probabilities summing to one per pixel.
    pub fn forward(&mut self, features: &Array4<f64>, train: bool) -> Array4<f64> {
        let p = softmax_channels(&self.head.forward(features, train));
        if train {
            self.probs = Some(p.clone());
        }
        p
    }

    pub fn backward(&mut self, dprobs: &Array4<f64>) -> Array4<f64> {
        let p = self.probs.take().expect("seg head backward without cached forward");
        self.head.backward(&softmax_channels_backward(&p, dprobs))
    }
}

impl Module for SegHead {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.head.visit_params(prefix, f);
    }
}

/// Predicts `C` flows per pixel from a pair of late features.
///
/// Output is `N × 2C × H × W` with channel `2c + k` holding component `k` of
/// channel `c`. In pixelwise mode values are `λ·tanh(z)`; in scaling mode
/// they are `1 + tanh(z)`. The prediction is made at late-block resolution
/// and bilinearly upsampled to the mask resolution.
#[derive(Clone)]
pub struct ResidualHead {
    pub head: ConvHead,
    mode: ResidualMode,
    lambda: f64,
    up: Option<Bilinear>,
    tanh: Option<Array4<f64>>,
}

impl ResidualHead {
    pub fn new(cfg: &NetConfig, rng: &mut ChaCha8Rng) -> Self {
        let late = cfg.block_channels[3];
        ResidualHead {
            head: ConvHead::new(2 * late, cfg.residual_hidden, 2 * cfg.num_channels, Init::Small(0.1), rng),
            mode: cfg.residual,
            lambda: cfg.lambda,
            up: None,
            tanh: None,
        }
    }

    pub fn bound(&self) -> f64 {
        self.lambda
    }

    fn transform(&self, t: f64) -> f64 {
        match self.mode {
            ResidualMode::Scaling => 1.0 + t,
            _ => self.lambda * t,
        }
    }

    /// tanh rounds to ±1 for large inputs (and upsampling may round up);
    /// pull such values just inside the bound.
    fn strict(&self, mut a: Array4<f64>) -> Array4<f64> {
        if self.mode != ResidualMode::Scaling {
            let inside = f64::from_bits(self.lambda.to_bits() - 1);
            a.mapv_inplace(|v| v.clamp(-inside, inside));
        }
        a
    }

    /// Maps pre-activations to the output stack (no caching).
    pub fn activate(&self, z: &Array4<f64>, out_hw: (usize, usize)) -> Array4<f64> {
        let a = z.mapv(|v| self.transform(v.tanh()));
        let (h, w) = (z.shape()[2], z.shape()[3]);
        if (h, w) == out_hw {
            self.strict(a)
        } else {
            self.strict(Bilinear::new((h, w), out_hw).forward(&a))
        }
    }

    pub fn forward(&mut self, pair_features: &Array4<f64>, out_hw: (usize, usize), train: bool) -> Array4<f64> {
        let z = self.head.forward(pair_features, train);
        let t = z.mapv(f64::tanh);
        let a = t.mapv(|v| self.transform(v));
        let (h, w) = (z.shape()[2], z.shape()[3]);
        let out = if (h, w) == out_hw {
            self.up = None;
            a
        } else {
            let up = Bilinear::new((h, w), out_hw);
            let o = up.forward(&a);
            self.up = Some(up);
            o
        };
        if train {
            self.tanh = Some(t);
        }
        self.strict(out)
    }

    pub fn backward(&mut self, dout: &Array4<f64>) -> Array4<f64> {
        let t = self.tanh.take().expect("residual head backward without cached forward");
        let da = match &self.up {
            Some(up) => up.backward(dout),
            None => dout.clone(),
        };
        let k = match self.mode {
            ResidualMode::Scaling => 1.0,
            _ => self.lambda,
        };
        let dz = ndarray::Zip::from(&da).and(&t).map_collect(|&d, &tv| d * k * (1.0 - tv * tv));
        self.head.backward(&dz)
    }
}

impl Module for ResidualHead {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.head.visit_params(prefix, f);
    }
}

/// Pairs each frame with its partner: sample `j` gets
/// `concat(late[j], late[partner[j]])`.
pub fn pair_features(late: &Array4<f64>, first: &[usize], second: &[usize]) -> Array4<f64> {
    let a = late.select(Axis(0), first);
    let b = late.select(Axis(0), second);
    concat_channels(&a, &b)
}

/// Adjoint of [`pair_features`]: accumulates into a late-feature gradient.
pub fn unpair_gradient(
    d_pair: &Array4<f64>,
    first: &[usize],
    second: &[usize],
    late_shape: (usize, usize, usize, usize),
) -> Array4<f64> {
    let k = late_shape.1;
    let (da, db) = split_channels(d_pair, k);
    let mut d = Array4::<f64>::zeros(late_shape);
    for (j, (&i0, &i1)) in first.iter().zip(second).enumerate() {
        let mut t = d.index_axis_mut(Axis(0), i0);
        t += &da.index_axis(Axis(0), j);
        let mut t = d.index_axis_mut(Axis(0), i1);
        t += &db.index_axis(Axis(0), j);
    }
    d
}

/// Per-pixel soft segmentation for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskStack {
    /// `C × H × W`, softmax-normalized across channels.
    pub probs: Array3<f64>,
    pub object_channel: Option<usize>,
}

impl MaskStack {
    pub fn new(probs: Array3<f64>) -> Self {
        MaskStack {
            probs,
            object_channel: None,
        }
    }

    pub fn num_channels(&self) -> usize {
        self.probs.shape()[0]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.probs.shape()[1], self.probs.shape()[2])
    }

    pub fn channel(&self, c: usize) -> ndarray::ArrayView2<'_, f64> {
        self.probs.index_axis(Axis(0), c)
    }

    /// Largest deviation of a per-pixel channel sum from one.
    pub fn max_sum_error(&self) -> f64 {
        self.probs
            .sum_axis(Axis(0))
            .iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Bounded per-channel residual flows for one frame pair, `C × 2 × H × W`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualFlowStack {
    pub values: ndarray::Array4<f64>,
    pub bound: f64,
}

impl ResidualFlowStack {
    /// Reshapes an `2C × H × W` head output into `C × 2 × H × W`.
    pub fn from_head_output(out: Array3<f64>, bound: f64) -> Self {
        let (c2, h, w) = out.dim();
        let values = out
            .into_shape_with_order((c2 / 2, 2, h, w))
            .expect("contiguous head output");
        ResidualFlowStack { values, bound }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Full trainable model: encoder, heads and pooling MLPs.
#[derive(Clone)]
pub struct SegmentationModel {
    pub config: NetConfig,
    pub backbone: Backbone,
    pub seg_head: SegHead,
    pub residual_head: Option<ResidualHead>,
    pub phi1: Mlp,
    pub phi2: Mlp,
}

impl SegmentationModel {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        if config.num_channels < 1 {
            return Err(Error::Config("need at least one mask channel".into()));
        }
        if !(config.lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be positive, got {}", config.lambda)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = Backbone::new(&config, &mut rng);
        let seg_head = SegHead::new(&config, &mut rng);
        let residual_head = config
            .residual
            .uses_head()
            .then(|| ResidualHead::new(&config, &mut rng));
        let phi1 = Mlp::new(2, config.mlp_hidden, 2, &mut rng);
        let phi2 = Mlp::new(2, config.mlp_hidden, 2, &mut rng);
        Ok(SegmentationModel {
            config,
            backbone,
            seg_head,
            residual_head,
            phi1,
            phi2,
        })
    }

    /// Eval-mode mask prediction for a batch of frames.
    pub fn predict_batch(&mut self, frames: &Array4<f64>) -> Result<Array4<f64>> {
        let f = self.backbone.forward(frames, false)?;
        Ok(self.seg_head.forward(&f.merged, false))
    }

    pub fn predict(&mut self, frame: &Array3<f64>) -> Result<MaskStack> {
        let batch = frame.clone().insert_axis(Axis(0));
        let p = self.predict_batch(&batch)?;
        Ok(MaskStack::new(p.index_axis(Axis(0), 0).to_owned()))
    }

    /// Eval-mode residual stack for the pair `(frame_t, frame_t1)`.
    pub fn predict_residual(
        &mut self,
        frame_t: &Array3<f64>,
        frame_t1: &Array3<f64>,
    ) -> Result<Option<ResidualFlowStack>> {
        let batch = ndarray::stack(Axis(0), &[frame_t.view(), frame_t1.view()])
            .map_err(|e| Error::Shape(e.to_string()))?;
        let f = self.backbone.forward(&batch, false)?;
        let hw = (f.merged.shape()[2], f.merged.shape()[3]);
        let Some(head) = self.residual_head.as_mut() else {
            return Ok(None);
        };
        let pair = pair_features(&f.late, &[0], &[1]);
        let out = head.forward(&pair, hw, false);
        Ok(Some(ResidualFlowStack::from_head_output(
            out.index_axis(Axis(0), 0).to_owned(),
            head.bound(),
        )))
    }

    pub fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, p| {
            if p.trainable {
                n += p.value.len()
            }
        });
        n
    }
}

impl Module for SegmentationModel {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        let p = |s: &str| {
            if prefix.is_empty() {
                s.to_string()
            } else {
                format!("{prefix}.{s}")
            }
        };
        self.backbone.visit_params(&p("backbone"), f);
        self.seg_head.visit_params(&p("seg_head"), f);
        if let Some(h) = self.residual_head.as_mut() {
            h.visit_params(&p("residual_head"), f);
        }
        self.phi1.visit_params(&p("phi1"), f);
        self.phi2.visit_params(&p("phi2"), f);
    }
}

/// Frozen per-pixel descriptors used by the semantic constraint and the tuner.
pub trait AuxFeatureProvider {
    /// `K' × h × w` unit-normalized features at the frame's resolution.
    fn features(&self, frame: &Array3<f64>) -> Array3<f64>;
}

/// Local color statistics: mean and standard deviation of CIE Lab values in
/// a square window, centered on neutral gray and unit-normalized.
///
/// A neutrality channel, `neutral_weight * max(0, 1 - chroma / neutral_chroma)`,
/// gives low-chroma windows a common direction; without it their near-zero
/// centered vectors normalize to noise.
#[derive(Clone, Debug)]
pub struct ColorStatistics {
    pub window: usize,
    /// Weight of the standard-deviation block relative to the mean block.
    pub std_weight: f64,
    /// Lab chroma at which the neutrality channel reaches zero.
    pub neutral_chroma: f64,
    pub neutral_weight: f64,
}

impl Default for ColorStatistics {
    fn default() -> Self {
        ColorStatistics {
            window: 5,
            std_weight: 0.5,
            neutral_chroma: 20.0,
            neutral_weight: 3.0,
        }
    }
}

pub(crate) fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = |c: f64| {
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    };
    let (r, g, b) = (lin(rgb[0]), lin(rgb[1]), lin(rgb[2]));
    let x = (0.4124 * r + 0.3576 * g + 0.1805 * b) / 0.95047;
    let y = 0.2126 * r + 0.7152 * g + 0.0722 * b;
    let z = (0.0193 * r + 0.1192 * g + 0.9505 * b) / 1.08883;
    let f = |t: f64| {
        if t > 0.008856 {
            t.cbrt()
        } else {
            7.787 * t + 16.0 / 116.0
        }
    };
    let (fx, fy, fz) = (f(x), f(y), f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

impl AuxFeatureProvider for ColorStatistics {
    fn features(&self, frame: &Array3<f64>) -> Array3<f64> {
        let (_, h, w) = frame.dim();
        let mut lab = Array3::<f64>::zeros((3, h, w));
        for y in 0..h {
            for x in 0..w {
                let v = srgb_to_lab([frame[[0, y, x]], frame[[1, y, x]], frame[[2, y, x]]]);
                for c in 0..3 {
                    lab[[c, y, x]] = v[c];
                }
            }
        }
        let r = (self.window / 2) as isize;
        let mut out = Array3::<f64>::zeros((7, h, w));
        for y in 0..h as isize {
            for x in 0..w as isize {
                let (y0, y1) = ((y - r).max(0) as usize, (y + r).min(h as isize - 1) as usize);
                let (x0, x1) = ((x - r).max(0) as usize, (x + r).min(w as isize - 1) as usize);
                let n = ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64;
                let mut mean = [0.0; 3];
                let mut var = [0.0; 3];
                for c in 0..3 {
                    let win = lab.slice(s![c, y0..=y1, x0..=x1]);
                    let m = win.sum() / n;
                    mean[c] = m;
                    var[c] = win.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
                }
                let sd = |c: usize| var[c].sqrt();
                let chroma = mean[1].hypot(mean[2]);
                let f = [
                    (mean[0] - 50.0) / 50.0,
                    mean[1] / 50.0,
                    mean[2] / 50.0,
                    self.neutral_weight * (1.0 - chroma / self.neutral_chroma).max(0.0),
                    self.std_weight * sd(0) / 25.0,
                    self.std_weight * sd(1) / 25.0,
                    self.std_weight * sd(2) / 25.0,
                ];
                let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
                let (yu, xu) = (y as usize, x as usize);
                for (c, v) in f.iter().enumerate() {
                    out[[c, yu, xu]] = if norm > 1e-12 { v / norm } else { 0.0 };
                }
            }
        }
        out
    }
}

/// Area-averages `K × h × w` features onto an `H × W` grid that divides it.
pub fn align_features(features: &Array3<f64>, height: usize, width: usize) -> Result<Array3<f64>> {
    let (k, h, w) = features.dim();
    if height == 0 || width == 0 || h % height != 0 || w % width != 0 {
        return Err(Error::Shape(format!(
            "cannot align {h}x{w} features to {height}x{width}"
        )));
    }
    let (fy, fx) = (h / height, w / width);
    let mut out = Array3::<f64>::zeros((k, height, width));
    for c in 0..k {
        for y in 0..height {
            for x in 0..width {
                out[[c, y, x]] = features
                    .slice(s![c, y * fy..(y + 1) * fy, x * fx..(x + 1) * fx])
                    .mean()
                    .unwrap_or(0.0);
            }
        }
    }
    Ok(out)
}

/// Per-pixel cosine similarity between features and a query vector.
pub fn cosine_map(features: &Array3<f64>, query: &ndarray::Array1<f64>) -> Array2<f64> {
    let (k, h, w) = features.dim();
    let qn = query.dot(query).sqrt();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let mut dot = 0.0;
        let mut nn = 0.0;
        for c in 0..k {
            let v = features[[c, y, x]];
            dot += v * query[c];
            nn += v * v;
        }
        let d = nn.sqrt() * qn;
        if d > 1e-12 {
            dot / d
        } else {
            0.0
        }
    })
}
