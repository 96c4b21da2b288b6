//! Central finite-difference checks of the hand-written backward passes.
//!
//! Objectives are linear in the reconstructed flow (`Σ W ⊙ total`) so the
//! only kinks come from ReLUs inside the network.

use motionseg::appearance::{appearance_loss, appearance_loss_grad};
use motionseg::motion::{backward_model, forward_model, FlowDecoder, MotionSample};
use motionseg::net::{NetConfig, ResidualMode, SegHead, SegmentationModel};
use motionseg::nn::{softmax_channels, Mlp, Module};
use ndarray::{s, Array4, ArrayD, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Case, Outcome};

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-3;
/// Probes per tensor.
pub const PROBES: usize = 16;
/// Gradients smaller than this are compared absolutely.
const FLOOR: f64 = 1e-4;

pub fn all() -> Vec<Case> {
    vec![
        Case { group: "gradient", name: "decoder_none", run: decoder_none },
        Case { group: "gradient", name: "decoder_pixelwise", run: decoder_pixelwise },
        Case { group: "gradient", name: "decoder_scaling", run: decoder_scaling },
        Case { group: "gradient", name: "model_pixelwise", run: model_pixelwise },
        Case { group: "gradient", name: "model_scaling", run: model_scaling },
        Case { group: "gradient", name: "model_without_residual", run: model_without_residual },
        Case { group: "gradient", name: "appearance_through_seg_head", run: appearance_through_seg_head },
    ]
}

fn random4(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize), lo: f64, hi: f64) -> Array4<f64> {
    Array4::from_shape_fn(shape, |_| rng.random_range(lo..hi))
}

fn dot(a: &Array4<f64>, b: &Array4<f64>) -> f64 {
    (a * b).sum()
}

/// Largest relative error over the probes; `f` evaluates the objective
/// after `set(index, value)` has been applied.
struct Probe<'a> {
    name: String,
    worst: &'a mut (f64, String),
}

impl Probe<'_> {
    fn record(&mut self, analytic: f64, numeric: f64) {
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
        if err > self.worst.0 {
            *self.worst = (err, format!("{}: analytic {analytic:e} numeric {numeric:e}", self.name));
        }
    }
}

fn verdict(worst: (f64, String)) -> Outcome {
    if worst.0 <= TOLERANCE {
        Ok(())
    } else {
        Err(format!("relative error {:.2e} at {}", worst.0, worst.1).into())
    }
}

fn probe_indices(len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= PROBES {
        (0..len).collect()
    } else {
        (0..PROBES).map(|_| rng.random_range(0..len)).collect()
    }
}

/// Checks a 4-D input gradient by perturbing the input in place.
fn check_input(
    name: &str,
    x: &mut Array4<f64>,
    analytic: &Array4<f64>,
    rng: &mut ChaCha8Rng,
    worst: &mut (f64, String),
    mut f: impl FnMut(&Array4<f64>) -> f64,
) {
    for i in probe_indices(x.len(), rng) {
        let orig = x.as_slice().expect("contiguous")[i];
        x.as_slice_mut().expect("contiguous")[i] = orig + STEP;
        let up = f(x);
        x.as_slice_mut().expect("contiguous")[i] = orig - STEP;
        let down = f(x);
        x.as_slice_mut().expect("contiguous")[i] = orig;
        let mut p = Probe { name: format!("{name}[{i}]"), worst };
        p.record(analytic.as_slice().expect("contiguous")[i], (up - down) / (2.0 * STEP));
    }
}

fn trainable_grads(m: &mut dyn Module) -> Vec<(String, ArrayD<f64>)> {
    let mut out = Vec::new();
    m.visit_params("", &mut |name, p| {
        if p.trainable {
            out.push((name.to_string(), p.grad.clone()));
        }
    });
    out
}

fn nudge(m: &mut dyn Module, target: &str, index: usize, delta: f64) {
    m.visit_params("", &mut |name, p| {
        if name == target {
            p.value.as_slice_mut().expect("contiguous")[index] += delta;
        }
    });
}

/// Checks every trainable parameter of `m` against `f`, which evaluates
/// the objective on the current parameters.
fn check_params<M: Module>(
    m: &mut M,
    rng: &mut ChaCha8Rng,
    worst: &mut (f64, String),
    mut f: impl FnMut(&mut M) -> f64,
) {
    for (name, grad) in trainable_grads(m) {
        for i in probe_indices(grad.len(), rng) {
            nudge(m, &name, i, STEP);
            let up = f(m);
            nudge(m, &name, i, -2.0 * STEP);
            let down = f(m);
            nudge(m, &name, i, STEP);
            let mut p = Probe { name: format!("{name}[{i}]"), worst };
            p.record(grad.as_slice().expect("contiguous")[i], (up - down) / (2.0 * STEP));
        }
    }
}

struct Mlps {
    phi1: Mlp,
    phi2: Mlp,
}

impl Module for Mlps {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut motionseg::nn::Param)) {
        self.phi1.visit_params(&format!("{prefix}.phi1"), f);
        self.phi2.visit_params(&format!("{prefix}.phi2"), f);
    }
}

fn decoder(mode: ResidualMode) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (n, c, h, w) = (2, 3, 4, 4);
    let mut masks = random4(&mut rng, (n, c, h, w), 0.05, 1.0);
    let target = random4(&mut rng, (n, 2, h, w), -3.0, 3.0);
    let (lo, hi) = if mode == ResidualMode::Scaling { (0.2, 1.8) } else { (-1.0, 1.0) };
    let mut stack = random4(&mut rng, (n, 2 * c, h, w), lo, hi);
    let weights = random4(&mut rng, (n, 2, h, w), -1.0, 1.0);
    let mut mlps = Mlps {
        phi1: Mlp::new(2, 6, 2, &mut rng),
        phi2: Mlp::new(2, 6, 2, &mut rng),
    };
    let dec = FlowDecoder::new(mode);
    let uses_stack = mode.uses_head();
    let objective = |mlps: &mut Mlps, masks: &Array4<f64>, stack: &Array4<f64>| {
        let st = uses_stack.then_some(stack);
        let (r, _) = dec.forward(&mut mlps.phi1, &mut mlps.phi2, masks, &target, st, false).expect("forward");
        dot(&r.total, &weights)
    };

    mlps.zero_grad();
    let st = uses_stack.then_some(&stack);
    let (_, cache) = dec.forward(&mut mlps.phi1, &mut mlps.phi2, &masks, &target, st, true)?;
    let (d_masks, d_stack) = dec.backward(&mut mlps.phi1, &mut mlps.phi2, &cache, &weights);

    let mut worst = (0.0, String::new());
    let fixed_stack = stack.clone();
    check_input("masks", &mut masks, &d_masks, &mut rng, &mut worst, |m| {
        objective(&mut mlps.clone_pair(), m, &fixed_stack)
    });
    if let Some(ds) = d_stack {
        let fixed_masks = masks.clone();
        check_input("stack", &mut stack, &ds, &mut rng, &mut worst, |s| {
            objective(&mut mlps.clone_pair(), &fixed_masks, s)
        });
    } else if uses_stack {
        return Err("no stack gradient".into());
    }
    check_params(&mut mlps, &mut rng, &mut worst, |m| objective(m, &masks, &stack));
    verdict(worst)
}

impl Mlps {
    fn clone_pair(&self) -> Mlps {
        Mlps {
            phi1: self.phi1.clone(),
            phi2: self.phi2.clone(),
        }
    }
}

pub fn decoder_none() -> Outcome {
    decoder(ResidualMode::None)
}

pub fn decoder_pixelwise() -> Outcome {
    decoder(ResidualMode::Pixelwise)
}

pub fn decoder_scaling() -> Outcome {
    decoder(ResidualMode::Scaling)
}

fn tiny_net(mode: ResidualMode) -> NetConfig {
    NetConfig {
        block_channels: [3, 4, 4, 4],
        head_hidden: 4,
        residual_hidden: 4,
        mlp_hidden: 4,
        num_channels: 2,
        lambda: 1.0,
        residual: mode,
        ..NetConfig::default()
    }
}

/// Every trainable parameter of the full model, with a linear objective on
/// the reconstruction plus a direct term on the mask probabilities.
fn model(mode: ResidualMode) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let mut net = SegmentationModel::new(tiny_net(mode), 7)?;
    // larger residual pre-activations than the default init exercise tanh
    if let Some(head) = net.residual_head.as_mut() {
        head.head.visit_params("", &mut |_, p| p.value.mapv_inplace(|v| v * 5.0));
    }
    let frames = random4(&mut rng, (2, 3, 16, 16), 0.0, 1.0);
    let samples = [MotionSample { frame: 0, partner: 1 }, MotionSample { frame: 1, partner: 0 }];
    let (fh, fw) = net.config.feature_size(16, 16);
    let targets = random4(&mut rng, (2, 2, fh, fw), -2.0, 2.0);
    let weights = random4(&mut rng, (2, 2, fh, fw), -1.0, 1.0);
    let c = net.config.num_channels;
    let direct = random4(&mut rng, (2, c, fh, fw), -1.0, 1.0);

    let objective = |net: &mut SegmentationModel| {
        let pass = forward_model(net, &frames, &samples, &targets, true).expect("forward");
        dot(&pass.recon.total, &weights) + dot(&pass.probs, &direct)
    };
    net.zero_grad();
    let pass = forward_model(&mut net, &frames, &samples, &targets, true)?;
    backward_model(&mut net, &pass, &weights, Some(&direct));

    let mut worst = (0.0, String::new());
    check_params(&mut net, &mut rng, &mut worst, objective);
    verdict(worst)
}

pub fn model_pixelwise() -> Outcome {
    model(ResidualMode::Pixelwise)
}

pub fn model_scaling() -> Outcome {
    model(ResidualMode::Scaling)
}

pub fn model_without_residual() -> Outcome {
    model(ResidualMode::None)
}

/// Appearance loss on one channel of the segmentation head, back to the
/// head parameters and its input features.
pub fn appearance_through_seg_head() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let cfg = tiny_net(ResidualMode::None);
    let mut head = SegHead::new(&cfg, &mut rng);
    let (n, h, w) = (2, 4, 4);
    let mut features = random4(&mut rng, (n, cfg.merged_channels(), h, w), -1.0, 1.0);
    let targets = softmax_channels(&random4(&mut rng, (n, 1, h, w), 0.0, 1.0)).mapv(|v| v * 0.7);
    let channel = 1;
    let objective = |head: &mut SegHead, x: &Array4<f64>| {
        let p = head.forward(x, true);
        (0..n)
            .map(|j| appearance_loss(p.slice(s![j, channel, .., ..]), targets.slice(s![j, 0, .., ..])).expect("sizes"))
            .sum::<f64>()
    };

    head.zero_grad();
    let p = head.forward(&features, true);
    let mut dprobs = Array4::zeros(p.dim());
    for j in 0..n {
        let g = appearance_loss_grad(p.slice(s![j, channel, .., ..]), targets.slice(s![j, 0, .., ..]));
        dprobs.index_axis_mut(Axis(0), j).index_axis_mut(Axis(0), channel).assign(&g);
    }
    let dx = head.backward(&dprobs);

    let mut worst = (0.0, String::new());
    let snapshot = head.clone();
    check_input("features", &mut features, &dx, &mut rng, &mut worst, |x| {
        objective(&mut snapshot.clone(), x)
    });
    check_params(&mut head, &mut rng, &mut worst, |m| objective(m, &features));
    verdict(worst)
}
