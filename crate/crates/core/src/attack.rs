//! Adversarial examples against a frozen codec.
//!
//! Every loss is piecewise in the mean-square input noise `||n||^2`: above
//! the budget `epsilon` it returns the noise norm itself (pulling the noise
//! back inside the budget); below it, the attack objective.
//!
//! | mode              | objective below budget                                   |
//! |-------------------|----------------------------------------------------------|
//! | untargeted        | `1 - d(x_hat, x_hat*)`                                   |
//! | targeted          | `||x_hat* - x_hat_t||^2`                                 |
//! | masked targeted   | ROI term `+ lambda_bkg *` background term, both as above |
//!
//! Hard rounding has no useful gradient, so reconstructions inside the
//! losses use the additive-noise proxy with one fixed draw per attack,
//! shared by `x_hat`, `x_hat*` and `x_hat_t`. Reported metrics always use
//! hard rounding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::codec::{CodecModel, Quantization};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::image::ImageTensor;
use crate::metrics::{self, MetricReport};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    Untargeted,
    Targeted,
    MaskedTargeted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    L2,
    L1,
    MsSsim,
}

impl std::fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DistanceKind::L2 => "l2",
            DistanceKind::L1 => "l1",
            DistanceKind::MsSsim => "ms_ssim",
        })
    }
}

/// Binary region-of-interest map; `true` marks ROI pixels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    height: usize,
    width: usize,
    roi: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, roi: Vec<bool>) -> Result<Self> {
        if roi.len() != height * width {
            return Err(Error::Shape(format!("mask needs {} entries, got {}", height * width, roi.len())));
        }
        Ok(Self { height, width, roi })
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            roi: vec![true; height * width],
        }
    }

    /// ROI is the half-open rectangle `[y0, y1) x [x0, x1)`.
    pub fn rect(height: usize, width: usize, y0: usize, x0: usize, y1: usize, x1: usize) -> Self {
        let roi = (0..height * width)
            .map(|i| (y0..y1).contains(&(i / width)) && (x0..x1).contains(&(i % width)))
            .collect();
        Self { height, width, roi }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn roi_pixels(&self) -> usize {
        self.roi.iter().filter(|&&r| r).count()
    }

    pub fn is_roi(&self, y: usize, x: usize) -> bool {
        self.roi[y * self.width + x]
    }

    /// `[1, C, H, W]` indicator tensors of the ROI and of the background.
    fn weights(&self, channels: usize) -> (Tensor, Tensor) {
        let shape = [1, channels, self.height, self.width];
        let roi: Vec<f32> = (0..channels)
            .flat_map(|_| self.roi.iter().map(|&r| if r { 1.0 } else { 0.0 }))
            .collect();
        let bkg = roi.iter().map(|v| 1.0 - v).collect();
        (Tensor::from_vec(&shape, roi).unwrap(), Tensor::from_vec(&shape, bkg).unwrap())
    }
}

fn is_infinite(v: &f64) -> bool {
    v.is_infinite()
}

/// JSON has no infinity, so an infinite background weight is written as `"inf"`.
mod weight_serde {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if is_infinite(v) {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" || t == "infinity" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    /// Budget on the mean-square input noise.
    pub epsilon: f64,
    pub steps: usize,
    pub learning_rate: f32,
    pub mode: AttackMode,
    pub distance: DistanceKind,
    #[serde(skip)]
    pub target: Option<ImageTensor>,
    #[serde(skip)]
    pub mask: Option<Mask>,
    /// Background weight of the masked mode; infinity forbids background noise.
    #[serde(with = "weight_serde")]
    pub lambda_bkg: f64,
    /// Half-width of the uniform noise initialization.
    pub init_amplitude: f32,
    pub seed: u64,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            steps: 10_000,
            learning_rate: 1e-3,
            mode: AttackMode::Untargeted,
            distance: DistanceKind::L2,
            target: None,
            mask: None,
            lambda_bkg: f64::INFINITY,
            init_amplitude: 1e-2,
            seed: 0,
        }
    }
}

impl AttackSpec {
    pub fn untargeted(epsilon: f64, steps: usize, distance: DistanceKind, seed: u64) -> Self {
        Self {
            epsilon,
            steps,
            distance,
            seed,
            ..Self::default()
        }
    }

    pub fn targeted(target: ImageTensor, epsilon: f64, steps: usize, seed: u64) -> Self {
        Self {
            epsilon,
            steps,
            mode: AttackMode::Targeted,
            target: Some(target),
            seed,
            ..Self::default()
        }
    }

    pub fn masked(target: ImageTensor, mask: Mask, lambda_bkg: f64, epsilon: f64, steps: usize, seed: u64) -> Self {
        Self {
            mode: AttackMode::MaskedTargeted,
            mask: Some(mask),
            lambda_bkg,
            ..Self::targeted(target, epsilon, steps, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidAttack(m));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive and finite, got {}", self.epsilon));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.init_amplitude >= 0.0) {
            return bad("init_amplitude must be >= 0".into());
        }
        if !(self.lambda_bkg >= 0.0) {
            return bad(format!("lambda_bkg must be >= 0, got {}", self.lambda_bkg));
        }
        if self.mode == AttackMode::MaskedTargeted {
            match &self.mask {
                None => return bad("masked attack needs a mask".into()),
                Some(m) if m.roi_pixels() == 0 => return bad("mask has an empty region of interest".into()),
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// Metrics of the adversarial example after rounding it to 8 bits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizedPath {
    pub input_psnr: f64,
    pub metrics: MetricReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackResult {
    /// Effective noise `x* - x`, shape `[1, C, H, W]`.
    pub noise: Tensor,
    pub adversarial_example: ImageTensor,
    pub input_psnr: f64,
    pub adv_reconstruction: ImageTensor,
    pub original_reconstruction: ImageTensor,
    /// `x_hat*` against `x`.
    pub metrics: MetricReport,
    /// `x_hat` against `x`.
    pub original_metrics: MetricReport,
    pub quantized_8bit: QuantizedPath,
    /// Loss before each step; its length is the number of steps run.
    pub loss_trace: Vec<f64>,
    /// Mean-square noise (ROI only in masked mode) at termination.
    pub noise_norm: f64,
    pub budget_satisfied: bool,
}

/// Distance between images: mean squared, mean absolute or `1 - MS-SSIM`.
pub fn distance(a: &ImageTensor, b: &ImageTensor, kind: DistanceKind) -> Result<f64> {
    a.check_same_shape(b)?;
    match kind {
        DistanceKind::L2 => metrics::mse(a, b),
        DistanceKind::L1 => Ok(a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs() as f64)
            .sum::<f64>()
            / a.data().len() as f64),
        DistanceKind::MsSsim => Ok(1.0 - metrics::ms_ssim(a, b)?),
    }
}

/// Per-sample distance `[N]` between two image batches.
pub fn distance_graph(g: &mut Graph, a: Var, b: Var, kind: DistanceKind) -> Result<Var> {
    match kind {
        DistanceKind::L2 => {
            let d = g.sub(a, b);
            let s = g.square(d);
            Ok(g.mean_per_sample(s))
        }
        DistanceKind::L1 => {
            let d = g.sub(a, b);
            let s = g.abs(d);
            Ok(g.mean_per_sample(s))
        }
        DistanceKind::MsSsim => {
            let s = metrics::ms_ssim_graph(g, a, b)?;
            let neg = g.scale(s, -1.0);
            Ok(g.add_scalar(neg, 1.0))
        }
    }
}

/// Per-sample weighted mean `sum(w * v) / sum(w)` in f64, with one weight
/// map shared by all samples; zero when the weights vanish.
fn region_means(v: &Tensor, w: Option<&Tensor>) -> Vec<f64> {
    v.data()
        .chunks(v.sample_len())
        .map(|c| match w {
            None => c.iter().map(|&a| a as f64).sum::<f64>() / c.len() as f64,
            Some(w) => {
                let total = w.sum_f64();
                if total == 0.0 {
                    return 0.0;
                }
                c.iter().zip(w.data()).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() / total
            }
        })
        .collect()
}

fn region_means_graph(g: &mut Graph, v: Var, w: Option<&Tensor>) -> Var {
    match w {
        None => g.mean_per_sample(v),
        Some(w) => {
            let total = w.sum_f64();
            let n = g.value(v).shape()[0];
            let tiled = Tensor::concat_batch(&vec![w; n]).unwrap();
            let masked = g.mul_const(v, tiled);
            let s = g.sum_per_sample(masked);
            g.scale(s, if total == 0.0 { 0.0 } else { (1.0 / total) as f32 })
        }
    }
}

/// Random stream for sample `i` of a batch; sample 0 of a batch sees the
/// same draws as a single-image attack.
fn sample_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

/// Everything fixed for the duration of one attack on a batch of images:
/// the images, the proxy noise draws and the proxy reconstructions of the
/// sources and targets.
pub struct AttackProblem<'a> {
    model: &'a CodecModel,
    spec: AttackSpec,
    x: Tensor,
    quant: Quantization,
    x_hat: Tensor,
    target_hat: Option<Tensor>,
    regions: Option<(Tensor, Tensor)>,
}

/// Result of one loss evaluation, per sample.
pub struct LossEval {
    pub losses: Vec<f64>,
    /// Mean-square effective noise (ROI only in masked mode).
    pub noise_norms: Vec<f64>,
    pub over_budget: Vec<bool>,
    /// Gradient of the summed losses.
    pub grad: Option<Tensor>,
}

impl<'a> AttackProblem<'a> {
    pub fn new(model: &'a CodecModel, x: &ImageTensor, spec: &AttackSpec) -> Result<Self> {
        Self::new_batch(model, &[x], &[], spec)
    }

    /// `targets` is either empty (use `spec.target` for every image) or one per image.
    pub fn new_batch(model: &'a CodecModel, images: &[&ImageTensor], targets: &[&ImageTensor], spec: &AttackSpec) -> Result<Self> {
        spec.validate()?;
        let first = images.first().ok_or_else(|| Error::InvalidAttack("no images to attack".into()))?;
        let (c, h, w) = (first.channels(), first.height(), first.width());
        if c != model.config().image_channels {
            return Err(Error::Shape(format!("image has {c} channels, model expects {}", model.config().image_channels)));
        }
        let x = ImageTensor::batch(images)?;
        let quant = Self::proxy_noise(model, images.len(), h, w, spec.seed)?;
        let mut problem = Self {
            model,
            spec: spec.clone(),
            x,
            quant,
            x_hat: Tensor::zeros(&[0]),
            target_hat: None,
            regions: None,
        };
        problem.x_hat = problem.proxy_reconstructions(&problem.x)?;
        if spec.mode != AttackMode::Untargeted {
            let t = match (targets.is_empty(), &spec.target) {
                (true, Some(t)) => ImageTensor::batch(&vec![t; images.len()])?,
                (true, None) => return Err(Error::InvalidAttack(format!("{:?} attack needs a target", spec.mode))),
                (false, _) if targets.len() != images.len() => {
                    return Err(Error::InvalidAttack(format!("{} targets for {} images", targets.len(), images.len())))
                }
                (false, _) => ImageTensor::batch(targets)?,
            };
            if t.shape() != problem.x.shape() {
                return Err(Error::Shape(format!("target {:?} vs image {:?}", t.shape(), problem.x.shape())));
            }
            problem.target_hat = Some(problem.proxy_reconstructions(&t)?);
        }
        if spec.mode == AttackMode::MaskedTargeted {
            let m = spec.mask.as_ref().expect("validated");
            if (m.height(), m.width()) != (h, w) {
                return Err(Error::Shape(format!("mask is {}x{}, image is {h}x{w}", m.height(), m.width())));
            }
            problem.regions = Some(m.weights(c));
        }
        Ok(problem)
    }

    fn proxy_noise(model: &CodecModel, n: usize, h: usize, w: usize, seed: u64) -> Result<Quantization> {
        let mut latent = Vec::with_capacity(n);
        let mut hyper = Vec::with_capacity(n);
        for i in 0..n {
            match Quantization::sample(model.config(), 1, h, w, &mut sample_rng(seed, i)) {
                Quantization::Noise { latent: l, hyper: z } => {
                    latent.push(l);
                    hyper.extend(z);
                }
                Quantization::Round => unreachable!(),
            }
        }
        let cat = |v: &[Tensor]| Tensor::concat_batch(&v.iter().collect::<Vec<_>>());
        Ok(Quantization::Noise {
            latent: cat(&latent)?,
            hyper: if hyper.is_empty() { None } else { Some(cat(&hyper)?) },
        })
    }

    pub fn spec(&self) -> &AttackSpec {
        &self.spec
    }

    pub fn batch_size(&self) -> usize {
        self.x.shape()[0]
    }

    /// Clamped proxy-quantized reconstructions of a batch the size of the attacked one.
    pub fn proxy_reconstructions(&self, batch: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.model.params().bind(&mut g, false);
        let xv = g.constant(batch.clone());
        let pass = self.model.forward_graph(&mut g, &p, xv, &self.quant)?;
        let c = g.clamp(pass.x_hat, 0.0, 1.0);
        Ok(g.value(c).clone())
    }

    fn roi(&self) -> Option<&Tensor> {
        self.regions.as_ref().map(|r| &r.0)
    }

    fn bkg(&self) -> Option<&Tensor> {
        self.regions.as_ref().map(|r| &r.1)
    }

    fn masked(&self) -> bool {
        self.spec.mode == AttackMode::MaskedTargeted
    }

    /// Weight of the background term; an infinite weight is enforced by
    /// projection instead, so it contributes nothing here.
    fn bkg_weight(&self) -> f64 {
        if self.spec.lambda_bkg.is_finite() {
            self.spec.lambda_bkg
        } else {
            0.0
        }
    }

    /// Seeded uniform initialization, already projected.
    pub fn initial_noise(&self) -> Tensor {
        let a = self.spec.init_amplitude;
        let len = self.x.sample_len();
        let mut data = Vec::with_capacity(self.x.len());
        for i in 0..self.batch_size() {
            let mut rng = sample_rng(self.spec.seed ^ 0x9e37_79b9_7f4a_7c15, i);
            data.extend((0..len).map(|_| if a > 0.0 { rng.gen_range(-a..a) } else { 0.0 }));
        }
        let mut n = Tensor::from_vec(self.x.shape(), data).unwrap();
        self.project(&mut n);
        n
    }

    /// Zero the background noise when it is forbidden and keep `x + n` in range.
    pub fn project(&self, n: &mut Tensor) {
        let forbid = self.masked() && self.spec.lambda_bkg.is_infinite();
        let len = self.x.sample_len();
        let roi = self.roi();
        for (i, (v, &x)) in n.data_mut().iter_mut().zip(self.x.data()).enumerate() {
            if forbid && roi.is_some_and(|r| r.data()[i % len] == 0.0) {
                *v = 0.0;
            }
            *v = (x + *v).clamp(0.0, 1.0) - x;
        }
    }

    /// Per-sample losses at noise `n`, optionally with the gradient of their sum.
    pub fn evaluate(&self, n: &Tensor, want_grad: bool) -> Result<LossEval> {
        if n.shape() != self.x.shape() {
            return Err(Error::Shape(format!("noise {:?} vs image {:?}", n.shape(), self.x.shape())));
        }
        let lam = self.bkg_weight();
        let mut g = Graph::new();
        let nv = g.leaf(n.clone(), want_grad);
        let xv = g.constant(self.x.clone());
        let sum = g.add(xv, nv);
        let x_star = g.clamp(sum, 0.0, 1.0);
        let e = g.sub(x_star, xv);
        let e2 = g.square(e);
        let noise_norms = region_means(g.value(e2), self.roi());
        let over_budget: Vec<bool> = noise_norms.iter().map(|&v| v >= self.spec.epsilon).collect();
        let mut losses = noise_norms.clone();
        let mut over = region_means_graph(&mut g, e2, self.roi());
        if self.masked() {
            for (l, b) in losses.iter_mut().zip(region_means(g.value(e2), self.bkg())) {
                *l += lam * b;
            }
            let b = region_means_graph(&mut g, e2, self.bkg());
            let wb = g.scale(b, lam as f32);
            over = g.add(over, wb);
        }
        let per_sample = if over_budget.iter().all(|&o| o) {
            over
        } else {
            let p = self.model.params().bind(&mut g, false);
            let pass = self.model.forward_graph(&mut g, &p, x_star, &self.quant)?;
            let rec = g.clamp(pass.x_hat, 0.0, 1.0);
            let (under, values) = match self.spec.mode {
                AttackMode::Untargeted => {
                    let xh = g.constant(self.x_hat.clone());
                    let d = distance_graph(&mut g, xh, rec, self.spec.distance)?;
                    let values: Vec<f64> = g.value(d).data().iter().map(|&d| 1.0 - d as f64).collect();
                    (g.scale(d, -1.0), values)
                }
                AttackMode::Targeted | AttackMode::MaskedTargeted => {
                    let t = g.constant(self.target_hat.clone().expect("target"));
                    let d = g.sub(rec, t);
                    let d2 = g.square(d);
                    let mut values = region_means(g.value(d2), self.roi());
                    let roi = region_means_graph(&mut g, d2, self.roi());
                    let v = if self.masked() {
                        for (l, b) in values.iter_mut().zip(region_means(g.value(d2), self.bkg())) {
                            *l += lam * b;
                        }
                        let b = region_means_graph(&mut g, d2, self.bkg());
                        let wb = g.scale(b, lam as f32);
                        g.add(roi, wb)
                    } else {
                        roi
                    };
                    (v, values)
                }
            };
            for (i, v) in values.into_iter().enumerate() {
                if !over_budget[i] {
                    losses[i] = v;
                }
            }
            g.select(over_budget.clone(), over, under)
        };
        let grad = if want_grad {
            let total = g.sum_all(per_sample);
            let mut grads = g.backward(total);
            Some(grads.take(nv).unwrap_or_else(|| Tensor::zeros(n.shape())))
        } else {
            None
        };
        Ok(LossEval {
            losses,
            noise_norms,
            over_budget,
            grad,
        })
    }
}

fn single_loss(model: &CodecModel, x: &ImageTensor, n: &Tensor, spec: &AttackSpec) -> Result<f64> {
    Ok(AttackProblem::new(model, x, spec)?.evaluate(n, false)?.losses[0])
}

/// Untargeted distortion loss at noise `n`; `seed` fixes the proxy noise draw.
pub fn untargeted_loss(model: &CodecModel, x: &ImageTensor, n: &Tensor, epsilon: f64, kind: DistanceKind, seed: u64) -> Result<f64> {
    single_loss(model, x, n, &AttackSpec::untargeted(epsilon, 0, kind, seed))
}

pub fn targeted_loss(model: &CodecModel, x: &ImageTensor, n: &Tensor, target: &ImageTensor, epsilon: f64, seed: u64) -> Result<f64> {
    single_loss(model, x, n, &AttackSpec::targeted(target.clone(), epsilon, 0, seed))
}

#[allow(clippy::too_many_arguments)]
pub fn masked_targeted_loss(
    model: &CodecModel,
    x: &ImageTensor,
    n: &Tensor,
    target: &ImageTensor,
    mask: &Mask,
    epsilon: f64,
    lambda_bkg: f64,
    seed: u64,
) -> Result<f64> {
    single_loss(model, x, n, &AttackSpec::masked(target.clone(), mask.clone(), lambda_bkg, epsilon, 0, seed))
}

/// Run `spec.steps` Adam steps on the noise and report hard-rounded metrics.
/// The model is only borrowed, so its parameters cannot change.
pub fn generate_adversarial(x: &ImageTensor, model: &CodecModel, spec: &AttackSpec) -> Result<AttackResult> {
    Ok(generate_adversarial_batch(&[x], &[], model, spec)?.remove(0))
}

/// Attack several same-sized images at once. Each image gets its own noise,
/// budget check and loss trace; sample `i` draws from random stream `i` of
/// `spec.seed`. `targets` is empty or holds one target per image.
pub fn generate_adversarial_batch(
    images: &[&ImageTensor],
    targets: &[&ImageTensor],
    model: &CodecModel,
    spec: &AttackSpec,
) -> Result<Vec<AttackResult>> {
    let problem = AttackProblem::new_batch(model, images, targets, spec)?;
    let mut n = problem.initial_noise();
    let mut adam = Adam::new(AdamConfig::with_lr(spec.learning_rate));
    let mut traces = vec![Vec::with_capacity(spec.steps); images.len()];
    for _ in 0..spec.steps {
        let eval = problem.evaluate(&n, true)?;
        for (t, l) in traces.iter_mut().zip(eval.losses) {
            t.push(l);
        }
        let grad = eval.grad.expect("gradient requested");
        adam.step([(&mut n, &grad)]);
        problem.project(&mut n);
    }
    images
        .iter()
        .zip(traces)
        .enumerate()
        .map(|(i, (x, trace))| finish(x, model, &problem, n.sample(i), trace))
        .collect()
}

fn finish(x: &ImageTensor, model: &CodecModel, problem: &AttackProblem, n: Tensor, loss_trace: Vec<f64>) -> Result<AttackResult> {
    let sum = x.to_tensor().zip_map(&n, |a, b| a + b);
    let adversarial_example = ImageTensor::from_tensor(&sum, 0)?;
    let noise = adversarial_example.to_tensor().zip_map(&x.to_tensor(), |a, b| a - b);
    let noise_norm = region_means(&noise.map(|v| v * v), problem.roi())[0];
    let original = model.roundtrip(x)?;
    let adv = model.roundtrip(&adversarial_example)?;
    let q8 = adversarial_example.quantize_8bit();
    let adv8 = model.roundtrip(&q8)?;
    Ok(AttackResult {
        input_psnr: metrics::psnr(x, &adversarial_example)?,
        metrics: MetricReport::compare(x, &adv.x_hat, adv.bpp)?,
        original_metrics: MetricReport::compare(x, &original.x_hat, original.bpp)?,
        quantized_8bit: QuantizedPath {
            input_psnr: metrics::psnr(x, &q8)?,
            metrics: MetricReport::compare(x, &adv8.x_hat, adv8.bpp)?,
        },
        adv_reconstruction: adv.x_hat,
        original_reconstruction: original.x_hat,
        noise,
        adversarial_example,
        loss_trace,
        budget_satisfied: noise_norm < problem.spec.epsilon,
        noise_norm,
    })
}
