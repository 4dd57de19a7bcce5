//! Variational autoencoder image codec.
//!
//! ```text
//! x -> [conv s2, GDN] x3 -> conv s2 -> y -> Q -> y_hat
//! y_hat -> [deconv s2, IGDN] x3 -> deconv s2 -> x_hat
//! ```
//!
//! In factorized mode `y_hat` is priced by a learned per-channel prior. In
//! hyperprior mode a second autoencoder maps `|y|` to side information `z`,
//! whose quantized value is priced by the factorized prior and decoded into
//! per-element Gaussian scales for `y_hat`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::entropy;
use crate::error::{Error, Result};
use crate::graph::{nonneg_init, Graph, Var};
use crate::image::ImageTensor;
use crate::metrics;
use crate::params::{Bound, ParamStore};
use crate::quant::{round_half_away, uniform_noise};
use crate::tensor::Tensor;

/// Number of stride-2 stages in each main transform.
pub const STAGES: usize = 4;
/// Spatial reduction of the main analysis transform.
pub const DOWNSAMPLING: usize = 1 << STAGES;
const HYPER_DOWNSAMPLING: usize = 4;
const GDN_BETA_MIN: f32 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyMode {
    Factorized,
    Hyperprior,
}

impl std::fmt::Display for EntropyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EntropyMode::Factorized => "factorized",
            EntropyMode::Hyperprior => "hyperprior",
        })
    }
}

/// Distortion term of the training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    Mse,
    MsSsim,
}

impl std::fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DistortionKind::Mse => "mse",
            DistortionKind::MsSsim => "ms_ssim",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    pub mode: EntropyMode,
    pub image_channels: usize,
    pub hidden_channels: usize,
    pub latent_channels: usize,
    pub hyper_channels: usize,
    /// Odd kernel size of every strided layer.
    pub kernel: usize,
    /// Rate-distortion trade-off: loss = bpp + lambda * distortion.
    pub lambda: f64,
    pub distortion: DistortionKind,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            mode: EntropyMode::Factorized,
            image_channels: 3,
            hidden_channels: 128,
            latent_channels: 128,
            hyper_channels: 128,
            kernel: 5,
            lambda: 1024.0,
            distortion: DistortionKind::Mse,
        }
    }
}

impl CodecConfig {
    /// Tiny geometry for unit tests and gradient checks.
    pub fn toy() -> Self {
        Self {
            hidden_channels: 6,
            latent_channels: 5,
            hyper_channels: 4,
            kernel: 3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 || self.kernel < 3 {
            return Err(Error::InvalidParameter(format!("kernel must be odd and >= 3, got {}", self.kernel)));
        }
        if self.image_channels != 3 && self.image_channels != 1 {
            return Err(Error::InvalidParameter("image_channels must be 1 or 3".into()));
        }
        if self.hidden_channels == 0 || self.latent_channels == 0 || self.hyper_channels == 0 {
            return Err(Error::InvalidParameter("channel counts must be positive".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        Ok(())
    }

    /// Multiple that input height and width are padded to.
    pub fn pad_multiple(&self) -> usize {
        match self.mode {
            EntropyMode::Factorized => DOWNSAMPLING,
            EntropyMode::Hyperprior => DOWNSAMPLING * HYPER_DOWNSAMPLING,
        }
    }

    pub fn padded_dims(&self, height: usize, width: usize) -> (usize, usize) {
        let m = self.pad_multiple();
        (height.div_ceil(m) * m, width.div_ceil(m) * m)
    }

    /// Shape of the main latent for an unpadded `height x width` batch of `n`.
    pub fn latent_shape(&self, n: usize, height: usize, width: usize) -> [usize; 4] {
        let (h, w) = self.padded_dims(height, width);
        [n, self.latent_channels, h / DOWNSAMPLING, w / DOWNSAMPLING]
    }

    pub fn hyper_shape(&self, n: usize, height: usize, width: usize) -> [usize; 4] {
        let [n, _, h, w] = self.latent_shape(n, height, width);
        [n, self.hyper_channels, h / HYPER_DOWNSAMPLING, w / HYPER_DOWNSAMPLING]
    }
}

/// How latents are quantized inside a forward pass.
#[derive(Clone, Debug)]
pub enum Quantization {
    /// Hard rounding; no gradient flows through the latent.
    Round,
    /// Additive noise proxy with explicit noise tensors.
    Noise { latent: Tensor, hyper: Option<Tensor> },
}

impl Quantization {
    /// Draw proxy noise matching a `[n, C, height, width]` input batch.
    pub fn sample(config: &CodecConfig, n: usize, height: usize, width: usize, rng: &mut impl Rng) -> Self {
        let latent = uniform_noise(&config.latent_shape(n, height, width), rng);
        let hyper = (config.mode == EntropyMode::Hyperprior).then(|| uniform_noise(&config.hyper_shape(n, height, width), rng));
        Quantization::Noise { latent, hyper }
    }

    fn apply(&self, g: &mut Graph, v: Var, hyper: bool) -> Result<Var> {
        match self {
            Quantization::Round => {
                let r = g.value(v).map(round_half_away);
                Ok(g.constant(r))
            }
            Quantization::Noise { latent, hyper: hn } => {
                let noise = if hyper {
                    hn.as_ref()
                        .ok_or_else(|| Error::Shape("missing hyper-latent noise".into()))?
                } else {
                    latent
                };
                if noise.shape() != g.value(v).shape() {
                    return Err(Error::Shape(format!(
                        "quantization noise {:?} vs latent {:?}",
                        noise.shape(),
                        g.value(v).shape()
                    )));
                }
                Ok(g.add_const(v, noise))
            }
        }
    }
}

/// Nodes produced by one forward pass.
pub struct ForwardPass {
    pub y: Var,
    pub y_hat: Var,
    pub z: Option<Var>,
    pub z_hat: Option<Var>,
    pub scales: Option<Var>,
    /// Reconstruction cropped to the input size, not clamped.
    pub x_hat: Var,
    pub likelihoods: Vec<Var>,
    pub bits: Var,
}

/// Graph nodes of the rate-distortion objective.
pub struct RdTerms {
    pub loss: Var,
    pub rate_bpp: Var,
    pub distortion: Var,
    pub pass: ForwardPass,
}

/// Evaluated rate-distortion objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdValue {
    pub loss: f64,
    pub rate_bpp: f64,
    pub distortion: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HyperLatent {
    pub z: Tensor,
    pub z_hat: Tensor,
    pub likelihoods: Tensor,
}

/// Quantized representation of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub z: Tensor,
    pub z_hat: Tensor,
    pub likelihoods: Tensor,
    pub hyper: Option<HyperLatent>,
    pub height: usize,
    pub width: usize,
}

impl LatentCode {
    pub fn total_bits(&self) -> Result<f64> {
        let mut bits = entropy::rate_bits(&self.likelihoods)?;
        if let Some(h) = &self.hyper {
            bits += entropy::rate_bits(&h.likelihoods)?;
        }
        Ok(bits)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Roundtrip {
    pub x_hat: ImageTensor,
    pub bits: f64,
    pub bpp: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodecModel {
    config: CodecConfig,
    params: ParamStore,
}

fn uniform_tensor(shape: &[usize], bound: f32, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-bound..bound)).collect()).unwrap()
}

fn add_conv(p: &mut ParamStore, name: &str, cout: usize, cin: usize, k: usize, rng: &mut impl Rng) {
    let bound = 1.0 / ((cin * k * k) as f32).sqrt();
    p.insert(format!("{name}.weight"), uniform_tensor(&[cout, cin, k, k], bound, rng));
    p.insert(format!("{name}.bias"), uniform_tensor(&[cout], bound, rng));
}

fn add_deconv(p: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, rng: &mut impl Rng) {
    let bound = 1.0 / ((cout * k * k) as f32).sqrt();
    p.insert(format!("{name}.weight"), uniform_tensor(&[cin, cout, k, k], bound, rng));
    p.insert(format!("{name}.bias"), uniform_tensor(&[cout], bound, rng));
}

fn add_gdn(p: &mut ParamStore, name: &str, c: usize) {
    p.insert(format!("{name}.beta"), Tensor::full(&[c], nonneg_init(1.0)));
    let mut gamma = Tensor::full(&[c, c], nonneg_init(0.0));
    for i in 0..c {
        gamma.data_mut()[i * c + i] = nonneg_init(0.1);
    }
    p.insert(format!("{name}.gamma"), gamma);
}

const PRIOR: &str = "prior.";

impl CodecModel {
    /// Randomly initialized model; the same seed always gives the same weights.
    pub fn new(config: CodecConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, m, k) = (config.hidden_channels, config.latent_channels, config.kernel);
        let c = config.image_channels;
        let mut p = ParamStore::new();
        for i in 0..STAGES {
            let cin = if i == 0 { c } else { n };
            let cout = if i == STAGES - 1 { m } else { n };
            add_conv(&mut p, &format!("g_a.conv{i}"), cout, cin, k, &mut rng);
            if i < STAGES - 1 {
                add_gdn(&mut p, &format!("g_a.gdn{i}"), cout);
            }
        }
        for i in 0..STAGES {
            let cin = if i == 0 { m } else { n };
            let cout = if i == STAGES - 1 { c } else { n };
            add_deconv(&mut p, &format!("g_s.deconv{i}"), cin, cout, k, &mut rng);
            if i < STAGES - 1 {
                add_gdn(&mut p, &format!("g_s.igdn{i}"), cout);
            }
        }
        let prior_channels = match config.mode {
            EntropyMode::Factorized => m,
            EntropyMode::Hyperprior => {
                let nh = config.hyper_channels;
                add_conv(&mut p, "h_a.conv0", n, m, 3, &mut rng);
                add_conv(&mut p, "h_a.conv1", n, n, k, &mut rng);
                add_conv(&mut p, "h_a.conv2", nh, n, k, &mut rng);
                add_deconv(&mut p, "h_s.deconv0", nh, n, k, &mut rng);
                add_deconv(&mut p, "h_s.deconv1", n, n, k, &mut rng);
                add_conv(&mut p, "h_s.conv2", m, n, 3, &mut rng);
                nh
            }
        };
        for (name, t) in entropy::factorized_init(prior_channels, &mut rng) {
            p.insert(format!("{PRIOR}{name}"), t);
        }
        Ok(Self { config, params: p })
    }

    /// Reassemble a model from stored parameters, checking names and shapes.
    pub fn from_parts(config: CodecConfig, params: ParamStore) -> Result<Self> {
        let reference = Self::new(config.clone(), 0)?;
        if reference.params.len() != params.len() {
            return Err(Error::Architecture(format!(
                "expected {} parameter tensors, found {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (name, t) in reference.params.iter() {
            match params.get(name) {
                Some(s) if s.shape() == t.shape() => {}
                Some(s) => {
                    return Err(Error::Architecture(format!(
                        "`{name}` has shape {:?}, expected {:?}",
                        s.shape(),
                        t.shape()
                    )))
                }
                None => return Err(Error::Architecture(format!("missing parameter `{name}`"))),
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.config
    }

    pub fn lambda(&self) -> f64 {
        self.config.lambda
    }

    pub fn set_lambda(&mut self, lambda: f64) {
        self.config.lambda = lambda;
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// True when both models have the same configuration apart from lambda.
    pub fn same_architecture(&self, other: &CodecModel) -> bool {
        let mut a = self.config.clone();
        a.lambda = other.config.lambda;
        a == other.config
    }

    pub fn fingerprint(&self) -> String {
        self.params.bits_hash()
    }

    fn conv(&self, g: &mut Graph, p: &Bound, x: Var, name: &str, stride: usize) -> Var {
        let w = p.var(&format!("{name}.weight"));
        let b = p.var(&format!("{name}.bias"));
        let k = g.value(w).shape()[2];
        g.conv2d(x, w, b, stride, k / 2)
    }

    fn deconv(&self, g: &mut Graph, p: &Bound, x: Var, name: &str) -> Var {
        let w = p.var(&format!("{name}.weight"));
        let b = p.var(&format!("{name}.bias"));
        let k = g.value(w).shape()[2];
        g.conv_transpose2d(x, w, b, 2, k / 2)
    }

    fn gdn(&self, g: &mut Graph, p: &Bound, x: Var, name: &str, inverse: bool) -> Var {
        let beta = g.nonneg(p.var(&format!("{name}.beta")), GDN_BETA_MIN);
        let gamma = g.nonneg(p.var(&format!("{name}.gamma")), 0.0);
        g.gdn(x, beta, gamma, inverse)
    }

    /// Main analysis transform. Input height and width must be multiples of 16.
    pub fn analysis_graph(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let (_, c, h, w) = g.value(x).dims4();
        if c != self.config.image_channels {
            return Err(Error::Shape(format!("expected {} channels, got {c}", self.config.image_channels)));
        }
        if h % DOWNSAMPLING != 0 || w % DOWNSAMPLING != 0 {
            return Err(Error::Shape(format!(
                "analysis input {h}x{w} is not a multiple of {DOWNSAMPLING}; pad first"
            )));
        }
        let mut v = x;
        for i in 0..STAGES {
            v = self.conv(g, p, v, &format!("g_a.conv{i}"), 2);
            if i < STAGES - 1 {
                v = self.gdn(g, p, v, &format!("g_a.gdn{i}"), false);
            }
        }
        Ok(v)
    }

    /// Main synthesis transform; output is not clamped.
    pub fn synthesis_graph(&self, g: &mut Graph, p: &Bound, y_hat: Var) -> Result<Var> {
        let c = g.value(y_hat).dims4().1;
        if c != self.config.latent_channels {
            return Err(Error::Shape(format!(
                "latent has {c} channels, model expects {}",
                self.config.latent_channels
            )));
        }
        let mut v = y_hat;
        for i in 0..STAGES {
            v = self.deconv(g, p, v, &format!("g_s.deconv{i}"));
            if i < STAGES - 1 {
                v = self.gdn(g, p, v, &format!("g_s.igdn{i}"), true);
            }
        }
        Ok(v)
    }

    fn hyper_analysis(&self, g: &mut Graph, p: &Bound, y: Var) -> Var {
        let a = g.abs(y);
        let v = self.conv(g, p, a, "h_a.conv0", 1);
        let v = g.relu(v);
        let v = self.conv(g, p, v, "h_a.conv1", 2);
        let v = g.relu(v);
        self.conv(g, p, v, "h_a.conv2", 2)
    }

    fn hyper_synthesis(&self, g: &mut Graph, p: &Bound, z_hat: Var) -> Var {
        let v = self.deconv(g, p, z_hat, "h_s.deconv0");
        let v = g.relu(v);
        let v = self.deconv(g, p, v, "h_s.deconv1");
        let v = g.relu(v);
        let v = self.conv(g, p, v, "h_s.conv2", 1);
        g.softplus(v)
    }

    fn prior_vars(&self, p: &Bound) -> Vec<Var> {
        p.vars_with_prefix(PRIOR, &entropy::factorized_param_names())
    }

    /// Full pass: pad, analyse, quantize, price and synthesize.
    pub fn forward_graph(&self, g: &mut Graph, p: &Bound, x: Var, quant: &Quantization) -> Result<ForwardPass> {
        let (_, _, h, w) = g.value(x).dims4();
        let (ph, pw) = self.config.padded_dims(h, w);
        let xp = if (ph, pw) == (h, w) { x } else { g.pad_reflect(x, ph, pw) };
        let y = self.analysis_graph(g, p, xp)?;
        let y_hat = quant.apply(g, y, false)?;
        let prior = self.prior_vars(p);
        let (likelihoods, z, z_hat, scales) = match self.config.mode {
            EntropyMode::Factorized => (vec![entropy::factorized_likelihoods_graph(g, y_hat, &prior)?], None, None, None),
            EntropyMode::Hyperprior => {
                let z = self.hyper_analysis(g, p, y);
                let z_hat = quant.apply(g, z, true)?;
                let scales = self.hyper_synthesis(g, p, z_hat);
                let ly = entropy::gaussian_likelihoods_graph(g, y_hat, scales)?;
                let lz = entropy::factorized_likelihoods_graph(g, z_hat, &prior)?;
                (vec![ly, lz], Some(z), Some(z_hat), Some(scales))
            }
        };
        let bits = entropy::rate_bits_graph(g, &likelihoods);
        let xr = self.synthesis_graph(g, p, y_hat)?;
        let x_hat = if (ph, pw) == (h, w) { xr } else { g.crop(xr, h, w) };
        Ok(ForwardPass {
            y,
            y_hat,
            z,
            z_hat,
            scales,
            x_hat,
            likelihoods,
            bits,
        })
    }

    /// Rate-distortion objective `bpp + lambda * D` on a batch. Rate is the
    /// mean bits per unpadded pixel across the batch.
    pub fn rd_loss_graph(&self, g: &mut Graph, p: &Bound, x: Var, quant: &Quantization, kind: DistortionKind) -> Result<RdTerms> {
        let (n, _, h, w) = g.value(x).dims4();
        let pass = self.forward_graph(g, p, x, quant)?;
        let rate_bpp = g.scale(pass.bits, 1.0 / (n * h * w) as f32);
        let distortion = distortion_graph(g, x, pass.x_hat, kind)?;
        let weighted = g.scale(distortion, self.config.lambda as f32);
        let loss = g.add(rate_bpp, weighted);
        Ok(RdTerms {
            loss,
            rate_bpp,
            distortion,
            pass,
        })
    }

    /// Deterministic eval-mode objective on one image, with the clamped
    /// reconstruction as the decoder output.
    pub fn rd_loss(&self, x: &ImageTensor, kind: DistortionKind) -> Result<RdValue> {
        let rt = self.roundtrip(x)?;
        let distortion = distortion_value(x, &rt.x_hat, kind)?;
        Ok(RdValue {
            loss: rt.bpp + self.config.lambda * distortion,
            rate_bpp: rt.bpp,
            distortion,
        })
    }

    /// Continuous latent of an image whose sides are multiples of 16.
    pub fn analysis_transform(&self, x: &ImageTensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.to_tensor());
        let y = self.analysis_graph(&mut g, &p, xv)?;
        Ok(g.value(y).clone())
    }

    /// Unclamped decoder output for a latent batch.
    pub fn synthesis_raw(&self, z_hat: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let zv = g.constant(z_hat.clone());
        let x = self.synthesis_graph(&mut g, &p, zv)?;
        Ok(g.value(x).clone())
    }

    /// Decoded image (first batch entry), clamped to `[0, 1]`.
    pub fn synthesis_transform(&self, z_hat: &Tensor) -> Result<ImageTensor> {
        ImageTensor::from_tensor(&self.synthesis_raw(z_hat)?, 0)
    }

    /// Likelihoods of a quantized latent. Hyperprior mode needs the decoded scales.
    pub fn likelihoods(&self, z_hat: &Tensor, scales: Option<&Tensor>, mode: EntropyMode) -> Result<Tensor> {
        if mode != self.config.mode {
            return Err(Error::ModeMismatch {
                model: self.config.mode.to_string(),
                requested: mode.to_string(),
            });
        }
        match mode {
            EntropyMode::Factorized => entropy::factorized_likelihoods(&self.prior_tensors(), z_hat),
            EntropyMode::Hyperprior => {
                let s = scales.ok_or_else(|| Error::InvalidParameter("hyperprior likelihoods need scales".into()))?;
                entropy::gaussian_likelihoods(z_hat, s)
            }
        }
    }

    fn prior_tensors(&self) -> Vec<&Tensor> {
        entropy::factorized_param_names()
            .iter()
            .map(|n| self.params.get(&format!("{PRIOR}{n}")).expect("prior parameter"))
            .collect()
    }

    /// Eval-mode encoding of one image.
    pub fn encode(&self, x: &ImageTensor) -> Result<LatentCode> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.to_tensor());
        let pass = self.forward_graph(&mut g, &p, xv, &Quantization::Round)?;
        let hyper = match (pass.z, pass.z_hat) {
            (Some(z), Some(zh)) => Some(HyperLatent {
                z: g.value(z).clone(),
                z_hat: g.value(zh).clone(),
                likelihoods: g.value(pass.likelihoods[1]).clone(),
            }),
            _ => None,
        };
        Ok(LatentCode {
            z: g.value(pass.y).clone(),
            z_hat: g.value(pass.y_hat).clone(),
            likelihoods: g.value(pass.likelihoods[0]).clone(),
            hyper,
            height: x.height(),
            width: x.width(),
        })
    }

    /// `x_hat = f_D(round(f_E(x)))`, clamped and cropped, with its estimated rate.
    pub fn roundtrip(&self, x: &ImageTensor) -> Result<Roundtrip> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.to_tensor());
        let pass = self.forward_graph(&mut g, &p, xv, &Quantization::Round)?;
        let bits = pass
            .likelihoods
            .iter()
            .map(|l| entropy::rate_bits(g.value(*l)))
            .sum::<Result<f64>>()?;
        Ok(Roundtrip {
            x_hat: ImageTensor::from_tensor(g.value(pass.x_hat), 0)?,
            bits,
            bpp: metrics::bpp(bits, x.height(), x.width())?,
        })
    }
}

/// Distortion between two same-shaped NCHW nodes, averaged over the batch.
pub fn distortion_graph(g: &mut Graph, x: Var, x_hat: Var, kind: DistortionKind) -> Result<Var> {
    match kind {
        DistortionKind::Mse => {
            let d = g.sub(x, x_hat);
            let s = g.square(d);
            Ok(g.mean_all(s))
        }
        DistortionKind::MsSsim => {
            let s = metrics::ms_ssim_graph(g, x, x_hat)?;
            let m = g.mean_all(s);
            let neg = g.scale(m, -1.0);
            Ok(g.add_scalar(neg, 1.0))
        }
    }
}

pub fn distortion_value(x: &ImageTensor, x_hat: &ImageTensor, kind: DistortionKind) -> Result<f64> {
    match kind {
        DistortionKind::Mse => metrics::mse(x, x_hat),
        DistortionKind::MsSsim => Ok(1.0 - metrics::ms_ssim(x, x_hat)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_image(seed: u64, c: usize, h: usize, w: usize) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(c, h, w, |_, _, _| rng.gen_range(0.2..0.8)).unwrap()
    }

    #[test]
    fn latent_geometry_and_decode_shape() {
        let cfg = CodecConfig {
            hidden_channels: 8,
            latent_channels: 128,
            ..CodecConfig::toy()
        };
        let model = CodecModel::new(cfg, 1).unwrap();
        let x = random_image(1, 3, 64, 48);
        let z = model.analysis_transform(&x).unwrap();
        assert_eq!(z.shape(), &[1, 128, 4, 3]);
        let out = model.synthesis_raw(&z).unwrap();
        assert_eq!(out.shape(), &[1, 3, 64, 48]);
    }

    #[test]
    fn analysis_rejects_unpadded_input() {
        let model = CodecModel::new(CodecConfig::toy(), 1).unwrap();
        assert!(matches!(model.analysis_transform(&random_image(1, 3, 20, 16)), Err(Error::Shape(_))));
        // the full pipeline pads for itself
        let rt = model.roundtrip(&random_image(1, 3, 20, 16)).unwrap();
        assert_eq!((rt.x_hat.height(), rt.x_hat.width()), (20, 16));
    }

    #[test]
    fn zero_input_gives_finite_latent() {
        let model = CodecModel::new(CodecConfig::toy(), 3).unwrap();
        let z = model.analysis_transform(&ImageTensor::constant(3, 32, 32, 0.0).unwrap()).unwrap();
        assert!(z.is_finite());
    }

    #[test]
    fn roundtrip_is_deterministic_and_costs_bits() {
        for mode in [EntropyMode::Factorized, EntropyMode::Hyperprior] {
            let model = CodecModel::new(CodecConfig { mode, ..CodecConfig::toy() }, 4).unwrap();
            let x = random_image(2, 3, 64, 64);
            let a = model.roundtrip(&x).unwrap();
            let b = model.roundtrip(&x).unwrap();
            assert_eq!(a, b);
            assert!(a.bpp > 0.0);
            let fresh = CodecModel::new(CodecConfig { mode, ..CodecConfig::toy() }, 4).unwrap();
            assert_eq!(fresh.roundtrip(&x).unwrap(), a);
        }
    }

    #[test]
    fn random_model_is_not_invertible() {
        let model = CodecModel::new(CodecConfig::toy(), 5).unwrap();
        let x = random_image(3, 3, 32, 32);
        let y = model.analysis_transform(&x).unwrap();
        let back = model.synthesis_transform(&y).unwrap();
        assert!(metrics::mse(&x, &back).unwrap() > 0.0);
    }

    #[test]
    fn eval_latent_within_half_of_continuous() {
        let model = CodecModel::new(CodecConfig::toy(), 6).unwrap();
        let code = model.encode(&random_image(4, 3, 32, 16)).unwrap();
        for (a, b) in code.z.data().iter().zip(code.z_hat.data()) {
            assert!((a - b).abs() <= 0.5);
        }
        assert!(code.likelihoods.data().iter().all(|&p| p > 0.0 && p <= 1.0));
    }

    #[test]
    fn likelihood_mode_mismatch_is_an_error() {
        let model = CodecModel::new(CodecConfig::toy(), 7).unwrap();
        let z = Tensor::zeros(&[1, 5, 1, 1]);
        assert!(matches!(
            model.likelihoods(&z, None, EntropyMode::Hyperprior),
            Err(Error::ModeMismatch { .. })
        ));
        assert!(model.likelihoods(&z, None, EntropyMode::Factorized).is_ok());
    }

    #[test]
    fn zero_lambda_loss_is_rate() {
        let mut model = CodecModel::new(CodecConfig::toy(), 8).unwrap();
        model.set_lambda(0.0);
        let x = random_image(5, 3, 16, 16);
        let v = model.rd_loss(&x, DistortionKind::Mse).unwrap();
        assert_eq!(v.loss, v.rate_bpp);
        let mut g = Graph::new();
        let p = model.params().bind(&mut g, true);
        let xv = g.constant(x.to_tensor());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = Quantization::sample(model.config(), 1, 16, 16, &mut rng);
        let t = model.rd_loss_graph(&mut g, &p, xv, &q, DistortionKind::MsSsim).unwrap();
        assert_eq!(g.scalar(t.loss), g.scalar(t.rate_bpp));
    }

    #[test]
    fn perfect_reconstruction_has_zero_distortion() {
        let x = random_image(6, 3, 16, 16);
        assert_eq!(distortion_value(&x, &x, DistortionKind::Mse).unwrap(), 0.0);
        assert!(distortion_value(&x, &x, DistortionKind::MsSsim).unwrap().abs() < 1e-6);
    }

    fn directional_check(f: impl Fn(&Tensor) -> (f64, Tensor), at: &Tensor, seed: u64, h: f32, along_gradient: bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, grad) = f(at);
        let dir = if along_gradient {
            let peak = grad.data().iter().fold(0f32, |m, v| m.max(v.abs())).max(1e-12);
            grad.map(|v| v / peak)
        } else {
            at.map(|_| rng.gen_range(-1.0f32..1.0))
        };
        let analytic: f64 = grad.data().iter().zip(dir.data()).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        let mut plus = at.clone();
        plus.axpy(h, &dir);
        let mut minus = at.clone();
        minus.axpy(-h, &dir);
        let numeric = (f(&plus).0 - f(&minus).0) / (2.0 * h as f64);
        let tol = 1e-2 * analytic.abs().max(numeric.abs()).max(1e-3);
        assert!((analytic - numeric).abs() < tol, "analytic {analytic} numeric {numeric}");
    }

    #[test]
    fn reconstruction_gradient_wrt_latent() {
        let model = CodecModel::new(CodecConfig::toy(), 10).unwrap();
        let x = random_image(7, 3, 16, 16);
        let z0 = model.analysis_transform(&x).unwrap();
        let f = |z: &Tensor| {
            let mut g = Graph::new();
            let p = model.params().bind(&mut g, false);
            let zv = g.param(z.clone());
            let xh = model.synthesis_graph(&mut g, &p, zv).unwrap();
            let xv = g.constant(x.to_tensor());
            let d = distortion_graph(&mut g, xv, xh, DistortionKind::Mse).unwrap();
            let v = g.scalar(d) as f64;
            let mut grads = g.backward(d);
            (v, grads.take(zv).unwrap())
        };
        directional_check(f, &z0, 1, 1e-3, false);
    }

    #[test]
    fn rd_gradient_wrt_encoder_weight() {
        for (mode, kind) in [
            (EntropyMode::Factorized, DistortionKind::Mse),
            (EntropyMode::Hyperprior, DistortionKind::Mse),
            (EntropyMode::Factorized, DistortionKind::MsSsim),
        ] {
            let cfg = CodecConfig {
                mode,
                lambda: 50.0,
                ..CodecConfig::toy()
            };
            let model = CodecModel::new(cfg, 11).unwrap();
            let x = random_image(8, 3, 16, 16);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let q = Quantization::sample(model.config(), 1, 16, 16, &mut rng);
            let name = "g_a.conv1.weight";
            let f = |w: &Tensor| {
                let mut m = model.clone();
                *m.params_mut().get_mut(name).unwrap() = w.clone();
                let mut g = Graph::new();
                let p = m.params().bind(&mut g, true);
                let xv = g.constant(x.to_tensor());
                let t = m.rd_loss_graph(&mut g, &p, xv, &q, kind).unwrap();
                let v = g.scalar(t.loss);
                let mut grads = g.backward(t.loss);
                (v, m.params().gradients(&p, &mut grads).get(name).unwrap().clone())
            };
            // the loss is an f32 scalar near 10; stepping along the gradient keeps
            // the difference well above its rounding
            directional_check(f, model.params().get(name).unwrap(), 2, 6e-3, true);
        }
    }

    #[test]
    fn hyperprior_code_carries_side_information() {
        let cfg = CodecConfig {
            mode: EntropyMode::Hyperprior,
            ..CodecConfig::toy()
        };
        let model = CodecModel::new(cfg, 12).unwrap();
        let x = random_image(9, 3, 64, 64);
        let code = model.encode(&x).unwrap();
        let h = code.hyper.as_ref().unwrap();
        assert_eq!(h.z.shape(), &[1, 4, 1, 1]);
        assert_eq!(h.z_hat, h.z.map(round_half_away));
        let rt = model.roundtrip(&x).unwrap();
        assert!((code.total_bits().unwrap() - rt.bits).abs() < 1e-9 * rt.bits.max(1.0));
    }

    #[test]
    fn from_parts_checks_architecture() {
        let model = CodecModel::new(CodecConfig::toy(), 9).unwrap();
        let other = CodecConfig {
            latent_channels: 7,
            ..CodecConfig::toy()
        };
        assert!(matches!(
            CodecModel::from_parts(other, model.params().clone()),
            Err(Error::Architecture(_))
        ));
        assert_eq!(
            CodecModel::from_parts(CodecConfig::toy(), model.params().clone()).unwrap(),
            model
        );
    }

    proptest::proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(12))]

        #[test]
        fn any_size_roundtrips_deterministically(seed in 0u64..1000, h in 1usize..40, w in 1usize..40) {
            let model = CodecModel::new(CodecConfig::toy(), 8).unwrap();
            let x = random_image(seed, 3, h, w);
            let a = model.roundtrip(&x).unwrap();
            proptest::prop_assert_eq!((a.x_hat.height(), a.x_hat.width()), (h, w));
            proptest::prop_assert!(a.bpp >= 0.0);
            proptest::prop_assert_eq!(model.roundtrip(&x).unwrap(), a);
            let code = model.encode(&x).unwrap();
            for (z, q) in code.z.data().iter().zip(code.z_hat.data()) {
                proptest::prop_assert!((z - q).abs() <= 0.5);
            }
        }
    }
}
