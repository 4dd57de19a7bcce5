//! Entropy models: the learned factorized prior and the zero-mean Gaussian
//! conditional used by the hyperprior variant, plus rate accounting.
//!
//! Both models assign each quantized latent element the probability mass of
//! its unit-width bin, `p(z) = C(z + 1/2) - C(z - 1/2)`.
//!
//! The factorized prior builds `C` per channel as `sigmoid(f(v))`, where `f`
//! is a small monotone network `1 -> 3 -> 3 -> 3 -> 1`. Each layer applies a
//! softplus-constrained matrix, a bias and, except for the last one, the
//! residual nonlinearity `x + tanh(a) * tanh(x)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{CustomOp, Graph, Var};
use crate::tensor::Tensor;

/// Smallest likelihood ever reported; keeps `-log2 p` finite.
pub const LIKELIHOOD_FLOOR: f32 = 1e-9;

/// Lower bound on the Gaussian scale.
pub const SCALE_FLOOR: f32 = 1e-6;

const DIMS: [usize; 5] = [1, 3, 3, 3, 1];
const LAYERS: usize = DIMS.len() - 1;
const INIT_SCALE: f64 = 10.0;

/// Names (without prefix) of the factorized prior parameters, in binding order.
pub fn factorized_param_names() -> Vec<String> {
    let mut names = Vec::new();
    for k in 0..LAYERS {
        names.push(format!("matrix{k}"));
    }
    for k in 0..LAYERS {
        names.push(format!("bias{k}"));
    }
    for k in 0..LAYERS - 1 {
        names.push(format!("factor{k}"));
    }
    names
}

/// Fresh factorized prior parameters for `channels` channels, named as in
/// [`factorized_param_names`].
pub fn factorized_init(channels: usize, rng: &mut impl Rng) -> Vec<(String, Tensor)> {
    let scale = INIT_SCALE.powf(1.0 / LAYERS as f64);
    let mut out = Vec::new();
    for k in 0..LAYERS {
        let (din, dout) = (DIMS[k], DIMS[k + 1]);
        let init = ((1.0 / scale / dout as f64).exp_m1()).ln() as f32;
        out.push((format!("matrix{k}"), Tensor::full(&[channels, dout, din], init)));
    }
    for k in 0..LAYERS {
        let dout = DIMS[k + 1];
        let data = (0..channels * dout).map(|_| rng.gen_range(-0.5f32..0.5)).collect();
        out.push((format!("bias{k}"), Tensor::from_vec(&[channels, dout], data).unwrap()));
    }
    for k in 0..LAYERS - 1 {
        out.push((format!("factor{k}"), Tensor::zeros(&[channels, DIMS[k + 1]])));
    }
    out
}

/// Transformed parameters for one channel of the factorized prior:
/// `softplus(matrix)`, `sigmoid(matrix)` (its derivative), bias and `tanh(factor)`.
struct ChannelParams {
    matrices: [[f64; 9]; LAYERS],
    dmatrices: [[f64; 9]; LAYERS],
    biases: [[f64; 3]; LAYERS],
    factors: [[f64; 3]; LAYERS - 1],
}

impl ChannelParams {
    fn new(params: &[&Tensor], c: usize) -> Self {
        let slice = |t: &Tensor, per: usize| -> Vec<f64> { t.data()[c * per..(c + 1) * per].iter().map(|&v| v as f64).collect() };
        let mut out = Self {
            matrices: [[0.0; 9]; LAYERS],
            dmatrices: [[0.0; 9]; LAYERS],
            biases: [[0.0; 3]; LAYERS],
            factors: [[0.0; 3]; LAYERS - 1],
        };
        for k in 0..LAYERS {
            for (i, raw) in slice(params[k], DIMS[k] * DIMS[k + 1]).into_iter().enumerate() {
                out.matrices[k][i] = softplus64(raw);
                out.dmatrices[k][i] = sigmoid64(raw);
            }
            for (i, b) in slice(params[LAYERS + k], DIMS[k + 1]).into_iter().enumerate() {
                out.biases[k][i] = b;
            }
        }
        for k in 0..LAYERS - 1 {
            for (i, f) in slice(params[2 * LAYERS + k], DIMS[k + 1]).into_iter().enumerate() {
                out.factors[k][i] = f.tanh();
            }
        }
        out
    }
}

/// Gradient accumulators mirroring [`ChannelParams`] for a single channel.
struct ChannelGrads {
    matrices: [[f64; 9]; LAYERS],
    biases: [[f64; 3]; LAYERS],
    factors: [[f64; 3]; LAYERS - 1],
}

impl ChannelGrads {
    fn zero() -> Self {
        Self {
            matrices: [[0.0; 9]; LAYERS],
            biases: [[0.0; 3]; LAYERS],
            factors: [[0.0; 3]; LAYERS - 1],
        }
    }
}

fn softplus64(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

fn sigmoid64(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Evaluate the cumulative logit `f(v)`. When `grads` is given, also
/// backpropagate `upstream * df` into the parameter accumulators. Returns
/// `(f(v), f'(v))`.
fn logit(p: &ChannelParams, v: f64, upstream: f64, grads: Option<&mut ChannelGrads>) -> (f64, f64) {
    let mut xs = [[0f64; 3]; LAYERS + 1];
    let mut pre = [[0f64; 3]; LAYERS];
    xs[0][0] = v;
    for k in 0..LAYERS {
        let (din, dout) = (DIMS[k], DIMS[k + 1]);
        for i in 0..dout {
            let mut acc = p.biases[k][i];
            for j in 0..din {
                acc += p.matrices[k][i * din + j] * xs[k][j];
            }
            pre[k][i] = acc;
            xs[k + 1][i] = if k < LAYERS - 1 {
                acc + p.factors[k][i] * acc.tanh()
            } else {
                acc
            };
        }
    }
    // reverse pass; the derivative w.r.t. v is always needed
    let mut gx = [0f64; 3];
    gx[0] = 1.0;
    let mut grads = grads;
    for k in (0..LAYERS).rev() {
        let (din, dout) = (DIMS[k], DIMS[k + 1]);
        let mut gy = [0f64; 3];
        for i in 0..dout {
            gy[i] = if k < LAYERS - 1 {
                let fa = p.factors[k][i];
                let ty = pre[k][i].tanh();
                if let Some(gr) = grads.as_deref_mut() {
                    gr.factors[k][i] += upstream * gx[i] * ty * (1.0 - fa * fa);
                }
                gx[i] * (1.0 + fa * (1.0 - ty * ty))
            } else {
                gx[i]
            };
        }
        let mut gin = [0f64; 3];
        for i in 0..dout {
            if let Some(gr) = grads.as_deref_mut() {
                gr.biases[k][i] += upstream * gy[i];
            }
            for j in 0..din {
                gin[j] += p.matrices[k][i * din + j] * gy[i];
                if let Some(gr) = grads.as_deref_mut() {
                    gr.matrices[k][i * din + j] += upstream * gy[i] * xs[k][j] * p.dmatrices[k][i * din + j];
                }
            }
        }
        gx = gin;
    }
    (xs[LAYERS][0], gx[0])
}

/// Bin mass under the factorized prior plus its partial derivatives with
/// respect to the upper and lower logits.
fn bin_mass(upper: f64, lower: f64) -> (f64, f64, f64) {
    // evaluate on the side of the sigmoid with more resolution
    let s = if upper + lower > 0.0 { -1.0 } else { 1.0 };
    let su = sigmoid64(s * upper);
    let sl = sigmoid64(s * lower);
    let q = su - sl;
    let sq = if q >= 0.0 { 1.0 } else { -1.0 };
    (q.abs(), sq * s * su * (1.0 - su), -sq * s * sl * (1.0 - sl))
}

fn check_factorized_params(params: &[&Tensor], channels: usize) -> Result<()> {
    if params.len() != 3 * LAYERS - 1 {
        return Err(Error::Shape(format!(
            "factorized prior needs {} parameter tensors, got {}",
            3 * LAYERS - 1,
            params.len()
        )));
    }
    if params.iter().any(|t| t.shape()[0] != channels) {
        return Err(Error::Shape("factorized prior channel count mismatch".into()));
    }
    Ok(())
}

/// Per-element likelihoods of `z` (NCHW) under the factorized prior.
pub fn factorized_likelihoods(params: &[&Tensor], z: &Tensor) -> Result<Tensor> {
    let (_, c, h, w) = z.dims4();
    check_factorized_params(params, c)?;
    let plane = h * w;
    let mut out = Tensor::zeros(z.shape());
    let cps: Vec<_> = (0..c).map(|ch| ChannelParams::new(params, ch)).collect();
    for (idx, (o, &v)) in out.data_mut().iter_mut().zip(z.data()).enumerate() {
        let cp = &cps[(idx / plane) % c];
        let (fu, _) = logit(cp, v as f64 + 0.5, 0.0, None);
        let (fl, _) = logit(cp, v as f64 - 0.5, 0.0, None);
        *o = (bin_mass(fu, fl).0 as f32).max(LIKELIHOOD_FLOOR);
    }
    Ok(out)
}

struct FactorizedOp {
    channels: usize,
}

impl CustomOp for FactorizedOp {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let z = inputs[0];
        let params = &inputs[1..];
        let (_, c, h, w) = z.dims4();
        let plane = h * w;
        let want_params = needs[1..].iter().any(|&b| b);
        let mut dz = needs[0].then(|| Tensor::zeros(z.shape()));
        let mut acc: Vec<ChannelGrads> = (0..self.channels).map(|_| ChannelGrads::zero()).collect();
        let cps: Vec<_> = (0..c).map(|ch| ChannelParams::new(params, ch)).collect();
        for idx in 0..z.len() {
            let g = grad.data()[idx] as f64;
            if g == 0.0 || output.data()[idx] <= LIKELIHOOD_FLOOR {
                continue;
            }
            let ch = (idx / plane) % c;
            let cp = &cps[ch];
            let v = z.data()[idx] as f64;
            let (fu, _) = logit(cp, v + 0.5, 0.0, None);
            let (fl, _) = logit(cp, v - 0.5, 0.0, None);
            let (_, dpu, dpl) = bin_mass(fu, fl);
            let (_, du) = logit(cp, v + 0.5, g * dpu, want_params.then_some(&mut acc[ch]));
            let (_, dl) = logit(cp, v - 0.5, g * dpl, want_params.then_some(&mut acc[ch]));
            if let Some(dz) = dz.as_mut() {
                dz.data_mut()[idx] = (g * (dpu * du + dpl * dl)) as f32;
            }
        }
        let mut out = vec![dz];
        for (i, p) in params.iter().enumerate() {
            if !needs[i + 1] {
                out.push(None);
                continue;
            }
            let mut t = Tensor::zeros(p.shape());
            let per = p.len() / self.channels;
            for (ch, a) in acc.iter().enumerate() {
                let src: &[f64] = if i < LAYERS {
                    &a.matrices[i][..per]
                } else if i < 2 * LAYERS {
                    &a.biases[i - LAYERS][..per]
                } else {
                    &a.factors[i - 2 * LAYERS][..per]
                };
                for (d, s) in t.data_mut()[ch * per..(ch + 1) * per].iter_mut().zip(src) {
                    *d = *s as f32;
                }
            }
            out.push(Some(t));
        }
        out
    }
}

/// Differentiable factorized-prior likelihoods. `params` follow
/// [`factorized_param_names`] order.
pub fn factorized_likelihoods_graph(g: &mut Graph, z: Var, params: &[Var]) -> Result<Var> {
    let vals: Vec<&Tensor> = params.iter().map(|v| g.value(*v)).collect();
    let out = factorized_likelihoods(&vals, g.value(z))?;
    let channels = g.value(z).dims4().1;
    let mut inputs = vec![z];
    inputs.extend_from_slice(params);
    Ok(g.custom(inputs, out, Box::new(FactorizedOp { channels })))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Unit-bin mass of a zero-mean Gaussian with scale `sigma` at `y`.
pub fn gaussian_bin_mass(y: f32, sigma: f32) -> f32 {
    let s = sigma.max(SCALE_FLOOR) as f64;
    let v = (y as f64).abs();
    let p = normal_cdf((0.5 - v) / s) - normal_cdf((-0.5 - v) / s);
    (p as f32).max(LIKELIHOOD_FLOOR)
}

/// Gaussian conditional likelihoods for latents `y` with per-element scales.
pub fn gaussian_likelihoods(y: &Tensor, sigma: &Tensor) -> Result<Tensor> {
    if y.shape() != sigma.shape() {
        return Err(Error::Shape(format!(
            "latent {:?} vs scales {:?}",
            y.shape(),
            sigma.shape()
        )));
    }
    Ok(y.zip_map(sigma, gaussian_bin_mass))
}

struct GaussianOp;

impl CustomOp for GaussianOp {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (y, sigma) = (inputs[0], inputs[1]);
        let mut dy = needs[0].then(|| Tensor::zeros(y.shape()));
        let mut ds = needs[1].then(|| Tensor::zeros(y.shape()));
        for i in 0..y.len() {
            if output.data()[i] <= LIKELIHOOD_FLOOR {
                continue;
            }
            let g = grad.data()[i] as f64;
            let sraw = sigma.data()[i];
            let s = sraw.max(SCALE_FLOOR) as f64;
            let yv = y.data()[i] as f64;
            let v = yv.abs();
            let (a, b) = ((0.5 - v) / s, (-0.5 - v) / s);
            let (pa, pb) = (normal_pdf(a), normal_pdf(b));
            if let Some(dy) = dy.as_mut() {
                let dv = (-pa + pb) / s;
                let sg = if yv > 0.0 {
                    1.0
                } else if yv < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                dy.data_mut()[i] = (g * sg * dv) as f32;
            }
            if let Some(ds) = ds.as_mut() {
                if sraw >= SCALE_FLOOR {
                    ds.data_mut()[i] = (g * (-pa * a + pb * b) / s) as f32;
                }
            }
        }
        vec![dy, ds]
    }
}

/// Differentiable Gaussian conditional likelihoods.
pub fn gaussian_likelihoods_graph(g: &mut Graph, y: Var, sigma: Var) -> Result<Var> {
    let out = gaussian_likelihoods(g.value(y), g.value(sigma))?;
    Ok(g.custom(vec![y, sigma], out, Box::new(GaussianOp)))
}

/// Total information content `sum(-log2 p)` in bits.
pub fn rate_bits(likelihoods: &Tensor) -> Result<f64> {
    let mut bits = 0f64;
    for &p in likelihoods.data() {
        if !(p > 0.0) {
            return Err(Error::NonPositiveLikelihood(p));
        }
        bits -= (p as f64).log2();
    }
    Ok(bits)
}

struct NegLog2Op;

impl CustomOp for NegLog2Op {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let ln2 = std::f32::consts::LN_2;
        vec![Some(grad.zip_map(inputs[0], |g, p| {
            if p > LIKELIHOOD_FLOOR {
                -g / (p * ln2)
            } else {
                0.0
            }
        }))]
    }
}

/// Differentiable total rate in bits of one or more likelihood tensors.
pub fn rate_bits_graph(g: &mut Graph, likelihoods: &[Var]) -> Var {
    let mut total: Option<Var> = None;
    for &p in likelihoods {
        let bits = g.value(p).map(|v| -(v.max(LIKELIHOOD_FLOOR)).log2());
        let b = g.custom(vec![p], bits, Box::new(NegLog2Op));
        let s = g.sum_all(b);
        total = Some(match total {
            Some(t) => g.add(t, s),
            None => s,
        });
    }
    total.unwrap_or_else(|| g.constant(Tensor::scalar(0.0)))
}

/// A per-channel cumulative distribution over the real line.
pub trait Cdf {
    fn cdf(&self, channel: usize, v: f64) -> f64;
}

/// Bin masses `C(z + 1/2) - C(z - 1/2)` under an arbitrary per-channel CDF.
pub fn bin_likelihoods(cdf: &dyn Cdf, z: &Tensor) -> Tensor {
    let (_, c, h, w) = z.dims4();
    let plane = h * w;
    let mut out = Tensor::zeros(z.shape());
    for (idx, (o, &v)) in out.data_mut().iter_mut().zip(z.data()).enumerate() {
        let ch = (idx / plane) % c;
        let p = cdf.cdf(ch, v as f64 + 0.5) - cdf.cdf(ch, v as f64 - 0.5);
        *o = (p as f32).max(LIKELIHOOD_FLOOR);
    }
    out
}

/// The learned factorized prior viewed as a [`Cdf`].
pub struct FactorizedCdf<'a> {
    params: Vec<&'a Tensor>,
}

impl<'a> FactorizedCdf<'a> {
    pub fn new(params: Vec<&'a Tensor>) -> Result<Self> {
        let c = params.first().map(|t| t.shape()[0]).unwrap_or(0);
        check_factorized_params(&params, c)?;
        Ok(Self { params })
    }
}

impl Cdf for FactorizedCdf<'_> {
    fn cdf(&self, channel: usize, v: f64) -> f64 {
        let cp = ChannelParams::new(&self.params, channel);
        sigmoid64(logit(&cp, v, 0.0, None).0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct UniformBins;

    impl Cdf for UniformBins {
        fn cdf(&self, _channel: usize, v: f64) -> f64 {
            ((v + 128.0) / 256.0).clamp(0.0, 1.0)
        }
    }

    fn random_params(channels: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p: Vec<Tensor> = factorized_init(channels, &mut rng).into_iter().map(|(_, t)| t).collect();
        for t in p.iter_mut() {
            for v in t.data_mut() {
                *v += rng.gen_range(-0.3f32..0.3);
            }
        }
        p
    }

    #[test]
    fn uniform_cdf_gives_1_over_256() {
        let z = Tensor::from_vec(&[1, 2, 1, 3], vec![-3.0, 0.0, 5.0, 1.0, -100.0, 17.0]).unwrap();
        let p = bin_likelihoods(&UniformBins, &z);
        for v in p.data() {
            assert!((v - 1.0 / 256.0).abs() < 1e-9);
        }
        let bits = rate_bits(&p).unwrap();
        assert!((bits - 8.0 * 6.0).abs() < 1e-9);
    }

    #[test]
    fn rate_of_certain_symbols_is_zero() {
        assert_eq!(rate_bits(&Tensor::full(&[4], 1.0)).unwrap(), 0.0);
        assert!(matches!(
            rate_bits(&Tensor::from_vec(&[2], vec![0.5, 0.0]).unwrap()),
            Err(Error::NonPositiveLikelihood(_))
        ));
    }

    #[test]
    fn rate_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = Tensor::from_vec(&[64], (0..64).map(|_| rng.gen_range(1e-6f32..1.0)).collect()).unwrap();
        let mut oracle = 0f64;
        for i in 0..64 {
            oracle += -(p.data()[i] as f64).ln() / std::f64::consts::LN_2;
        }
        let got = rate_bits(&p).unwrap();
        assert!((got - oracle).abs() / oracle < 1e-6);
    }

    #[test]
    fn factorized_mass_sums_to_at_most_one() {
        let params = random_params(2, 7);
        let refs: Vec<&Tensor> = params.iter().collect();
        let support: Vec<f32> = (-60..=60).map(|v| v as f32).collect();
        let n = support.len();
        let mut data = support.clone();
        data.extend(&support);
        let z = Tensor::from_vec(&[1, 2, 1, n], data).unwrap();
        let p = factorized_likelihoods(&refs, &z).unwrap();
        for ch in 0..2 {
            let s: f64 = p.data()[ch * n..(ch + 1) * n].iter().map(|&v| v as f64).sum();
            assert!(s <= 1.0 + 1e-6, "channel {ch} mass {s}");
            assert!(s > 0.9);
        }
        assert!(p.data().iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn factorized_graph_matches_cdf_view() {
        let params = random_params(3, 8);
        let refs: Vec<&Tensor> = params.iter().collect();
        let z = Tensor::from_vec(&[1, 3, 1, 2], vec![0.0, 1.0, -2.0, 3.0, 0.4, -0.7]).unwrap();
        let direct = factorized_likelihoods(&refs, &z).unwrap();
        let via_cdf = bin_likelihoods(&FactorizedCdf::new(refs).unwrap(), &z);
        for (a, b) in direct.data().iter().zip(via_cdf.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn factorized_gradients_match_finite_differences() {
        let params = random_params(2, 9);
        let z = Tensor::from_vec(&[1, 2, 2, 2], vec![0.3, -1.2, 2.1, 0.0, -0.4, 1.7, -2.6, 0.9]).unwrap();
        let loss = |z: &Tensor, params: &[Tensor]| -> (f64, Option<(Tensor, Vec<Tensor>)>) {
            let mut g = Graph::new();
            let zv = g.param(z.clone());
            let pv: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
            let p = factorized_likelihoods_graph(&mut g, zv, &pv).unwrap();
            let r = rate_bits_graph(&mut g, &[p]);
            let mut gr = g.backward(r);
            let gz = gr.take(zv).unwrap();
            let gp = pv.iter().map(|v| gr.take(*v).unwrap()).collect();
            (g.scalar(r), Some((gz, gp)))
        };
        let (_, grads) = loss(&z, &params);
        let (gz, gp) = grads.unwrap();
        let h = 1e-2f32;
        // latent coordinate
        for i in [0usize, 3, 5] {
            let mut zp = z.clone();
            zp.data_mut()[i] += h;
            let mut zm = z.clone();
            zm.data_mut()[i] -= h;
            let num = (loss(&zp, &params).0 - loss(&zm, &params).0) / (2.0 * h as f64);
            let an = gz.data()[i] as f64;
            assert!((num - an).abs() / an.abs().max(1e-3) < 1e-2, "dz[{i}] {an} vs {num}");
        }
        // one coordinate of every parameter tensor
        for (k, t) in params.iter().enumerate() {
            let mut pp = params.to_vec();
            pp[k].data_mut()[0] += h;
            let mut pm = params.to_vec();
            pm[k].data_mut()[0] -= h;
            let num = (loss(&z, &pp).0 - loss(&z, &pm).0) / (2.0 * h as f64);
            let an = gp[k].data()[0] as f64;
            assert!(
                (num - an).abs() / an.abs().max(num.abs()).max(1e-2) < 1e-2,
                "param {k} shape {:?}: {an} vs {num}",
                t.shape()
            );
        }
    }

    #[test]
    fn wide_gaussian_matches_closed_form() {
        for sigma in [5.0f32, 50.0, 500.0] {
            let got = gaussian_bin_mass(0.0, sigma) as f64;
            let oracle = libm::erf(0.5 / (sigma as f64 * std::f64::consts::SQRT_2));
            assert!((got - oracle).abs() / oracle < 1e-5, "{got} vs {oracle}");
        }
    }

    #[test]
    fn gaussian_floor_and_symmetry() {
        assert_eq!(gaussian_bin_mass(40.0, 0.1), LIKELIHOOD_FLOOR);
        assert_eq!(gaussian_bin_mass(2.0, 1.3), gaussian_bin_mass(-2.0, 1.3));
        // a zero scale is floored, not a division by zero
        assert!((gaussian_bin_mass(0.0, 0.0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gaussian_gradients_match_finite_differences() {
        let y = Tensor::from_vec(&[1, 1, 1, 4], vec![0.3, -1.4, 2.0, 0.0]).unwrap();
        let s = Tensor::from_vec(&[1, 1, 1, 4], vec![0.8, 1.5, 2.5, 0.6]).unwrap();
        let f = |y: &Tensor, s: &Tensor| {
            let mut g = Graph::new();
            let yv = g.param(y.clone());
            let sv = g.param(s.clone());
            let p = gaussian_likelihoods_graph(&mut g, yv, sv).unwrap();
            let r = rate_bits_graph(&mut g, &[p]);
            let gr = g.backward(r);
            (g.scalar(r), gr.get(yv).unwrap().clone(), gr.get(sv).unwrap().clone())
        };
        let (_, gy, gs) = f(&y, &s);
        let h = 1e-2f32;
        for i in 0..3 {
            let (mut yp, mut ym) = (y.clone(), y.clone());
            yp.data_mut()[i] += h;
            ym.data_mut()[i] -= h;
            let num = (f(&yp, &s).0 - f(&ym, &s).0) / (2.0 * h as f64);
            assert!((num - gy.data()[i] as f64).abs() / num.abs().max(1e-3) < 1e-2);
            let (mut sp, mut sm) = (s.clone(), s.clone());
            sp.data_mut()[i] += h;
            sm.data_mut()[i] -= h;
            let num = (f(&y, &sp).0 - f(&y, &sm).0) / (2.0 * h as f64);
            assert!((num - gs.data()[i] as f64).abs() / num.abs().max(1e-3) < 1e-2);
        }
    }

    proptest::proptest! {
        #[test]
        fn rate_is_never_negative(ps in proptest::collection::vec(1e-12f32..=1.0, 1..128)) {
            let p = Tensor::from_vec(&[ps.len()], ps).unwrap();
            proptest::prop_assert!(rate_bits(&p).unwrap() >= 0.0);
        }
    }
}
