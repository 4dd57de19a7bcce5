//! Fidelity metrics and rate accounting.
//!
//! MS-SSIM follows the common five-scale formulation: 11x11 Gaussian window
//! with sigma 1.5, `K1 = 0.01`, `K2 = 0.03`, valid-mode filtering, 2x2
//! average pooling between scales (one zero-padded row/column on odd sides)
//! and scale exponents `(0.0448, 0.2856, 0.3001, 0.2363, 0.1333)`. Contrast
//! terms and the final SSIM term are clipped at zero before exponentiation.
//!
//! Images too small for five scales get fewer scales (exponents renormalized
//! to sum to one); planes smaller than the window shrink the window to the
//! largest odd size that fits. Both reductions are logged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::image::ImageTensor;
use crate::kernels::gaussian_window;

/// PSNR recorded in tabular reports when two images are identical.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ms_ssim: f64,
    pub mse: f64,
    pub bpp: f64,
}

impl MetricReport {
    /// Compare `reconstruction` against `reference`, attaching a rate.
    pub fn compare(reference: &ImageTensor, reconstruction: &ImageTensor, bpp: f64) -> Result<Self> {
        let m = mse(reference, reconstruction)?;
        Ok(Self {
            psnr_db: capped_psnr(psnr_from_mse(m)),
            ms_ssim: ms_ssim(reference, reconstruction)?,
            mse: m,
            bpp,
        })
    }
}

pub fn mse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.check_same_shape(b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(s / a.data().len() as f64)
}

/// PSNR in dB for intensities in `[0, 1]`; `+inf` when `mse == 0`.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Replace the infinite PSNR of identical images by [`PSNR_CAP_DB`].
pub fn capped_psnr(db: f64) -> f64 {
    db.min(PSNR_CAP_DB)
}

pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn bpp(total_bits: f64, height: usize, width: usize) -> Result<f64> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidParameter(format!(
            "bpp needs positive dimensions, got {height}x{width}"
        )));
    }
    Ok(total_bits / (height * width) as f64)
}

/// Scale count, window size and exponents used for an `h x w` image.
#[derive(Clone, Debug, PartialEq)]
pub struct MsSsimPlan {
    pub scales: usize,
    pub window: usize,
    pub weights: Vec<f64>,
}

fn pooled(n: usize) -> usize {
    (n + 2 * (n % 2) - 2) / 2 + 1
}

pub fn ms_ssim_plan(height: usize, width: usize) -> MsSsimPlan {
    let mut side = height.min(width);
    let mut scales = 0;
    while scales < MS_SSIM_WEIGHTS.len() && side >= WINDOW {
        scales += 1;
        side = pooled(side);
    }
    let plan = if scales == 0 {
        let m = height.min(width);
        let window = if m % 2 == 1 { m } else { m - 1 };
        MsSsimPlan {
            scales: 1,
            window: window.max(1),
            weights: vec![1.0],
        }
    } else {
        let w = &MS_SSIM_WEIGHTS[..scales];
        let total: f64 = w.iter().sum();
        MsSsimPlan {
            scales,
            window: WINDOW,
            weights: w.iter().map(|v| v / total).collect(),
        }
    };
    if plan.scales < MS_SSIM_WEIGHTS.len() {
        log::warn!(
            "MS-SSIM on {height}x{width}: using {} scale(s) with a {}-tap window",
            plan.scales,
            plan.window
        );
    }
    plan
}

fn blur_f64(src: &[f64], h: usize, w: usize, kern: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = kern.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut tmp = vec![0f64; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..k).map(|t| kern[t] * src[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0f64; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|t| kern[t] * tmp[(y + t) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

fn pool_f64(src: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (ph, pw) = (h % 2, w % 2);
    let (oh, ow) = (pooled(h), pooled(w));
    let mut out = vec![0f64; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0.0;
            for dy in 0..2 {
                for dx in 0..2 {
                    let y = (2 * oy + dy) as isize - ph as isize;
                    let x = (2 * ox + dx) as isize - pw as isize;
                    if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                        acc += src[y as usize * w + x as usize];
                    }
                }
            }
            out[oy * ow + ox] = acc / 4.0;
        }
    }
    (out, oh, ow)
}

/// SSIM and contrast-structure means of one plane pair.
fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, kern: &[f64]) -> (f64, f64) {
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
    let prod: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let (mu1, _, _) = blur_f64(a, h, w, kern);
    let (mu2, _, _) = blur_f64(b, h, w, kern);
    let (e11, _, _) = blur_f64(&sq(a), h, w, kern);
    let (e22, _, _) = blur_f64(&sq(b), h, w, kern);
    let (e12, _, _) = blur_f64(&prod, h, w, kern);
    let n = mu1.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mu1.len() {
        let s11 = e11[i] - mu1[i] * mu1[i];
        let s22 = e22[i] - mu2[i] * mu2[i];
        let s12 = e12[i] - mu1[i] * mu2[i];
        let csv = (2.0 * s12 + c2) / (s11 + s22 + c2);
        let lum = (2.0 * mu1[i] * mu2[i] + c1) / (mu1[i] * mu1[i] + mu2[i] * mu2[i] + c1);
        cs += csv;
        ssim += lum * csv;
    }
    (ssim / n, cs / n)
}

/// Multi-scale structural similarity in `[0, 1]`, averaged over channels.
pub fn ms_ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.check_same_shape(b)?;
    let plan = ms_ssim_plan(a.height(), a.width());
    let kern: Vec<f64> = gaussian_window(plan.window, SIGMA).iter().map(|&v| v as f64).collect();
    let plane = a.pixels();
    let mut total = 0.0;
    for c in 0..a.channels() {
        let mut pa: Vec<f64> = a.data()[c * plane..(c + 1) * plane].iter().map(|&v| v as f64).collect();
        let mut pb: Vec<f64> = b.data()[c * plane..(c + 1) * plane].iter().map(|&v| v as f64).collect();
        let (mut h, mut w) = (a.height(), a.width());
        let mut value = 1.0;
        for s in 0..plan.scales {
            let (ssim, cs) = ssim_plane(&pa, &pb, h, w, &kern);
            if s + 1 < plan.scales {
                value *= cs.max(0.0).powf(plan.weights[s]);
                let (na, nh, nw) = pool_f64(&pa, h, w);
                let (nb, _, _) = pool_f64(&pb, h, w);
                pa = na;
                pb = nb;
                h = nh;
                w = nw;
            } else {
                value *= ssim.max(0.0).powf(plan.weights[s]);
            }
        }
        total += value;
    }
    Ok((total / a.channels() as f64).clamp(0.0, 1.0))
}

/// Differentiable per-sample MS-SSIM of two NCHW tensors: returns `[N]`.
pub fn ms_ssim_graph(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let (_, _, h, w) = g.value(a).dims4();
    if g.value(a).shape() != g.value(b).shape() {
        return Err(Error::Shape(format!(
            "{:?} vs {:?}",
            g.value(a).shape(),
            g.value(b).shape()
        )));
    }
    let plan = ms_ssim_plan(h, w);
    let kern = gaussian_window(plan.window, SIGMA);
    let (c1, c2) = ((K1 * K1) as f32, (K2 * K2) as f32);
    let (mut x, mut y) = (a, b);
    let mut acc: Option<Var> = None;
    for s in 0..plan.scales {
        let mu1 = g.blur_valid(x, kern.clone());
        let mu2 = g.blur_valid(y, kern.clone());
        let xx = g.square(x);
        let yy = g.square(y);
        let xy = g.mul(x, y);
        let e11 = g.blur_valid(xx, kern.clone());
        let e22 = g.blur_valid(yy, kern.clone());
        let e12 = g.blur_valid(xy, kern.clone());
        let mu11 = g.square(mu1);
        let mu22 = g.square(mu2);
        let mu12 = g.mul(mu1, mu2);
        let s11 = g.sub(e11, mu11);
        let s22 = g.sub(e22, mu22);
        let s12 = g.sub(e12, mu12);
        let num = g.scale(s12, 2.0);
        let num = g.add_scalar(num, c2);
        let den = g.add(s11, s22);
        let den = g.add_scalar(den, c2);
        let cs_map = g.div(num, den);
        let term = if s + 1 < plan.scales {
            let cs = g.mean_spatial(cs_map);
            x = g.avg_pool2(x);
            y = g.avg_pool2(y);
            cs
        } else {
            let ln = g.scale(mu12, 2.0);
            let ln = g.add_scalar(ln, c1);
            let ld = g.add(mu11, mu22);
            let ld = g.add_scalar(ld, c1);
            let lum = g.div(ln, ld);
            let ssim_map = g.mul(lum, cs_map);
            g.mean_spatial(ssim_map)
        };
        let term = g.relu(term);
        let term = g.pow(term, plan.weights[s] as f32);
        acc = Some(match acc {
            Some(p) => g.mul(p, term),
            None => term,
        });
    }
    // [N, C] -> [N]
    let per_channel = acc.expect("at least one scale");
    Ok(g.mean_per_sample(per_channel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_image(seed: u64, c: usize, h: usize, w: usize) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(c, h, w, |_, _, _| rng.gen::<f32>()).unwrap()
    }

    #[test]
    fn mse_basics() {
        let a = ImageTensor::constant(3, 4, 4, 0.0).unwrap();
        let b = ImageTensor::constant(3, 4, 4, 1.0).unwrap();
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &b).unwrap(), 1.0);
        assert!(mse(&a, &ImageTensor::constant(3, 4, 5, 0.0).unwrap()).is_err());
    }

    #[test]
    fn mse_matches_elementwise_loop() {
        let a = noise_image(1, 3, 9, 7);
        let b = noise_image(2, 3, 9, 7);
        let mut s = 0f64;
        for c in 0..3 {
            for y in 0..9 {
                for x in 0..7 {
                    let d = a.get(c, y, x) as f64 - b.get(c, y, x) as f64;
                    s += d * d;
                }
            }
        }
        assert!((mse(&a, &b).unwrap() - s / (3.0 * 63.0)).abs() < 1e-7);
    }

    #[test]
    fn psnr_anchor_points() {
        assert!((psnr_from_mse(1e-3) - 30.0).abs() < 1e-12);
        assert_eq!(psnr_from_mse(1.0), 0.0);
        assert_eq!(psnr_from_mse(0.0), f64::INFINITY);
        assert_eq!(capped_psnr(f64::INFINITY), PSNR_CAP_DB);
    }

    #[test]
    fn bpp_examples() {
        assert_eq!(bpp(98304.0, 256, 256).unwrap(), 1.5);
        assert_eq!(bpp(0.0, 256, 256).unwrap(), 0.0);
        assert_eq!(bpp(24576.0, 128, 128).unwrap(), 1.5);
        assert!(bpp(1.0, 0, 4).is_err());
    }

    #[test]
    fn plan_reduces_scales_for_small_images() {
        assert_eq!(ms_ssim_plan(256, 256).scales, 5);
        assert_eq!(ms_ssim_plan(176, 200).scales, 5);
        let p = ms_ssim_plan(32, 32);
        assert_eq!(p.scales, 2);
        assert!((p.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let tiny = ms_ssim_plan(8, 8);
        assert_eq!((tiny.scales, tiny.window), (1, 7));
    }

    #[test]
    fn identical_images_score_one() {
        let a = noise_image(3, 3, 64, 48);
        assert!((ms_ssim(&a, &a).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn inverted_pattern_scores_low() {
        let a = ImageTensor::from_fn(1, 64, 64, |_, y, x| if (x / 4 + y / 4) % 2 == 0 { 0.95 } else { 0.05 }).unwrap();
        let inv = ImageTensor::from_fn(1, 64, 64, |_, y, x| 1.0 - a.get(0, y, x)).unwrap();
        assert!(ms_ssim(&a, &inv).unwrap() < 0.5);
    }

    #[test]
    fn graph_ms_ssim_matches_plain() {
        for (h, w) in [(40, 36), (8, 8), (200, 180)] {
            let a = noise_image(5, 3, h, w);
            let b = ImageTensor::from_fn(3, h, w, |c, y, x| 0.8 * a.get(c, y, x) + 0.1).unwrap();
            let mut g = Graph::new();
            let av = g.constant(ImageTensor::batch(&[&a, &b]).unwrap());
            let bv = g.constant(ImageTensor::batch(&[&b, &b]).unwrap());
            let s = ms_ssim_graph(&mut g, av, bv).unwrap();
            let got = g.value(s).data().to_vec();
            let want = ms_ssim(&a, &b).unwrap();
            assert!((got[0] as f64 - want).abs() < 1e-4, "{h}x{w}: {} vs {want}", got[0]);
            assert!((got[1] - 1.0).abs() < 1e-5);
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(32))]

        #[test]
        fn metrics_are_symmetric(seed in 0u64..1000, h in 4usize..24, w in 4usize..24) {
            let a = noise_image(seed, 3, h, w);
            let b = noise_image(seed + 1, 3, h, w);
            proptest::prop_assert!((mse(&a, &b).unwrap() - mse(&b, &a).unwrap()).abs() <= 1e-12);
            proptest::prop_assert!((psnr(&a, &b).unwrap() - psnr(&b, &a).unwrap()).abs() <= 1e-6);
            proptest::prop_assert!((ms_ssim(&a, &b).unwrap() - ms_ssim(&b, &a).unwrap()).abs() <= 1e-6);
        }

        #[test]
        fn larger_differences_score_worse(seed in 0u64..1000, scale in 1.5f32..4.0) {
            let base = noise_image(seed, 3, 16, 16).to_tensor().map(|v| 0.3 + 0.4 * v);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let d = base.map(|_| rng.gen_range(-0.05f32..0.05));
            let a = ImageTensor::from_tensor(&base, 0).unwrap();
            let near = ImageTensor::from_tensor(&base.zip_map(&d, |x, e| x + e), 0).unwrap();
            let far = ImageTensor::from_tensor(&base.zip_map(&d, |x, e| x + scale * e), 0).unwrap();
            proptest::prop_assert!(psnr(&a, &far).unwrap() < psnr(&a, &near).unwrap());
            proptest::prop_assert!(ms_ssim(&a, &far).unwrap() <= ms_ssim(&a, &near).unwrap() + 1e-6);
        }
    }
}
