//! Latent quantization.
//!
//! Evaluation rounds to the nearest integer with ties away from zero.
//! Training replaces rounding by additive uniform noise on `(-1/2, 1/2)`,
//! which keeps the pipeline differentiable.

use rand::Rng;

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantMode {
    Train,
    Eval,
}

/// Round half away from zero.
pub fn round_half_away(v: f32) -> f32 {
    v.round()
}

/// I.i.d. uniform samples on the open interval `(-1/2, 1/2)`.
pub fn uniform_noise(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let u: f32 = rng.gen_range(-0.5..0.5);
            if u != -0.5 {
                break u;
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

pub fn quantize(z: &Tensor, mode: QuantMode, rng: &mut impl Rng) -> Tensor {
    match mode {
        QuantMode::Eval => z.map(round_half_away),
        QuantMode::Train => {
            let noise = uniform_noise(z.shape(), rng);
            z.zip_map(&noise, |a, b| a + b)
        }
    }
}
