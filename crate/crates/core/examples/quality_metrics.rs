// PSNR, MS-SSIM and rate accounting on a few synthetic pairs.

use advcodec::dataset::{synthetic_image, SyntheticKind};
use advcodec::metrics::{bpp, ms_ssim, ms_ssim_plan, mse, psnr, psnr_from_mse};
use advcodec::{ImageTensor, Result};

pub fn run_example() -> Result<()> {
    println!("mse 1e-3 -> {:.1} dB", psnr_from_mse(1e-3));

    let x = synthetic_image(SyntheticKind::Gradient, 64, 64, 5);
    for amount in [0.02f32, 0.05, 0.1, 0.2] {
        let noise = synthetic_image(SyntheticKind::FilteredNoise, 64, 64, 6);
        let y = ImageTensor::clamped(3, 64, 64, x.data().iter().zip(noise.data()).map(|(a, n)| a + amount * (n - 0.5)).collect())?;
        println!("noise {amount:<4}  mse {:.5}  psnr {:6.2} dB  ms-ssim {:.4}", mse(&x, &y)?, psnr(&x, &y)?, ms_ssim(&x, &y)?);
    }

    for side in [32, 64, 176, 256] {
        let plan = ms_ssim_plan(side, side);
        println!("{side}x{side}: {plan:?}");
    }
    println!("12288 bits on a 64x64 image = {} bpp", bpp(12288.0, 64, 64)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
