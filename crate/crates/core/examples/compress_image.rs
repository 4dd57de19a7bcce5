// Encode one image, inspect the latent code and its rate, then decode.
//
// `cargo run --release --example compress_image -- [image.png]`

use std::path::Path;

use advcodec::dataset::{synthetic_image, SyntheticKind};
use advcodec::io::{load_image, save_png};
use advcodec::metrics::{bpp, MetricReport};
use advcodec::{CodecConfig, CodecModel, DistortionKind, EntropyMode, Result};

pub fn run_example(input: Option<&Path>, out_dir: &Path) -> Result<()> {
    let x = match input {
        Some(p) => load_image(p)?.to_rgb(),
        None => synthetic_image(SyntheticKind::Blobs, 40, 56, 3),
    };
    for mode in [EntropyMode::Factorized, EntropyMode::Hyperprior] {
        let config = CodecConfig { mode, ..CodecConfig::toy() };
        let model = CodecModel::new(config, 11)?;
        let code = model.encode(&x)?;
        let bits = code.total_bits()?;
        println!("{mode:?}: latent {:?}, {:.0} bits, {:.3} bpp", code.z_hat.shape(), bits, bpp(bits, x.height(), x.width())?);
        if let Some(h) = &code.hyper {
            println!("  side information latent {:?}", h.z_hat.shape());
        }

        // the decoder sees the padded latent grid; crop back to the input size
        let x_hat = model.synthesis_transform(&code.z_hat)?.crop(0, 0, x.height(), x.width())?;
        let report = MetricReport::compare(&x, &x_hat, bpp(bits, x.height(), x.width())?)?;
        let rd = model.rd_loss(&x, DistortionKind::Mse)?;
        println!("  psnr {:.2} dB  ms-ssim {:.4}  rd loss {:.4}", report.psnr_db, report.ms_ssim, rd.loss);
        save_png(&x_hat, &out_dir.join(format!("{mode:?}.png").to_lowercase()))?;
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    let input = std::env::args().nth(1);
    run_example(input.as_deref().map(Path::new), &std::env::temp_dir())
}
