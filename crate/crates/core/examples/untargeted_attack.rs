// Untargeted attack: find input noise within an MSE budget that maximizes
// the reconstruction distortion.
//
// `cargo run --release --example untargeted_attack -- [model.ckpt] [steps]`
// Without a checkpoint a small model is trained first.

use std::path::Path;

use advcodec::attack::{generate_adversarial_batch, AttackSpec, DistanceKind};
use advcodec::checkpoint::load_checkpoint;
use advcodec::dataset::Dataset;
use advcodec::train::{train_baseline, TrainConfig};
use advcodec::{CodecConfig, CodecModel, ImageTensor, Result};

pub fn quick_model(steps: usize) -> Result<CodecModel> {
    let config = CodecConfig { hidden_channels: 16, latent_channels: 16, kernel: 3, ..CodecConfig::default() };
    let train = TrainConfig { steps, batch_size: 4, ..TrainConfig::default() };
    Ok(train_baseline(CodecModel::new(config, 7)?, &Dataset::synthetic(32, 48, 48, 1)?, &train, |_| {})?.model)
}

pub fn run_example(model: &CodecModel, steps: usize) -> Result<()> {
    let held_out = Dataset::synthetic(4, 32, 32, 999)?;
    let images: Vec<&ImageTensor> = held_out.images().collect();
    let spec = AttackSpec::untargeted(1e-3, steps, DistanceKind::L2, 1);
    for ((id, _), r) in held_out.items().iter().zip(generate_adversarial_batch(&images, &[], model, &spec)?) {
        println!(
            "{id:<20} input {:.2} dB | recon {:.2} -> {:.2} dB | bpp {:.3} -> {:.3} | 8-bit {:.2} dB | within budget: {}",
            r.input_psnr,
            r.original_metrics.psnr_db,
            r.metrics.psnr_db,
            r.original_metrics.bpp,
            r.metrics.bpp,
            r.quantized_8bit.metrics.psnr_db,
            r.budget_satisfied
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let model = match args.first() {
        Some(p) => load_checkpoint(Path::new(p))?.0,
        None => quick_model(1500)?,
    };
    run_example(&model, args.get(1).map_or(2000, |s| s.parse().expect("steps must be an integer")))
}
