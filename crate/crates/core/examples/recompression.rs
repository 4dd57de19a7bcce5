// Feed each reconstruction back into the codec and watch quality drift over
// many rounds.

use advcodec::dataset::Dataset;
use advcodec::experiments::{recompress, recompression_study, RecompressChain};
use advcodec::train::{train_baseline, TrainConfig};
use advcodec::{CodecConfig, CodecModel, Result};

pub fn run_example(train_steps: usize, rounds: usize) -> Result<()> {
    let data = Dataset::synthetic(32, 48, 48, 1)?;
    let config = CodecConfig { hidden_channels: 16, latent_channels: 16, kernel: 3, ..CodecConfig::default() };
    let train = TrainConfig { steps: train_steps, batch_size: 4, ..TrainConfig::default() };
    let model = train_baseline(CodecModel::new(config, 7)?, &data, &train, |_| {})?.model;

    let held_out = Dataset::synthetic(4, 32, 32, 999)?;
    let (id, x) = &held_out.items()[0];
    for step in recompress(x, &model, rounds, RecompressChain::Quantized8Bit)? {
        if step.round == 1 || step.round % 10 == 0 || step.round == rounds {
            println!("{id} round {:>3}: {:.2} dB  {:.3} bpp", step.round, step.metrics.psnr_db, step.metrics.bpp);
        }
    }

    let report = recompression_study(held_out.items(), &[("model", &model)], rounds, RecompressChain::Float)?;
    let last = format!("round{rounds}");
    println!(
        "float chain, mean over {} images: round 1 {:.2} dB, round {rounds} {:.2} dB",
        held_out.len(),
        report.mean(|r| r.condition == "round1", |r| r.psnr_db).unwrap_or(f64::NAN),
        report.mean(|r| r.condition == last, |r| r.psnr_db).unwrap_or(f64::NAN)
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example(1500, 50)
}
