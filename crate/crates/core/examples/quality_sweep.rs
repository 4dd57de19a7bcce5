// The same attack against codecs trained at different rate-distortion
// trade-offs.

use advcodec::attack::{AttackSpec, DistanceKind};
use advcodec::dataset::Dataset;
use advcodec::experiments::quality_sweep;
use advcodec::train::{train_baseline, TrainConfig};
use advcodec::{CodecConfig, CodecModel, Result};

pub fn run_example(train_steps: usize, attack_steps: usize) -> Result<()> {
    let data = Dataset::synthetic(32, 48, 48, 1)?;
    let train = TrainConfig { steps: train_steps, batch_size: 4, ..TrainConfig::default() };
    let lambdas = [256.0, 1024.0, 4096.0];
    let models = lambdas
        .iter()
        .map(|&lambda| {
            let config = CodecConfig { hidden_channels: 16, latent_channels: 16, kernel: 3, lambda, ..CodecConfig::default() };
            Ok((format!("lambda{lambda}"), train_baseline(CodecModel::new(config, 7)?, &data, &train, |_| {})?.model))
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<(&str, &CodecModel)> = models.iter().map(|(id, m)| (id.as_str(), m)).collect();

    let images = Dataset::synthetic(3, 32, 32, 999)?;
    let report = quality_sweep(images.items(), &refs, &AttackSpec::untargeted(1e-3, attack_steps, DistanceKind::L2, 1))?;
    for (id, _) in &refs {
        let mean = |cond: &str, f: fn(&advcodec::experiments::ReportRow) -> f64| report.mean(|r| r.model_id == *id && r.condition == cond, f).unwrap_or(f64::NAN);
        println!(
            "{id:<14} {:.3} bpp  clean {:.2} dB  attacked {:.2} dB",
            mean("clean", |r| r.bpp),
            mean("clean", |r| r.psnr_db),
            mean("attacked", |r| r.psnr_db)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example(1500, 1000)
}
