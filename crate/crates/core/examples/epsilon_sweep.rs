// Attack strength as a function of the noise budget.

use advcodec::attack::{AttackSpec, DistanceKind};
use advcodec::dataset::Dataset;
use advcodec::experiments::epsilon_sweep;
use advcodec::train::{train_baseline, TrainConfig};
use advcodec::{CodecConfig, CodecModel, Result};

pub fn run_example(train_steps: usize, attack_steps: usize) -> Result<()> {
    let config = CodecConfig { hidden_channels: 16, latent_channels: 16, kernel: 3, ..CodecConfig::default() };
    let train = TrainConfig { steps: train_steps, batch_size: 4, ..TrainConfig::default() };
    let model = train_baseline(CodecModel::new(config, 7)?, &Dataset::synthetic(32, 48, 48, 1)?, &train, |_| {})?.model;

    let images = Dataset::synthetic(3, 32, 32, 999)?;
    let epsilons = [1e-4, 3e-4, 1e-3, 3e-3];
    let base = AttackSpec::untargeted(1e-3, attack_steps, DistanceKind::L2, 1);
    let report = epsilon_sweep(images.items(), &model, "model", &epsilons, &base)?;
    for eps in epsilons {
        let tag = eps.to_string();
        let at = |f: fn(&advcodec::experiments::ReportRow) -> f64| report.mean(|r| r.tags.get("epsilon") == Some(&tag), f).unwrap_or(f64::NAN);
        println!("eps {eps:<7} input {:.2} dB  attacked recon {:.2} dB", at(|r| r.input_psnr_db.unwrap_or(f64::NAN)), at(|r| r.psnr_db));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example(1500, 1000)
}
