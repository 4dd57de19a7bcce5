// Untargeted attacks guided by L2, L1 and MS-SSIM distances.

use advcodec::attack::{AttackSpec, DistanceKind};
use advcodec::dataset::Dataset;
use advcodec::experiments::distance_ablation;
use advcodec::train::{train_baseline, TrainConfig};
use advcodec::{CodecConfig, CodecModel, Result};

pub fn run_example(train_steps: usize, attack_steps: usize) -> Result<()> {
    let config = CodecConfig { hidden_channels: 16, latent_channels: 16, kernel: 3, ..CodecConfig::default() };
    let train = TrainConfig { steps: train_steps, batch_size: 4, ..TrainConfig::default() };
    let model = train_baseline(CodecModel::new(config, 7)?, &Dataset::synthetic(32, 48, 48, 1)?, &train, |_| {})?.model;

    let images = Dataset::synthetic(3, 32, 32, 999)?;
    let report = distance_ablation(images.items(), &model, "model", &AttackSpec::untargeted(1e-3, attack_steps, DistanceKind::L2, 1))?;
    for kind in ["l2", "l1", "ms_ssim"] {
        let rows = |f: fn(&advcodec::experiments::ReportRow) -> f64| report.mean(|r| r.tags["distance"] == kind, f).unwrap_or(f64::NAN);
        println!(
            "{kind:<8} clean {:.2} dB -> attacked {:.2} dB, ms-ssim {:.4}",
            rows(|r| r.extra["clean_psnr_db"]),
            rows(|r| r.psnr_db),
            rows(|r| r.ms_ssim)
        );
    }
    report.save(&std::env::temp_dir(), "distance_ablation")?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example(1500, 1000)
}
