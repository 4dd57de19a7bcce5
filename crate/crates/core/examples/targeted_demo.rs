// Digit-to-digit targeted attacks as a report, with and without a region
// of interest.

use advcodec::attack::{AttackMode, AttackSpec, DistanceKind, Mask};
use advcodec::dataset::{digit_image, Dataset};
use advcodec::experiments::{targeted_demo, TargetPair};
use advcodec::train::{train_baseline, TrainConfig};
use advcodec::{CodecConfig, CodecModel, Result};

pub fn run_example(train_steps: usize, attack_steps: usize) -> Result<()> {
    let digits: Vec<_> = (0..40u8).map(|i| Ok((format!("d{i}"), digit_image(i % 10, 32, i as u64)?.to_rgb()))).collect::<Result<_>>()?;
    let config = CodecConfig { hidden_channels: 16, latent_channels: 16, kernel: 3, ..CodecConfig::default() };
    let train = TrainConfig { steps: train_steps, batch_size: 4, ..TrainConfig::default() };
    let model = train_baseline(CodecModel::new(config, 3)?, &Dataset::from_images(digits)?, &train, |_| {})?.model;

    let pairs: Vec<TargetPair> = [(1u8, 7u8), (3, 8), (6, 0)]
        .iter()
        .map(|&(s, t)| Ok(TargetPair { id: format!("{s}to{t}"), source: digit_image(s, 32, 200 + s as u64)?, target: digit_image(t, 32, 300 + t as u64)? }))
        .collect::<Result<_>>()?;
    // Each pair carries its own target, so the spec holds none.
    let base = AttackSpec { mode: AttackMode::Targeted, ..AttackSpec::untargeted(1e-3, attack_steps, DistanceKind::L2, 1) };
    let spec = base.clone();
    let (_, report) = targeted_demo(&pairs, &model, "digits", &spec)?;
    for row in report.rows() {
        println!("{:<6} to target {:.5}  to source {:.5}", row.image_id, row.extra["target_distance"], row.extra["source_distance"]);
    }

    let mask = Mask::rect(32, 32, 8, 8, 24, 24);
    for lambda_bkg in [0.1, f64::INFINITY] {
        let spec = AttackSpec { mode: AttackMode::MaskedTargeted, mask: Some(mask.clone()), lambda_bkg, ..base.clone() };
        let (_, report) = targeted_demo(&pairs, &model, "digits", &spec)?;
        let roi = report.mean(|_| true, |r| r.extra["target_distance"]).unwrap_or(f64::NAN);
        println!("masked, lambda_bkg {lambda_bkg}: mean ROI target distance {roi:.5}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example(1500, 1500)
}
