// Targeted attacks on digit images: push the reconstruction of one digit
// toward the reconstruction of another, over the whole image or inside a
// region of interest.

use advcodec::attack::{distance, generate_adversarial, AttackSpec, DistanceKind, Mask};
use advcodec::dataset::{digit_image, Dataset};
use advcodec::train::{train_baseline, TrainConfig};
use advcodec::{CodecConfig, CodecModel, Result};

pub fn run_example(train_steps: usize, attack_steps: usize) -> Result<()> {
    let config = CodecConfig { hidden_channels: 16, latent_channels: 16, kernel: 3, ..CodecConfig::default() };
    let digits: Vec<_> = (0..40u8).map(|i| Ok((format!("d{i}"), digit_image(i % 10, 32, i as u64)?.to_rgb()))).collect::<Result<_>>()?;
    let train = TrainConfig { steps: train_steps, batch_size: 4, patch_size: 32, ..TrainConfig::default() };
    let model = train_baseline(CodecModel::new(config, 3)?, &Dataset::from_images(digits)?, &train, |_| {})?.model;

    let source = digit_image(3, 32, 100)?.to_rgb();
    let target = digit_image(8, 32, 101)?.to_rgb();
    let x_hat = model.roundtrip(&source)?.x_hat;
    let x_hat_t = model.roundtrip(&target)?.x_hat;

    let spec = AttackSpec::targeted(target.clone(), 1e-3, attack_steps, 5);
    let r = generate_adversarial(&source, &model, &spec)?;
    let to_target = distance(&r.adv_reconstruction, &x_hat_t, DistanceKind::L2)?;
    let to_source = distance(&r.adv_reconstruction, &x_hat, DistanceKind::L2)?;
    println!("3 -> 8: ||x*_hat - xt_hat||^2 {to_target:.5}  ||x*_hat - x_hat||^2 {to_source:.5}  input {:.2} dB", r.input_psnr);

    // Upper half only; the background may move with weight 0.1 or not at all.
    let mask = Mask::rect(32, 32, 0, 0, 16, 32);
    for lambda_bkg in [0.1, f64::INFINITY] {
        let spec = AttackSpec::masked(target.clone(), mask.clone(), lambda_bkg, 1e-3, attack_steps, 5);
        let r = generate_adversarial(&source, &model, &spec)?;
        println!(
            "masked, lambda_bkg {lambda_bkg}: final loss {:.5}, ROI noise {:.2e}, budget met: {}",
            r.loss_trace.last().copied().unwrap_or(f64::NAN),
            r.noise_norm,
            r.budget_satisfied
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example(1500, 2000)
}
