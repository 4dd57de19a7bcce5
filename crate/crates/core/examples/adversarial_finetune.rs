// Iterative adversarial finetuning: each iteration attacks part of the batch
// against the current weights, then takes one rate-distortion step on the
// clean and adversarial images together.

use advcodec::attack::{AttackSpec, DistanceKind};
use advcodec::dataset::Dataset;
use advcodec::defense::{adversarial_finetune, evaluate_defense, mean_psnr, FinetuneSpec};
use advcodec::train::{train_baseline, TrainConfig};
use advcodec::{CodecConfig, CodecModel, Result};

pub fn run_example(train_steps: usize, iterations: usize, attack_steps: usize) -> Result<()> {
    let data = Dataset::synthetic(32, 48, 48, 1)?;
    let config = CodecConfig { hidden_channels: 16, latent_channels: 16, kernel: 3, ..CodecConfig::default() };
    let train = TrainConfig { steps: train_steps, batch_size: 4, ..TrainConfig::default() };
    let base = train_baseline(CodecModel::new(config, 7)?, &data, &train, |_| {})?.model;

    let spec = FinetuneSpec { iterations, attack_steps, batch_size: 4, learning_rate: 1e-4, seed: 3, ..FinetuneSpec::default() };
    let outcome = adversarial_finetune(&base, &data, &spec, |r, _| {
        if r.iteration % 5 == 0 {
            println!(
                "iter {:>3}  attack loss {:.4}  within budget {}/{}  rd loss {:.4}",
                r.iteration, r.attack_loss, r.attacks_within_budget, r.adversarial, r.loss
            );
        }
        Ok(())
    })?;

    let held_out = Dataset::synthetic(4, 32, 32, 999)?;
    let attack = AttackSpec::untargeted(1e-3, attack_steps, DistanceKind::L2, 9);
    let report = evaluate_defense(&base, &outcome.model, held_out.items(), &attack)?;
    for model in ["before", "after"] {
        println!(
            "{model:<6} clean {:.2} dB  attacked {:.2} dB",
            mean_psnr(&report, model, "clean").unwrap_or(f64::NAN),
            mean_psnr(&report, model, "attacked").unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example(1500, 40, 300)
}
