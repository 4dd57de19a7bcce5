// Train a small factorized-prior codec on synthetic images and save a checkpoint.
//
// `cargo run --release --example train_codec -- [steps] [out.ckpt]`

use std::path::PathBuf;

use advcodec::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use advcodec::dataset::Dataset;
use advcodec::train::{train_baseline, TrainConfig};
use advcodec::{CodecConfig, CodecModel, Result};

pub fn run_example(steps: usize, out: Option<PathBuf>) -> Result<()> {
    let config = CodecConfig { hidden_channels: 16, latent_channels: 16, kernel: 3, lambda: 1024.0, ..CodecConfig::default() };
    let data = Dataset::synthetic(32, 48, 48, 1)?;
    let train = TrainConfig { steps, batch_size: 4, log_every: (steps / 5).max(1), decay_at: Some(steps * 4 / 5), ..TrainConfig::default() };
    let outcome = train_baseline(CodecModel::new(config.clone(), 7)?, &data, &train, |r| {
        println!("step {:>5}  loss {:8.4}  bpp {:.3}  mse {:.5}", r.step, r.loss, r.rate_bpp, r.distortion);
    })?;

    let held_out = Dataset::synthetic(4, 32, 32, 999)?;
    for (id, x) in held_out.items() {
        let rt = outcome.model.roundtrip(x)?;
        println!("{id:<22} {:.3} bpp  {:.2} dB", rt.bpp, advcodec::metrics::psnr(x, &rt.x_hat)?);
    }

    if let Some(path) = out {
        save_checkpoint(&path, &outcome.model, &CheckpointMeta::new(config, steps as u64, 7))?;
        let (reloaded, meta) = load_checkpoint(&path)?;
        assert_eq!(reloaded.fingerprint(), outcome.model.fingerprint());
        println!("saved {} (step {})", path.display(), meta.step);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map_or(2000, |s| s.parse().expect("steps must be an integer"));
    run_example(steps, args.next().map(PathBuf::from))
}
