// Rate-distortion points for a family of codecs, written as JSON and CSV.
//
// `cargo run --release --example rd_curve -- [out_dir]`

use std::path::Path;

use advcodec::dataset::Dataset;
use advcodec::experiments::rd_curve;
use advcodec::train::{train_baseline, TrainConfig};
use advcodec::{CodecConfig, CodecModel, Result};

pub fn run_example(train_steps: usize, out_dir: &Path) -> Result<()> {
    let data = Dataset::synthetic(32, 48, 48, 1)?;
    let train = TrainConfig { steps: train_steps, batch_size: 4, ..TrainConfig::default() };
    let mut models = Vec::new();
    for lambda in [128.0, 512.0, 2048.0] {
        let config = CodecConfig { hidden_channels: 16, latent_channels: 16, kernel: 3, lambda, ..CodecConfig::default() };
        models.push((format!("lambda{lambda}"), train_baseline(CodecModel::new(config, 7)?, &data, &train, |_| {})?.model));
    }
    let family = vec![("factorized", models.iter().map(|(id, m)| (id.as_str(), m)).collect())];

    let report = rd_curve(&family, Dataset::synthetic(4, 32, 32, 999)?.items())?;
    for row in report.rows() {
        println!("{:<14} {:.3} bpp  {:.2} dB  rd loss {:.4}", row.model_id, row.bpp, row.psnr_db, row.extra["rd_loss"]);
    }
    report.save(out_dir, "rd_curve")?;
    println!("wrote {}", out_dir.join("rd_curve.csv").display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().to_string_lossy().into_owned());
    run_example(1500, Path::new(&out))
}
