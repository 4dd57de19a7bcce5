// Layered run configuration and the command-line entry points, driven
// from code: defaults, then a JSON file, then flag overrides.

use std::path::Path;

use advcodec::checkpoint::checkpoint_file_name;
use advcodec::cli::main_with_args;
use advcodec::config::{resolve, set_path, AttackRun};
use advcodec::dataset::{synthetic_image, SyntheticKind};
use advcodec::io::save_png;
use advcodec::{CodecConfig, Result};
use serde_json::json;

pub fn run_example(work: &Path, train_steps: usize) -> Result<()> {
    let file = work.join("attack.json");
    std::fs::write(&file, r#"{ "attack": { "epsilon": 5e-4, "distance": "l1", "lambda_bkg": "inf" } }"#)?;
    let mut flags = json!({});
    set_path(&mut flags, "attack.steps", json!(250));
    let run: AttackRun = resolve(Some(&file), flags)?;
    println!("resolved: eps {} steps {} distance {}", run.attack.epsilon, run.attack.steps, run.attack.distance);

    save_png(&synthetic_image(SyntheticKind::Shapes, 32, 32, 1), &work.join("shapes.png"))?;
    let ws = |p: &str| work.join(p).to_string_lossy().into_owned();
    let ckpt = ws(&format!("train/{}", checkpoint_file_name(&CodecConfig::default(), train_steps as u64)));
    let steps = train_steps.to_string();
    let commands: [&[&str]; 3] = [
        &["train", "--synthetic", "8", "--synthetic-size", "48", "--hidden", "8", "--latent", "8", "--kernel", "3", "--steps", &steps, "--batch-size", "2", "--out", &ws("train")],
        &["recompress", "--checkpoint", &ckpt, "--image", &ws("shapes.png"), "--rounds", "5", "--out", &ws("recompress")],
        &["attack", "--checkpoint", &ckpt, "--image", &ws("shapes.png"), "--steps", "50", "--out", &ws("attack")],
    ];
    for args in commands {
        let code = main_with_args(std::iter::once("advcodec").chain(args.iter().copied()));
        assert_eq!(code, 0, "{args:?} failed");
    }
    for dir in ["train", "recompress", "attack"] {
        let mut names: Vec<String> = std::fs::read_dir(work.join(dir))?.filter_map(|e| e.ok()).map(|e| e.file_name().to_string_lossy().into_owned()).collect();
        names.sort();
        println!("{dir}/: {}", names.join(" "));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    let work = std::env::temp_dir().join(format!("advcodec-cli-{}", std::process::id()));
    std::fs::create_dir_all(&work)?;
    run_example(&work, 200)
}
