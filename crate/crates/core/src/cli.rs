//! The `advcodec` command line.
//!
//! Each subcommand resolves its configuration (defaults, `--config` file,
//! flags, environment), validates everything it will need, and only then
//! writes outputs into a staging directory that is renamed into place on
//! success. Failures print one JSON error record on stderr.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde_json::{json, Value};

use crate::attack::{AttackMode, Mask};
use crate::checkpoint::{checkpoint_file_name, load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::config::{
    output_dir, resolve, set_path, AttackRun, EvalRun, FinetuneRun, MaskRect, RdCurveRun, RecompressRun,
    StagedOutput, TrainRun,
};
use crate::defense::{adversarial_finetune, evaluate_defense};
use crate::error::{Error, Result};
use crate::experiments::{attack_all, rd_curve, recompress, recompression_study, ExperimentReport, NamedImage, ReportRow, PROXY_NOTE};
use crate::io::{load_image, save_float, save_png, SIDECAR_EXTENSION};
use crate::train::train_baseline;
use crate::CodecModel;

#[derive(Parser, Debug)]
#[command(name = "advcodec", version, about = "Learned image codec with adversarial attack and finetuning tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a codec from random initialization.
    Train(TrainArgs),
    /// Generate adversarial examples against a trained codec.
    Attack(AttackArgs),
    /// Adversarially finetune a trained codec.
    Finetune(FinetuneArgs),
    /// Re-encode reconstructions repeatedly.
    Recompress(RecompressArgs),
    /// Clean and attacked metrics, optionally before/after finetuning.
    Eval(EvalArgs),
    /// Mean rate-distortion points for families of models.
    RdCurve(RdCurveArgs),
}

#[derive(Args, Debug, Default)]
pub struct Common {
    /// JSON configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; must not exist or be empty.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub device: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct DataArgs {
    /// Directory of PNG or `.avf` training images.
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Use this many synthetic images instead of a directory.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, default_value_t = 64, requires = "synthetic")]
    pub synthetic_size: usize,
    #[arg(long, default_value_t = 1, requires = "synthetic")]
    pub synthetic_seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_parser = ["factorized", "hyperprior"])]
    pub mode: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_parser = ["mse", "ms_ssim"])]
    pub loss: Option<String>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub latent: Option<usize>,
    #[arg(long)]
    pub kernel: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub decay_at: Option<usize>,
    #[arg(long)]
    pub log_every: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
pub struct AttackFlags {
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_parser = ["l2", "l1", "ms_ssim"])]
    pub distance: Option<String>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub init_amplitude: Option<f32>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct AttackArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Image file or directory; repeatable.
    #[arg(long)]
    pub image: Vec<PathBuf>,
    #[command(flatten)]
    pub attack: AttackFlags,
    #[arg(long, value_parser = ["untargeted", "targeted", "masked_targeted"])]
    pub mode: Option<String>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// ROI rectangle `y0,x0,y1,x1`.
    #[arg(long)]
    pub mask: Option<String>,
    /// Background weight; `inf` forbids background noise.
    #[arg(long)]
    pub lambda_bkg: Option<String>,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub attack_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub clean_fraction: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RecompressArgs {
    #[command(flatten)]
    pub common: Common,
    /// Repeatable; models are named after the file stem.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub image: Vec<PathBuf>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long, value_parser = ["quantized_8bit", "float"])]
    pub chain: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Finetuned model to compare against `--checkpoint`.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long)]
    pub image: Vec<PathBuf>,
    #[command(flatten)]
    pub attack: AttackFlags,
}

#[derive(Args, Debug)]
pub struct RdCurveArgs {
    #[command(flatten)]
    pub common: Common,
    /// `FAMILY=PATH`, repeatable.
    #[arg(long)]
    pub checkpoint: Vec<String>,
    #[arg(long)]
    pub image: Vec<PathBuf>,
}

fn put<T: serde::Serialize>(tree: &mut Value, path: &str, v: &Option<T>) {
    if let Some(v) = v {
        set_path(tree, path, serde_json::to_value(v).expect("flag values serialize"));
    }
}

fn put_paths(tree: &mut Value, path: &str, v: &[PathBuf]) {
    if !v.is_empty() {
        set_path(tree, path, json!(v));
    }
}

fn put_common(tree: &mut Value, c: &Common) {
    put(tree, "runtime.device", &c.device.as_ref().map(|d| d.to_ascii_lowercase()));
}

fn put_data(tree: &mut Value, d: &DataArgs) {
    if let Some(dir) = &d.data {
        set_path(tree, "data", json!({ "dir": dir }));
    }
    if let Some(n) = d.synthetic {
        let s = d.synthetic_size;
        set_path(tree, "data", json!({ "synthetic": { "count": n, "height": s, "width": s, "seed": d.synthetic_seed } }));
    }
}

fn put_attack(tree: &mut Value, a: &AttackFlags) {
    put(tree, "attack.epsilon", &a.epsilon);
    put(tree, "attack.steps", &a.steps);
    put(tree, "attack.distance", &a.distance);
    put(tree, "attack.learning_rate", &a.lr);
    put(tree, "attack.init_amplitude", &a.init_amplitude);
    put(tree, "attack.seed", &a.seed);
}

fn load_model(path: &Path) -> Result<CodecModel> {
    if path.as_os_str().is_empty() {
        return Err(Error::Config("a checkpoint path is required (--checkpoint)".into()));
    }
    Ok(load_checkpoint(path)?.0)
}

/// Load images; directories expand to their PNG and sidecar files in name order.
pub fn collect_images(paths: &[PathBuf]) -> Result<Vec<NamedImage>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = fs::read_dir(p)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            inner.retain(|f| f.extension().is_some_and(|e| e == "png" || e == SIDECAR_EXTENSION));
            inner.sort();
            files.extend(inner);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(Error::Config("no input images (--image)".into()));
    }
    let mut out: Vec<NamedImage> = Vec::with_capacity(files.len());
    for f in files {
        let mut name = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if out.iter().any(|(n, _)| *n == name) {
            name = format!("{name}_{}", out.len());
        }
        out.push((name, load_image(&f)?));
    }
    Ok(out)
}

/// Run inside a staging directory; remove it if `body` fails.
fn staged(out: &Path, body: impl FnOnce(&Path) -> Result<()>) -> Result<PathBuf> {
    let stage = StagedOutput::create(out)?;
    match body(stage.path()) {
        Ok(()) => stage.commit(),
        Err(e) => {
            stage.abandon();
            Err(e)
        }
    }
}

fn append_jsonl(path: &Path, record: &impl serde::Serialize) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", serde_json::to_string(record)?)?;
    Ok(())
}

pub fn run_train(cfg: &TrainRun, out: &Path) -> Result<PathBuf> {
    cfg.codec.validate()?;
    cfg.train.validate()?;
    let data = cfg.data.load()?;
    let model = CodecModel::new(cfg.codec.clone(), cfg.init_seed)?;
    staged(out, |dir| {
        let log = dir.join("train_log.jsonl");
        let mut failure = None;
        let outcome = train_baseline(model, &data, &cfg.train, |r| {
            log::info!("step {} loss {:.4} bpp {:.4} distortion {:.6}", r.step, r.loss, r.rate_bpp, r.distortion);
            if let Err(e) = append_jsonl(&log, r) {
                failure.get_or_insert(e);
            }
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        let meta = CheckpointMeta::new(cfg.codec.clone(), cfg.train.steps as u64, cfg.init_seed);
        save_checkpoint(&dir.join(checkpoint_file_name(&cfg.codec, cfg.train.steps as u64)), &outcome.model, &meta)?;
        StagedOutput::write_config_to(dir, cfg)
    })
}

pub fn run_attack(cfg: &AttackRun, out: &Path) -> Result<PathBuf> {
    let model = load_model(&cfg.checkpoint)?;
    let images = collect_images(&cfg.images)?;
    let mut spec = cfg.attack.clone();
    if let Some(t) = &cfg.target {
        spec.target = Some(load_image(t)?.to_rgb());
    }
    if let Some(MaskRect { y0, x0, y1, x1 }) = cfg.mask {
        let (h, w) = (images[0].1.height(), images[0].1.width());
        if y1 > h || x1 > w {
            return Err(Error::Config(format!("mask {y0},{x0},{y1},{x1} exceeds the {h}x{w} image")));
        }
        spec.mask = Some(Mask::rect(h, w, y0, x0, y1, x1));
    }
    spec.validate()?;
    if spec.mode != AttackMode::Untargeted && spec.target.is_none() {
        return Err(Error::InvalidAttack("targeted modes need --target".into()));
    }
    staged(out, |dir| {
        let (results, times) = attack_all(&images, &model, &spec)?;
        let mut report = ExperimentReport::new("attack");
        report.provenance.spec = serde_json::to_value(&spec)?;
        report.provenance.seeds.insert("attack".into(), spec.seed);
        report.record_model("model", &model);
        report.note(PROXY_NOTE);
        for ((name, _), (r, t)) in images.iter().zip(results.iter().zip(times)) {
            report.push(ReportRow::new(name, "model", "clean", &r.original_metrics));
            let mut row = ReportRow::attacked(name, "model", r);
            row.wall_time_s = t;
            report.push(row);
            save_png(&r.adversarial_example, &dir.join(format!("{name}_adv.png")))?;
            save_float(&r.adversarial_example, &dir.join(format!("{name}_adv.{SIDECAR_EXTENSION}")))?;
            save_png(&r.adv_reconstruction, &dir.join(format!("{name}_adv_recon.png")))?;
            save_png(&r.original_reconstruction, &dir.join(format!("{name}_recon.png")))?;
        }
        report.save(dir, "attack")?;
        StagedOutput::write_config_to(dir, cfg)
    })
}

pub fn run_finetune(cfg: &FinetuneRun, out: &Path) -> Result<PathBuf> {
    let (model, meta) = {
        if cfg.checkpoint.as_os_str().is_empty() {
            return Err(Error::Config("a checkpoint path is required (--checkpoint)".into()));
        }
        load_checkpoint(&cfg.checkpoint)?
    };
    let mut cfg = cfg.clone();
    cfg.finetune.lambda.get_or_insert(model.lambda());
    cfg.finetune.validate()?;
    if cfg.checkpoint_every == Some(0) {
        return Err(Error::Config("checkpoint_every must be positive".into()));
    }
    let data = cfg.data.load()?;
    staged(out, |dir| {
        let log = dir.join("finetune_log.jsonl");
        let mut config = model.config().clone();
        config.lambda = cfg.finetune.lambda.expect("set above");
        let tagged = |step: u64| {
            let mut m = CheckpointMeta::new(config.clone(), meta.step + step, cfg.finetune.seed);
            m.tags.insert("origin".into(), "adversarial_finetune".into());
            m.tags.insert("base_fingerprint".into(), model.fingerprint());
            m
        };
        let outcome = adversarial_finetune(&model, &data, &cfg.finetune, |r, m| {
            log::info!(
                "iteration {} attack loss {:.4} loss {:.4} bpp {:.4}",
                r.iteration,
                r.attack_loss,
                r.loss,
                r.rate_bpp
            );
            append_jsonl(&log, r)?;
            if let Some(k) = cfg.checkpoint_every {
                if (r.iteration + 1) % k == 0 {
                    let step = r.iteration as u64 + 1;
                    let path = dir.join("checkpoints").join(checkpoint_file_name(&config, meta.step + step));
                    save_checkpoint(&path, m, &tagged(step))?;
                }
            }
            Ok(())
        })?;
        let step = cfg.finetune.iterations as u64;
        save_checkpoint(&dir.join(format!("finetuned_{}", checkpoint_file_name(&config, meta.step + step))), &outcome.model, &tagged(step))?;
        StagedOutput::write_config_to(dir, &cfg)
    })
}

fn named_models(paths: &[PathBuf]) -> Result<Vec<(String, CodecModel)>> {
    if paths.is_empty() {
        return Err(Error::Config("at least one --checkpoint is required".into()));
    }
    let mut out: Vec<(String, CodecModel)> = Vec::new();
    for p in paths {
        let mut id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if out.iter().any(|(n, _)| *n == id) {
            id = format!("{id}_{}", out.len());
        }
        out.push((id, load_model(p)?));
    }
    Ok(out)
}

pub fn run_recompress(cfg: &RecompressRun, out: &Path) -> Result<PathBuf> {
    if cfg.rounds == 0 {
        return Err(Error::Config("rounds must be >= 1".into()));
    }
    let models = named_models(&cfg.checkpoints)?;
    let images = collect_images(&cfg.images)?;
    staged(out, |dir| {
        let refs: Vec<(&str, &CodecModel)> = models.iter().map(|(n, m)| (n.as_str(), m)).collect();
        let report = recompression_study(&images, &refs, cfg.rounds, cfg.chain)?;
        for (id, model) in &refs {
            for (name, x) in &images {
                let last = recompress(x, model, cfg.rounds, cfg.chain)?.pop().expect("rounds >= 1");
                save_png(&last.x_hat, &dir.join(format!("{name}_{id}_round{}.png", cfg.rounds)))?;
            }
        }
        report.save(dir, "recompression")?;
        StagedOutput::write_config_to(dir, cfg)
    })
}

pub fn run_eval(cfg: &EvalRun, out: &Path) -> Result<PathBuf> {
    let model = load_model(&cfg.checkpoint)?;
    let compare = cfg.compare.as_deref().map(load_model).transpose()?;
    let images = collect_images(&cfg.images)?;
    cfg.attack.validate()?;
    if cfg.attack.mode != AttackMode::Untargeted {
        return Err(Error::InvalidAttack("eval runs untargeted attacks only".into()));
    }
    staged(out, |dir| {
        let report = match &compare {
            Some(after) => evaluate_defense(&model, after, &images, &cfg.attack)?,
            None => {
                let (results, times) = attack_all(&images, &model, &cfg.attack)?;
                let mut report = ExperimentReport::new("eval");
                report.provenance.spec = serde_json::to_value(&cfg.attack)?;
                report.provenance.seeds.insert("attack".into(), cfg.attack.seed);
                report.record_model("model", &model);
                report.note(PROXY_NOTE);
                for ((name, _), (r, t)) in images.iter().zip(results.iter().zip(times)) {
                    report.push(ReportRow::new(name, "model", "clean", &r.original_metrics));
                    let mut row = ReportRow::attacked(name, "model", r);
                    row.wall_time_s = t;
                    report.push(row);
                }
                report
            }
        };
        report.save(dir, "eval")?;
        StagedOutput::write_config_to(dir, cfg)
    })
}

pub fn run_rd_curve(cfg: &RdCurveRun, out: &Path) -> Result<PathBuf> {
    if cfg.checkpoints.is_empty() {
        return Err(Error::Config("at least one --checkpoint FAMILY=PATH is required".into()));
    }
    let mut loaded: Vec<(String, String, CodecModel)> = Vec::new();
    for (family, path) in &cfg.checkpoints {
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        loaded.push((family.clone(), format!("{family}/{id}"), load_model(path)?));
    }
    let images = collect_images(&cfg.images)?;
    staged(out, |dir| {
        let mut families: Vec<(&str, Vec<(&str, &CodecModel)>)> = Vec::new();
        for (family, id, model) in &loaded {
            match families.iter_mut().find(|(f, _)| f == family) {
                Some((_, v)) => v.push((id.as_str(), model)),
                None => families.push((family.as_str(), vec![(id.as_str(), model)])),
            }
        }
        rd_curve(&families, &images)?.save(dir, "rd_curve")?;
        StagedOutput::write_config_to(dir, cfg)
    })
}

impl StagedOutput {
    fn write_config_to<T: serde::Serialize>(dir: &Path, config: &T) -> Result<()> {
        fs::write(dir.join(crate::config::RESOLVED_CONFIG), serde_json::to_string_pretty(config)?)?;
        Ok(())
    }
}

fn checkpoint_families(specs: &[String]) -> Result<Value> {
    let pairs = specs
        .iter()
        .map(|s| match s.split_once('=') {
            Some((f, p)) if !f.is_empty() && !p.is_empty() => Ok(json!([f, p])),
            _ => Err(Error::Config(format!("--checkpoint {s:?} must be FAMILY=PATH"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Value::Array(pairs))
}

/// Resolve and run one parsed command; returns the output directory.
pub fn execute(cli: &Cli) -> Result<PathBuf> {
    let mut o = json!({});
    match &cli.command {
        Command::Train(a) => {
            put_common(&mut o, &a.common);
            put_data(&mut o, &a.data);
            put(&mut o, "codec.mode", &a.mode);
            put(&mut o, "codec.lambda", &a.lambda);
            put(&mut o, "codec.distortion", &a.loss);
            put(&mut o, "codec.hidden_channels", &a.hidden);
            put(&mut o, "codec.latent_channels", &a.latent);
            put(&mut o, "codec.kernel", &a.kernel);
            put(&mut o, "train.steps", &a.steps);
            put(&mut o, "train.batch_size", &a.batch_size);
            put(&mut o, "train.patch_size", &a.patch_size);
            put(&mut o, "train.learning_rate", &a.lr);
            put(&mut o, "train.decay_at", &a.decay_at);
            put(&mut o, "train.log_every", &a.log_every);
            put(&mut o, "train.seed", &a.seed);
            put(&mut o, "init_seed", &a.seed);
            let cfg: TrainRun = resolve(a.common.config.as_deref(), o)?;
            run_train(&cfg, &output_dir(a.common.out.as_deref(), "train"))
        }
        Command::Attack(a) => {
            put_common(&mut o, &a.common);
            put(&mut o, "checkpoint", &a.checkpoint);
            put_paths(&mut o, "images", &a.image);
            put_attack(&mut o, &a.attack);
            put(&mut o, "attack.mode", &a.mode);
            put(&mut o, "target", &a.target);
            if let Some(m) = &a.mask {
                let r: MaskRect = m.parse()?;
                set_path(&mut o, "mask", serde_json::to_value(r)?);
            }
            if let Some(l) = &a.lambda_bkg {
                let v = if l == "inf" {
                    json!("inf")
                } else {
                    json!(l.parse::<f64>().map_err(|e| Error::Config(format!("--lambda-bkg {l:?}: {e}")))?)
                };
                set_path(&mut o, "attack.lambda_bkg", v);
            }
            let cfg: AttackRun = resolve(a.common.config.as_deref(), o)?;
            run_attack(&cfg, &output_dir(a.common.out.as_deref(), "attack"))
        }
        Command::Finetune(a) => {
            put_common(&mut o, &a.common);
            put_data(&mut o, &a.data);
            put(&mut o, "checkpoint", &a.checkpoint);
            put(&mut o, "finetune.iterations", &a.iterations);
            put(&mut o, "finetune.attack_steps", &a.attack_steps);
            put(&mut o, "finetune.batch_size", &a.batch_size);
            put(&mut o, "finetune.clean_fraction", &a.clean_fraction);
            put(&mut o, "finetune.lambda", &a.lambda);
            put(&mut o, "finetune.learning_rate", &a.lr);
            put(&mut o, "finetune.epsilon", &a.epsilon);
            put(&mut o, "finetune.patch_size", &a.patch_size);
            put(&mut o, "finetune.seed", &a.seed);
            put(&mut o, "checkpoint_every", &a.checkpoint_every);
            let cfg: FinetuneRun = resolve(a.common.config.as_deref(), o)?;
            run_finetune(&cfg, &output_dir(a.common.out.as_deref(), "finetune"))
        }
        Command::Recompress(a) => {
            put_common(&mut o, &a.common);
            put_paths(&mut o, "checkpoints", &a.checkpoint);
            put_paths(&mut o, "images", &a.image);
            put(&mut o, "rounds", &a.rounds);
            put(&mut o, "chain", &a.chain);
            let cfg: RecompressRun = resolve(a.common.config.as_deref(), o)?;
            run_recompress(&cfg, &output_dir(a.common.out.as_deref(), "recompress"))
        }
        Command::Eval(a) => {
            put_common(&mut o, &a.common);
            put(&mut o, "checkpoint", &a.checkpoint);
            put(&mut o, "compare", &a.compare);
            put_paths(&mut o, "images", &a.image);
            put_attack(&mut o, &a.attack);
            let cfg: EvalRun = resolve(a.common.config.as_deref(), o)?;
            run_eval(&cfg, &output_dir(a.common.out.as_deref(), "eval"))
        }
        Command::RdCurve(a) => {
            put_common(&mut o, &a.common);
            if !a.checkpoint.is_empty() {
                set_path(&mut o, "checkpoints", checkpoint_families(&a.checkpoint)?);
            }
            put_paths(&mut o, "images", &a.image);
            let cfg: RdCurveRun = resolve(a.common.config.as_deref(), o)?;
            run_rd_curve(&cfg, &output_dir(a.common.out.as_deref(), "rd-curve"))
        }
    }
}

/// JSON error record printed on failure.
pub fn error_record(e: &Error) -> Value {
    json!({ "status": "error", "kind": e.kind(), "message": e.to_string() })
}

/// Parse `args`, run, and return the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() && !e.to_string().contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(dir) => {
            println!("{}", json!({ "status": "ok", "output": dir }));
            0
        }
        Err(e) => {
            eprintln!("{}", error_record(&e));
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::DistanceKind;
    use crate::config::DataSource;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("advcodec").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn attack_flags_populate_the_spec() {
        let cli = parse(&["attack", "--epsilon", "1e-3", "--steps", "10000", "--distance", "l2", "--checkpoint", "m.ckpt", "--image", "a.png"]);
        let Command::Attack(a) = &cli.command else { panic!() };
        let mut o = json!({});
        put_attack(&mut o, &a.attack);
        put(&mut o, "checkpoint", &a.checkpoint);
        let cfg: AttackRun = resolve(None, o).unwrap();
        assert_eq!(cfg.attack.epsilon, 1e-3);
        assert_eq!(cfg.attack.steps, 10_000);
        assert_eq!(cfg.attack.distance, DistanceKind::L2);
        assert_eq!(cfg.checkpoint, PathBuf::from("m.ckpt"));
    }

    #[test]
    fn recompress_rounds_flag() {
        let cli = parse(&["recompress", "--rounds", "50", "--checkpoint", "m.ckpt"]);
        let Command::Recompress(a) = &cli.command else { panic!() };
        assert_eq!(a.rounds, Some(50));
    }

    #[test]
    fn invalid_flags_fail_to_parse() {
        assert!(Cli::try_parse_from(["advcodec", "attack", "--distance", "l3"]).is_err());
        assert!(Cli::try_parse_from(["advcodec", "attack", "--bogus"]).is_err());
        assert!(Cli::try_parse_from(["advcodec", "launch"]).is_err());
        assert!(Cli::try_parse_from(["advcodec", "rd-curve", "--checkpoint", "a=b"]).is_ok());
    }

    #[test]
    fn missing_checkpoint_leaves_no_output() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let code = main_with_args([
            "advcodec",
            "attack",
            "--checkpoint",
            dir.path().join("missing.ckpt").to_str().unwrap(),
            "--image",
            "x.png",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_ne!(code, 0);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn family_specs_parse() {
        assert_eq!(checkpoint_families(&["base=a.ckpt".into()]).unwrap(), json!([["base", "a.ckpt"]]));
        assert!(checkpoint_families(&["a.ckpt".into()]).is_err());
    }

    #[test]
    fn synthetic_data_flags() {
        let cli = parse(&["train", "--synthetic", "3", "--synthetic-size", "32", "--steps", "0"]);
        let Command::Train(a) = &cli.command else { panic!() };
        let mut o = json!({});
        put_data(&mut o, &a.data);
        let cfg: TrainRun = resolve(None, o).unwrap();
        assert_eq!(cfg.data, DataSource::Synthetic { count: 3, height: 32, width: 32, seed: 1 });
    }
}
