//! Iterative adversarial finetuning and its before/after evaluation.
//!
//! Each iteration draws a batch of patches, keeps a fraction clean, replaces
//! the rest with untargeted adversarial examples generated against the
//! current parameters (cold start every time), and takes one Adam step on
//! `bpp + lambda * D` over the mixed batch. Transforms and entropy model are
//! all updated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{generate_adversarial_batch, AttackSpec, DistanceKind};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::experiments::{attack_all, ExperimentReport, NamedImage, ReportRow, PROXY_NOTE};
use crate::image::ImageTensor;
use crate::optim::{Adam, AdamConfig};
use crate::train::rd_update;
use crate::CodecModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSpec {
    pub iterations: usize,
    pub attack_steps: usize,
    pub batch_size: usize,
    pub clean_fraction: f64,
    /// RD trade-off; `None` keeps the lambda the model was trained at.
    pub lambda: Option<f64>,
    pub learning_rate: f32,
    pub epsilon: f64,
    pub distance: DistanceKind,
    pub attack_learning_rate: f32,
    pub patch_size: usize,
    pub max_grad_norm: Option<f32>,
    pub seed: u64,
}

impl Default for FinetuneSpec {
    fn default() -> Self {
        Self {
            iterations: 1000,
            attack_steps: 1000,
            batch_size: 8,
            clean_fraction: 0.5,
            lambda: None,
            learning_rate: 1e-4,
            epsilon: 1e-3,
            distance: DistanceKind::L2,
            attack_learning_rate: 1e-3,
            patch_size: 32,
            max_grad_norm: Some(5.0),
            seed: 0,
        }
    }
}

impl FinetuneSpec {
    /// `(clean, adversarial)` images per batch.
    pub fn split(&self) -> Result<(usize, usize)> {
        let clean = self.batch_size as f64 * self.clean_fraction;
        if !(0.0..=1.0).contains(&self.clean_fraction) || (clean - clean.round()).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "batch_size * clean_fraction = {clean} is not a whole number of images"
            )));
        }
        let clean = clean.round() as usize;
        Ok((clean, self.batch_size - clean))
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patch_size == 0 {
            return Err(Error::InvalidParameter("batch_size and patch_size must be positive".into()));
        }
        if let Some(l) = self.lambda.filter(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidParameter(format!("lambda must be finite and >= 0, got {l}")));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("learning_rate must be positive".into()));
        }
        self.split()?;
        self.attack_spec(0).validate()
    }

    /// Inner attack settings for one iteration.
    pub fn attack_spec(&self, iteration: usize) -> AttackSpec {
        AttackSpec {
            learning_rate: self.attack_learning_rate,
            ..AttackSpec::untargeted(self.epsilon, self.attack_steps, self.distance, self.seed ^ ((iteration as u64 + 1) << 20))
        }
    }
}

/// One finetuning iteration as logged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub iteration: usize,
    pub clean: usize,
    pub adversarial: usize,
    /// Mean final inner-attack loss.
    pub attack_loss: f64,
    pub attacks_within_budget: usize,
    pub loss: f64,
    pub rate_bpp: f64,
    pub distortion: f64,
}

/// Attack `to_attack` against the current `model`, then take one RD step on
/// `clean ++ adversarial`. Returns the record and the adversarial examples.
pub fn finetune_iteration(
    model: &mut CodecModel,
    adam: &mut Adam,
    clean: &[&ImageTensor],
    to_attack: &[&ImageTensor],
    spec: &FinetuneSpec,
    iteration: usize,
    rng: &mut impl Rng,
) -> Result<(FinetuneRecord, Vec<ImageTensor>)> {
    let (attack_loss, within, adversarial) = if to_attack.is_empty() {
        (0.0, 0, Vec::new())
    } else {
        let results = generate_adversarial_batch(to_attack, &[], model, &spec.attack_spec(iteration))?;
        let loss = results.iter().map(|r| r.loss_trace.last().copied().unwrap_or(f64::NAN)).sum::<f64>() / results.len() as f64;
        let within = results.iter().filter(|r| r.budget_satisfied).count();
        (loss, within, results.into_iter().map(|r| r.adversarial_example).collect::<Vec<_>>())
    };
    let batch: Vec<&ImageTensor> = clean.iter().copied().chain(adversarial.iter()).collect();
    let kind = model.config().distortion;
    let r = rd_update(model, adam, &batch, kind, spec.max_grad_norm, rng)?;
    let record = FinetuneRecord {
        iteration,
        clean: clean.len(),
        adversarial: adversarial.len(),
        attack_loss,
        attacks_within_budget: within,
        loss: r.loss,
        rate_bpp: r.rate_bpp,
        distortion: r.distortion,
    };
    Ok((record, adversarial))
}

pub struct FinetuneOutcome {
    pub model: CodecModel,
    pub log: Vec<FinetuneRecord>,
}

/// Finetune a copy of `model`; the input is left untouched. `on_iteration`
/// sees every record and the updated model (for logging and checkpoints).
pub fn adversarial_finetune(
    model: &CodecModel,
    data: &Dataset,
    spec: &FinetuneSpec,
    mut on_iteration: impl FnMut(&FinetuneRecord, &CodecModel) -> Result<()>,
) -> Result<FinetuneOutcome> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::Dataset("dataset is empty".into()));
    }
    let (n_clean, n_adv) = spec.split()?;
    let mut model = model.clone();
    if let Some(l) = spec.lambda {
        model.set_lambda(l);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut adam = Adam::new(AdamConfig::with_lr(spec.learning_rate));
    let mut log = Vec::with_capacity(spec.iterations);
    for i in 0..spec.iterations {
        let patches = data.random_batch(spec.batch_size, spec.patch_size, &mut rng)?;
        let refs: Vec<&ImageTensor> = patches.iter().collect();
        let (clean, to_attack) = refs.split_at(n_clean);
        debug_assert_eq!(to_attack.len(), n_adv);
        let (record, _) = finetune_iteration(&mut model, &mut adam, clean, to_attack, spec, i, &mut rng)?;
        on_iteration(&record, &model)?;
        log.push(record);
    }
    Ok(FinetuneOutcome { model, log })
}

/// Clean and freshly attacked rows for both models on every image, in the
/// order image, model (`before`, `after`), condition (`clean`, `attacked`).
pub fn evaluate_defense(before: &CodecModel, after: &CodecModel, images: &[NamedImage], spec: &AttackSpec) -> Result<ExperimentReport> {
    if !before.same_architecture(after) {
        return Err(Error::Architecture("models to compare differ in architecture".into()));
    }
    if images.is_empty() {
        return Err(Error::InvalidParameter("no images given".into()));
    }
    let mut report = ExperimentReport::new("defense");
    report.provenance.spec = serde_json::to_value(spec)?;
    report.provenance.seeds.insert("attack".into(), spec.seed);
    report.record_model("before", before);
    report.record_model("after", after);
    report.note(PROXY_NOTE);
    let mut per_model = Vec::new();
    for model in [before, after] {
        per_model.push(attack_all(images, model, spec)?);
    }
    for (i, (name, x)) in images.iter().enumerate() {
        for (id, model, (results, times)) in [("before", before, &per_model[0]), ("after", after, &per_model[1])] {
            let r = &results[i];
            let kind = model.config().distortion;
            let clean_loss = r.original_metrics.bpp + model.lambda() * crate::codec::distortion_value(x, &r.original_reconstruction, kind)?;
            report.push(ReportRow::new(name, id, "clean", &r.original_metrics).extra("rd_loss", clean_loss));
            let mut row = ReportRow::attacked(name, id, r);
            row.wall_time_s = times[i];
            report.push(row);
        }
    }
    Ok(report)
}

/// Mean PSNR of one model under one condition in a defense report.
pub fn mean_psnr(report: &ExperimentReport, model_id: &str, condition: &str) -> Option<f64> {
    report.mean(|r| r.model_id == model_id && r.condition == condition, |r| r.psnr_db)
}
