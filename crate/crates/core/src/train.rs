//! Rate-distortion training from random initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{CodecModel, DistortionKind, Quantization};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::image::ImageTensor;
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub learning_rate: f32,
    /// Learning rate is divided by 10 from this step on.
    pub decay_at: Option<usize>,
    /// Global gradient-norm clip.
    pub max_grad_norm: Option<f32>,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            batch_size: 8,
            patch_size: 32,
            learning_rate: 1e-3,
            decay_at: None,
            max_grad_norm: Some(5.0),
            seed: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patch_size == 0 || self.log_every == 0 {
            return Err(Error::InvalidParameter("batch_size, patch_size and log_every must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// One logged optimization step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub loss: f64,
    pub rate_bpp: f64,
    pub distortion: f64,
}

fn clip_gradients(grads: &mut ParamStore, max_norm: f32) {
    let norm = grads
        .iter()
        .map(|(_, g)| g.data().iter().map(|v| (*v as f64).powi(2)).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm as f64 {
        let s = (max_norm as f64 / norm) as f32;
        for (_, g) in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// One Adam step on `bpp + lambda * D` over a batch with fresh proxy noise.
/// Returns the pre-update loss terms; a non-finite loss leaves the model untouched.
pub fn rd_update(
    model: &mut CodecModel,
    adam: &mut Adam,
    batch: &[&ImageTensor],
    kind: DistortionKind,
    max_grad_norm: Option<f32>,
    rng: &mut impl Rng,
) -> Result<TrainRecord> {
    let x = ImageTensor::batch(batch)?;
    let (n, _, h, w) = x.dims4();
    let quant = Quantization::sample(model.config(), n, h, w, rng);
    let mut g = Graph::new();
    let bound = model.params().bind(&mut g, true);
    let xv = g.constant(x);
    let terms = model.rd_loss_graph(&mut g, &bound, xv, &quant, kind)?;
    let record = TrainRecord {
        step: adam.steps_taken() as usize,
        loss: g.scalar(terms.loss),
        rate_bpp: g.scalar(terms.rate_bpp),
        distortion: g.scalar(terms.distortion),
    };
    if !record.loss.is_finite() {
        return Err(Error::Diverged {
            step: record.step,
            loss: record.loss,
        });
    }
    let mut grads = g.backward(terms.loss);
    let mut pg = model.params().gradients(&bound, &mut grads);
    if let Some(c) = max_grad_norm {
        clip_gradients(&mut pg, c);
    }
    adam.step_params(model.params_mut(), &pg);
    Ok(record)
}

pub struct TrainOutcome {
    pub model: CodecModel,
    pub log: Vec<TrainRecord>,
}

/// Train `model` on random patches of `data`. Every `log_every` steps the
/// running mean of the loss terms is recorded and passed to `on_log`.
pub fn train_baseline(
    mut model: CodecModel,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_log: impl FnMut(&TrainRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.learning_rate));
    let kind = model.config().distortion;
    let mut log = Vec::new();
    let mut acc = (0.0, 0.0, 0.0, 0usize);
    for step in 0..cfg.steps {
        if cfg.decay_at == Some(step) {
            adam.config.learning_rate = cfg.learning_rate * 0.1;
        }
        let patches = data.random_batch(cfg.batch_size, cfg.patch_size, &mut rng)?;
        let refs: Vec<&ImageTensor> = patches.iter().collect();
        let r = rd_update(&mut model, &mut adam, &refs, kind, cfg.max_grad_norm, &mut rng)?;
        acc = (acc.0 + r.loss, acc.1 + r.rate_bpp, acc.2 + r.distortion, acc.3 + 1);
        if (step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps {
            let k = acc.3 as f64;
            let rec = TrainRecord {
                step: step + 1,
                loss: acc.0 / k,
                rate_bpp: acc.1 / k,
                distortion: acc.2 / k,
            };
            on_log(&rec);
            log.push(rec);
            acc = (0.0, 0.0, 0.0, 0);
        }
    }
    Ok(TrainOutcome { model, log })
}
