//! Scripted studies over trained codecs, emitting [`ExperimentReport`]s.
//!
//! Rows carry every metric column. Columns that do not apply to a row are
//! `None` (an empty CSV cell), never a made-up number. `wall_time_s` is the
//! only nondeterministic field; [`ExperimentReport::without_timing`] drops it
//! for reproducibility comparisons.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attack::{generate_adversarial_batch, AttackMode, AttackResult, AttackSpec, DistanceKind, Mask};
use crate::checkpoint::write_atomic;
use crate::codec::CodecModel;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::metrics::{self, MetricReport};

/// Note attached to every report that contains attacked rows.
pub const PROXY_NOTE: &str =
    "attack losses use additive uniform noise in place of rounding (one seeded draw per image); reported metrics use hard rounding";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRow {
    pub image_id: String,
    pub model_id: String,
    /// `clean`, `attacked`, `round{k}`, ...
    pub condition: String,
    pub tags: BTreeMap<String, String>,
    pub bpp: f64,
    pub psnr_db: f64,
    pub ms_ssim: f64,
    pub mse: f64,
    /// PSNR of the (possibly perturbed) input against the original.
    pub input_psnr_db: Option<f64>,
    /// `None` for rows without an attack.
    pub budget_satisfied: Option<bool>,
    /// Named numeric side results such as `rd_loss` or `target_distance`.
    pub extra: BTreeMap<String, f64>,
    pub wall_time_s: f64,
}

impl ReportRow {
    pub fn new(image_id: &str, model_id: &str, condition: &str, m: &MetricReport) -> Self {
        Self {
            image_id: image_id.to_string(),
            model_id: model_id.to_string(),
            condition: condition.to_string(),
            tags: BTreeMap::new(),
            bpp: m.bpp,
            psnr_db: m.psnr_db,
            ms_ssim: m.ms_ssim,
            mse: m.mse,
            input_psnr_db: None,
            budget_satisfied: None,
            extra: BTreeMap::new(),
            wall_time_s: 0.0,
        }
    }

    pub fn tag(mut self, key: &str, value: impl ToString) -> Self {
        self.tags.insert(key.to_string(), value.to_string());
        self
    }

    pub fn extra(mut self, key: &str, value: f64) -> Self {
        self.extra.insert(key.to_string(), value);
        self
    }

    /// Row for an attack result, with the clean reconstruction in `extra`.
    pub fn attacked(image_id: &str, model_id: &str, r: &AttackResult) -> Self {
        let mut row = Self::new(image_id, model_id, "attacked", &r.metrics)
            .extra("clean_psnr_db", r.original_metrics.psnr_db)
            .extra("clean_bpp", r.original_metrics.bpp)
            .extra("noise_mse", r.noise_norm)
            .extra("psnr_db_8bit", r.quantized_8bit.metrics.psnr_db)
            .extra("input_psnr_db_8bit", metrics::capped_psnr(r.quantized_8bit.input_psnr));
        row.input_psnr_db = Some(metrics::capped_psnr(r.input_psnr));
        row.budget_satisfied = Some(r.budget_satisfied);
        row
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub code_version: String,
    pub seeds: BTreeMap<String, u64>,
    /// Snapshot of the settings that produced the rows.
    pub spec: serde_json::Value,
    /// Model id to parameter fingerprint.
    pub models: BTreeMap<String, String>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentReport {
    pub experiment_id: String,
    pub provenance: Provenance,
    rows: Vec<ReportRow>,
}

const CSV_HEADER: [&str; 12] = [
    "image_id",
    "model_id",
    "condition",
    "tags",
    "bpp",
    "psnr_db",
    "ms_ssim",
    "mse",
    "input_psnr_db",
    "budget_satisfied",
    "extra",
    "wall_time_s",
];

fn join_map<V: std::fmt::Display>(m: &BTreeMap<String, V>) -> String {
    m.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

impl ExperimentReport {
    pub fn new(experiment_id: &str) -> Self {
        Self {
            experiment_id: experiment_id.to_string(),
            provenance: Provenance {
                code_version: crate::VERSION.to_string(),
                ..Provenance::default()
            },
            rows: Vec::new(),
        }
    }

    pub fn rows(&self) -> &[ReportRow] {
        &self.rows
    }

    pub fn push(&mut self, row: ReportRow) {
        self.rows.push(row);
    }

    pub fn record_model(&mut self, id: &str, model: &CodecModel) {
        self.provenance.models.insert(id.to_string(), model.fingerprint());
    }

    pub fn note(&mut self, note: &str) {
        if !self.provenance.notes.iter().any(|n| n == note) {
            self.provenance.notes.push(note.to_string());
        }
    }

    /// Mean of `field` over rows accepted by `filter`; `None` when no row matches.
    pub fn mean(&self, filter: impl Fn(&ReportRow) -> bool, field: impl Fn(&ReportRow) -> f64) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter(|r| filter(r)).map(field).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.rows.iter_mut().for_each(|row| row.wall_time_s = 0.0);
        r
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Rows only; tags and extras are `key=value` lists joined by `;`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.image_id.clone(),
                r.model_id.clone(),
                r.condition.clone(),
                join_map(&r.tags),
                r.bpp.to_string(),
                r.psnr_db.to_string(),
                r.ms_ssim.to_string(),
                r.mse.to_string(),
                opt(r.input_psnr_db),
                r.budget_satisfied.map(|b| b.to_string()).unwrap_or_default(),
                join_map(&r.extra),
                r.wall_time_s.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Write `{stem}.json` and `{stem}.csv` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        write_atomic(&dir.join(format!("{stem}.json")), self.to_json()?.as_bytes())?;
        write_atomic(&dir.join(format!("{stem}.csv")), self.to_csv()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// A named image, as held by [`crate::dataset::Dataset`].
pub type NamedImage = (String, ImageTensor);

fn check_images(images: &[NamedImage]) -> Result<()> {
    if images.is_empty() {
        return Err(Error::InvalidParameter("no images given".into()));
    }
    Ok(())
}

/// Attack all images with one spec; images of different sizes are attacked
/// in separate batches. Returns results in input order and the wall time
/// per image.
pub fn attack_all(images: &[NamedImage], model: &CodecModel, spec: &AttackSpec) -> Result<(Vec<AttackResult>, Vec<f64>)> {
    let mut groups: BTreeMap<(usize, usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, (_, im)) in images.iter().enumerate() {
        groups.entry((im.channels(), im.height(), im.width())).or_default().push(i);
    }
    let mut out: Vec<Option<(AttackResult, f64)>> = vec![None; images.len()];
    for idx in groups.values() {
        let t = Instant::now();
        let batch: Vec<&ImageTensor> = idx.iter().map(|&i| &images[i].1).collect();
        let results = generate_adversarial_batch(&batch, &[], model, spec)?;
        let per = t.elapsed().as_secs_f64() / idx.len() as f64;
        for (&i, r) in idx.iter().zip(results) {
            out[i] = Some((r, per));
        }
    }
    Ok(out.into_iter().map(|o| o.expect("every image attacked")).unzip())
}

fn spec_snapshot(spec: &AttackSpec) -> serde_json::Value {
    serde_json::to_value(spec).expect("attack spec serializes")
}

/// How reconstructions are handed to the next round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecompressChain {
    /// Clamp and round to 8 bits before re-encoding, as a saved file would be.
    #[serde(rename = "quantized_8bit")]
    Quantized8Bit,
    /// Feed the float reconstruction straight back.
    Float,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecompressStep {
    pub round: usize,
    pub x_hat: ImageTensor,
    /// Metrics against the original input.
    pub metrics: MetricReport,
}

/// Encode `x`, then re-encode the reconstruction, `rounds` times in total.
pub fn recompress(x: &ImageTensor, model: &CodecModel, rounds: usize, chain: RecompressChain) -> Result<Vec<RecompressStep>> {
    if rounds == 0 {
        return Err(Error::InvalidParameter("rounds must be >= 1".into()));
    }
    let mut out: Vec<RecompressStep> = Vec::with_capacity(rounds);
    let mut input = x.clone();
    for round in 1..=rounds {
        let rt = model.roundtrip(&input)?;
        input = match chain {
            RecompressChain::Quantized8Bit => rt.x_hat.quantize_8bit(),
            RecompressChain::Float => rt.x_hat.clone(),
        };
        out.push(RecompressStep {
            round,
            metrics: MetricReport::compare(x, &rt.x_hat, rt.bpp)?,
            x_hat: rt.x_hat,
        });
    }
    Ok(out)
}

/// One row per (image, model, round).
pub fn recompression_study(
    images: &[NamedImage],
    models: &[(&str, &CodecModel)],
    rounds: usize,
    chain: RecompressChain,
) -> Result<ExperimentReport> {
    check_images(images)?;
    let mut report = ExperimentReport::new("recompression");
    report.provenance.spec = serde_json::json!({ "rounds": rounds, "chain": chain });
    for (id, model) in models {
        report.record_model(id, model);
        for (name, x) in images {
            let t = Instant::now();
            let steps = recompress(x, model, rounds, chain)?;
            let per = t.elapsed().as_secs_f64() / rounds as f64;
            for s in steps {
                let mut row = ReportRow::new(name, id, &format!("round{}", s.round), &s.metrics).extra("round", s.round as f64);
                row.wall_time_s = per;
                report.push(row);
            }
        }
    }
    Ok(report)
}

/// One attack per (image, epsilon), all with the same seed.
pub fn epsilon_sweep(images: &[NamedImage], model: &CodecModel, model_id: &str, epsilons: &[f64], base: &AttackSpec) -> Result<ExperimentReport> {
    check_images(images)?;
    if let Some(e) = epsilons.iter().find(|e| !(**e > 0.0)) {
        return Err(Error::InvalidAttack(format!("epsilon must be positive, got {e}")));
    }
    let mut report = ExperimentReport::new("epsilon_sweep");
    report.provenance.spec = serde_json::json!({ "epsilons": epsilons, "attack": spec_snapshot(base) });
    report.provenance.seeds.insert("attack".into(), base.seed);
    report.record_model(model_id, model);
    report.note(PROXY_NOTE);
    for &epsilon in epsilons {
        let spec = AttackSpec { epsilon, ..base.clone() };
        let (results, times) = attack_all(images, model, &spec)?;
        for ((name, _), (r, t)) in images.iter().zip(results.iter().zip(times)) {
            let mut row = ReportRow::attacked(name, model_id, r).tag("epsilon", epsilon).extra("epsilon", epsilon);
            row.wall_time_s = t;
            report.push(row);
        }
    }
    Ok(report)
}

/// Clean and attacked rows for models trained at different lambdas.
pub fn quality_sweep(images: &[NamedImage], models: &[(&str, &CodecModel)], spec: &AttackSpec) -> Result<ExperimentReport> {
    check_images(images)?;
    if models.len() < 2 {
        return Err(Error::InvalidParameter("quality sweep needs at least two models".into()));
    }
    let mut report = ExperimentReport::new("quality_sweep");
    report.provenance.spec = spec_snapshot(spec);
    report.provenance.seeds.insert("attack".into(), spec.seed);
    report.note(PROXY_NOTE);
    for (id, model) in models {
        report.record_model(id, model);
        let (results, times) = attack_all(images, model, spec)?;
        for ((name, _), (r, t)) in images.iter().zip(results.iter().zip(times)) {
            let lambda = model.lambda();
            report.push(
                ReportRow::new(name, id, "clean", &r.original_metrics)
                    .tag("lambda", lambda)
                    .extra("lambda", lambda),
            );
            let mut row = ReportRow::attacked(name, id, r).tag("lambda", lambda).extra("lambda", lambda);
            row.wall_time_s = t;
            report.push(row);
        }
    }
    Ok(report)
}

/// One attacked row per distance kind and image; the clean PSNR rides along
/// in `extra["clean_psnr_db"]`.
pub fn distance_ablation(images: &[NamedImage], model: &CodecModel, model_id: &str, base: &AttackSpec) -> Result<ExperimentReport> {
    check_images(images)?;
    let mut report = ExperimentReport::new("distance_ablation");
    report.provenance.spec = spec_snapshot(base);
    report.provenance.seeds.insert("attack".into(), base.seed);
    report.record_model(model_id, model);
    report.note(PROXY_NOTE);
    for distance in [DistanceKind::L2, DistanceKind::L1, DistanceKind::MsSsim] {
        let spec = AttackSpec { distance, ..base.clone() };
        let (results, times) = attack_all(images, model, &spec)?;
        for ((name, _), (r, t)) in images.iter().zip(results.iter().zip(times)) {
            let mut row = ReportRow::attacked(name, model_id, r).tag("distance", distance);
            row.wall_time_s = t;
            report.push(row);
        }
    }
    Ok(report)
}

/// Mean clean RD point per model over `images`, including the mean training
/// objective `bpp + lambda * D` under hard rounding as `extra["rd_loss"]`.
pub fn rd_curve(families: &[(&str, Vec<(&str, &CodecModel)>)], images: &[NamedImage]) -> Result<ExperimentReport> {
    check_images(images)?;
    let mut report = ExperimentReport::new("rd_curve");
    report.provenance.spec = serde_json::json!({ "images": images.iter().map(|(n, _)| n).collect::<Vec<_>>() });
    for (family, models) in families {
        for (id, model) in models {
            report.record_model(id, model);
            let t = Instant::now();
            let kind = model.config().distortion;
            let (mut sum, mut loss) = ([0.0; 4], 0.0);
            for (_, x) in images {
                let rt = model.roundtrip(x)?;
                let m = MetricReport::compare(x, &rt.x_hat, rt.bpp)?;
                sum[0] += m.bpp;
                sum[1] += m.psnr_db;
                sum[2] += m.ms_ssim;
                sum[3] += m.mse;
                loss += rt.bpp + model.lambda() * crate::codec::distortion_value(x, &rt.x_hat, kind)?;
            }
            let k = images.len() as f64;
            let mean = MetricReport {
                bpp: sum[0] / k,
                psnr_db: sum[1] / k,
                ms_ssim: sum[2] / k,
                mse: sum[3] / k,
            };
            let mut row = ReportRow::new("mean", id, "clean", &mean)
                .tag("family", family)
                .tag("lambda", model.lambda())
                .extra("lambda", model.lambda())
                .extra("rd_loss", loss / k);
            row.wall_time_s = t.elapsed().as_secs_f64();
            report.push(row);
        }
    }
    Ok(report)
}

/// A source image and the image its reconstruction should move toward.
#[derive(Clone, Debug)]
pub struct TargetPair {
    pub id: String,
    pub source: ImageTensor,
    pub target: ImageTensor,
}

fn masked_mse(a: &ImageTensor, b: &ImageTensor, mask: Option<&Mask>, roi: bool) -> f64 {
    let (h, w) = (a.height(), a.width());
    let (mut s, mut k) = (0.0, 0usize);
    for c in 0..a.channels() {
        for y in 0..h {
            for x in 0..w {
                if mask.is_none_or(|m| m.is_roi(y, x) == roi) {
                    s += ((a.get(c, y, x) - b.get(c, y, x)) as f64).powi(2);
                    k += 1;
                }
            }
        }
    }
    if k == 0 {
        0.0
    } else {
        s / k as f64
    }
}

/// Targeted or masked-targeted attacks on source/target pairs. Grayscale
/// images are replicated to three channels. Each row reports
/// `target_distance = ||x_hat* - x_hat_t||^2` and
/// `source_distance = ||x_hat* - x_hat||^2` under hard rounding, restricted
/// to the ROI for masked attacks (`bkg_target_distance` covers the rest).
pub fn targeted_demo(pairs: &[TargetPair], model: &CodecModel, model_id: &str, spec: &AttackSpec) -> Result<(Vec<AttackResult>, ExperimentReport)> {
    if pairs.is_empty() {
        return Err(Error::InvalidParameter("no source/target pairs".into()));
    }
    if spec.mode == AttackMode::Untargeted {
        return Err(Error::InvalidAttack("targeted demo needs a targeted mode".into()));
    }
    let sources: Vec<ImageTensor> = pairs.iter().map(|p| p.source.to_rgb()).collect();
    let targets: Vec<ImageTensor> = pairs.iter().map(|p| p.target.to_rgb()).collect();
    let mut report = ExperimentReport::new("targeted_demo");
    report.provenance.spec = spec_snapshot(spec);
    report.provenance.seeds.insert("attack".into(), spec.seed);
    report.record_model(model_id, model);
    report.note(PROXY_NOTE);
    let t = Instant::now();
    let mut results = Vec::with_capacity(pairs.len());
    // pairs of different sizes cannot share a batch
    let mut start = 0;
    while start < pairs.len() {
        let shape = |i: usize| (sources[i].height(), sources[i].width());
        let end = (start..pairs.len()).find(|&i| shape(i) != shape(start)).unwrap_or(pairs.len());
        let s: Vec<&ImageTensor> = sources[start..end].iter().collect();
        let tg: Vec<&ImageTensor> = targets[start..end].iter().collect();
        results.extend(generate_adversarial_batch(&s, &tg, model, spec)?);
        start = end;
    }
    let per = t.elapsed().as_secs_f64() / pairs.len() as f64;
    let mask = spec.mask.as_ref().filter(|_| spec.mode == AttackMode::MaskedTargeted);
    for ((p, r), target) in pairs.iter().zip(&results).zip(&targets) {
        let target_hat = model.roundtrip(target)?.x_hat;
        let mut row = ReportRow::attacked(&p.id, model_id, r)
            .tag("mode", serde_json::to_value(spec.mode).unwrap().as_str().unwrap())
            .extra("target_distance", masked_mse(&r.adv_reconstruction, &target_hat, mask, true))
            .extra("source_distance", masked_mse(&r.adv_reconstruction, &r.original_reconstruction, mask, true));
        if mask.is_some() {
            let lam = if spec.lambda_bkg.is_infinite() { "inf".to_string() } else { spec.lambda_bkg.to_string() };
            row = row
                .tag("lambda_bkg", lam)
                .extra("bkg_target_distance", masked_mse(&r.adv_reconstruction, &target_hat, mask, false));
        }
        row.wall_time_s = per;
        report.push(row);
    }
    Ok((results, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::CodecConfig;
    use crate::dataset::{digit_image, Dataset};

    fn toy(seed: u64) -> CodecModel {
        CodecModel::new(CodecConfig::toy(), seed).unwrap()
    }

    fn images(n: usize) -> Vec<NamedImage> {
        Dataset::synthetic(n, 16, 16, 4).unwrap().items().to_vec()
    }

    #[test]
    fn one_round_equals_a_roundtrip() {
        let model = toy(1);
        let (_, x) = &images(1)[0];
        let rt = model.roundtrip(x).unwrap();
        for chain in [RecompressChain::Quantized8Bit, RecompressChain::Float] {
            let steps = recompress(x, &model, 1, chain).unwrap();
            assert_eq!(steps.len(), 1);
            assert_eq!(steps[0].x_hat, rt.x_hat);
            assert_eq!(steps[0].metrics, MetricReport::compare(x, &rt.x_hat, rt.bpp).unwrap());
        }
        assert_eq!(recompress(x, &model, 7, RecompressChain::Float).unwrap().len(), 7);
        assert!(recompress(x, &model, 0, RecompressChain::Float).is_err());
    }

    #[test]
    fn chains_differ_only_after_the_first_round() {
        let model = toy(1);
        let (_, x) = &images(1)[0];
        let q = recompress(x, &model, 3, RecompressChain::Quantized8Bit).unwrap();
        let f = recompress(x, &model, 3, RecompressChain::Float).unwrap();
        assert_eq!(q[0].x_hat, f[0].x_hat);
        let again = model.roundtrip(&q[0].x_hat.quantize_8bit()).unwrap();
        assert_eq!(q[1].x_hat, again.x_hat);
    }

    #[test]
    fn report_roundtrips_through_json_byte_identically() {
        let model = toy(2);
        let ims = images(2);
        let report = recompression_study(&ims, &[("toy", &model)], 2, RecompressChain::Quantized8Bit).unwrap();
        assert_eq!(report.rows().len(), 4);
        let json = report.to_json().unwrap();
        let back = ExperimentReport::from_json(&json).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.to_json().unwrap(), json);
        let csv = report.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("image_id,model_id,condition,tags,bpp"));
    }

    #[test]
    fn save_writes_json_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let mut report = ExperimentReport::new("x");
        report.push(ReportRow::new("a", "m", "clean", &MetricReport { psnr_db: 30.0, ms_ssim: 0.9, mse: 1e-3, bpp: 0.5 }));
        report.save(dir.path(), "x").unwrap();
        assert_eq!(ExperimentReport::load(&dir.path().join("x.json")).unwrap(), report);
        assert!(dir.path().join("x.csv").exists());
    }

    #[test]
    fn sweep_rows_are_tagged_and_seeded() {
        let model = toy(3);
        let ims = images(2);
        let base = AttackSpec::untargeted(1e-3, 3, DistanceKind::L2, 5);
        let eps = [1e-5, 1e-4, 1e-3];
        let r = epsilon_sweep(&ims, &model, "toy", &eps, &base).unwrap();
        assert_eq!(r.rows().len(), 6);
        assert_eq!(r.rows()[0].tags["epsilon"], "0.00001");
        assert!(r.rows().iter().all(|row| row.budget_satisfied.is_some()));
        let again = epsilon_sweep(&ims, &model, "toy", &eps, &base).unwrap();
        assert_eq!(again.without_timing(), r.without_timing());
        assert!(epsilon_sweep(&ims, &model, "toy", &[0.0], &base).is_err());
    }

    #[test]
    fn quality_sweep_and_ablation_shapes() {
        let (a, mut b) = (toy(4), toy(5));
        b.set_lambda(4096.0);
        let ims = images(2);
        let spec = AttackSpec::untargeted(1e-3, 2, DistanceKind::L2, 1);
        let q = quality_sweep(&ims, &[("a", &a), ("b", &b)], &spec).unwrap();
        assert_eq!(q.rows().len(), 8);
        assert!(q.rows().iter().all(|r| r.tags.contains_key("lambda")));
        assert!(quality_sweep(&ims, &[("a", &a)], &spec).is_err());
        let d = distance_ablation(&ims, &a, "a", &spec).unwrap();
        assert_eq!(d.rows().len(), 6);
        for kind in ["l2", "l1", "ms_ssim"] {
            assert_eq!(d.rows().iter().filter(|r| r.tags["distance"] == kind).count(), 2);
        }
    }

    #[test]
    fn rd_curve_single_point_matches_roundtrip() {
        let model = toy(6);
        let ims = images(1);
        let r = rd_curve(&[("base", vec![("m", &model)])], &ims).unwrap();
        let rt = model.roundtrip(&ims[0].1).unwrap();
        let m = MetricReport::compare(&ims[0].1, &rt.x_hat, rt.bpp).unwrap();
        let row = &r.rows()[0];
        assert_eq!((row.bpp, row.psnr_db, row.ms_ssim, row.mse), (m.bpp, m.psnr_db, m.ms_ssim, m.mse));
        assert!((row.extra["rd_loss"] - (m.bpp + model.lambda() * m.mse)).abs() < 1e-9);
    }

    #[test]
    fn self_target_demo_stays_at_the_reconstruction() {
        let model = toy(7);
        let d = digit_image(3, 16, 1).unwrap();
        let pair = TargetPair {
            id: "3->3".into(),
            source: d.clone(),
            target: d.clone(),
        };
        let spec = AttackSpec {
            init_amplitude: 0.0,
            ..AttackSpec::targeted(d.to_rgb(), 1e-3, 0, 1)
        };
        let (results, report) = targeted_demo(&[pair], &model, "toy", &spec).unwrap();
        assert_eq!(results[0].adversarial_example, d.to_rgb());
        let row = &report.rows()[0];
        assert_eq!(row.extra["target_distance"], 0.0);
        assert_eq!(row.extra["source_distance"], 0.0);
        let untargeted = AttackSpec::untargeted(1e-3, 0, DistanceKind::L2, 0);
        let pair = TargetPair {
            id: "x".into(),
            source: d.clone(),
            target: d,
        };
        assert!(targeted_demo(&[pair], &model, "toy", &untargeted).is_err());
    }

    #[test]
    fn masked_demo_reports_roi_and_background() {
        let model = toy(8);
        let s = digit_image(1, 16, 2).unwrap();
        let t = digit_image(7, 16, 2).unwrap();
        let mask = Mask::rect(16, 16, 0, 0, 16, 8);
        let spec = AttackSpec::masked(t.to_rgb(), mask, 0.1, 1e-3, 2, 3);
        let pair = TargetPair {
            id: "1->7".into(),
            source: s,
            target: t,
        };
        let (_, report) = targeted_demo(&[pair], &model, "toy", &spec).unwrap();
        let row = &report.rows()[0];
        assert!(row.extra.contains_key("bkg_target_distance"));
        assert_eq!(row.tags["lambda_bkg"], "0.1");
    }

    fn arb_row() -> impl proptest::strategy::Strategy<Value = ReportRow> {
        use proptest::prelude::*;
        let finite = -1e6f64..1e6;
        (
            ("[a-z0-9_]{1,8}", "[a-z]{1,6}", "[a-z0-9]{1,8}"),
            proptest::collection::btree_map("[a-z]{1,5}", "[a-z0-9.]{0,6}", 0..3),
            (finite.clone(), finite.clone(), finite.clone(), finite.clone()),
            (proptest::option::of(finite.clone()), proptest::option::of(any::<bool>())),
            proptest::collection::btree_map("[a-z_]{1,8}", finite.clone(), 0..3),
            0f64..1e4,
        )
            .prop_map(|((image_id, model_id, condition), tags, (bpp, psnr_db, ms_ssim, mse), (input_psnr_db, budget_satisfied), extra, wall_time_s)| ReportRow {
                image_id,
                model_id,
                condition,
                tags,
                bpp,
                psnr_db,
                ms_ssim,
                mse,
                input_psnr_db,
                budget_satisfied,
                extra,
                wall_time_s,
            })
    }

    proptest::proptest! {
        #[test]
        fn any_report_survives_json(rows in proptest::collection::vec(arb_row(), 0..6), seed in proptest::prelude::any::<u64>()) {
            let mut report = ExperimentReport::new("prop");
            report.provenance.seeds.insert("attack".into(), seed);
            for row in rows {
                report.push(row);
            }
            let json = report.to_json().unwrap();
            let back = ExperimentReport::from_json(&json).unwrap();
            proptest::prop_assert_eq!(&back, &report);
            proptest::prop_assert_eq!(back.to_json().unwrap(), json);
            proptest::prop_assert_eq!(report.to_csv().unwrap().lines().count(), report.rows().len() + 1);
        }
    }
}
