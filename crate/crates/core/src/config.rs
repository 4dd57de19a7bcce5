//! Run configuration: JSON files layered over defaults, then command-line
//! overrides, then environment overrides.
//!
//! Every layer is merged as a JSON tree and the result is deserialized into
//! a `deny_unknown_fields` struct, so a misspelled key anywhere is an error.
//!
//! Environment:
//! - `ADVCODEC_OUTPUT_ROOT`: parent of per-command output directories (default `runs`)
//! - `ADVCODEC_DEVICE`: compute device; only `cpu` exists

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::attack::AttackSpec;
use crate::codec::CodecConfig;
use crate::dataset::Dataset;
use crate::defense::FinetuneSpec;
use crate::error::{Error, Result};
use crate::experiments::RecompressChain;
use crate::train::TrainConfig;

pub const OUTPUT_ROOT_ENV: &str = "ADVCODEC_OUTPUT_ROOT";
pub const DEVICE_ENV: &str = "ADVCODEC_DEVICE";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";
/// Name of the resolved configuration written into every output directory.
pub const RESOLVED_CONFIG: &str = "config.json";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Device {
    #[default]
    Cpu,
}

impl std::str::FromStr for Device {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cpu" => Ok(Device::Cpu),
            other => Err(Error::Config(format!("unknown device {other:?}; available: cpu"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Runtime {
    pub device: Device,
    pub precision: Precision,
}

/// Where training and finetuning patches come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Every PNG or float sidecar in a directory.
    Dir(PathBuf),
    Synthetic { count: usize, height: usize, width: usize, seed: u64 },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            count: 256,
            height: 64,
            width: 64,
            seed: 1,
        }
    }
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Dir(p) => Dataset::from_dir(p),
            DataSource::Synthetic { count, height, width, seed } => Dataset::synthetic(*count, *height, *width, *seed),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRun {
    pub codec: CodecConfig,
    pub train: TrainConfig,
    pub data: DataSource,
    /// Seed of the random initialization.
    pub init_seed: u64,
    pub runtime: Runtime,
}

/// Half-open ROI rectangle `[y0, y1) x [x0, x1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskRect {
    pub y0: usize,
    pub x0: usize,
    pub y1: usize,
    pub x1: usize,
}

impl std::str::FromStr for MaskRect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("mask {s:?}: {e}")))?;
        match v[..] {
            [y0, x0, y1, x1] if y0 < y1 && x0 < x1 => Ok(Self { y0, x0, y1, x1 }),
            _ => Err(Error::Config(format!("mask {s:?} must be y0,x0,y1,x1 with y0<y1 and x0<x1"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackRun {
    pub checkpoint: PathBuf,
    pub images: Vec<PathBuf>,
    pub target: Option<PathBuf>,
    pub mask: Option<MaskRect>,
    pub attack: AttackSpec,
    pub runtime: Runtime,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneRun {
    pub checkpoint: PathBuf,
    pub data: DataSource,
    pub finetune: FinetuneSpec,
    /// Save a checkpoint every this many iterations.
    pub checkpoint_every: Option<usize>,
    pub runtime: Runtime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecompressRun {
    pub checkpoints: Vec<PathBuf>,
    pub images: Vec<PathBuf>,
    pub rounds: usize,
    pub chain: RecompressChain,
    pub runtime: Runtime,
}

impl Default for RecompressRun {
    fn default() -> Self {
        Self {
            checkpoints: Vec::new(),
            images: Vec::new(),
            rounds: 50,
            chain: RecompressChain::Quantized8Bit,
            runtime: Runtime::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalRun {
    pub checkpoint: PathBuf,
    /// Second model for a before/after defense comparison.
    pub compare: Option<PathBuf>,
    pub images: Vec<PathBuf>,
    pub attack: AttackSpec,
    pub runtime: Runtime,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RdCurveRun {
    /// `(family, checkpoint)` pairs; each family becomes one curve.
    pub checkpoints: Vec<(String, PathBuf)>,
    pub images: Vec<PathBuf>,
    pub runtime: Runtime,
}

/// Recursively overlay `patch` onto `base`; objects merge, everything else replaces.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Set a dotted path such as `attack.epsilon`, creating objects on the way.
pub fn set_path(tree: &mut Value, path: &str, value: Value) {
    let mut patch = value;
    for key in path.rsplit('.') {
        let mut m = serde_json::Map::new();
        m.insert(key.to_string(), patch);
        patch = Value::Object(m);
    }
    merge(tree, patch);
}

/// Defaults, then the optional JSON file, then `overrides`, then environment.
pub fn resolve<T: Serialize + DeserializeOwned + Default>(file: Option<&Path>, overrides: Value) -> Result<T> {
    let mut tree = serde_json::to_value(T::default())?;
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let v: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if !v.is_object() {
            return Err(Error::Config(format!("{}: top level must be an object", path.display())));
        }
        merge(&mut tree, v);
    }
    merge(&mut tree, overrides);
    if let Ok(device) = std::env::var(DEVICE_ENV) {
        let d: Device = device.parse()?;
        set_path(&mut tree, "runtime.device", serde_json::to_value(d)?);
    }
    serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))
}

/// `explicit`, else `$ADVCODEC_OUTPUT_ROOT/<command>`, else `runs/<command>`.
pub fn output_dir(explicit: Option<&Path>, command: &str) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| DEFAULT_OUTPUT_ROOT.into());
            root.join(command)
        }
    }
}

/// Output directory that only appears once the run has succeeded: files are
/// written into a sibling staging directory which is renamed at the end.
pub struct StagedOutput {
    final_dir: PathBuf,
    staging: PathBuf,
}

impl StagedOutput {
    pub fn create(final_dir: &Path) -> Result<Self> {
        if final_dir.exists() && fs::read_dir(final_dir)?.next().is_some() {
            return Err(Error::Config(format!("output directory {} is not empty", final_dir.display())));
        }
        let mut staging = final_dir.as_os_str().to_owned();
        staging.push(".partial");
        let staging = PathBuf::from(staging);
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(&staging)?;
        Ok(Self {
            final_dir: final_dir.to_path_buf(),
            staging,
        })
    }

    pub fn path(&self) -> &Path {
        &self.staging
    }

    pub fn final_dir(&self) -> &Path {
        &self.final_dir
    }

    pub fn write_config<T: Serialize>(&self, config: &T) -> Result<()> {
        fs::write(self.staging.join(RESOLVED_CONFIG), serde_json::to_string_pretty(config)?)?;
        Ok(())
    }

    pub fn commit(self) -> Result<PathBuf> {
        if self.final_dir.exists() {
            fs::remove_dir(&self.final_dir)?;
        }
        fs::rename(&self.staging, &self.final_dir)?;
        Ok(self.final_dir.clone())
    }

    /// Remove the staging directory after a failure.
    pub fn abandon(self) {
        let _ = fs::remove_dir_all(&self.staging);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn file_then_overrides_then_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"attack": {"epsilon": 0.01, "steps": 5}, "images": ["a.png"]}"#).unwrap();
        let mut over = json!({});
        set_path(&mut over, "attack.steps", json!(9));
        let run: AttackRun = resolve(Some(&path), over).unwrap();
        assert_eq!(run.attack.epsilon, 0.01);
        assert_eq!(run.attack.steps, 9);
        assert_eq!(run.attack.learning_rate, 1e-3);
        assert_eq!(run.images, vec![PathBuf::from("a.png")]);
    }

    #[test]
    fn unknown_keys_are_rejected_at_any_depth() {
        let dir = tempfile::tempdir().unwrap();
        for text in [r#"{"bogus": 1}"#, r#"{"attack": {"epsilom": 1e-3}}"#, r#"{"runtime": {"gpu": true}}"#] {
            let path = dir.path().join("c.json");
            fs::write(&path, text).unwrap();
            assert!(matches!(resolve::<AttackRun>(Some(&path), json!({})), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn resolved_config_reserializes_with_every_field() {
        let run: TrainRun = resolve(None, json!({})).unwrap();
        let v = serde_json::to_value(&run).unwrap();
        for key in ["codec", "train", "data", "init_seed", "runtime"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["codec"]["lambda"], json!(1024.0));
        let back: TrainRun = serde_json::from_value(v).unwrap();
        assert_eq!(back, run);
    }

    #[test]
    fn devices_and_masks_parse() {
        assert_eq!("CPU".parse::<Device>().unwrap(), Device::Cpu);
        assert!("cuda".parse::<Device>().is_err());
        assert_eq!("1,2,5,6".parse::<MaskRect>().unwrap(), MaskRect { y0: 1, x0: 2, y1: 5, x1: 6 });
        assert!("5,2,1,6".parse::<MaskRect>().is_err());
        assert!("1,2".parse::<MaskRect>().is_err());
    }

    #[test]
    fn data_source_json_shapes() {
        let d: DataSource = serde_json::from_value(json!({"dir": "/x"})).unwrap();
        assert_eq!(d, DataSource::Dir("/x".into()));
        let s: DataSource = serde_json::from_value(json!({"synthetic": {"count": 2, "height": 16, "width": 16, "seed": 0}})).unwrap();
        assert_eq!(s.load().unwrap().len(), 2);
    }

    #[test]
    fn staged_output_appears_only_on_commit() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let staged = StagedOutput::create(&out).unwrap();
        staged.write_config(&json!({"a": 1})).unwrap();
        assert!(!out.exists());
        let failed = StagedOutput::create(&dir.path().join("other")).unwrap();
        failed.abandon();
        assert!(!dir.path().join("other").exists() && !dir.path().join("other.partial").exists());
        staged.commit().unwrap();
        assert!(out.join(RESOLVED_CONFIG).exists());
        assert!(StagedOutput::create(&out).is_err());
    }

    proptest::proptest! {
        #[test]
        fn resolved_config_is_a_fixed_point(
            eps in 1e-6f64..1e-1,
            steps in 0usize..100_000,
            seed in proptest::prelude::any::<u64>(),
            which in proptest::collection::vec(proptest::prelude::any::<bool>(), 3),
        ) {
            let mut over = json!({});
            if which[0] { set_path(&mut over, "attack.epsilon", json!(eps)); }
            if which[1] { set_path(&mut over, "attack.steps", json!(steps)); }
            if which[2] { set_path(&mut over, "attack.seed", json!(seed)); }
            let run: AttackRun = resolve(None, over).unwrap();
            if which[0] { proptest::prop_assert_eq!(run.attack.epsilon, eps); }
            if which[1] { proptest::prop_assert_eq!(run.attack.steps, steps); }
            if which[2] { proptest::prop_assert_eq!(run.attack.seed, seed); }
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("resolved.json");
            fs::write(&path, serde_json::to_string(&run).unwrap()).unwrap();
            let again: AttackRun = resolve(Some(&path), json!({})).unwrap();
            proptest::prop_assert_eq!(again, run);
        }
    }
}
