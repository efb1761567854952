//! Declarative run configuration.
//!
//! A config file is JSON. `model.preset` picks a complete set of defaults;
//! anything in the file, then any dotted-path override, replaces them. The
//! resolved config serializes with every field filled in, so writing it out
//! and reading it back yields the same value.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::models::{ModelConfig, OutputActivation};
use crate::training::TrainConfig;

/// Environment variable that overrides `paths.data_dir`.
pub const DATA_DIR_ENV: &str = "VABC_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "data/mnist";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Moons,
    Mnist,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Moons,
    Mnist,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Digit treated as the negative concept (MNIST only).
    pub negative_class: u8,
    /// Probability that a negative example is flagged unwanted.
    pub p: f64,
    /// Moons noise standard deviation.
    pub noise: f64,
    pub n_per_moon: usize,
    /// Draw this many training examples before splitting (MNIST only).
    pub subsample: Option<usize>,
    /// Keep at most this many unwanted examples after splitting.
    pub unwanted_cap: Option<usize>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub preset: Preset,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub sigma2: f32,
    pub output: OutputActivation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub n_samples: usize,
    pub classifier_seed: u64,
    /// Neighbours for the moons classifier.
    pub knn_k: usize,
    /// Oracle grid density for the moons negative rate.
    pub oracle_points_per_moon: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// MNIST IDX directory; `None` defers to the environment, then the default.
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Where the trained digit classifier is kept between runs; `None`
    /// stores it in the output directory.
    pub classifier_cache: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: ModelBlock,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (kind, model, train, p) = match preset {
            Preset::Moons => (DatasetKind::Moons, ModelConfig::moons(), TrainConfig::moons(), 0.8),
            Preset::Mnist => (DatasetKind::Mnist, ModelConfig::mnist(), TrainConfig::mnist(), 0.2),
        };
        RunConfig {
            dataset: DatasetConfig {
                kind,
                negative_class: 8,
                p,
                noise: 0.1,
                n_per_moon: 5000,
                subsample: None,
                unwanted_cap: None,
                seed: 0,
            },
            model: ModelBlock {
                preset,
                hidden: model.hidden,
                latent_dim: model.latent_dim,
                sigma2: model.sigma2,
                output: model.output,
            },
            train,
            eval: EvalConfig {
                n_samples: 10_000,
                classifier_seed: 0,
                knn_k: 5,
                oracle_points_per_moon: 10_000,
            },
            paths: PathsConfig {
                data_dir: None,
                out_dir: PathBuf::from("out"),
                classifier_cache: None,
            },
        }
    }

    pub fn input_dim(&self) -> usize {
        match self.dataset.kind {
            DatasetKind::Moons => 2,
            DatasetKind::Mnist => crate::datasets::MNIST_PIXELS,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_dim: self.input_dim(),
            hidden: self.model.hidden.clone(),
            latent_dim: self.model.latent_dim,
            sigma2: self.model.sigma2,
            output: self.model.output,
        }
    }

    /// Explicit config value, then `VABC_DATA_DIR`, then `data/mnist`.
    pub fn data_dir(&self) -> PathBuf {
        if let Some(d) = &self.paths.data_dir {
            return d.clone();
        }
        match std::env::var_os(DATA_DIR_ENV) {
            Some(d) if !d.is_empty() => PathBuf::from(d),
            _ => PathBuf::from(DEFAULT_DATA_DIR),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, constraint: &str| {
            Err(Error::Config {
                key: key.into(),
                constraint: constraint.into(),
            })
        };
        let d = &self.dataset;
        if !(0.0..=1.0).contains(&d.p) {
            return bad("dataset.p", "must lie in [0, 1]");
        }
        if !(d.noise >= 0.0 && d.noise.is_finite()) {
            return bad("dataset.noise", "must be a finite number >= 0");
        }
        if d.negative_class > 9 {
            return bad("dataset.negative_class", "must be a digit 0-9");
        }
        if d.kind == DatasetKind::Moons && d.n_per_moon == 0 {
            return bad("dataset.n_per_moon", "must be at least 1");
        }
        if d.subsample == Some(0) {
            return bad("dataset.subsample", "must be at least 1 when set");
        }
        self.model_config().validate()?;
        self.train.validate()?;
        if self.eval.n_samples == 0 {
            return bad("eval.n_samples", "must be at least 1");
        }
        if self.eval.knn_k == 0 || self.eval.knn_k % 2 == 0 {
            return bad("eval.knn_k", "must be odd and positive");
        }
        if self.eval.oracle_points_per_moon == 0 {
            return bad("eval.oracle_points_per_moon", "must be at least 1");
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// One `--a.b.c value` override. The value is read as JSON when it parses,
/// otherwise as a bare string.
#[derive(Clone, Debug, PartialEq)]
pub struct Override {
    pub path: String,
    pub value: Value,
}

impl Override {
    pub fn parse(path: &str, raw: &str) -> Result<Self> {
        if path.is_empty() || path.split('.').any(str::is_empty) {
            return Err(Error::Config {
                key: path.into(),
                constraint: "override path must be dotted field names".into(),
            });
        }
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
        Ok(Override {
            path: path.into(),
            value,
        })
    }
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| Error::Config {
            key: parts[..i].join("."),
            constraint: "is not an object, cannot descend".into(),
        })?;
        if i + 1 == parts.len() {
            obj.insert((*part).into(), value);
            return Ok(());
        }
        cur = obj.entry(*part).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

/// Recursively overlays `top` onto `base`. Objects merge key by key;
/// everything else is replaced.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
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

fn schema_error(e: serde_path_to_error::Error<serde_json::Error>) -> Error {
    let key = e.path().to_string();
    Error::Config {
        key: if key == "." { "<root>".into() } else { key },
        constraint: e.into_inner().to_string(),
    }
}

/// Resolves a config document plus overrides against its preset.
pub fn resolve(doc: Value, overrides: &[Override]) -> Result<RunConfig> {
    let mut user = doc;
    if !user.is_object() {
        return Err(Error::Config {
            key: "<root>".into(),
            constraint: "config must be a JSON object".into(),
        });
    }
    for o in overrides {
        set_path(&mut user, &o.path, o.value.clone())?;
    }
    let preset_value = user
        .get("model")
        .and_then(|m| m.get("preset"))
        .cloned()
        .ok_or_else(|| Error::Config {
            key: "model.preset".into(),
            constraint: "required (moons or mnist)".into(),
        })?;
    let preset: Preset = serde_json::from_value(preset_value).map_err(|e| Error::Config {
        key: "model.preset".into(),
        constraint: e.to_string(),
    })?;
    let mut full = serde_json::to_value(RunConfig::preset(preset))?;
    merge(&mut full, user);
    let cfg: RunConfig = serde_path_to_error::deserialize(full).map_err(schema_error)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config_str(s: &str, overrides: &[Override]) -> Result<RunConfig> {
    let doc: Value = serde_json::from_str(s).map_err(|e| Error::Config {
        key: "<root>".into(),
        constraint: format!("not valid JSON: {e}"),
    })?;
    resolve(doc, overrides)
}

pub fn parse_config(path: impl AsRef<Path>, overrides: &[Override]) -> Result<RunConfig> {
    let path = path.as_ref();
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&s, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mnist_preset_values() {
        let c = parse_config_str(r#"{"model":{"preset":"mnist"}}"#, &[]).unwrap();
        assert_eq!(c.model.sigma2, 2.5);
        assert_eq!(c.model.hidden, vec![300, 100]);
        assert_eq!(c.model.latent_dim, 2);
        assert_eq!(c.train.anneal_epochs, 5);
        assert_eq!(c.train.gamma_end, 0.05);
        assert_eq!(c.train.batch_size, 80);
        assert_eq!(c.input_dim(), 784);
    }

    #[test]
    fn moons_preset_values() {
        let c = parse_config_str(r#"{"model":{"preset":"moons"}}"#, &[]).unwrap();
        assert_eq!(c.model.sigma2, 1.0);
        assert_eq!(c.model.hidden, vec![20, 20]);
        assert_eq!(c.model.latent_dim, 1);
        assert_eq!(c.train.epochs, 30);
        assert_eq!(c.train.anneal_epochs, 10);
        assert_eq!(c.train.gamma_end, 3.0);
        assert_eq!(c.model_config(), ModelConfig::moons());
    }

    #[test]
    fn empty_and_malformed_documents() {
        for doc in ["", "[]", "{}", r#"{"model":{"preset":"cifar"}}"#] {
            assert!(matches!(parse_config_str(doc, &[]), Err(Error::Config { .. })), "{doc}");
        }
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = parse_config_str(r#"{"model":{"preset":"moons"},"train":{"epoch":3}}"#, &[]).unwrap_err();
        match err {
            Error::Config { key, constraint } => {
                assert_eq!(key, "train.epoch");
                assert!(constraint.contains("epoch"), "{constraint}");
            }
            other => panic!("{other:?}"),
        }
        let err = parse_config_str(r#"{"model":{"preset":"moons"},"train":{"epochs":"many"}}"#, &[]).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "train.epochs"), "{err:?}");
    }

    #[test]
    fn validation_names_key() {
        let err = parse_config_str(r#"{"model":{"preset":"moons"},"train":{"batch_size":81}}"#, &[]).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "train.batch_size"));
        let err = parse_config_str(r#"{"model":{"preset":"mnist"},"dataset":{"p":1.5}}"#, &[]).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "dataset.p"));
    }

    #[test]
    fn dotted_overrides() {
        let o = [
            Override::parse("train.seed", "7").unwrap(),
            Override::parse("paths.out_dir", "runs/a").unwrap(),
            Override::parse("model.hidden", "[5,6]").unwrap(),
        ];
        let c = parse_config_str(r#"{"model":{"preset":"moons"},"train":{"seed":1}}"#, &o).unwrap();
        assert_eq!(c.train.seed, 7);
        assert_eq!(c.paths.out_dir, PathBuf::from("runs/a"));
        assert_eq!(c.model.hidden, vec![5, 6]);
        // preset itself can be switched from the command line
        let c = parse_config_str(
            r#"{"model":{"preset":"moons"}}"#,
            &[Override::parse("model.preset", "mnist").unwrap()],
        )
        .unwrap();
        assert_eq!(c.model.sigma2, 2.5);
        assert!(Override::parse("train..seed", "1").is_err());
        assert!(parse_config_str(r#"{"model":{"preset":"moons"}}"#, &[Override::parse("train.nope", "1").unwrap()]).is_err());
    }

    #[test]
    fn round_trip_is_lossless() {
        for preset in [Preset::Moons, Preset::Mnist] {
            let mut c = RunConfig::preset(preset);
            c.train.adam.lr = 3.3e-4;
            c.dataset.subsample = Some(1234);
            c.paths.data_dir = Some(PathBuf::from("/x/y"));
            let s = c.to_json_pretty().unwrap();
            let back = parse_config_str(&s, &[]).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_json_pretty().unwrap(), s);
        }
    }

    #[test]
    fn explicit_data_dir_wins() {
        let mut c = RunConfig::preset(Preset::Mnist);
        c.paths.data_dir = Some(PathBuf::from("/somewhere"));
        assert_eq!(c.data_dir(), PathBuf::from("/somewhere"));
    }
}
