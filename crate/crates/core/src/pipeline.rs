//! End-to-end steps driven by a [`RunConfig`]: building folds, training,
//! building the gated classifier and scoring.

use std::path::Path;

use rand::seq::index;

use crate::config::{DatasetKind, RunConfig};
use crate::datasets::{assign_concept, load_mnist_dir, make_moons, split_nu, DataFold, MnistSplit};
use crate::error::{Error, Result};
use crate::evaluation::{
    moons_negative_rate, negative_generation_error, train_eval_classifier, EvalClassifier, GenerationReport,
    KnnOracle, LabeledData, SweepAxis, SweepPoint,
};
use crate::models::{TrainMeta, VabcModel};
use crate::rng;
use crate::training::{train, train_vae_baseline, RunMetrics};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Vabc,
    Vae,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Vabc => "vabc",
            ModelKind::Vae => "vae",
        }
    }
}

/// Training fold and optional validation fold for one run.
#[derive(Clone, Debug)]
pub struct Folds {
    pub train: DataFold,
    pub validation: Option<DataFold>,
}

fn mnist_split(cfg: &RunConfig, split: MnistSplit) -> Result<DataFold> {
    load_mnist_dir(cfg.data_dir(), split)
}

/// Keeps at most `cap` unwanted examples, dropping the rest from the fold.
fn cap_unwanted(fold: DataFold, cap: usize, seed: u64) -> DataFold {
    let unwanted = fold.unwanted_indices();
    if unwanted.len() <= cap {
        return fold;
    }
    let mut r = rng::stream(seed, "unwanted-cap");
    let mut keep: Vec<usize> = index::sample(&mut r, unwanted.len(), cap)
        .into_iter()
        .map(|i| unwanted[i])
        .collect();
    keep.extend(fold.unlabeled_indices());
    keep.sort_unstable();
    let name = format!("{}/cap={cap}", fold.name);
    fold.subset(&keep, name)
}

/// NU training fold. MNIST is subsampled (if configured) before concept
/// assignment and splitting.
pub fn training_fold(cfg: &RunConfig) -> Result<DataFold> {
    let d = &cfg.dataset;
    let fold = match d.kind {
        DatasetKind::Moons => split_nu(&make_moons(d.n_per_moon, d.noise, d.seed)?, d.p, d.seed)?,
        DatasetKind::Mnist => {
            let mut all = mnist_split(cfg, MnistSplit::Train)?;
            if let Some(n) = d.subsample {
                all = all.subsample(n, d.seed);
            }
            split_nu(&assign_concept(&all, d.negative_class)?, d.p, d.seed)?
        }
    };
    Ok(match d.unwanted_cap {
        Some(cap) => cap_unwanted(fold, cap, d.seed),
        None => fold,
    })
}

/// Held-out fold for early stopping: the MNIST test split, or a fresh moons
/// draw, split with the same `p`.
pub fn validation_fold(cfg: &RunConfig) -> Result<Option<DataFold>> {
    if !cfg.train.early_stopping.enabled {
        return Ok(None);
    }
    let d = &cfg.dataset;
    let seed = rng::derive_seed(d.seed, "validation", 0);
    let fold = match d.kind {
        DatasetKind::Moons => split_nu(&make_moons(d.n_per_moon, d.noise, seed)?, d.p, seed)?,
        DatasetKind::Mnist => split_nu(
            &assign_concept(&mnist_split(cfg, MnistSplit::Test)?, d.negative_class)?,
            d.p,
            seed,
        )?,
    };
    Ok(Some(fold))
}

pub fn folds(cfg: &RunConfig) -> Result<Folds> {
    Ok(Folds {
        train: training_fold(cfg)?,
        validation: validation_fold(cfg)?,
    })
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub model: VabcModel,
    pub metrics: RunMetrics,
    pub meta: TrainMeta,
}

pub fn train_on(cfg: &RunConfig, folds: &Folds, kind: ModelKind) -> Result<Trained> {
    cfg.validate()?;
    let init = VabcModel::new(cfg.model_config(), cfg.train.seed)?;
    let (model, metrics) = match kind {
        ModelKind::Vabc => train(&init, &folds.train, &cfg.train, folds.validation.as_ref())?,
        ModelKind::Vae => train_vae_baseline(&init, &folds.train, &cfg.train, folds.validation.as_ref())?,
    };
    let (final_gamma, final_beta) = metrics.last().map(|r| (r.gamma, r.beta)).unwrap_or_default();
    let meta = TrainMeta {
        seed: cfg.train.seed,
        epochs_completed: metrics.epochs.len(),
        final_gamma,
        final_beta,
    };
    Ok(Trained { model, metrics, meta })
}

pub fn train_model(cfg: &RunConfig, kind: ModelKind) -> Result<Trained> {
    train_on(cfg, &folds(cfg)?, kind)
}

/// Class index the classifier uses for the negative concept.
pub fn negative_class(cfg: &RunConfig) -> u8 {
    match cfg.dataset.kind {
        DatasetKind::Moons => 1,
        DatasetKind::Mnist => cfg.dataset.negative_class,
    }
}

/// Gated classifier for the configured dataset. For MNIST a cache file is
/// reused when present (accuracy is re-measured on load) and written
/// otherwise.
pub fn classifier(cfg: &RunConfig, cache: Option<&Path>) -> Result<EvalClassifier> {
    match cfg.dataset.kind {
        DatasetKind::Moons => {
            let clean = make_moons(cfg.eval.oracle_points_per_moon, 0.0, 0)?;
            train_eval_classifier(
                LabeledData::Moons {
                    points: &clean,
                    k: cfg.eval.knn_k,
                },
                cfg.eval.classifier_seed,
            )
        }
        DatasetKind::Mnist => {
            let heldout = mnist_split(cfg, MnistSplit::Test)?;
            if let Some(path) = cache {
                if path.exists() {
                    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                    return EvalClassifier::from_json_verified(&s, &heldout);
                }
            }
            let train_digits = mnist_split(cfg, MnistSplit::Train)?;
            let c = train_eval_classifier(
                LabeledData::Digits {
                    train: &train_digits,
                    heldout: &heldout,
                },
                cfg.eval.classifier_seed,
            )?;
            if let Some(path) = cache {
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                std::fs::write(path, c.to_json()?).map_err(|e| Error::io(path, e))?;
            }
            Ok(c)
        }
    }
}

pub fn evaluate(cfg: &RunConfig, model: &VabcModel, classifier: &EvalClassifier) -> Result<GenerationReport> {
    negative_generation_error(model, classifier, negative_class(cfg), cfg.eval.n_samples, cfg.train.seed)
}

/// Nearest-oracle negative rate for a moons model.
pub fn moons_rate(cfg: &RunConfig, model: &VabcModel, oracle: &KnnOracle) -> Result<f64> {
    moons_negative_rate(model, oracle, cfg.eval.n_samples, cfg.train.seed)
}

/// Config for one sweep point: the axis value is written into its field and
/// the point's seed drives both data and training.
pub fn apply_sweep_point(base: &RunConfig, axis: SweepAxis, point: &SweepPoint) -> Result<RunConfig> {
    let mut cfg = base.clone();
    cfg.dataset.seed = point.seed;
    cfg.train.seed = point.seed;
    let v = point.axis_value;
    match axis {
        SweepAxis::P => cfg.dataset.p = v,
        SweepAxis::GammaEnd => cfg.train.gamma_end = v,
        SweepAxis::Seed => {
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Config {
                    key: "axis".into(),
                    constraint: format!("seed values must be non-negative integers, got {v}"),
                });
            }
            cfg.dataset.seed = v as u64;
            cfg.train.seed = v as u64;
        }
        SweepAxis::UnwantedSize => {
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Config {
                    key: "axis".into(),
                    constraint: format!("unwanted sizes must be non-negative integers, got {v}"),
                });
            }
            cfg.dataset.unwanted_cap = Some(v as usize);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}
