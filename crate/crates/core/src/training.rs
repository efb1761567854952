//! Training loops with sigmoidal annealing of `γ` and of the KL weight `β`,
//! plus optional early stopping on a held-out fold.

use std::fmt::Write as _;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::datasets::{balanced_batches, plain_batches, DataFold};
use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::models::{Latent, LossBreakdown, Reduction, VabcModel};
use crate::optim::{AdamConfig, AdamState};
use crate::rng;
use crate::tensor::Tensor;

const VALIDATION_CHUNK: usize = 1000;

/// Logistic interpolation from `start` to `end` over the first `horizon`
/// epochs, then held at `end`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnnealSchedule {
    pub start: f64,
    pub end: f64,
    pub horizon: usize,
    pub steepness: f64,
}

impl AnnealSchedule {
    /// Schedule with the default steepness `12 / horizon`, which puts the
    /// endpoints at `σ(±6)`.
    pub fn new(start: f64, end: f64, horizon: usize) -> Self {
        let steepness = if horizon == 0 { 0.0 } else { 12.0 / horizon as f64 };
        AnnealSchedule {
            start,
            end,
            horizon,
            steepness,
        }
    }

    pub fn value(&self, epoch: f64) -> f64 {
        let horizon = self.horizon as f64;
        if self.horizon == 0 || epoch >= horizon {
            return self.end;
        }
        let s = 1.0 / (1.0 + (self.steepness * (epoch - horizon / 2.0)).exp());
        self.end + (self.start - self.end) * s
    }
}

pub fn schedule_value(s: &AnnealSchedule, epoch: f64) -> f64 {
    s.value(epoch)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStopping {
    pub enabled: bool,
    pub patience: usize,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        EarlyStopping {
            enabled: false,
            patience: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Annealing horizon E′ in epochs.
    pub anneal_epochs: usize,
    pub batch_size: usize,
    pub gamma_start: f64,
    pub gamma_end: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub early_stopping: EarlyStopping,
}

impl TrainConfig {
    pub fn moons() -> Self {
        TrainConfig {
            epochs: 30,
            anneal_epochs: 10,
            batch_size: 80,
            gamma_start: 4.0,
            gamma_end: 3.0,
            adam: AdamConfig::default(),
            seed: 0,
            early_stopping: EarlyStopping::default(),
        }
    }

    pub fn mnist() -> Self {
        TrainConfig {
            epochs: 20,
            anneal_epochs: 5,
            batch_size: 80,
            gamma_start: 4.0,
            gamma_end: 0.05,
            adam: AdamConfig::default(),
            seed: 0,
            early_stopping: EarlyStopping {
                enabled: true,
                patience: 5,
            },
        }
    }

    pub fn gamma_schedule(&self) -> AnnealSchedule {
        AnnealSchedule::new(self.gamma_start, self.gamma_end, self.anneal_epochs)
    }

    pub fn beta_schedule(&self) -> AnnealSchedule {
        AnnealSchedule::new(0.0, 1.0, self.anneal_epochs)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, constraint: &str| {
            Err(Error::Config {
                key: format!("train.{key}"),
                constraint: constraint.into(),
            })
        };
        if self.anneal_epochs > self.epochs {
            return bad("anneal_epochs", "must not exceed epochs");
        }
        if self.batch_size == 0 || self.batch_size % 2 != 0 {
            return bad("batch_size", "must be even and positive");
        }
        if !(self.gamma_end > 0.0 && self.gamma_end.is_finite()) {
            return bad("gamma_end", "must be positive");
        }
        if !(self.gamma_start > 0.0 && self.gamma_start.is_finite()) {
            return bad("gamma_start", "must be positive");
        }
        if !(self.adam.lr > 0.0) {
            return bad("adam.lr", "must be positive");
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("adam", "beta1 and beta2 must lie in [0, 1)");
        }
        if self.early_stopping.enabled && self.early_stopping.patience == 0 {
            return bad("early_stopping.patience", "must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub gamma: f64,
    pub beta: f64,
    pub train_total: f64,
    pub train_kl: f64,
    pub train_recon: f64,
    pub train_penalty: f64,
    pub val_loss: Option<f64>,
    pub clamped: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned when early stopping is active.
    pub best_epoch: Option<usize>,
}

impl RunMetrics {
    pub const CSV_HEADER: &'static str =
        "epoch,gamma,beta,train_total,train_kl,train_recon,train_penalty,val_loss";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.epoch,
                sig9(r.gamma),
                sig9(r.beta),
                sig9(r.train_total),
                sig9(r.train_kl),
                sig9(r.train_recon),
                sig9(r.train_penalty),
                r.val_loss.map(sig9).unwrap_or_default()
            );
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Vabc,
    Vae,
}

/// Trains a V-ABC model on an NU fold with balanced batches. When early
/// stopping is enabled, `validation` (also NU-labelled) is scored every epoch
/// with the final `γ`/`β` and the best parameters are restored at the end.
pub fn train(
    model: &VabcModel,
    fold: &DataFold,
    config: &TrainConfig,
    validation: Option<&DataFold>,
) -> Result<(VabcModel, RunMetrics)> {
    run(model, fold, config, validation, Mode::Vabc)
}

/// Plain VAE on the unlabeled (`y = 1`) part of `fold`, shuffled batches,
/// objective `β·KL + L`.
pub fn train_vae_baseline(
    model: &VabcModel,
    fold: &DataFold,
    config: &TrainConfig,
    validation: Option<&DataFold>,
) -> Result<(VabcModel, RunMetrics)> {
    let unlabeled = fold.unlabeled_fold();
    let val = validation.map(DataFold::unlabeled_fold);
    run(model, &unlabeled, config, val.as_ref(), Mode::Vae)
}

fn check_fold(model: &VabcModel, fold: &DataFold) -> Result<()> {
    if fold.dim() != model.input_dim() {
        return Err(Error::shape("train", &[fold.dim()], &[model.input_dim()]));
    }
    Ok(())
}

fn run(
    model: &VabcModel,
    fold: &DataFold,
    config: &TrainConfig,
    validation: Option<&DataFold>,
    mode: Mode,
) -> Result<(VabcModel, RunMetrics)> {
    config.validate()?;
    check_fold(model, fold)?;
    let mut model = model.clone();
    let mut metrics = RunMetrics::default();
    if config.epochs == 0 {
        return Ok((model, metrics));
    }
    if fold.is_empty() {
        return Err(Error::EmptyFold);
    }
    let validation = if config.early_stopping.enabled {
        let v = validation.ok_or_else(|| Error::Config {
            key: "train.early_stopping".into(),
            constraint: "enabled but no validation fold was supplied".into(),
        })?;
        check_fold(&model, v)?;
        Some(v)
    } else {
        None
    };

    let sampler = match mode {
        Mode::Vabc => Some(balanced_batches(fold, config.batch_size, config.seed)?),
        Mode::Vae => None,
    };
    let all: Vec<usize> = (0..fold.len()).collect();
    let gamma_s = config.gamma_schedule();
    let beta_s = config.beta_schedule();
    let mut adam = AdamState::new(config.adam, model.params());
    let mut best: Option<(f64, usize, VabcModel)> = None;

    for epoch in 0..config.epochs {
        let gamma = gamma_s.value(epoch as f64);
        let beta = beta_s.value(epoch as f64);
        let batches = match &sampler {
            Some(s) => s.epoch(epoch),
            None => plain_batches(&all, config.batch_size, config.seed, epoch),
        };
        let mut eps_rng = rng::indexed_stream(config.seed, "eps", epoch as u64);
        let mut sum = LossBreakdown::default();

        for (b, idx) in batches.iter().enumerate() {
            let x = fold.batch_features(idx);
            let y = match mode {
                Mode::Vabc => fold.batch_labels(idx),
                Mode::Vae => Tensor::full(&[idx.len()], 1.0),
            };
            let eps = standard_normal(&mut eps_rng, idx.len(), model.latent_dim());

            let diverged = |reason: String, last_good: &VabcModel| Error::Diverged {
                epoch,
                batch: b,
                reason,
                last_good: Box::new(last_good.clone()),
            };
            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let obj = model
                .objective(&mut g, &bound, &x, &y, Latent::Sampled(&eps), gamma as f32, beta as f32, Reduction::Mean, false)
                .map_err(|e| match e {
                    e if e.is_numeric() => diverged(e.to_string(), &model),
                    e => e,
                })?;
            if !obj.breakdown.total.is_finite() {
                return Err(diverged("non-finite loss".into(), &model));
            }
            let mut grads = g.backward(obj.root)?;
            let grads: Vec<Tensor> = bound
                .vars
                .iter()
                .zip(model.params())
                .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
                .collect();
            if grads.iter().any(|t| !t.all_finite()) {
                return Err(diverged("non-finite gradient".into(), &model));
            }
            adam.step(model.params_mut(), &grads)?;

            let bd = obj.breakdown;
            sum.kl += bd.kl;
            sum.recon += bd.recon;
            sum.penalty += bd.penalty;
            sum.total += bd.total;
            sum.clamped += bd.clamped;
        }

        let n = batches.len().max(1) as f64;
        let val_loss = match validation {
            Some(v) => Some(validation_loss(&model, v, config, mode)?),
            None => None,
        };
        metrics.epochs.push(EpochRecord {
            epoch,
            gamma,
            beta,
            train_total: sum.total / n,
            train_kl: sum.kl / n,
            train_recon: sum.recon / n,
            train_penalty: sum.penalty / n,
            val_loss,
            clamped: sum.clamped,
        });

        if let Some(vl) = val_loss {
            if best.as_ref().map_or(true, |(b, _, _)| vl < *b) {
                best = Some((vl, epoch, model.clone()));
            }
            let best_epoch = best.as_ref().map_or(epoch, |(_, e, _)| *e);
            if epoch - best_epoch >= config.early_stopping.patience {
                break;
            }
        }
    }

    if let Some((_, epoch, params)) = best {
        metrics.best_epoch = Some(epoch);
        model = params;
    }
    Ok((model, metrics))
}

fn standard_normal(rng: &mut rng::Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(vec![rows, cols], data).expect("noise shape")
}

/// Mean objective over `fold` at the final `γ`/`β`, with noise drawn from a
/// fixed stream so epochs are comparable.
fn validation_loss(model: &VabcModel, fold: &DataFold, config: &TrainConfig, mode: Mode) -> Result<f64> {
    if fold.is_empty() {
        return Err(Error::EmptyFold);
    }
    let gamma = config.gamma_end as f32;
    let mut eps_rng = rng::stream(config.seed, "val-eps");
    let mut total = 0.0;
    let idx: Vec<usize> = (0..fold.len()).collect();
    for chunk in idx.chunks(VALIDATION_CHUNK) {
        let x = fold.batch_features(chunk);
        let y = match mode {
            Mode::Vabc => fold.batch_labels(chunk),
            Mode::Vae => Tensor::full(&[chunk.len()], 1.0),
        };
        let eps = standard_normal(&mut eps_rng, chunk.len(), model.latent_dim());
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let obj = model.objective(&mut g, &bound, &x, &y, Latent::Sampled(&eps), gamma, 1.0, Reduction::Sum, false)?;
        total += obj.breakdown.total;
    }
    Ok(total / fold.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{make_moons, split_nu};
    use crate::models::ModelConfig;

    #[test]
    fn schedule_examples() {
        let s = AnnealSchedule::new(4.0, 3.0, 10);
        assert!((s.value(5.0) - 3.5).abs() < 1e-12);
        assert_eq!(s.value(10.0), 3.0);
        assert_eq!(s.value(25.0), 3.0);
        // σ(6) = 0.997527376843365
        assert!((s.value(0.0) - (3.0 + 0.997_527_376_843_365)).abs() < 1e-12);
        let flat = AnnealSchedule::new(4.0, 3.0, 0);
        assert_eq!(flat.value(0.0), 3.0);
    }

    #[test]
    fn schedules_are_monotone_and_clamped() {
        let cfg = TrainConfig::moons();
        let (gs, bs) = (cfg.gamma_schedule(), cfg.beta_schedule());
        let mut prev_g = f64::INFINITY;
        let mut prev_b = f64::NEG_INFINITY;
        for e in 0..=40 {
            let (g, b) = (gs.value(e as f64 * 0.5), bs.value(e as f64 * 0.5));
            assert!(g <= prev_g && b >= prev_b);
            prev_g = g;
            prev_b = b;
        }
        assert_eq!(bs.value(10.0), 1.0);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::moons();
        c.batch_size = 81;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::moons();
        c.anneal_epochs = 31;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::moons();
        c.gamma_end = 0.0;
        assert!(c.validate().is_err());
    }

    fn small_setup() -> (VabcModel, DataFold, TrainConfig) {
        let fold = split_nu(&make_moons(200, 0.1, 1).unwrap(), 0.8, 1).unwrap();
        let model = VabcModel::new(ModelConfig::moons(), 1).unwrap();
        let mut cfg = TrainConfig::moons();
        cfg.epochs = 3;
        cfg.anneal_epochs = 2;
        (model, fold, cfg)
    }

    #[test]
    fn zero_epochs_returns_model_unchanged() {
        let (model, fold, mut cfg) = small_setup();
        cfg.epochs = 0;
        cfg.anneal_epochs = 0;
        let (m, metrics) = train(&model, &fold, &cfg, None).unwrap();
        assert_eq!(m, model);
        assert!(metrics.epochs.is_empty());
        let (m, metrics) = train_vae_baseline(&model, &fold, &cfg, None).unwrap();
        assert_eq!(m, model);
        assert!(metrics.epochs.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let (model, fold, cfg) = small_setup();
        let (m1, r1) = train(&model, &fold, &cfg, None).unwrap();
        let (m2, r2) = train(&model, &fold, &cfg, None).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(m1, m2);
        assert_eq!(r1.epochs.len(), 3);
        assert!(r1.epochs.iter().all(|r| r.train_total.is_finite()));
        assert_eq!(r1.to_csv().lines().next().unwrap(), RunMetrics::CSV_HEADER);
    }

    #[test]
    fn vae_baseline_matches_vabc_without_unwanted() {
        // With no unwanted data the V-ABC objective is the VAE objective, so
        // the only difference is batching; a fold whose unlabeled part equals
        // the whole fold trains identically through the baseline.
        let (model, fold, cfg) = small_setup();
        let unl = fold.unlabeled_fold();
        let (a, ra) = train_vae_baseline(&model, &fold, &cfg, None).unwrap();
        let (b, rb) = train_vae_baseline(&model, &unl, &cfg, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert!(ra.epochs.iter().all(|r| r.train_penalty == 0.0));
    }

    #[test]
    fn early_stopping_restores_best() {
        let (model, fold, mut cfg) = small_setup();
        cfg.epochs = 6;
        cfg.early_stopping = EarlyStopping {
            enabled: true,
            patience: 2,
        };
        let val = split_nu(&make_moons(50, 0.1, 9).unwrap(), 0.8, 9).unwrap();
        let (m, metrics) = train(&model, &fold, &cfg, Some(&val)).unwrap();
        let best = metrics.best_epoch.unwrap();
        let min = metrics
            .epochs
            .iter()
            .map(|r| r.val_loss.unwrap())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(metrics.epochs[best].val_loss.unwrap(), min);
        assert_eq!(validation_loss(&m, &val, &cfg, Mode::Vabc).unwrap(), min);

        assert!(train(&model, &fold, &cfg, None).is_err());
    }
}
