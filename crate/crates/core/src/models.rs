//! VAE / V-ABC models.
//!
//! An MLP encoder maps `x` to a latent mean and log-variance, an MLP decoder
//! maps `z` back to the mean of a Gaussian with fixed variance `σ²`. The same
//! network serves as a plain VAE or as a V-ABC model; only the objective
//! differs. The V-ABC objective for one example is
//!
//! ```text
//! β·KL(q(z|x) ‖ N(0, I)) + y·L(x) − (1 − y)·log(1 − exp(−γ·L(x)))
//! ```
//!
//! with `L(x) = ‖x − x̃‖² / (2σ²)`.

use std::collections::BTreeMap;

use base64::Engine as _;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{log1mexp, Graph, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Lower bound on `γ·L` before the penalty log, keeping it finite when an
/// unwanted example is reconstructed perfectly.
pub const PENALTY_FLOOR: f32 = 1e-6;

const INFERENCE_CHUNK: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Linear,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Encoder hidden widths, outermost first. The decoder mirrors them.
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub sigma2: f32,
    pub output: OutputActivation,
}

impl ModelConfig {
    pub fn moons() -> Self {
        ModelConfig {
            input_dim: 2,
            hidden: vec![20, 20],
            latent_dim: 1,
            sigma2: 1.0,
            output: OutputActivation::Linear,
        }
    }

    pub fn mnist() -> Self {
        ModelConfig {
            input_dim: 784,
            hidden: vec![300, 100],
            latent_dim: 2,
            sigma2: 2.5,
            output: OutputActivation::Sigmoid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, constraint: &str| {
            Err(Error::Config {
                key: format!("model.{key}"),
                constraint: constraint.into(),
            })
        };
        if self.input_dim == 0 {
            return bad("input_dim", "must be positive");
        }
        if self.latent_dim == 0 {
            return bad("latent_dim", "must be positive");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden", "layer widths must be positive");
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return bad("sigma2", "must be a positive finite number");
        }
        Ok(())
    }

    /// `(name, fan_in, fan_out)` of every dense layer, in parameter order.
    fn layers(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut width = self.input_dim;
        for (i, &h) in self.hidden.iter().enumerate() {
            out.push((format!("enc.{i}"), width, h));
            width = h;
        }
        out.push(("enc.mu".into(), width, self.latent_dim));
        out.push(("enc.logvar".into(), width, self.latent_dim));
        width = self.latent_dim;
        for (i, &h) in self.hidden.iter().rev().enumerate() {
            out.push((format!("dec.{i}"), width, h));
            width = h;
        }
        out.push(("dec.out".into(), width, self.input_dim));
        out
    }
}

/// Per-batch summary of the objective. `total = kl + recon + penalty`, where
/// `kl` already includes the annealing weight `β`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub kl: f64,
    pub recon: f64,
    pub penalty: f64,
    pub total: f64,
    pub gamma: f64,
    pub beta: f64,
    /// Unwanted examples whose `γ·L` hit [`PENALTY_FLOOR`].
    pub clamped: usize,
}

impl LossBreakdown {
    pub fn recon_or_penalty(&self) -> f64 {
        self.recon + self.penalty
    }
}

/// How per-example objectives are reduced to the scalar root.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

/// Latent code choice when building the objective.
#[derive(Clone, Copy, Debug)]
pub enum Latent<'a> {
    /// `z = μ + ε ⊙ σ` with the given standard-normal noise.
    Sampled(&'a Tensor),
    /// `z = μ`, no sampling.
    Mean,
}

/// Parameter leaves of a model bound into one graph.
pub struct Bound {
    pub vars: Vec<Var>,
}

/// Graph handles for one evaluation of the objective.
pub struct Objective {
    pub root: Var,
    pub input: Var,
    pub breakdown: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VabcModel {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
}

impl VabcModel {
    /// Glorot-uniform weights, zero biases, drawn from the seed's `init` stream.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, "init");
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, fan_in, fan_out) in config.layers() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
            let w = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-limit..=limit))
                .collect();
            names.push(format!("{name}.w"));
            params.push(Tensor::new(vec![fan_in, fan_out], w)?);
            names.push(format!("{name}.b"));
            params.push(Tensor::zeros(&[fan_out]));
        }
        Ok(VabcModel {
            config,
            names,
            params,
        })
    }

    /// Same architecture with every weight and bias set to zero.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        for p in &mut m.params {
            p.data_mut().fill(0.0);
        }
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.params[i])
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Records parameters as differentiable leaves (or constants when
    /// `trainable` is false).
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| if trainable { g.param(p.clone()) } else { g.constant(p.clone()) })
            .collect();
        Bound { vars }
    }

    fn dense(g: &mut Graph, bound: &Bound, layer: usize, x: Var) -> Result<Var> {
        let h = g.matmul(x, bound.vars[2 * layer])?;
        g.add_bias(h, bound.vars[2 * layer + 1])
    }

    /// Encoder heads `(μ, log σ²)`, each `(rows, latent_dim)`.
    pub fn encode_vars(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<(Var, Var)> {
        let width = g.value(x).cols();
        if g.value(x).shape().len() != 2 || width != self.config.input_dim {
            return Err(Error::shape("encode", g.value(x).shape(), &[0, self.config.input_dim]));
        }
        let mut h = x;
        let n_hidden = self.config.hidden.len();
        for layer in 0..n_hidden {
            h = Self::dense(g, bound, layer, h)?;
            h = g.relu(h)?;
        }
        let mu = Self::dense(g, bound, n_hidden, h)?;
        let logvar = Self::dense(g, bound, n_hidden + 1, h)?;
        Ok((mu, logvar))
    }

    /// Decoder mean for latent codes `z`.
    pub fn decode_vars(&self, g: &mut Graph, bound: &Bound, z: Var) -> Result<Var> {
        if g.value(z).shape().len() != 2 || g.value(z).cols() != self.config.latent_dim {
            return Err(Error::shape("decode", g.value(z).shape(), &[0, self.config.latent_dim]));
        }
        let n_hidden = self.config.hidden.len();
        let first = n_hidden + 2;
        let mut h = z;
        for layer in first..first + n_hidden {
            h = Self::dense(g, bound, layer, h)?;
            h = g.relu(h)?;
        }
        let out = Self::dense(g, bound, first + n_hidden, h)?;
        match self.config.output {
            OutputActivation::Linear => Ok(out),
            OutputActivation::Sigmoid => g.sigmoid(out),
        }
    }

    /// Posterior mean and standard deviation, `σ = exp(½·logvar)`.
    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let rows = x.rows();
        let mut mu = Vec::with_capacity(rows * self.latent_dim());
        let mut sigma = Vec::with_capacity(rows * self.latent_dim());
        for chunk in row_chunks(x, INFERENCE_CHUNK) {
            let mut g = Graph::new();
            let bound = self.bind(&mut g, false);
            let xv = g.constant(chunk);
            let (m, lv) = self.encode_vars(&mut g, &bound, xv)?;
            let half = g.scale(lv, 0.5)?;
            let s = g.exp(half)?;
            mu.extend_from_slice(g.value(m).data());
            sigma.extend_from_slice(g.value(s).data());
        }
        Ok((
            Tensor::new(vec![rows, self.latent_dim()], mu)?,
            Tensor::new(vec![rows, self.latent_dim()], sigma)?,
        ))
    }

    /// Decoder means for a `(rows, latent_dim)` batch of codes.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let rows = z.rows();
        let mut out = Vec::with_capacity(rows * self.input_dim());
        for chunk in row_chunks(z, INFERENCE_CHUNK) {
            let mut g = Graph::new();
            let bound = self.bind(&mut g, false);
            let zv = g.constant(chunk);
            let xh = self.decode_vars(&mut g, &bound, zv)?;
            out.extend_from_slice(g.value(xh).data());
        }
        Tensor::new(vec![rows, self.input_dim()], out)
    }

    /// Deterministic reconstruction `decode(μ(x))`.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        let (mu, _) = self.encode(x)?;
        self.decode(&mu)
    }

    /// Builds the objective into `g`. `x` is recorded as a differentiable
    /// leaf only when `input_grad` is set.
    #[allow(clippy::too_many_arguments)]
    pub fn objective(
        &self,
        g: &mut Graph,
        bound: &Bound,
        x: &Tensor,
        y: &Tensor,
        latent: Latent<'_>,
        gamma: f32,
        beta: f32,
        reduction: Reduction,
        input_grad: bool,
    ) -> Result<Objective> {
        let rows = x.rows();
        if rows == 0 {
            return Err(Error::Contract("objective needs a nonempty batch".into()));
        }
        if y.shape() != [rows] {
            return Err(Error::shape("objective labels", y.shape(), &[rows]));
        }
        if y.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Contract("labels must be 0 or 1".into()));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Contract(format!("gamma must be positive, got {gamma}")));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::Contract(format!("beta must lie in [0, 1], got {beta}")));
        }

        let xv = if input_grad { g.param(x.clone()) } else { g.constant(x.clone()) };
        let (mu, logvar) = self.encode_vars(g, bound, xv)?;

        let z = match latent {
            Latent::Mean => mu,
            Latent::Sampled(eps) => {
                if eps.shape() != g.value(mu).shape() {
                    return Err(Error::shape("reparameterize", eps.shape(), g.value(mu).shape()));
                }
                let ev = g.constant(eps.clone());
                let half = g.scale(logvar, 0.5)?;
                let sigma = g.exp(half)?;
                let noise = g.mul(ev, sigma)?;
                g.add(mu, noise)?
            }
        };
        let xhat = self.decode_vars(g, bound, z)?;

        // KL(N(μ, σ²) ‖ N(0, 1)) = ½ Σ (μ² + σ² − 1 − log σ²)
        let mu2 = g.square(mu)?;
        let var = g.exp(logvar)?;
        let s = g.add(mu2, var)?;
        let s = g.sub(s, logvar)?;
        let s = g.add_scalar(s, -1.0)?;
        let kl_rows = g.sum_rows(s)?;
        let kl = g.scale(kl_rows, 0.5 * beta)?;

        let diff = g.sub(xv, xhat)?;
        let sq = g.square(diff)?;
        let sq_rows = g.sum_rows(sq)?;
        let recon_rows = g.scale(sq_rows, 1.0 / (2.0 * self.config.sigma2))?;

        let yv = g.constant(y.clone());
        let not_y = g.constant(y.map(|v| 1.0 - v));
        let recon = g.mul(yv, recon_rows)?;

        let scaled = g.scale(recon_rows, gamma)?;
        let clamped_count = g
            .value(scaled)
            .data()
            .iter()
            .zip(y.data())
            .filter(|&(&a, &yy)| yy == 0.0 && a < PENALTY_FLOOR)
            .count();
        let floored = g.clamp_min(scaled, PENALTY_FLOOR)?;
        let log_term = g.log1mexp(floored)?;
        let masked = g.mul(not_y, log_term)?;
        let penalty = g.scale(masked, -1.0)?;

        let per_example = g.add(kl, recon)?;
        let per_example = g.add(per_example, penalty)?;
        let root = match reduction {
            Reduction::Mean => g.mean(per_example)?,
            Reduction::Sum => g.sum(per_example)?,
        };

        let reduce = |t: &Tensor| -> f64 {
            let s = t.sum_f64();
            match reduction {
                Reduction::Mean => s / rows as f64,
                Reduction::Sum => s,
            }
        };
        let breakdown = LossBreakdown {
            kl: reduce(g.value(kl)),
            recon: reduce(g.value(recon)),
            penalty: reduce(g.value(penalty)),
            total: g.value(root).item() as f64,
            gamma: gamma as f64,
            beta: beta as f64,
            clamped: clamped_count,
        };
        Ok(Objective {
            root,
            input: xv,
            breakdown,
        })
    }

    /// Draws `n` samples: `z ~ N(0, I)` decoded to its mean, plus optional
    /// unit-variance Gaussian output noise.
    pub fn sample(&self, n: usize, seed: u64, add_output_noise: bool) -> Result<Tensor> {
        let mut zr = rng::stream(seed, "sample");
        let z: Vec<f32> = (0..n * self.latent_dim())
            .map(|_| StandardNormal.sample(&mut zr))
            .collect();
        let mut x = self.decode(&Tensor::new(vec![n, self.latent_dim()], z)?)?;
        if add_output_noise {
            let mut nr = rng::stream(seed, "sample-noise");
            for v in x.data_mut() {
                let e: f32 = StandardNormal.sample(&mut nr);
                *v += e;
            }
        }
        Ok(x)
    }
}

fn row_chunks(t: &Tensor, rows_per_chunk: usize) -> Vec<Tensor> {
    let cols = t.cols();
    let rows = t.rows();
    if rows == 0 {
        return Vec::new();
    }
    t.data()
        .chunks(rows_per_chunk * cols.max(1))
        .map(|c| Tensor::new(vec![c.len() / cols.max(1), cols], c.to_vec()).expect("chunk shape"))
        .collect()
}

/// Full-batch V-ABC loss with reparameterization noise `eps`, reduced to a
/// batch mean.
pub fn vabc_loss(
    model: &VabcModel,
    x: &Tensor,
    y: &Tensor,
    eps: &Tensor,
    gamma: f32,
    beta: f32,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let obj = model.objective(&mut g, &bound, x, y, Latent::Sampled(eps), gamma, beta, Reduction::Mean, false)?;
    Ok(obj.breakdown)
}

/// `z = μ + ε ⊙ σ`.
pub fn reparameterize(mu: &Tensor, sigma: &Tensor, eps: &Tensor) -> Result<Tensor> {
    if mu.shape() != sigma.shape() || mu.shape() != eps.shape() {
        return Err(Error::shape("reparameterize", mu.shape(), eps.shape()));
    }
    let noise = eps.zip_map(sigma, |e, s| e * s);
    Ok(mu.zip_map(&noise, |m, n| m + n))
}

/// KL divergence of `N(μ, diag σ²)` from the standard normal prior.
pub fn kl_gauss(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::shape("kl_gauss", &[mu.len()], &[sigma.len()]));
    }
    if let Some(s) = sigma.iter().find(|&&s| !(s > 0.0)) {
        return Err(Error::Domain(format!("kl_gauss needs sigma > 0, got {s}")));
    }
    Ok(0.5
        * mu.iter()
            .zip(sigma)
            .map(|(&m, &s)| {
                let v = s * s;
                m * m + v - 1.0 - v.ln()
            })
            .sum::<f64>())
}

/// Gaussian-decoder reconstruction loss `‖x − x̃‖² / (2σ²)`.
pub fn recon_loss_vae(x: &[f32], xhat: &[f32], sigma2: f64) -> Result<f64> {
    if x.len() != xhat.len() {
        return Err(Error::shape("recon_loss_vae", &[x.len()], &[xhat.len()]));
    }
    let sq: f64 = x
        .iter()
        .zip(xhat)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sq / (2.0 * sigma2))
}

/// `log(1 − e^{−a})` for `a > 0`.
pub fn stable_log1mexp(a: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::Domain(format!("log1mexp needs a > 0, got {a}")));
    }
    Ok(log1mexp(a))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AbcLoss {
    pub value: f64,
    pub clamped: bool,
}

/// Autoencoding binary classifier loss: the reconstruction error for normal
/// data (`y = 1`), the log barrier `−log(1 − e^{−L})` for anomalies.
pub fn abc_loss(l_ae: f64, y: u8) -> Result<AbcLoss> {
    if !(l_ae >= 0.0) {
        return Err(Error::Domain(format!("reconstruction error must be >= 0, got {l_ae}")));
    }
    match y {
        1 => Ok(AbcLoss {
            value: l_ae,
            clamped: false,
        }),
        0 => {
            let floor = PENALTY_FLOOR as f64;
            let clamped = l_ae < floor;
            Ok(AbcLoss {
                value: -log1mexp(l_ae.max(floor)),
                clamped,
            })
        }
        _ => Err(Error::Contract(format!("label must be 0 or 1, got {y}"))),
    }
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs_completed: usize,
    pub final_gamma: f64,
    pub final_beta: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredTensor {
    shape: Vec<usize>,
    data: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format_version: u32,
    config: ModelConfig,
    tensors: BTreeMap<String, StoredTensor>,
    train_meta: TrainMeta,
}

impl VabcModel {
    /// Serializes parameters as base64 little-endian `f32`.
    pub fn to_checkpoint_json(&self, meta: &TrainMeta) -> Result<String> {
        let b64 = base64::engine::general_purpose::STANDARD;
        let tensors = self
            .names
            .iter()
            .zip(&self.params)
            .map(|(n, t)| {
                let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
                (
                    n.clone(),
                    StoredTensor {
                        shape: t.shape().to_vec(),
                        data: b64.encode(bytes),
                    },
                )
            })
            .collect();
        let file = CheckpointFile {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: self.config.clone(),
            tensors,
            train_meta: meta.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_checkpoint_json(s: &str) -> Result<(Self, TrainMeta)> {
        let file: CheckpointFile = serde_json::from_str(s)?;
        if file.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {}",
                file.format_version
            )));
        }
        let mut model = VabcModel::zeroed(file.config)?;
        if file.tensors.len() != model.names.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                model.names.len(),
                file.tensors.len()
            )));
        }
        let b64 = base64::engine::general_purpose::STANDARD;
        for (name, slot) in model.names.iter().zip(model.params.iter_mut()) {
            let stored = file
                .tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if stored.shape != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, architecture needs {:?}",
                    stored.shape,
                    slot.shape()
                )));
            }
            let bytes = b64
                .decode(&stored.data)
                .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
            if bytes.len() != 4 * slot.len() {
                return Err(Error::Checkpoint(format!("tensor {name} has {} bytes", bytes.len())));
            }
            for (d, c) in slot.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
                *d = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            }
        }
        Ok((model, file.train_meta))
    }
}
