//! Independent f64 reference implementations used as test oracles.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vabc::autodiff::Graph;
use vabc::models::{Latent, ModelConfig, OutputActivation, Reduction, VabcModel, PENALTY_FLOOR};
use vabc::Tensor;

/// Row-major dense layer `x·W + b` in f64.
fn dense(x: &[f64], rows: usize, w: &[f64], b: &[f64], fan_in: usize, fan_out: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * fan_out];
    for r in 0..rows {
        for j in 0..fan_out {
            let mut acc = b[j];
            for k in 0..fan_in {
                acc += x[r * fan_in + k] * w[k * fan_out + j];
            }
            out[r * fan_out + j] = acc;
        }
    }
    out
}

fn relu(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// `log(1 − e^{−a})` by series that avoid cancellation.
pub fn log1mexp_series(a: f64) -> f64 {
    if a < 1.0 {
        // 1 − e^{−a} = a · Σ_{k≥0} (−a)^k / (k+1)!
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..60 {
            term *= -a / (k as f64 + 1.0);
            sum += term;
        }
        a.ln() + sum.ln()
    } else {
        // log(1 − q) = −Σ_{k≥1} q^k / k, q = e^{−a} ≤ e^{−1}
        let q = (-a).exp();
        let mut qk = 1.0;
        let mut sum = 0.0;
        for k in 1..200 {
            qk *= q;
            sum += qk / k as f64;
            if qk < 1e-30 {
                break;
            }
        }
        -sum
    }
}

/// Flat f64 copy of every parameter, in model order.
pub fn flat_params(model: &VabcModel) -> Vec<f64> {
    model.params().iter().flat_map(|t| t.data().iter().map(|&v| v as f64)).collect()
}

/// Mean V-ABC objective computed entirely in f64 from a flat parameter
/// vector laid out like [`flat_params`].
#[allow(clippy::too_many_arguments)]
pub fn oracle_loss(
    cfg: &ModelConfig,
    theta: &[f64],
    x: &[f64],
    y: &[f64],
    eps: &[f64],
    gamma: f64,
    beta: f64,
    floor: f64,
) -> f64 {
    let rows = y.len();
    let mut at = 0;
    let mut take = |fan_in: usize, fan_out: usize| {
        let w = theta[at..at + fan_in * fan_out].to_vec();
        at += fan_in * fan_out;
        let b = theta[at..at + fan_out].to_vec();
        at += fan_out;
        (w, b, fan_in, fan_out)
    };
    let mut enc = Vec::new();
    let mut width = cfg.input_dim;
    for &h in &cfg.hidden {
        enc.push(take(width, h));
        width = h;
    }
    let mu_l = take(width, cfg.latent_dim);
    let lv_l = take(width, cfg.latent_dim);
    let mut dec = Vec::new();
    let mut width = cfg.latent_dim;
    for &h in cfg.hidden.iter().rev() {
        dec.push(take(width, h));
        width = h;
    }
    let out_l = take(width, cfg.input_dim);

    let mut h = x.to_vec();
    for (w, b, i, o) in &enc {
        h = dense(&h, rows, w, b, *i, *o);
        relu(&mut h);
    }
    let mu = dense(&h, rows, &mu_l.0, &mu_l.1, mu_l.2, mu_l.3);
    let lv = dense(&h, rows, &lv_l.0, &lv_l.1, lv_l.2, lv_l.3);
    let d = cfg.latent_dim;
    let z: Vec<f64> = (0..rows * d).map(|i| mu[i] + eps[i] * (0.5 * lv[i]).exp()).collect();
    let mut h = z;
    for (w, b, i, o) in &dec {
        h = dense(&h, rows, w, b, *i, *o);
        relu(&mut h);
    }
    let mut xhat = dense(&h, rows, &out_l.0, &out_l.1, out_l.2, out_l.3);
    if cfg.output == OutputActivation::Sigmoid {
        for v in &mut xhat {
            *v = 1.0 / (1.0 + (-*v).exp());
        }
    }
    let n = cfg.input_dim;
    let sigma2 = cfg.sigma2 as f64;
    let mut total = 0.0;
    for r in 0..rows {
        let kl: f64 = (0..d)
            .map(|j| {
                let (m, l) = (mu[r * d + j], lv[r * d + j]);
                0.5 * (m * m + l.exp() - 1.0 - l)
            })
            .sum();
        let sq: f64 = (0..n).map(|j| (x[r * n + j] - xhat[r * n + j]).powi(2)).sum();
        let l = sq / (2.0 * sigma2);
        let penalty = -log1mexp_series((gamma * l).max(floor));
        total += beta * kl + y[r] * l + (1.0 - y[r]) * penalty;
    }
    total / rows as f64
}

/// Central differences of `f` at `theta` with step `h`.
pub fn central_differences(theta: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = t[i];
            t[i] = orig + h;
            let plus = f(&t);
            t[i] = orig - h;
            let minus = f(&t);
            t[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Elementwise `|a − b| / max(|a|, |b|, floor)`, maximised.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// One randomized gradient check: a small network, a mixed-label batch and
/// the given `γ`. Returns the max relative error between reverse-mode
/// gradients and f64 central differences of the oracle loss.
pub fn gradcheck_case(seed: u64, gamma: f64, rel_floor: f64) -> f64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let input_dim = r.gen_range(2..=4);
    let hidden: Vec<usize> = (0..r.gen_range(1..=2)).map(|_| r.gen_range(2..=5)).collect();
    let output = if r.gen_bool(0.5) { OutputActivation::Sigmoid } else { OutputActivation::Linear };
    let cfg = ModelConfig {
        input_dim,
        hidden,
        latent_dim: r.gen_range(1..=2),
        sigma2: r.gen_range(0.5..3.0),
        output,
    };
    let mut model = VabcModel::new(cfg.clone(), seed).unwrap();
    for p in model.params_mut() {
        for v in p.data_mut() {
            *v += r.gen_range(-0.3..0.3);
        }
    }
    let rows = r.gen_range(3..=6);
    let x: Vec<f32> = (0..rows * input_dim).map(|_| r.gen_range(0.0..1.0)).collect();
    let mut y: Vec<f32> = (0..rows).map(|_| if r.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
    y[0] = 1.0;
    y[1] = 0.0;
    let eps: Vec<f32> = (0..rows * cfg.latent_dim).map(|_| r.sample(StandardNormal)).collect();
    let beta: f32 = r.gen_range(0.0..=1.0);

    let xt = Tensor::new(vec![rows, input_dim], x.clone()).unwrap();
    let yt = Tensor::vector(y.clone());
    let et = Tensor::new(vec![rows, cfg.latent_dim], eps.clone()).unwrap();
    let mut g = Graph::new();
    let bound = model.bind(&mut g, true);
    let obj = model
        .objective(&mut g, &bound, &xt, &yt, Latent::Sampled(&et), gamma as f32, beta, Reduction::Mean, false)
        .unwrap();
    let grads = g.backward(obj.root).unwrap();
    let analytic: Vec<f64> = bound
        .vars
        .iter()
        .flat_map(|v| grads.get(*v).unwrap().data().iter().map(|&g| g as f64).collect::<Vec<_>>())
        .collect();

    let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let y64: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let e64: Vec<f64> = eps.iter().map(|&v| v as f64).collect();
    let floor = PENALTY_FLOOR as f64;
    let numeric = central_differences(&flat_params(&model), 1e-6, |t| {
        oracle_loss(&cfg, t, &x64, &y64, &e64, gamma, beta as f64, floor)
    });
    max_relative_error(&analytic, &numeric, rel_floor)
}
