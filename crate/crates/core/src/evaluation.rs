//! Scoring generated samples with an independently trained classifier.
//!
//! Two classifiers are available: a small CNN for 28×28 digits and a
//! nearest-neighbour index for 2-D moons. Both come out of
//! [`train_eval_classifier`] as an [`EvalClassifier`], which can only be
//! constructed once its held-out accuracy has been measured and checked
//! against [`REQUIRED_ACCURACY`].

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datasets::{make_moons, Concept, DataFold, MNIST_SIDE};
use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::models::VabcModel;
use crate::optim::{AdamConfig, AdamState};
use crate::rng;
use crate::tensor::{gemm, Tensor};

/// Minimum held-out accuracy before a classifier may score anything.
pub const REQUIRED_ACCURACY: f64 = 0.97;
/// Epoch budget for the CNN.
pub const CNN_EPOCH_BUDGET: usize = 20;
/// Training stops early once held-out accuracy reaches this.
pub const CNN_TARGET_ACCURACY: f64 = 0.985;
pub const DEFAULT_SAMPLES: usize = 10_000;

const CNN_BATCH: usize = 64;
const C1: usize = 8;
const C2: usize = 16;
const SIDE2: usize = MNIST_SIDE / 2;
const SIDE3: usize = MNIST_SIDE / 4;
const FLAT: usize = SIDE3 * SIDE3 * C2;
const CLASSES: usize = 10;

/// `conv3x3(1→8) → ReLU → maxpool2 → conv3x3(8→16) → ReLU → maxpool2 →
/// dense(784→10)`, NHWC activations, zero padding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cnn {
    params: Vec<Tensor>,
}

struct CnnCache {
    cols1: Vec<f32>,
    pre1: Vec<f32>,
    arg1: Vec<u32>,
    cols2: Vec<f32>,
    pre2: Vec<f32>,
    arg2: Vec<u32>,
    flat: Vec<f32>,
}

/// 3×3 same-padding patches of an NHWC batch: `(b·h·w, 9·c)`.
fn im2col(input: &[f32], b: usize, side: usize, c: usize) -> Vec<f32> {
    let k = 9 * c;
    let mut cols = vec![0.0f32; b * side * side * k];
    for n in 0..b {
        for y in 0..side {
            for x in 0..side {
                let row = ((n * side + y) * side + x) * k;
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= side as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = x as isize + kx as isize - 1;
                        if sx < 0 || sx >= side as isize {
                            continue;
                        }
                        let src = ((n * side + sy as usize) * side + sx as usize) * c;
                        let dst = row + (ky * 3 + kx) * c;
                        cols[dst..dst + c].copy_from_slice(&input[src..src + c]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
fn col2im(dcols: &[f32], b: usize, side: usize, c: usize) -> Vec<f32> {
    let k = 9 * c;
    let mut out = vec![0.0f32; b * side * side * c];
    for n in 0..b {
        for y in 0..side {
            for x in 0..side {
                let row = ((n * side + y) * side + x) * k;
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= side as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = x as isize + kx as isize - 1;
                        if sx < 0 || sx >= side as isize {
                            continue;
                        }
                        let dst = ((n * side + sy as usize) * side + sx as usize) * c;
                        let src = row + (ky * 3 + kx) * c;
                        for ch in 0..c {
                            out[dst + ch] += dcols[src + ch];
                        }
                    }
                }
            }
        }
    }
    out
}

/// ReLU followed by 2×2 max pooling; returns pooled values and the flat
/// source index of each maximum.
fn relu_pool(pre: &[f32], b: usize, side: usize, c: usize) -> (Vec<f32>, Vec<u32>) {
    let half = side / 2;
    let mut out = vec![0.0f32; b * half * half * c];
    let mut arg = vec![0u32; out.len()];
    for n in 0..b {
        for y in 0..half {
            for x in 0..half {
                for ch in 0..c {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_i = 0;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let i = ((n * side + 2 * y + dy) * side + 2 * x + dx) * c + ch;
                        if pre[i] > best {
                            best = pre[i];
                            best_i = i;
                        }
                    }
                    let o = ((n * half + y) * half + x) * c + ch;
                    out[o] = best.max(0.0);
                    arg[o] = best_i as u32;
                }
            }
        }
    }
    (out, arg)
}

fn unpool_relu(dout: &[f32], arg: &[u32], pre: &[f32]) -> Vec<f32> {
    let mut d = vec![0.0f32; pre.len()];
    for (&g, &i) in dout.iter().zip(arg) {
        if pre[i as usize] > 0.0 {
            d[i as usize] += g;
        }
    }
    d
}

fn add_bias_rows(m: &mut [f32], bias: &[f32]) {
    for row in m.chunks_mut(bias.len()) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn bias_grad(d: &[f32], width: usize) -> Tensor {
    let mut g = vec![0.0f64; width];
    for row in d.chunks(width) {
        for (a, &v) in g.iter_mut().zip(row) {
            *a += v as f64;
        }
    }
    Tensor::vector(g.into_iter().map(|v| v as f32).collect())
}

impl Cnn {
    pub fn new(seed: u64) -> Self {
        let mut rng = rng::stream(seed, "cnn-init");
        let mut glorot = |fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
            let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..=limit)).collect();
            Tensor::new(vec![fan_in, fan_out], data).expect("weight shape")
        };
        let params = vec![
            glorot(9, C1),
            Tensor::zeros(&[C1]),
            glorot(9 * C1, C2),
            Tensor::zeros(&[C2]),
            glorot(FLAT, CLASSES),
            Tensor::zeros(&[CLASSES]),
        ];
        Cnn { params }
    }

    fn forward(&self, x: &[f32], b: usize) -> (Vec<f32>, CnnCache) {
        let p = &self.params;
        let cols1 = im2col(x, b, MNIST_SIDE, 1);
        let mut pre1 = vec![0.0; b * MNIST_SIDE * MNIST_SIDE * C1];
        gemm(b * MNIST_SIDE * MNIST_SIDE, 9, C1, &cols1, false, p[0].data(), false, &mut pre1, false);
        add_bias_rows(&mut pre1, p[1].data());
        let (pool1, arg1) = relu_pool(&pre1, b, MNIST_SIDE, C1);

        let cols2 = im2col(&pool1, b, SIDE2, C1);
        let mut pre2 = vec![0.0; b * SIDE2 * SIDE2 * C2];
        gemm(b * SIDE2 * SIDE2, 9 * C1, C2, &cols2, false, p[2].data(), false, &mut pre2, false);
        add_bias_rows(&mut pre2, p[3].data());
        let (flat, arg2) = relu_pool(&pre2, b, SIDE2, C2);

        let mut logits = vec![0.0; b * CLASSES];
        gemm(b, FLAT, CLASSES, &flat, false, p[4].data(), false, &mut logits, false);
        add_bias_rows(&mut logits, p[5].data());
        (
            logits,
            CnnCache {
                cols1,
                pre1,
                arg1,
                cols2,
                pre2,
                arg2,
                flat,
            },
        )
    }

    /// Softmax cross-entropy step; returns `(mean loss, gradients)`.
    fn loss_and_grads(&self, x: &[f32], labels: &[u8]) -> (f64, Vec<Tensor>) {
        let b = labels.len();
        let (logits, cache) = self.forward(x, b);
        let mut dlogits = vec![0.0f32; b * CLASSES];
        let mut loss = 0.0f64;
        for (n, row) in logits.chunks(CLASSES).enumerate() {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f64> = row.iter().map(|&v| ((v - max) as f64).exp()).collect();
            let z: f64 = exps.iter().sum();
            let label = labels[n] as usize;
            loss -= (exps[label] / z).ln();
            for k in 0..CLASSES {
                let p = exps[k] / z - if k == label { 1.0 } else { 0.0 };
                dlogits[n * CLASSES + k] = (p / b as f64) as f32;
            }
        }
        let p = &self.params;

        let mut dw3 = vec![0.0; FLAT * CLASSES];
        gemm(FLAT, b, CLASSES, &cache.flat, true, &dlogits, false, &mut dw3, false);
        let db3 = bias_grad(&dlogits, CLASSES);
        let mut dflat = vec![0.0; b * FLAT];
        gemm(b, CLASSES, FLAT, &dlogits, false, p[4].data(), true, &mut dflat, false);

        let dpre2 = unpool_relu(&dflat, &cache.arg2, &cache.pre2);
        let rows2 = b * SIDE2 * SIDE2;
        let mut dw2 = vec![0.0; 9 * C1 * C2];
        gemm(9 * C1, rows2, C2, &cache.cols2, true, &dpre2, false, &mut dw2, false);
        let db2 = bias_grad(&dpre2, C2);
        let mut dcols2 = vec![0.0; rows2 * 9 * C1];
        gemm(rows2, C2, 9 * C1, &dpre2, false, p[2].data(), true, &mut dcols2, false);
        let dpool1 = col2im(&dcols2, b, SIDE2, C1);

        let dpre1 = unpool_relu(&dpool1, &cache.arg1, &cache.pre1);
        let rows1 = b * MNIST_SIDE * MNIST_SIDE;
        let mut dw1 = vec![0.0; 9 * C1];
        gemm(9, rows1, C1, &cache.cols1, true, &dpre1, false, &mut dw1, false);
        let db1 = bias_grad(&dpre1, C1);

        let t = |shape: Vec<usize>, d: Vec<f32>| Tensor::new(shape, d).expect("grad shape");
        let grads = vec![
            t(vec![9, C1], dw1),
            db1,
            t(vec![9 * C1, C2], dw2),
            db2,
            t(vec![FLAT, CLASSES], dw3),
            db3,
        ];
        (loss / b as f64, grads)
    }

    pub fn predict(&self, x: &[f32], rows: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(rows);
        let per = MNIST_SIDE * MNIST_SIDE;
        for chunk in x.chunks(256 * per) {
            let b = chunk.len() / per;
            let (logits, _) = self.forward(chunk, b);
            out.extend(logits.chunks(CLASSES).map(argmax));
        }
        out
    }
}

fn argmax(row: &[f32]) -> u8 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u8
}

/// k-nearest-neighbour classifier over labelled 2-D points. Class 0 is the
/// positive concept, class 1 the negative one.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnOracle {
    points: Vec<[f32; 2]>,
    classes: Vec<u8>,
    k: usize,
}

impl KnnOracle {
    pub fn from_fold(fold: &DataFold, k: usize) -> Result<Self> {
        if fold.is_empty() {
            return Err(Error::EmptyFold);
        }
        if fold.dim() != 2 {
            return Err(Error::Contract(format!("kNN oracle needs 2-D points, got {}", fold.dim())));
        }
        if k == 0 || k > fold.len() {
            return Err(Error::Contract(format!("k must lie in 1..={}, got {k}", fold.len())));
        }
        let mut classes = Vec::with_capacity(fold.len());
        for &c in fold.concepts() {
            classes.push(match c {
                Concept::Positive => 0,
                Concept::Negative => 1,
                Concept::Unassigned => {
                    return Err(Error::Contract("kNN oracle needs concept labels".into()))
                }
            });
        }
        Ok(KnnOracle {
            points: (0..fold.len()).map(|i| [fold.x(i)[0], fold.x(i)[1]]).collect(),
            classes,
            k,
        })
    }

    /// 1-NN index over noiseless moons with `points_per_moon` grid points each.
    pub fn clean_moons(points_per_moon: usize) -> Result<Self> {
        Self::from_fold(&make_moons(points_per_moon, 0.0, 0)?, 1)
    }

    /// Same points with the two classes swapped.
    pub fn relabeled(&self) -> Self {
        KnnOracle {
            points: self.points.clone(),
            classes: self.classes.iter().map(|&c| 1 - c).collect(),
            k: self.k,
        }
    }

    pub fn predict_one(&self, p: [f32; 2]) -> u8 {
        // (distance², index) of the k best so far, ascending
        let mut best: Vec<(f32, usize)> = Vec::with_capacity(self.k + 1);
        for (i, q) in self.points.iter().enumerate() {
            let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
            if best.len() < self.k || d < best[best.len() - 1].0 {
                let at = best.partition_point(|&(bd, _)| bd <= d);
                best.insert(at, (d, i));
                best.truncate(self.k);
            }
        }
        let negatives = best.iter().filter(|&&(_, i)| self.classes[i] == 1).count();
        u8::from(2 * negatives > self.k)
    }

    pub fn predict(&self, x: &[f32]) -> Vec<u8> {
        x.chunks(2).map(|p| self.predict_one([p[0], p[1]])).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
enum ClassifierKind {
    Cnn(Cnn),
    Knn(KnnOracle),
}

/// A classifier whose held-out accuracy has passed [`REQUIRED_ACCURACY`].
/// Fields are private; the only constructors measure accuracy first.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalClassifier {
    kind: ClassifierKind,
    accuracy: f64,
    num_classes: usize,
}

/// Ground-truth labelled data for [`train_eval_classifier`].
pub enum LabeledData<'a> {
    /// Digit images; labels are the digits themselves.
    Digits {
        train: &'a DataFold,
        heldout: &'a DataFold,
    },
    /// 2-D points labelled by concept; accuracy is measured on the points
    /// themselves.
    Moons { points: &'a DataFold, k: usize },
}

fn gate(kind: ClassifierKind, accuracy: f64, num_classes: usize) -> Result<EvalClassifier> {
    if accuracy < REQUIRED_ACCURACY {
        return Err(Error::EvaluatorUnusable {
            accuracy,
            required: REQUIRED_ACCURACY,
        });
    }
    Ok(EvalClassifier {
        kind,
        accuracy,
        num_classes,
    })
}

fn digit_labels(fold: &DataFold) -> Result<&[u8]> {
    fold.digits()
        .ok_or_else(|| Error::Contract("digit classifier needs digit labels".into()))
}

fn cnn_accuracy(cnn: &Cnn, fold: &DataFold) -> Result<f64> {
    let labels = digit_labels(fold)?;
    let pred = cnn.predict(fold.features(), fold.len());
    let correct = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / fold.len() as f64)
}

pub fn train_eval_classifier(data: LabeledData<'_>, seed: u64) -> Result<EvalClassifier> {
    match data {
        LabeledData::Moons { points, k } => {
            let oracle = KnnOracle::from_fold(points, k)?;
            let pred = oracle.predict(points.features());
            let correct = pred
                .iter()
                .zip(&oracle.classes)
                .filter(|(a, b)| a == b)
                .count();
            let acc = correct as f64 / points.len() as f64;
            gate(ClassifierKind::Knn(oracle), acc, 2)
        }
        LabeledData::Digits { train, heldout } => {
            if train.is_empty() || heldout.is_empty() {
                return Err(Error::EmptyFold);
            }
            let per = MNIST_SIDE * MNIST_SIDE;
            if train.dim() != per || heldout.dim() != per {
                return Err(Error::shape("train_eval_classifier", &[train.dim()], &[per]));
            }
            let labels = digit_labels(train)?;
            digit_labels(heldout)?;
            let mut cnn = Cnn::new(seed);
            let mut adam = AdamState::new(AdamConfig::default(), &cnn.params);
            let mut acc = 0.0;
            let mut order: Vec<usize> = (0..train.len()).collect();
            for epoch in 0..CNN_EPOCH_BUDGET {
                order.shuffle(&mut rng::indexed_stream(seed, "cnn-batches", epoch as u64));
                for idx in order.chunks(CNN_BATCH) {
                    let x = train.batch_features(idx);
                    let y: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
                    let (loss, grads) = cnn.loss_and_grads(x.data(), &y);
                    if !loss.is_finite() {
                        return Err(Error::NonFinite { op: "cnn loss" });
                    }
                    adam.step(&mut cnn.params, &grads)?;
                }
                acc = cnn_accuracy(&cnn, heldout)?;
                if acc >= CNN_TARGET_ACCURACY {
                    break;
                }
            }
            gate(ClassifierKind::Cnn(cnn), acc, CLASSES)
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredCnn {
    cnn: Cnn,
}

impl EvalClassifier {
    pub fn accuracy(&self) -> f64 {
        self.accuracy
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Class index per row of `x`.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<u8>> {
        match &self.kind {
            ClassifierKind::Cnn(cnn) => {
                if x.cols() != MNIST_SIDE * MNIST_SIDE {
                    return Err(Error::shape("classify", x.shape(), &[0, MNIST_SIDE * MNIST_SIDE]));
                }
                Ok(cnn.predict(x.data(), x.rows()))
            }
            ClassifierKind::Knn(k) => {
                if x.cols() != 2 {
                    return Err(Error::shape("classify", x.shape(), &[0, 2]));
                }
                Ok(k.predict(x.data()))
            }
        }
    }

    /// Serialized CNN weights. kNN classifiers are rebuilt, not stored.
    pub fn to_json(&self) -> Result<String> {
        match &self.kind {
            ClassifierKind::Cnn(cnn) => Ok(serde_json::to_string(&StoredCnn { cnn: cnn.clone() })?),
            ClassifierKind::Knn(_) => Err(Error::Contract("kNN classifiers are not persisted".into())),
        }
    }

    /// Loads stored CNN weights and re-measures accuracy on `heldout` before
    /// handing the classifier out.
    pub fn from_json_verified(s: &str, heldout: &DataFold) -> Result<Self> {
        let stored: StoredCnn = serde_json::from_str(s)?;
        let acc = cnn_accuracy(&stored.cnn, heldout)?;
        gate(ClassifierKind::Cnn(stored.cnn), acc, CLASSES)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub n: usize,
    pub error: f64,
    pub histogram: Vec<usize>,
    pub seed: u64,
    pub classifier_accuracy: f64,
}

/// Classifies `samples` and reports the share assigned to `negative_class`.
pub fn score_samples(
    samples: &Tensor,
    classifier: &EvalClassifier,
    negative_class: u8,
    seed: u64,
) -> Result<GenerationReport> {
    if negative_class as usize >= classifier.num_classes() {
        return Err(Error::Contract(format!(
            "negative class {negative_class} outside 0..{}",
            classifier.num_classes()
        )));
    }
    let n = samples.rows();
    if n == 0 {
        return Err(Error::Contract("need at least one sample".into()));
    }
    let pred = classifier.predict(samples)?;
    let mut histogram = vec![0usize; classifier.num_classes()];
    for &p in &pred {
        histogram[p as usize] += 1;
    }
    Ok(GenerationReport {
        n,
        error: histogram[negative_class as usize] as f64 / n as f64,
        histogram,
        seed,
        classifier_accuracy: classifier.accuracy(),
    })
}

/// Draws `n` decoder-mean samples and scores them with `classifier`.
pub fn negative_generation_error(
    model: &VabcModel,
    classifier: &EvalClassifier,
    negative_class: u8,
    n: usize,
    seed: u64,
) -> Result<GenerationReport> {
    if n == 0 {
        return Err(Error::Contract("n must be at least 1".into()));
    }
    let samples = model.sample(n, seed, false)?;
    score_samples(&samples, classifier, negative_class, seed)
}

/// Share of `n` decoder-mean samples whose nearest oracle point lies on the
/// negative moon.
pub fn moons_negative_rate(model: &VabcModel, oracle: &KnnOracle, n: usize, seed: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Contract("n must be at least 1".into()));
    }
    let samples = model.sample(n, seed, false)?;
    if samples.cols() != 2 {
        return Err(Error::shape("moons_negative_rate", samples.shape(), &[n, 2]));
    }
    Ok(rate_of_points(oracle, samples.data()))
}

/// Negative share among raw 2-D points.
pub fn rate_of_points(oracle: &KnnOracle, xy: &[f32]) -> f64 {
    let pred = oracle.predict(xy);
    pred.iter().filter(|&&c| c == 1).count() as f64 / pred.len().max(1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    P,
    GammaEnd,
    Seed,
    UnwantedSize,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p" => Ok(SweepAxis::P),
            "gamma-end" | "gamma_end" | "gamma" => Ok(SweepAxis::GammaEnd),
            "seed" => Ok(SweepAxis::Seed),
            "unwanted-size" | "unwanted_size" => Ok(SweepAxis::UnwantedSize),
            other => Err(Error::Config {
                key: "axis".into(),
                constraint: format!("unknown sweep axis `{other}`"),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub axis_value: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub axis_value: f64,
    pub seed: u64,
    /// `None` when the run failed.
    pub neg_gen_error: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<(SweepPoint, String)>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("axis_value,seed,neg_gen_error\n");
        for r in &self.rows {
            let v = r.neg_gen_error.map(sig9).unwrap_or_else(|| "NaN".into());
            let _ = writeln!(out, "{},{},{}", sig9(r.axis_value), r.seed, v);
        }
        out
    }

    /// Mean error over successful runs at `axis_value`.
    pub fn mean_at(&self, axis_value: f64) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.axis_value == axis_value)
            .filter_map(|r| r.neg_gen_error)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Cartesian product of axis values and seeds, in row order.
pub fn sweep_points(values: &[f64], seeds: &[u64]) -> Vec<SweepPoint> {
    values
        .iter()
        .flat_map(|&axis_value| seeds.iter().map(move |&seed| SweepPoint { axis_value, seed }))
        .collect()
}

/// Runs one train-and-evaluate job per point. Failing points are recorded
/// and the sweep carries on.
pub fn sweep<F>(points: &[SweepPoint], mut run: F) -> SweepTable
where
    F: FnMut(&SweepPoint) -> Result<GenerationReport>,
{
    let mut table = SweepTable::default();
    for p in points {
        match run(p) {
            Ok(report) => table.rows.push(SweepRow {
                axis_value: p.axis_value,
                seed: p.seed,
                neg_gen_error: Some(report.error),
            }),
            Err(e) => {
                table.rows.push(SweepRow {
                    axis_value: p.axis_value,
                    seed: p.seed,
                    neg_gen_error: None,
                });
                table.failures.push((*p, e.to_string()));
            }
        }
    }
    table
}
