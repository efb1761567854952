//! Negative-unlabeled folds: two-moons and MNIST construction, the Bernoulli
//! unwanted/unlabeled split, and the balanced mini-batch sampler.
//!
//! Every example carries two labels. `concept` is the ground truth (positive
//! or negative concept) and is only consulted by evaluation code. `y` is the
//! training label: `1` for unlabeled data, `0` for unwanted data.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::rng;
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const MNIST_SIDE: usize = 28;
pub const MNIST_PIXELS: usize = MNIST_SIDE * MNIST_SIDE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Concept {
    Positive,
    Negative,
    /// Not yet assigned (freshly loaded MNIST).
    Unassigned,
}

impl Concept {
    pub fn as_str(self) -> &'static str {
        match self {
            Concept::Positive => "positive",
            Concept::Negative => "negative",
            Concept::Unassigned => "unassigned",
        }
    }
}

/// Borrowed view of one example of a [`DataFold`].
#[derive(Clone, Copy, Debug)]
pub struct LabeledExample<'a> {
    pub x: &'a [f32],
    pub concept: Concept,
    pub y: u8,
    pub digit: Option<u8>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldCounts {
    pub positive: usize,
    pub negative: usize,
    pub unlabeled: usize,
    pub unwanted: usize,
}

/// Examples stored column-wise: a flat `(len, dim)` feature block plus
/// per-example labels.
#[derive(Clone, Debug, PartialEq)]
pub struct DataFold {
    pub name: String,
    dim: usize,
    x: Vec<f32>,
    concept: Vec<Concept>,
    y: Vec<u8>,
    digit: Option<Vec<u8>>,
}

impl DataFold {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        x: Vec<f32>,
        concept: Vec<Concept>,
        y: Vec<u8>,
        digit: Option<Vec<u8>>,
    ) -> Result<Self> {
        let n = concept.len();
        if x.len() != n * dim || y.len() != n || digit.as_ref().is_some_and(|d| d.len() != n) {
            return Err(Error::shape("fold", &[x.len(), y.len()], &[n, dim]));
        }
        if y.iter().any(|&v| v > 1) {
            return Err(Error::Contract("NU labels must be 0 or 1".into()));
        }
        Ok(DataFold {
            name: name.into(),
            dim,
            x,
            concept,
            y,
            digit,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &[f32] {
        &self.x
    }

    pub fn x(&self, i: usize) -> &[f32] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concept
    }

    pub fn labels(&self) -> &[u8] {
        &self.y
    }

    pub fn digits(&self) -> Option<&[u8]> {
        self.digit.as_deref()
    }

    pub fn example(&self, i: usize) -> LabeledExample<'_> {
        LabeledExample {
            x: self.x(i),
            concept: self.concept[i],
            y: self.y[i],
            digit: self.digit.as_ref().map(|d| d[i]),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = LabeledExample<'_>> + '_ {
        (0..self.len()).map(|i| self.example(i))
    }

    pub fn counts(&self) -> FoldCounts {
        let mut c = FoldCounts::default();
        for (&concept, &y) in self.concept.iter().zip(&self.y) {
            match concept {
                Concept::Positive => c.positive += 1,
                Concept::Negative => c.negative += 1,
                Concept::Unassigned => {}
            }
            if y == 1 {
                c.unlabeled += 1;
            } else {
                c.unwanted += 1;
            }
        }
        c
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.y[i] == 1).collect()
    }

    pub fn unwanted_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.y[i] == 0).collect()
    }

    /// Fold of the selected examples, in the given order.
    pub fn subset(&self, idx: &[usize], name: impl Into<String>) -> DataFold {
        let mut x = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            x.extend_from_slice(self.x(i));
        }
        DataFold {
            name: name.into(),
            dim: self.dim,
            x,
            concept: idx.iter().map(|&i| self.concept[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            digit: self.digit.as_ref().map(|d| idx.iter().map(|&i| d[i]).collect()),
        }
    }

    /// Only the `y = 1` examples.
    pub fn unlabeled_fold(&self) -> DataFold {
        self.subset(&self.unlabeled_indices(), format!("{}/unlabeled", self.name))
    }

    /// Uniform random subsample of `n` examples without replacement, kept in
    /// original order.
    pub fn subsample(&self, n: usize, seed: u64) -> DataFold {
        if n >= self.len() {
            return self.clone();
        }
        let mut rng = rng::stream(seed, "subsample");
        let mut idx = rand::seq::index::sample(&mut rng, self.len(), n).into_vec();
        idx.sort_unstable();
        self.subset(&idx, format!("{}[{n}]", self.name))
    }

    /// `(rows, dim)` feature matrix for the given examples.
    pub fn batch_features(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.x(i));
        }
        Tensor::new(vec![idx.len(), self.dim], data).expect("consistent batch shape")
    }

    pub fn batch_labels(&self, idx: &[usize]) -> Tensor {
        Tensor::vector(idx.iter().map(|&i| self.y[i] as f32).collect())
    }

    /// CSV with header `x1,x2,concept,y`; only meaningful for 2-D folds.
    pub fn to_moons_csv(&self) -> Result<String> {
        if self.dim != 2 {
            return Err(Error::Contract(format!(
                "moons CSV needs 2-D examples, fold has {} features",
                self.dim
            )));
        }
        let mut out = String::from("x1,x2,concept,y\n");
        for e in self.iter() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                sig9(e.x[0] as f64),
                sig9(e.x[1] as f64),
                e.concept.as_str(),
                e.y
            );
        }
        Ok(out)
    }
}

/// Two interleaving half circles. The upper moon `(cos t, sin t)` is the
/// negative concept and the lower moon `(1 - cos t, 0.5 - sin t)` the positive
/// one, with `t` on a uniform grid over `[0, π]`. Upper-moon points come
/// first. All examples start out unlabeled (`y = 1`).
pub fn make_moons(n_per_moon: usize, noise: f64, seed: u64) -> Result<DataFold> {
    if n_per_moon == 0 {
        return Err(Error::EmptyFold);
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Contract(format!("noise stddev must be >= 0, got {noise}")));
    }
    let mut rng = rng::stream(seed, "moons");
    let gauss = Normal::new(0.0, noise).map_err(|e| Error::Contract(e.to_string()))?;
    let step = if n_per_moon > 1 {
        std::f64::consts::PI / (n_per_moon - 1) as f64
    } else {
        0.0
    };

    let n = 2 * n_per_moon;
    let mut x = Vec::with_capacity(2 * n);
    let mut concept = Vec::with_capacity(n);
    for moon in [Concept::Negative, Concept::Positive] {
        for i in 0..n_per_moon {
            let t = step * i as f64;
            let (px, py) = match moon {
                Concept::Negative => (t.cos(), t.sin()),
                _ => (1.0 - t.cos(), 0.5 - t.sin()),
            };
            let (nx, ny) = if noise > 0.0 {
                (gauss.sample(&mut rng), gauss.sample(&mut rng))
            } else {
                (0.0, 0.0)
            };
            x.push((px + nx) as f32);
            x.push((py + ny) as f32);
            concept.push(moon);
        }
    }
    DataFold::new(
        format!("moons(n={n_per_moon},noise={noise})"),
        2,
        x,
        concept,
        vec![1; n],
        None,
    )
}

/// Marks each negative example unwanted (`y = 0`) independently with
/// probability `p`; everything else becomes unlabeled.
pub fn split_nu(fold: &DataFold, p: f64, seed: u64) -> Result<DataFold> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Contract(format!("p must lie in [0, 1], got {p}")));
    }
    if fold.concept.contains(&Concept::Unassigned) {
        return Err(Error::Contract("split_nu needs concept labels; assign them first".into()));
    }
    let mut rng = rng::stream(seed, "split");
    let mut out = fold.clone();
    for (y, &c) in out.y.iter_mut().zip(&fold.concept) {
        *y = match c {
            Concept::Negative if rng.gen_bool(p) => 0,
            _ => 1,
        };
    }
    out.name = format!("{}/p={p}", fold.name);
    Ok(out)
}

/// Concept assignment for digit folds: the chosen class is the negative
/// concept, every other digit positive.
pub fn assign_concept(fold: &DataFold, negative_class: u8) -> Result<DataFold> {
    let digits = fold
        .digit
        .as_ref()
        .ok_or_else(|| Error::Contract("assign_concept needs digit labels".into()))?;
    let mut out = fold.clone();
    out.concept = digits
        .iter()
        .map(|&d| if d == negative_class { Concept::Negative } else { Concept::Positive })
        .collect();
    out.name = format!("{}/neg={negative_class}", fold.name);
    Ok(out)
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn check_len(what: &str, bytes: &[u8], expected: usize) -> Result<()> {
    if bytes.len() < expected {
        return Err(Error::Length {
            what: what.to_string(),
            expected,
            found: bytes.len(),
        });
    }
    Ok(())
}

/// Parses an IDX3 image file: returns `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    const WHAT: &str = "idx images";
    check_len(WHAT, bytes, 16)?;
    let magic = be_u32(bytes, 0);
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            what: WHAT.into(),
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4) as usize;
    let rows = be_u32(bytes, 8) as usize;
    let cols = be_u32(bytes, 12) as usize;
    let total = 16 + count * rows * cols;
    check_len(WHAT, bytes, total)?;
    Ok((count, rows, cols, bytes[16..total].to_vec()))
}

/// Parses an IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    const WHAT: &str = "idx labels";
    check_len(WHAT, bytes, 8)?;
    let magic = be_u32(bytes, 0);
    if magic != LABELS_MAGIC {
        return Err(Error::Format {
            what: WHAT.into(),
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4) as usize;
    check_len(WHAT, bytes, 8 + count)?;
    Ok(bytes[8..8 + count].to_vec())
}

/// Builds a digit fold from raw IDX image and label bytes. Pixels are scaled
/// to `[0, 1]`; concepts are left unassigned.
pub fn mnist_from_idx_bytes(name: &str, images: &[u8], labels: &[u8]) -> Result<DataFold> {
    let (count, rows, cols, pixels) = parse_idx_images(images)?;
    let digits = parse_idx_labels(labels)?;
    if digits.len() != count {
        return Err(Error::Length {
            what: "idx labels vs images".into(),
            expected: count,
            found: digits.len(),
        });
    }
    let x = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    DataFold::new(
        name,
        rows * cols,
        x,
        vec![Concept::Unassigned; count],
        vec![1; count],
        Some(digits),
    )
}

pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<DataFold> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = std::fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let labels = std::fs::read(lp).map_err(|e| Error::io(lp, e))?;
    let name = ip
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_else(|| "mnist".into());
    mnist_from_idx_bytes(&name, &images, &labels)
}

/// Which MNIST split to load from a directory holding the four standard files.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MnistSplit {
    Train,
    Test,
}

pub fn load_mnist_dir(dir: impl AsRef<Path>, split: MnistSplit) -> Result<DataFold> {
    let dir = dir.as_ref();
    let prefix = match split {
        MnistSplit::Train => "train",
        MnistSplit::Test => "t10k",
    };
    load_mnist_idx(
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

/// One row of the reference fold-size table.
#[derive(Clone, Copy, Debug)]
pub struct FoldSizeRow {
    pub dataset: &'static str,
    pub class: u8,
    pub p: f64,
    pub positive: usize,
    pub negative: usize,
    pub unlabeled: usize,
    pub unwanted: usize,
}

pub const FOLD_SIZE_TABLE: [FoldSizeRow; 11] = {
    const fn row(
        dataset: &'static str,
        class: u8,
        p: f64,
        positive: usize,
        negative: usize,
        unlabeled: usize,
        unwanted: usize,
    ) -> FoldSizeRow {
        FoldSizeRow {
            dataset,
            class,
            p,
            positive,
            negative,
            unlabeled,
            unwanted,
        }
    }
    [
        row("Moons1", 0, 1.0, 5000, 5000, 5000, 5000),
        row("Moons2", 0, 0.8, 5000, 5000, 5983, 4017),
        row("MNIST", 1, 0.1, 53258, 6742, 59328, 672),
        row("MNIST", 1, 0.2, 53258, 6742, 58686, 1314),
        row("MNIST", 1, 0.3, 53258, 6742, 57986, 2014),
        row("MNIST", 7, 0.1, 53735, 6265, 59375, 625),
        row("MNIST", 7, 0.2, 53735, 6265, 58777, 1223),
        row("MNIST", 7, 0.3, 53735, 6265, 58125, 1875),
        row("MNIST", 8, 0.1, 54149, 5851, 59414, 586),
        row("MNIST", 8, 0.2, 54149, 5851, 58858, 1142),
        row("MNIST", 8, 0.3, 54149, 5851, 58276, 1724),
    ]
};

/// Mini-batch index sampler with equal numbers of unlabeled and unwanted
/// examples per batch. The first half of each batch is unlabeled.
#[derive(Clone, Debug)]
pub struct BalancedSampler {
    unlabeled: Vec<usize>,
    unwanted: Vec<usize>,
    half: usize,
    seed: u64,
}

pub fn balanced_batches(fold: &DataFold, batch_size: usize, seed: u64) -> Result<BalancedSampler> {
    BalancedSampler::new(fold, batch_size, seed)
}

impl BalancedSampler {
    pub fn new(fold: &DataFold, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size % 2 != 0 {
            return Err(Error::Sampler(format!("batch size must be even and positive, got {batch_size}")));
        }
        let unlabeled = fold.unlabeled_indices();
        let unwanted = fold.unwanted_indices();
        if unwanted.is_empty() {
            return Err(Error::Sampler(
                "fold has no unwanted examples; use plain (unbalanced) batching".into(),
            ));
        }
        if unlabeled.is_empty() {
            return Err(Error::Sampler("fold has no unlabeled examples".into()));
        }
        Ok(BalancedSampler {
            unlabeled,
            unwanted,
            half: batch_size / 2,
            seed,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.unlabeled.len().div_ceil(self.half)
    }

    /// Batches of epoch `epoch`; a pure function of `(seed, epoch)`.
    pub fn epoch(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut rng = rng::indexed_stream(self.seed, "batches", epoch as u64);
        let n_batches = self.batches_per_epoch();
        let needed = n_batches * self.half;

        let mut lab = self.unlabeled.clone();
        lab.shuffle(&mut rng);
        while lab.len() < needed {
            lab.push(self.unlabeled[rng.gen_range(0..self.unlabeled.len())]);
        }

        let unw: Vec<usize> = if self.unwanted.len() >= needed {
            let mut u = self.unwanted.clone();
            u.shuffle(&mut rng);
            u.truncate(needed);
            u
        } else {
            (0..needed)
                .map(|_| self.unwanted[rng.gen_range(0..self.unwanted.len())])
                .collect()
        };

        lab.chunks(self.half)
            .zip(unw.chunks(self.half))
            .take(n_batches)
            .map(|(a, b)| a.iter().chain(b).copied().collect())
            .collect()
    }
}

/// Shuffled batches over `indices`; the last batch may be short.
pub fn plain_batches(indices: &[usize], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = rng::indexed_stream(seed, "batches", epoch as u64);
    let mut idx = indices.to_vec();
    idx.shuffle(&mut rng);
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}
