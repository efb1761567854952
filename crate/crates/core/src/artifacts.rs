//! Diagnostic tables and images computed from a frozen model.
//!
//! Every function here encodes deterministically (`z = μ`); nothing samples.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::datasets::{DataFold, MNIST_SIDE};
use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::models::{Latent, Reduction, VabcModel};
use crate::tensor::Tensor;

/// Axis-aligned 2-D grid. Points run along `x1` fastest.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub resolution: [usize; 2],
}

impl GridSpec {
    pub fn new(min: [f64; 2], max: [f64; 2], resolution: [usize; 2]) -> Result<Self> {
        let g = GridSpec { min, max, resolution };
        g.validate()?;
        Ok(g)
    }

    pub fn square(lo: f64, hi: f64, resolution: usize) -> Result<Self> {
        Self::new([lo, lo], [hi, hi], [resolution, resolution])
    }

    /// `[−1.5, 2.5] × [−1.0, 1.5]` at 30×30.
    pub fn moons_field() -> Self {
        GridSpec {
            min: [-1.5, -1.0],
            max: [2.5, 1.5],
            resolution: [30, 30],
        }
    }

    /// `[−3, 3]²` at 20×20.
    pub fn manifold() -> Self {
        GridSpec {
            min: [-3.0, -3.0],
            max: [3.0, 3.0],
            resolution: [20, 20],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..2 {
            if !(self.min[a].is_finite() && self.max[a].is_finite() && self.min[a] < self.max[a]) {
                return Err(Error::Contract(format!(
                    "grid axis {a}: need finite min < max, got [{}, {}]",
                    self.min[a], self.max[a]
                )));
            }
            if self.resolution[a] < 2 {
                return Err(Error::Contract(format!(
                    "grid axis {a}: resolution must be at least 2, got {}",
                    self.resolution[a]
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.resolution[0] * self.resolution[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn coord(&self, axis: usize, i: usize) -> f64 {
        let step = (self.max[axis] - self.min[axis]) / (self.resolution[axis] - 1) as f64;
        self.min[axis] + step * i as f64
    }

    /// Grid points, row-major with `x1` varying fastest.
    pub fn points(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(self.len());
        for j in 0..self.resolution[1] {
            for i in 0..self.resolution[0] {
                out.push([self.coord(0, i), self.coord(1, j)]);
            }
        }
        out
    }

    fn as_tensor(&self) -> Tensor {
        let data = self.points().iter().flat_map(|p| [p[0] as f32, p[1] as f32]).collect();
        Tensor::new(vec![self.len(), 2], data).expect("grid shape")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldRow {
    pub x: [f64; 2],
    /// Steepest-descent direction `−∂L/∂x`; NaN when flagged.
    pub g: [f64; 2],
    pub finite: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    pub rows: Vec<FieldRow>,
    pub y: u8,
    pub gamma: f64,
    pub beta: f64,
}

impl GradientField {
    pub const CSV_HEADER: &'static str = "x1,x2,g1,g2,y,gamma,beta";

    pub fn flagged(&self) -> usize {
        self.rows.iter().filter(|r| !r.finite).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("# deterministic encoding z = mu; g = -dL/dx\n");
        out.push_str(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                sig9(r.x[0]),
                sig9(r.x[1]),
                sig9(r.g[0]),
                sig9(r.g[1]),
                self.y,
                sig9(self.gamma),
                sig9(self.beta)
            );
        }
        out
    }
}

/// `−∂L/∂x` per point of `x` (rows of 2-D inputs), `z = μ(x)`.
pub fn input_gradients(model: &VabcModel, x: &Tensor, y: u8, gamma: f32, beta: f32) -> Result<Tensor> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let labels = Tensor::full(&[x.rows()], f32::from(y));
    let obj = model.objective(&mut g, &bound, x, &labels, Latent::Mean, gamma, beta, Reduction::Sum, true)?;
    let mut grads = g.backward(obj.root)?;
    let gx = grads
        .take(obj.input)
        .ok_or_else(|| Error::Contract("input gradient missing".into()))?;
    Ok(gx.map(|v| -v))
}

/// Negated loss gradient over a grid of 2-D inputs. Points where the
/// gradient is not finite are flagged and emitted as NaN.
pub fn gradient_field(model: &VabcModel, grid: &GridSpec, y: u8, gamma: f64, beta: f64) -> Result<GradientField> {
    grid.validate()?;
    if model.input_dim() != 2 {
        return Err(Error::Contract(format!(
            "gradient field needs a 2-D input model, got {}",
            model.input_dim()
        )));
    }
    if y > 1 {
        return Err(Error::Contract(format!("y must be 0 or 1, got {y}")));
    }
    let x = grid.as_tensor();
    let points = grid.points();
    let (gamma32, beta32) = (gamma as f32, beta as f32);
    let rows = match input_gradients(model, &x, y, gamma32, beta32) {
        Ok(gx) => points
            .iter()
            .enumerate()
            .map(|(i, p)| field_row(*p, gx.row(i)))
            .collect(),
        Err(e) if e.is_numeric() => {
            // Rows do not interact, so retry one at a time to isolate the bad ones.
            points
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let xi = Tensor::new(vec![1, 2], x.row(i).to_vec()).expect("row shape");
                    match input_gradients(model, &xi, y, gamma32, beta32) {
                        Ok(gx) => Ok(field_row(*p, gx.row(0))),
                        Err(e) if e.is_numeric() => Ok(FieldRow {
                            x: *p,
                            g: [f64::NAN; 2],
                            finite: false,
                        }),
                        Err(e) => Err(e),
                    }
                })
                .collect::<Result<_>>()?
        }
        Err(e) => return Err(e),
    };
    Ok(GradientField { rows, y, gamma, beta })
}

fn field_row(x: [f64; 2], g: &[f32]) -> FieldRow {
    let finite = g.iter().all(|v| v.is_finite());
    FieldRow {
        x,
        g: if finite { [g[0] as f64, g[1] as f64] } else { [f64::NAN; 2] },
        finite,
    }
}

/// Decoded outputs for each point of a latent grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifold {
    pub grid: GridSpec,
    /// `(cells, input_dim)`, cell order as [`GridSpec::points`].
    pub cells: Tensor,
}

impl Manifold {
    /// Grayscale mosaic of 28×28 cells. Row 0 of the mosaic is the largest
    /// `z2`, so the picture reads like a plot.
    pub fn mosaic(&self) -> Result<(usize, usize, Vec<u8>)> {
        let side = MNIST_SIDE;
        if self.cells.cols() != side * side {
            return Err(Error::Contract(format!(
                "mosaic needs {}-pixel cells, got {}",
                side * side,
                self.cells.cols()
            )));
        }
        let [rx, ry] = self.grid.resolution;
        let (w, h) = (rx * side, ry * side);
        let mut img = vec![0u8; w * h];
        for j in 0..ry {
            for i in 0..rx {
                let cell = self.cells.row(j * rx + i);
                let top = (ry - 1 - j) * side;
                for py in 0..side {
                    for px in 0..side {
                        let v = cell[py * side + px].clamp(0.0, 1.0);
                        img[(top + py) * w + i * side + px] = (v * 255.0).round() as u8;
                    }
                }
            }
        }
        Ok((w, h, img))
    }

    /// 8-bit grayscale PNG of [`Manifold::mosaic`], with no time chunk.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let (w, h, img) = self.mosaic()?;
        encode_gray_png(w, h, &img)
    }

    /// One line per cell: `z1,z2,` then the decoded values.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# deterministic decoding of grid codes\nz1,z2,values...\n");
        for (p, i) in self.grid.points().iter().zip(0..) {
            let _ = write!(out, "{},{}", sig9(p[0]), sig9(p[1]));
            for &v in self.cells.row(i) {
                out.push(',');
                out.push_str(&sig9(v as f64));
            }
            out.push('\n');
        }
        out
    }
}

pub fn encode_gray_png(w: usize, h: usize, img: &[u8]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(img)?;
    }
    Ok(buf)
}

pub fn manifold_grid(model: &VabcModel, grid: &GridSpec) -> Result<Manifold> {
    grid.validate()?;
    if model.latent_dim() != 2 {
        return Err(Error::Contract(format!(
            "manifold grid needs a 2-D latent space, got {}",
            model.latent_dim()
        )));
    }
    Ok(Manifold {
        grid: *grid,
        cells: model.decode(&grid.as_tensor())?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionPanel {
    pub originals: Tensor,
    pub reconstructions: Tensor,
    pub threshold: f32,
}

impl ReconstructionPanel {
    /// Reconstructions thresholded to {0, 1}: strictly above → 1.
    pub fn binarized(&self) -> Tensor {
        let t = self.threshold;
        self.reconstructions.map(|v| if v > t { 1.0 } else { 0.0 })
    }

    /// Raw originals and reconstructions, one example per line pair.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# deterministic reconstruction decode(mu(x))\nindex,kind,values...\n");
        for i in 0..self.originals.rows() {
            for (kind, t) in [("original", &self.originals), ("reconstruction", &self.reconstructions)] {
                let _ = write!(out, "{i},{kind}");
                for &v in t.row(i) {
                    out.push(',');
                    out.push_str(&sig9(v as f64));
                }
                out.push('\n');
            }
        }
        out
    }

    /// Two-row strip of 28×28 images: originals on top, binarized
    /// reconstructions below.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let side = MNIST_SIDE;
        if self.originals.cols() != side * side {
            return Err(Error::Contract("panel images must be 28×28".into()));
        }
        let n = self.originals.rows();
        let w = n * side;
        let mut img = vec![0u8; w * 2 * side];
        let bin = self.binarized();
        for (r, t) in [&self.originals, &bin].into_iter().enumerate() {
            for i in 0..n {
                for py in 0..side {
                    for px in 0..side {
                        let v = t.row(i)[py * side + px].clamp(0.0, 1.0);
                        img[(r * side + py) * w + i * side + px] = (v * 255.0).round() as u8;
                    }
                }
            }
        }
        encode_gray_png(w, 2 * side, &img)
    }
}

pub const DEFAULT_BINARIZE_THRESHOLD: f32 = 0.5;

pub fn reconstruction_panel(model: &VabcModel, examples: &Tensor, threshold: f32) -> Result<ReconstructionPanel> {
    if examples.rows() == 0 {
        return Err(Error::Contract("reconstruction panel needs at least one example".into()));
    }
    Ok(ReconstructionPanel {
        originals: examples.clone(),
        reconstructions: model.reconstruct(examples)?,
        threshold,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EllipseRow {
    pub mu: [f64; 2],
    pub two_sigma: [f64; 2],
    pub concept: &'static str,
    pub digit: Option<u8>,
}

pub const ELLIPSE_CSV_HEADER: &str = "mu1,mu2,two_sigma1,two_sigma2,concept,digit";

pub fn latent_ellipses(model: &VabcModel, examples: &DataFold) -> Result<Vec<EllipseRow>> {
    if model.latent_dim() != 2 {
        return Err(Error::Contract(format!(
            "latent ellipses need a 2-D latent space, got {}",
            model.latent_dim()
        )));
    }
    if examples.is_empty() {
        return Ok(Vec::new());
    }
    let idx: Vec<usize> = (0..examples.len()).collect();
    let (mu, sigma) = model.encode(&examples.batch_features(&idx))?;
    Ok((0..examples.len())
        .map(|i| {
            let m = mu.row(i);
            let s = sigma.row(i);
            EllipseRow {
                mu: [m[0] as f64, m[1] as f64],
                two_sigma: [2.0 * s[0] as f64, 2.0 * s[1] as f64],
                concept: examples.concepts()[i].as_str(),
                digit: examples.digits().map(|d| d[i]),
            }
        })
        .collect())
}

pub fn ellipses_to_csv(rows: &[EllipseRow]) -> String {
    let mut out = String::from("# deterministic encoding; ellipse = mu +/- 2 sigma\n");
    out.push_str(ELLIPSE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let digit = r.digit.map(|d| d.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            sig9(r.mu[0]),
            sig9(r.mu[1]),
            sig9(r.two_sigma[0]),
            sig9(r.two_sigma[1]),
            r.concept,
            digit
        );
    }
    out
}
