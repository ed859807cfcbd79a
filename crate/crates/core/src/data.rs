//! Synthetic factor-controlled images: a white square on a black canvas,
//! with position, size and rotation drawn from a grid of factor values.
//!
//! Pixels are binary (a pixel is lit when its centre lies strictly inside
//! the square), so rasterization is exact and reproducible.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::exec::Execution;
use crate::linalg::io::{load_tensors, save_tensors};
use crate::linalg::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    /// Horizontal centre, in pixels from the left edge.
    XPosition,
    /// Vertical centre, in pixels from the top edge.
    YPosition,
    /// Half the side length, in pixels.
    Scale,
    /// Rotation in degrees.
    Rotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub kind: FactorKind,
    pub lo: f64,
    pub hi: f64,
    pub cardinality: usize,
}

impl Factor {
    pub fn new(name: &str, kind: FactorKind, lo: f64, hi: f64, cardinality: usize) -> Self {
        Factor {
            name: name.to_string(),
            kind,
            lo,
            hi,
            cardinality,
        }
    }

    /// Evenly spaced values from `lo` to `hi`.
    pub fn values(&self) -> Vec<f64> {
        let steps = (self.cardinality - 1) as f64;
        (0..self.cardinality)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / steps)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub factors: Vec<Factor>,
}

impl FactorSpec {
    pub fn new(factors: Vec<Factor>) -> Result<Self> {
        for (i, f) in factors.iter().enumerate() {
            if f.cardinality < 2 {
                return Err(Error::Config {
                    field: format!("factors[{i}].cardinality"),
                    reason: format!("must be at least 2, got {}", f.cardinality),
                });
            }
            if !(f.lo.is_finite() && f.hi.is_finite()) || f.lo >= f.hi {
                return Err(Error::Config {
                    field: format!("factors[{i}]"),
                    reason: format!("needs finite lo < hi, got [{}, {}]", f.lo, f.hi),
                });
            }
            if factors[..i].iter().any(|g| g.kind == f.kind) {
                return Err(Error::Config {
                    field: format!("factors[{i}].kind"),
                    reason: format!("{:?} appears twice", f.kind),
                });
            }
        }
        Ok(FactorSpec { factors })
    }

    /// x ∈ 4..=11 (8 values), y ∈ 4..=11 (8), half-size ∈ 1..=4 (4): 256
    /// images for a 16×16 canvas.
    pub fn standard() -> Self {
        FactorSpec {
            factors: vec![
                Factor::new("x", FactorKind::XPosition, 4.0, 11.0, 8),
                Factor::new("y", FactorKind::YPosition, 4.0, 11.0, 8),
                Factor::new("scale", FactorKind::Scale, 1.0, 4.0, 4),
            ],
        }
    }

    /// Eight 4×4 squares on an 8×8 canvas (4 x positions × 2 y positions).
    pub fn memorization() -> Self {
        FactorSpec {
            factors: vec![
                Factor::new("x", FactorKind::XPosition, 2.0, 5.0, 4),
                Factor::new("y", FactorKind::YPosition, 2.0, 5.0, 2),
            ],
        }
    }

    pub fn combinations(&self) -> usize {
        self.factors.iter().map(|f| f.cardinality).product()
    }

    /// Factor values of combination `index`; the last factor varies fastest.
    pub fn combination(&self, mut index: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.factors.len()];
        for (slot, f) in out.iter_mut().zip(&self.factors).rev() {
            let i = index % f.cardinality;
            index /= f.cardinality;
            *slot = f.lo + (f.hi - f.lo) * i as f64 / (f.cardinality - 1) as f64;
        }
        out
    }

    pub fn index_of(&self, kind: FactorKind) -> Option<usize> {
        self.factors.iter().position(|f| f.kind == kind)
    }
}

#[derive(Debug, Clone, Copy)]
struct Square {
    cx: f64,
    cy: f64,
    half: f64,
    angle: f64,
}

impl Square {
    fn from_factors(spec: &FactorSpec, values: &[f64], width: usize, height: usize) -> Self {
        let mut sq = Square {
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            half: 2.0,
            angle: 0.0,
        };
        for (f, &v) in spec.factors.iter().zip(values) {
            match f.kind {
                FactorKind::XPosition => sq.cx = v,
                FactorKind::YPosition => sq.cy = v,
                FactorKind::Scale => sq.half = v,
                FactorKind::Rotation => sq.angle = v.to_radians(),
            }
        }
        sq
    }

    fn corners(&self) -> [(f64, f64); 4] {
        let (s, c) = self.angle.sin_cos();
        let h = self.half;
        [(-h, -h), (-h, h), (h, -h), (h, h)].map(|(u, v)| (self.cx + c * u - s * v, self.cy + s * u + c * v))
    }

    fn fits(&self, width: usize, height: usize) -> bool {
        self.half > 0.0
            && self
                .corners()
                .iter()
                .all(|&(x, y)| (0.0..=width as f64).contains(&x) && (0.0..=height as f64).contains(&y))
    }

    fn rasterize(&self, width: usize, height: usize, out: &mut [f64]) {
        let (s, c) = self.angle.sin_cos();
        for i in 0..height {
            for j in 0..width {
                let (dx, dy) = (j as f64 + 0.5 - self.cx, i as f64 + 0.5 - self.cy);
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                out[i * width + j] = if u.abs() < self.half && v.abs() < self.half { 1.0 } else { 0.0 };
            }
        }
    }
}

/// Images with their ground-truth factors.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Tensor,
    width: usize,
    height: usize,
}

impl Dataset {
    /// `images` is `n×(height·width)` with entries in `[0, 1]`; `labels` is
    /// `n×F` (use `F = 0` when there are none).
    pub fn new(images: Tensor, labels: Tensor, width: usize, height: usize) -> Result<Self> {
        let images = images.as_matrix();
        if images.cols() != width * height {
            return Err(dim_err(
                "Dataset::new",
                format!("{} pixels per image for a {width}x{height} canvas", images.cols()),
            ));
        }
        let labels = if labels.rank() < 2 {
            labels.reshape(&[images.rows(), 0])?
        } else {
            labels
        };
        if labels.rows() != images.rows() {
            return Err(dim_err(
                "Dataset::new",
                format!("{} images but {} label rows", images.rows(), labels.rows()),
            ));
        }
        if let Some(bad) = images.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Format(format!("pixel {bad} outside [0, 1]")));
        }
        Ok(Dataset {
            images,
            labels,
            width,
            height,
        })
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &Tensor {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.images.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixels(&self) -> usize {
        self.images.cols()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn image(&self, i: usize) -> &[f64] {
        self.images.row(i)
    }

    /// Writes images as an `n×height×width` record followed by the labels.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let images = self.images.reshape(&[self.len(), self.height, self.width])?;
        save_tensors(path, &[&images, &self.labels])
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut tensors = load_tensors(path)?.into_iter();
        let images = tensors
            .next()
            .ok_or_else(|| Error::Format("dataset file holds no image record".into()))?;
        if images.rank() != 3 {
            return Err(Error::Format(format!("image record has shape {:?}, expected n×h×w", images.shape())));
        }
        let (n, h, w) = (images.shape()[0], images.shape()[1], images.shape()[2]);
        let labels = tensors.next().unwrap_or_else(|| Tensor::zeros(&[n, 0]));
        Dataset::new(images.reshape(&[n, h * w])?, labels, w, h)
    }
}

/// Rasterizes every factor combination.
pub fn generate(spec: &FactorSpec, width: usize, height: usize, exec: Execution) -> Result<Dataset> {
    let n = spec.combinations();
    let p = width * height;
    for idx in 0..n {
        let values = spec.combination(idx);
        if !Square::from_factors(spec, &values, width, height).fits(width, height) {
            return Err(Error::Config {
                field: "factors".into(),
                reason: format!("combination {values:?} does not fit a {width}x{height} canvas"),
            });
        }
    }
    let mut pixels = vec![0.0; n * p];
    exec.for_each_chunk(&mut pixels, p, |idx, out| {
        let values = spec.combination(idx);
        Square::from_factors(spec, &values, width, height).rasterize(width, height, out);
    });
    let labels: Vec<f64> = (0..n).flat_map(|i| spec.combination(i)).collect();
    Dataset::new(
        Tensor::from_raw(vec![n, p], pixels),
        Tensor::from_raw(vec![n, spec.factors.len()], labels),
        width,
        height,
    )
}

/// Binary PGM (`P5`, maxval 255) bytes for `[0, 1]` pixel values.
pub fn pgm_bytes(width: usize, height: usize, pixels: &[f64]) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(dim_err("pgm", format!("{} pixels for {width}x{height}", pixels.len())));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn write_pgm(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[f64]) -> Result<()> {
    let bytes = pgm_bytes(width, height, pixels)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_factor_three_images() {
        let spec = FactorSpec::new(vec![Factor::new("x", FactorKind::XPosition, 3.0, 5.0, 3)]).unwrap();
        let ds = generate(&spec, 8, 8, Execution::Sequential).unwrap();
        assert_eq!(ds.len(), 3);
        for i in 0..3 {
            for j in i + 1..3 {
                assert_ne!(ds.image(i), ds.image(j));
            }
        }
    }

    #[test]
    fn standard_spec_is_256_by_256_and_injective() {
        let ds = generate(&FactorSpec::standard(), 16, 16, Execution::Parallel).unwrap();
        assert_eq!((ds.len(), ds.pixels()), (256, 256));
        for i in 0..ds.len() {
            for j in i + 1..ds.len() {
                assert_ne!(ds.image(i), ds.image(j), "images {i} and {j} coincide");
            }
        }
        assert!(ds.images().data().iter().all(|&v| v == 0.0 || v == 1.0));
        let spec = FactorSpec::standard();
        for (k, f) in spec.factors.iter().enumerate() {
            for i in 0..ds.len() {
                let v = ds.labels().get(i, k);
                assert!(v >= f.lo && v <= f.hi);
            }
        }
    }

    #[test]
    fn square_area_matches_scale() {
        let ds = generate(&FactorSpec::standard(), 16, 16, Execution::Sequential).unwrap();
        for i in 0..ds.len() {
            let half = ds.labels().get(i, 2);
            let lit: f64 = ds.image(i).iter().sum();
            assert_eq!(lit, (2.0 * half).powi(2));
        }
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let spec = FactorSpec::standard();
        let a = generate(&spec, 16, 16, Execution::Sequential).unwrap();
        let b = generate(&spec, 16, 16, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_shapes_that_leave_the_canvas() {
        let spec = FactorSpec::new(vec![Factor::new("x", FactorKind::XPosition, 0.0, 4.0, 3)]).unwrap();
        assert!(matches!(generate(&spec, 8, 8, Execution::Sequential), Err(Error::Config { .. })));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(FactorSpec::new(vec![Factor::new("x", FactorKind::XPosition, 0.0, 4.0, 1)]).is_err());
        assert!(FactorSpec::new(vec![
            Factor::new("x", FactorKind::XPosition, 3.0, 4.0, 2),
            Factor::new("x2", FactorKind::XPosition, 3.0, 4.0, 2),
        ])
        .is_err());
    }

    #[test]
    fn rotation_factor_renders() {
        let spec = FactorSpec::new(vec![Factor::new("r", FactorKind::Rotation, 0.0, 45.0, 2)]).unwrap();
        let ds = generate(&spec, 16, 16, Execution::Sequential).unwrap();
        assert_ne!(ds.image(0), ds.image(1));
    }

    #[test]
    fn save_load_round_trip() {
        let ds = generate(&FactorSpec::memorization(), 8, 8, Execution::Sequential).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.dtns");
        ds.save(&path).unwrap();
        let back = Dataset::load(&path).unwrap();
        assert_eq!(back, ds);
        assert_eq!(std::fs::read(&path).unwrap()[..5], *b"DTNS1");
    }

    #[test]
    fn pgm_header_and_rounding() {
        let b = pgm_bytes(2, 1, &[0.0, 0.5]).unwrap();
        assert_eq!(&b[..11], b"P5\n2 1\n255\n");
        assert_eq!(&b[11..], &[0, 128]);
        assert!(pgm_bytes(2, 2, &[0.0]).is_err());
    }
}
