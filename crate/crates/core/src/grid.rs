//! Dense grid types shared by every stage.
//!
//! All grids are stored row-major with interleaved channels, i.e. element
//! `(y, x, c)` lives at `(y * width + x) * channels + c`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// A `height × width × channels` float array. Used for diffusion latents and
/// for the hidden feature maps of the toy networks.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl LatentGrid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(shape_err(
                "LatentGrid::from_vec",
                height * width * channels,
                data.len(),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Standard normal samples drawn in storage order.
    pub fn randn<R: Rng + ?Sized>(
        height: usize,
        width: usize,
        channels: usize,
        rng: &mut R,
    ) -> Self {
        let data = (0..height * width * channels)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_same_shape(&self, other: &LatentGrid, context: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_err(context, self.shape(), other.shape()));
        }
        Ok(())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two equally shaped grids.
    pub fn zip_with(
        &self,
        other: &LatentGrid,
        context: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        self.ensure_same_shape(other, context)?;
        Ok(Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &LatentGrid) -> Result<Self> {
        self.zip_with(other, "LatentGrid::add", |a, b| a + b)
    }

    pub fn sub(&self, other: &LatentGrid) -> Result<Self> {
        self.zip_with(other, "LatentGrid::sub", |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &LatentGrid) -> Result<f64> {
        self.ensure_same_shape(other, "LatentGrid::max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// Declared interval of image values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValueRange {
    /// `[0, 1]`, the storage range.
    Unit,
    /// `[-1, 1]`, the model-side range.
    Signed,
}

impl ValueRange {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            ValueRange::Unit => (0.0, 1.0),
            ValueRange::Signed => (-1.0, 1.0),
        }
    }
}

/// An RGB image, `height × width × 3`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    data: Vec<f64>,
    range: ValueRange,
}

impl ImageGrid {
    pub const CHANNELS: usize = 3;

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self {
            height,
            width,
            data,
            range: ValueRange::Unit,
        }
    }

    /// Builds an image after checking its length and value range.
    pub fn from_vec(height: usize, width: usize, data: Vec<f64>, range: ValueRange) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(shape_err("ImageGrid::from_vec", height * width * 3, data.len()));
        }
        let (lo, hi) = range.bounds();
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < lo || **v > hi) {
            return Err(Error::InvalidArgument(format!(
                "pixel value {bad} outside declared range [{lo}, {hi}]"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
            range,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Writes a pixel, clamping into the declared range.
    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let (lo, hi) = self.range.bounds();
        let i = (y * self.width + x) * 3;
        for c in 0..3 {
            self.data[i + c] = rgb[c].clamp(lo, hi);
        }
    }

    /// Same picture in another value range (affine remap).
    pub fn to_range(&self, range: ValueRange) -> ImageGrid {
        let data = match (self.range, range) {
            (a, b) if a == b => self.data.clone(),
            (ValueRange::Unit, ValueRange::Signed) => {
                self.data.iter().map(|v| v * 2.0 - 1.0).collect()
            }
            (ValueRange::Signed, ValueRange::Unit) => {
                self.data.iter().map(|v| (v + 1.0) * 0.5).collect()
            }
            _ => unreachable!(),
        };
        ImageGrid {
            height: self.height,
            width: self.width,
            data,
            range,
        }
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> ImageGrid {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set_pixel(y, x, self.pixel(y, self.width - 1 - x));
            }
        }
        out
    }

    pub fn ensure_same_dims(&self, other: (usize, usize), context: &'static str) -> Result<()> {
        if self.dims() != other {
            return Err(shape_err(context, self.dims(), other));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &ImageGrid) -> Result<f64> {
        self.ensure_same_dims(other.dims(), "ImageGrid::max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Binary,
    Blurred,
    LatentDownsampled,
}

/// A scalar `height × width` field in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<f64>,
    kind: MaskKind,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<f64>, kind: MaskKind) -> Result<Self> {
        if data.len() != height * width {
            return Err(shape_err("Mask::new", height * width, data.len()));
        }
        if let Some(bad) = data
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::InvalidArgument(format!("mask value {bad} outside [0, 1]")));
        }
        if kind == MaskKind::Binary && data.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument(
                "binary mask must contain only 0 and 1".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
            kind,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        kind: MaskKind,
        f: impl Fn(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data, kind)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Number of cells with a strictly positive value.
    pub fn support(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.0).count()
    }

    pub fn flip_horizontal(&self) -> Mask {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                data.push(self.get(y, self.width - 1 - x));
            }
        }
        Mask {
            data,
            ..self.clone()
        }
    }

    /// Intersection over union of the `> 0` supports.
    pub fn iou(&self, other: &Mask) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(shape_err("Mask::iou", self.dims(), other.dims()));
        }
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.data.iter().zip(&other.data) {
            let (a, b) = (*a > 0.0, *b > 0.0);
            inter += usize::from(a && b);
            union += usize::from(a || b);
        }
        Ok(if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        })
    }
}
