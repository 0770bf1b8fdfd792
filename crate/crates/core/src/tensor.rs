//! Dense video tensors in `(t, h, w, c)` row-major order.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions of a video: frames × height × width × channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        Shape {
            frames,
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.frames * self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of values in one frame.
    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn with_frames(self, frames: usize) -> Self {
        Shape { frames, ..self }
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, self.channels]
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.as_array().contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "all dimensions must be at least 1, got {self}"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({},{},{},{})",
            self.frames, self.height, self.width, self.channels
        )
    }
}

/// A real-valued video `x ∈ R^{(T+1)×H×W×C}`.
///
/// Values are nominally in `[0, 1]` but iterates are free to leave that
/// range; clamping happens only when exporting to 8-bit frames.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl VideoTensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::InvalidArgument(format!(
                "data length {} does not match shape {shape} ({} values)",
                data.len(),
                shape.len()
            )));
        }
        Ok(VideoTensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        assert!(!shape.is_empty(), "tensor dimensions must be at least 1");
        VideoTensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut out = Self::zeros(shape);
        let mut i = 0;
        for t in 0..shape.frames {
            for h in 0..shape.height {
                for w in 0..shape.width {
                    for c in 0..shape.channels {
                        out.data[i] = f(t, h, w, c);
                        i += 1;
                    }
                }
            }
        }
        out
    }

    /// i.i.d. standard normal entries.
    pub fn randn(shape: Shape, rng: &mut impl Rng) -> Self {
        let mut out = Self::zeros(shape);
        for v in &mut out.data {
            *v = rng.sample(StandardNormal);
        }
        out
    }

    /// i.i.d. uniform entries in `[lo, hi)`.
    pub fn rand_uniform(shape: Shape, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let mut out = Self::zeros(shape);
        for v in &mut out.data {
            *v = rng.random_range(lo..hi);
        }
        out
    }

    pub fn shape(&self) -> Shape {
        self.shape
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, t: usize, h: usize, w: usize, c: usize) -> usize {
        let s = &self.shape;
        ((t * s.height + h) * s.width + w) * s.channels + c
    }

    #[inline]
    pub fn get(&self, t: usize, h: usize, w: usize, c: usize) -> f64 {
        self.data[self.index(t, h, w, c)]
    }

    #[inline]
    pub fn set(&mut self, t: usize, h: usize, w: usize, c: usize, value: f64) {
        let i = self.index(t, h, w, c);
        self.data[i] = value;
    }

    pub fn frame_data(&self, t: usize) -> &[f64] {
        let n = self.shape.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_data_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.shape.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    /// Copy of frame `t` as a single-frame tensor.
    pub fn frame(&self, t: usize) -> VideoTensor {
        VideoTensor {
            shape: self.shape.with_frames(1),
            data: self.frame_data(t).to_vec(),
        }
    }

    /// Stacks single-frame tensors along time.
    pub fn stack(frames: &[VideoTensor]) -> Result<VideoTensor> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack zero frames".into()))?;
        let frame_shape = first.shape;
        let mut data = Vec::with_capacity(frame_shape.len() * frames.len());
        for f in frames {
            f.expect_shape(frame_shape)?;
            data.extend_from_slice(&f.data);
        }
        VideoTensor::new(
            Shape {
                frames: frames.iter().map(|f| f.shape.frames).sum(),
                ..frame_shape
            },
            data,
        )
    }

    pub fn expect_shape(&self, expected: Shape) -> Result<()> {
        if self.shape != expected {
            return Err(Error::ShapeMismatch {
                expected,
                actual: self.shape,
            });
        }
        Ok(())
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self.first_non_finite() {
            Some(i) => Err(Error::NonFinite(i)),
            None => Ok(()),
        }
    }

    pub fn dot(&self, other: &VideoTensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &VideoTensor) {
        debug_assert_eq!(self.shape, x.shape);
        for (a, b) in self.data.iter_mut().zip(&x.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }

    pub fn scaled(&self, alpha: f64) -> VideoTensor {
        self.map(|v| v * alpha)
    }

    pub fn add(&self, other: &VideoTensor) -> VideoTensor {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &VideoTensor) -> VideoTensor {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> VideoTensor {
        VideoTensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &VideoTensor, f: impl Fn(f64, f64) -> f64) -> VideoTensor {
        debug_assert_eq!(self.shape, other.shape);
        VideoTensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &VideoTensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn clamped(&self, lo: f64, hi: f64) -> VideoTensor {
        self.map(|v| v.clamp(lo, hi))
    }
}
