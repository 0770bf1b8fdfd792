//! Weighted 3-D finite differences and the TV3 functional.
//!
//! `D_λ = [λ_h D_h, λ_v D_v, λ_t D_t]` uses forward differences with a zero
//! difference on the last index of each axis. `D_h` differentiates along the
//! row (height) index, `D_v` along the column (width) index and `D_t` along
//! time. Channels are never coupled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, VideoTensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TVWeights {
    pub lambda_h: f64,
    pub lambda_v: f64,
    pub lambda_t: f64,
}

impl TVWeights {
    pub const ZERO: TVWeights = TVWeights::new(0.0, 0.0, 0.0);

    pub const fn new(lambda_h: f64, lambda_v: f64, lambda_t: f64) -> Self {
        TVWeights {
            lambda_h,
            lambda_v,
            lambda_t,
        }
    }

    pub const fn temporal(lambda_t: f64) -> Self {
        TVWeights::new(0.0, 0.0, lambda_t)
    }

    pub fn is_zero(&self) -> bool {
        self.lambda_h == 0.0 && self.lambda_v == 0.0 && self.lambda_t == 0.0
    }

    pub fn is_pure_temporal(&self) -> bool {
        self.lambda_h == 0.0 && self.lambda_v == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_h", self.lambda_h),
            ("lambda_v", self.lambda_v),
            ("lambda_t", self.lambda_t),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Upper bound on `‖D_λ‖²`.
    pub fn norm_sq_bound(&self) -> f64 {
        4.0 * (self.lambda_h.powi(2) + self.lambda_v.powi(2) + self.lambda_t.powi(2))
    }
}

/// Three difference components per voxel, on the grid of the source tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct GradField {
    pub shape: Shape,
    pub h: Vec<f64>,
    pub v: Vec<f64>,
    pub t: Vec<f64>,
}

impl GradField {
    pub fn zeros(shape: Shape) -> Self {
        let n = shape.len();
        GradField {
            shape,
            h: vec![0.0; n],
            v: vec![0.0; n],
            t: vec![0.0; n],
        }
    }

    pub fn dot(&self, other: &GradField) -> f64 {
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        d(&self.h, &other.h) + d(&self.v, &other.v) + d(&self.t, &other.t)
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &GradField) {
        for (a, b) in [
            (&mut self.h, &other.h),
            (&mut self.v, &other.v),
            (&mut self.t, &other.t),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += alpha * y;
            }
        }
    }

    /// Euclidean norm of the 3-vector at flat index `i`.
    #[inline]
    pub fn magnitude(&self, i: usize) -> f64 {
        (self.h[i] * self.h[i] + self.v[i] * self.v[i] + self.t[i] * self.t[i]).sqrt()
    }

    /// Projects every voxel's 3-vector onto the unit ℓ2 ball.
    pub fn project_unit_ball(&mut self) {
        for i in 0..self.h.len() {
            let m = self.magnitude(i);
            if m > 1.0 {
                self.h[i] /= m;
                self.v[i] /= m;
                self.t[i] /= m;
            }
        }
    }

    /// Per-voxel group soft-threshold: shrinks each 3-vector's norm by
    /// `threshold`, mapping vectors with smaller norm to zero.
    pub fn group_shrink(&mut self, threshold: f64) {
        for i in 0..self.h.len() {
            let m = self.magnitude(i);
            let scale = if m > threshold { 1.0 - threshold / m } else { 0.0 };
            self.h[i] *= scale;
            self.v[i] *= scale;
            self.t[i] *= scale;
        }
    }

    pub fn max_magnitude(&self) -> f64 {
        (0..self.h.len()).map(|i| self.magnitude(i)).fold(0.0, f64::max)
    }
}

fn strides(s: Shape) -> (usize, usize, usize) {
    let w = s.channels;
    let h = s.width * w;
    let t = s.height * h;
    (t, h, w)
}

/// `D_λ x`
pub fn grad3(x: &VideoTensor, w: &TVWeights) -> GradField {
    let s = x.shape();
    let (st, sh, sw) = strides(s);
    let d = x.data();
    let mut g = GradField::zeros(s);
    let mut i = 0;
    for t in 0..s.frames {
        for h in 0..s.height {
            for col in 0..s.width {
                for _ in 0..s.channels {
                    if h + 1 < s.height {
                        g.h[i] = w.lambda_h * (d[i + sh] - d[i]);
                    }
                    if col + 1 < s.width {
                        g.v[i] = w.lambda_v * (d[i + sw] - d[i]);
                    }
                    if t + 1 < s.frames {
                        g.t[i] = w.lambda_t * (d[i + st] - d[i]);
                    }
                    i += 1;
                }
            }
        }
    }
    g
}

/// `D_λᵀ p`, the exact adjoint of [`grad3`].
pub fn div3(p: &GradField, w: &TVWeights) -> VideoTensor {
    let s = p.shape;
    let (st, sh, sw) = strides(s);
    let mut out = VideoTensor::zeros(s);
    let o = out.data_mut();
    let mut i = 0;
    for t in 0..s.frames {
        for h in 0..s.height {
            for col in 0..s.width {
                for _ in 0..s.channels {
                    let mut acc = 0.0;
                    if h + 1 < s.height {
                        acc -= w.lambda_h * p.h[i];
                    }
                    if h > 0 {
                        acc += w.lambda_h * p.h[i - sh];
                    }
                    if col + 1 < s.width {
                        acc -= w.lambda_v * p.v[i];
                    }
                    if col > 0 {
                        acc += w.lambda_v * p.v[i - sw];
                    }
                    if t + 1 < s.frames {
                        acc -= w.lambda_t * p.t[i];
                    }
                    if t > 0 {
                        acc += w.lambda_t * p.t[i - st];
                    }
                    o[i] = acc;
                    i += 1;
                }
            }
        }
    }
    out
}

/// `TV3_λ(x) = Σ_{t,c,i,j} ‖(D_λ x)_{t,c,i,j}‖₂`
pub fn tv3(x: &VideoTensor, w: &TVWeights) -> f64 {
    let g = grad3(x, w);
    (0..g.h.len()).map(|i| g.magnitude(i)).sum()
}

/// Power-iteration estimate of `‖D_λ‖` on tensors of the given shape.
pub fn grad3_norm(shape: Shape, w: &TVWeights, iters: usize, seed: u64) -> f64 {
    if w.is_zero() {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = VideoTensor::randn(shape, &mut rng);
    let mut sigma_sq = 0.0;
    for _ in 0..iters {
        let n = x.norm();
        if n == 0.0 {
            return 0.0;
        }
        x.scale(1.0 / n);
        x = div3(&grad3(&x, w), w);
        sigma_sq = x.norm();
    }
    sigma_sq.sqrt()
}
