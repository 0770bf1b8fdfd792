//! Separable Gaussian filtering with replicated borders.

use crate::tensor::VideoTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Time,
    Height,
    Width,
}

/// Normalised Gaussian taps truncated at `⌈3σ⌉`; a single unit tap for `σ ≈ 0`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if !(sigma > 1e-12) {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Correlates `x` with `kernel` (odd length, centred) along `axis`.
pub fn blur_axis(x: &VideoTensor, axis: Axis, kernel: &[f64]) -> VideoTensor {
    if kernel.len() <= 1 {
        return x.clone();
    }
    let s = x.shape();
    let (len, stride) = match axis {
        Axis::Time => (s.frames, s.frame_len()),
        Axis::Height => (s.height, s.width * s.channels),
        Axis::Width => (s.width, s.channels),
    };
    let radius = (kernel.len() / 2) as isize;
    let mut out = VideoTensor::zeros(s);
    let src = x.data();
    let dst = out.data_mut();
    let block = len * stride;
    for base in (0..src.len()).step_by(block) {
        for inner in 0..stride {
            for i in 0..len {
                let mut acc = 0.0;
                for (j, kv) in kernel.iter().enumerate() {
                    let p = (i as isize + j as isize - radius).clamp(0, len as isize - 1) as usize;
                    acc += kv * src[base + p * stride + inner];
                }
                dst[base + i * stride + inner] = acc;
            }
        }
    }
    out
}

/// Spatial Gaussian blur applied to each frame.
pub fn blur_spatial(x: &VideoTensor, sigma: f64) -> VideoTensor {
    let k = gaussian_kernel(sigma);
    blur_axis(&blur_axis(x, Axis::Height, &k), Axis::Width, &k)
}
