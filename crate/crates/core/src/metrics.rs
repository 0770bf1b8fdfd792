//! Reference-based quality metrics averaged over frames.
//!
//! Values are compared on a unit dynamic range.

use std::fmt::{self, Write as _};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::VideoTensor;

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn check_pair(x: &VideoTensor, reference: &VideoTensor) -> Result<()> {
    if x.shape() != reference.shape() {
        return Err(Error::InvalidArgument(format!(
            "metric inputs differ in shape: {} vs reference {}",
            x.shape(),
            reference.shape()
        )));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `10·log10(1/MSE)` for one pair of frames, capped at [`PSNR_CAP`].
pub fn psnr_frame(x: &[f64], reference: &[f64]) -> f64 {
    let mse = x
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64;
    if mse == 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

/// Per-frame PSNR and their mean.
pub fn psnr(x: &VideoTensor, reference: &VideoTensor) -> Result<(Vec<f64>, f64)> {
    check_pair(x, reference)?;
    let per: Vec<f64> = (0..x.shape().frames)
        .map(|t| psnr_frame(x.frame_data(t), reference.frame_data(t)))
        .collect();
    let m = mean(&per);
    Ok((per, m))
}

fn ssim_kernel() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of an `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..n).map(|q| k[q] * plane[i * w + j + q]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..n).map(|q| k[q] * rows[(i + q) * ow + j]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, k: &[f64]) -> f64 {
    let c1 = (K1 * 1.0).powi(2);
    let c2 = (K2 * 1.0).powi(2);
    let prod = |f: fn(f64, f64) -> f64| a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, k);
    let mu_b = filter_valid(b, h, w, k);
    let aa = filter_valid(&prod(|x, _| x * x), h, w, k);
    let bb = filter_valid(&prod(|_, y| y * y), h, w, k);
    let ab = filter_valid(&prod(|x, y| x * y), h, w, k);
    let vals: Vec<f64> = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .collect();
    mean(&vals)
}

fn channel_plane(frame: &[f64], channels: usize, c: usize) -> Vec<f64> {
    frame.iter().skip(c).step_by(channels).copied().collect()
}

/// Single-scale SSIM of one frame, averaged over channels.
pub fn ssim_frame(x: &VideoTensor, reference: &VideoTensor, t: usize) -> f64 {
    let s = x.shape();
    let k = ssim_kernel();
    let (fx, fr) = (x.frame_data(t), reference.frame_data(t));
    let per: Vec<f64> = (0..s.channels)
        .map(|c| {
            let a = channel_plane(fx, s.channels, c);
            let b = channel_plane(fr, s.channels, c);
            if a == b {
                1.0
            } else {
                ssim_plane(&a, &b, s.height, s.width, &k)
            }
        })
        .collect();
    mean(&per)
}

/// Per-frame SSIM and their mean.
pub fn ssim(x: &VideoTensor, reference: &VideoTensor) -> Result<(Vec<f64>, f64)> {
    check_pair(x, reference)?;
    let s = x.shape();
    if s.height < SSIM_WINDOW || s.width < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            s.height, s.width
        )));
    }
    let per: Vec<f64> = (0..s.frames)
        .into_par_iter()
        .map(|t| ssim_frame(x, reference, t))
        .collect();
    let m = mean(&per);
    Ok((per, m))
}

/// Video-level PSNR and SSIM with their per-frame values.
///
/// Text layout: a `frame psnr ssim` header, one row per frame, then a
/// `mean` row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub psnr_frames: Vec<f64>,
    pub ssim_frames: Vec<f64>,
}

impl MetricReport {
    pub fn compute(x: &VideoTensor, reference: &VideoTensor) -> Result<Self> {
        let (psnr_frames, psnr) = psnr(x, reference)?;
        let (ssim_frames, ssim) = ssim(x, reference)?;
        Ok(MetricReport {
            psnr,
            ssim,
            psnr_frames,
            ssim_frames,
        })
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: &str| Error::InvalidArgument(format!("malformed metric row: {line}"));
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        match lines.next() {
            Some("frame psnr ssim") => {}
            other => return Err(bad(other.unwrap_or(""))),
        }
        let mut r = MetricReport {
            psnr: f64::NAN,
            ssim: f64::NAN,
            psnr_frames: Vec::new(),
            ssim_frames: Vec::new(),
        };
        let mut seen_mean = false;
        for line in lines {
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 3 || seen_mean {
                return Err(bad(line));
            }
            let p: f64 = cols[1].parse().map_err(|_| bad(line))?;
            let s: f64 = cols[2].parse().map_err(|_| bad(line))?;
            if cols[0] == "mean" {
                r.psnr = p;
                r.ssim = s;
                seen_mean = true;
            } else {
                let idx: usize = cols[0].parse().map_err(|_| bad(line))?;
                if idx != r.psnr_frames.len() {
                    return Err(bad(line));
                }
                r.psnr_frames.push(p);
                r.ssim_frames.push(s);
            }
        }
        if !seen_mean {
            return Err(Error::InvalidArgument("metric table has no mean row".into()));
        }
        Ok(r)
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::from("frame psnr ssim\n");
        for (i, (p, q)) in self.psnr_frames.iter().zip(&self.ssim_frames).enumerate() {
            writeln!(s, "{i} {p:?} {q:?}")?;
        }
        writeln!(s, "mean {:?} {:?}", self.psnr, self.ssim)?;
        f.write_str(&s)
    }
}
