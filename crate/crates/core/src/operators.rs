//! Linear degradation operators with exact adjoints.
//!
//! Every operator is bound to an input shape at construction, so `apply` and
//! `adjoint` can check their arguments and output shapes are known up front.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, VideoTensor};

/// The operator algebra. `Compose` applies right-to-left, so
/// `Compose([SpatialPool(4), TemporalPool(4)])` is `SpatialSR ∘ TemporalSR`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpKind {
    Identity,
    TemporalPool(usize),
    SpatialPool(usize),
    TemporalCircBlur(usize),
    Compose(Vec<OpKind>),
}

impl OpKind {
    /// Builds a composition from stages listed in the order they act on `x`.
    pub fn chain(stages: impl IntoIterator<Item = OpKind>) -> OpKind {
        let mut v: Vec<OpKind> = stages.into_iter().collect();
        v.reverse();
        OpKind::Compose(v)
    }

    /// Atomic stages in application order (first applied first).
    pub fn stages(&self) -> Vec<OpKind> {
        match self {
            OpKind::Compose(parts) => parts.iter().rev().flat_map(|p| p.stages()).collect(),
            atom => vec![atom.clone()],
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpKind::Identity => write!(f, "identity"),
            OpKind::TemporalPool(k) => write!(f, "temporal-pool({k})"),
            OpKind::SpatialPool(s) => write!(f, "spatial-pool({s})"),
            OpKind::TemporalCircBlur(w) => write!(f, "temporal-circ-blur({w})"),
            OpKind::Compose(_) => {
                let names: Vec<String> = self.stages().iter().map(|s| s.to_string()).collect();
                write!(f, "{}", names.join(" -> "))
            }
        }
    }
}

impl FromStr for OpKind {
    type Err = Error;

    /// Parses one atom (`spatial-pool(4)`) or a chain in application order
    /// (`temporal-pool(4) -> spatial-pool(4)`).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.contains("->") {
            let stages = s
                .split("->")
                .map(str::parse)
                .collect::<Result<Vec<OpKind>>>()?;
            return Ok(OpKind::chain(stages));
        }
        if s == "identity" {
            return Ok(OpKind::Identity);
        }
        let bad = || Error::InvalidArgument(format!("unrecognized operator {s:?}"));
        let open = s.find('(').ok_or_else(bad)?;
        if !s.ends_with(')') {
            return Err(bad());
        }
        let name = &s[..open];
        let arg: usize = s[open + 1..s.len() - 1]
            .trim()
            .parse()
            .map_err(|_| bad())?;
        match name.trim() {
            "temporal-pool" => Ok(OpKind::TemporalPool(arg)),
            "spatial-pool" => Ok(OpKind::SpatialPool(arg)),
            "temporal-circ-blur" => Ok(OpKind::TemporalCircBlur(arg)),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Stage {
    kind: Atom,
    input: Shape,
    output: Shape,
}

#[derive(Clone, Copy, Debug)]
enum Atom {
    Identity,
    TemporalPool(usize),
    SpatialPool(usize),
    TemporalCircBlur(usize),
}

/// A forward/adjoint pair `(𝒜, 𝒜ᵀ)` bound to an input shape.
#[derive(Clone, Debug)]
pub struct LinearOp {
    kind: OpKind,
    input: Shape,
    output: Shape,
    stages: Vec<Stage>,
}

impl LinearOp {
    pub fn new(kind: OpKind, input: Shape) -> Result<Self> {
        input.validate()?;
        let mut stages = Vec::new();
        let mut shape = input;
        for atom in kind.stages() {
            let kind = match atom {
                OpKind::Identity => Atom::Identity,
                OpKind::TemporalPool(k) => {
                    if k == 0 {
                        return Err(Error::InvalidArgument("temporal-pool factor must be >= 1".into()));
                    }
                    Atom::TemporalPool(k)
                }
                OpKind::SpatialPool(s) => {
                    if s == 0 {
                        return Err(Error::InvalidArgument("spatial-pool factor must be >= 1".into()));
                    }
                    if shape.height % s != 0 || shape.width % s != 0 {
                        return Err(Error::InvalidArgument(format!(
                            "spatial-pool({s}) needs height and width divisible by {s}, got {}x{}",
                            shape.height, shape.width
                        )));
                    }
                    Atom::SpatialPool(s)
                }
                OpKind::TemporalCircBlur(w) => {
                    if w % 2 == 0 {
                        return Err(Error::InvalidArgument(format!(
                            "temporal-circ-blur window must be odd, got {w}"
                        )));
                    }
                    Atom::TemporalCircBlur(w)
                }
                OpKind::Compose(_) => unreachable!("stages() flattens compositions"),
            };
            let output = atom_output(kind, shape);
            stages.push(Stage {
                kind,
                input: shape,
                output,
            });
            shape = output;
        }
        Ok(LinearOp {
            kind,
            input,
            output: shape,
            stages,
        })
    }

    pub fn identity(shape: Shape) -> Self {
        LinearOp::new(OpKind::Identity, shape).expect("identity is valid on any shape")
    }

    pub fn kind(&self) -> &OpKind {
        &self.kind
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn output_shape(&self) -> Shape {
        self.output
    }

    pub fn apply(&self, x: &VideoTensor) -> Result<VideoTensor> {
        x.expect_shape(self.input)?;
        let mut cur = x.clone();
        for st in &self.stages {
            cur = match st.kind {
                Atom::Identity => cur,
                Atom::TemporalPool(k) => temporal_pool(&cur, k),
                Atom::SpatialPool(s) => spatial_pool(&cur, s),
                Atom::TemporalCircBlur(w) => circ_blur(&cur, w, false),
            };
        }
        Ok(cur)
    }

    pub fn adjoint(&self, y: &VideoTensor) -> Result<VideoTensor> {
        y.expect_shape(self.output)?;
        let mut cur = y.clone();
        for st in self.stages.iter().rev() {
            debug_assert_eq!(cur.shape(), st.output);
            cur = match st.kind {
                Atom::Identity => cur,
                Atom::TemporalPool(k) => temporal_pool_adjoint(&cur, k, st.input.frames),
                Atom::SpatialPool(s) => spatial_pool_adjoint(&cur, s),
                Atom::TemporalCircBlur(w) => circ_blur(&cur, w, true),
            };
        }
        Ok(cur)
    }

    /// `𝒜ᵀ𝒜 x`
    pub fn normal(&self, x: &VideoTensor) -> Result<VideoTensor> {
        self.adjoint(&self.apply(x)?)
    }

    /// Full-resolution initialization `x₀ = 𝒜†y`: temporal pooling is undone
    /// by frame replication, spatial pooling by bilinear upsampling and the
    /// temporal blur is left in place.
    pub fn pseudo_inverse(&self, y: &VideoTensor) -> Result<VideoTensor> {
        y.expect_shape(self.output)?;
        let mut cur = y.clone();
        for st in self.stages.iter().rev() {
            cur = match st.kind {
                Atom::Identity | Atom::TemporalCircBlur(_) => cur,
                Atom::TemporalPool(k) => replicate_frames(&cur, k, st.input.frames),
                Atom::SpatialPool(s) => bilinear_upsample(&cur, s),
            };
        }
        Ok(cur)
    }
}

fn atom_output(kind: Atom, s: Shape) -> Shape {
    match kind {
        Atom::Identity | Atom::TemporalCircBlur(_) => s,
        Atom::TemporalPool(k) => s.with_frames(s.frames.div_ceil(k)),
        Atom::SpatialPool(f) => Shape::new(s.frames, s.height / f, s.width / f, s.channels),
    }
}

/// Output frame `j` averages input frames `[jk, jk+k)`; indices past the end
/// repeat the last frame.
fn temporal_pool(x: &VideoTensor, k: usize) -> VideoTensor {
    let s = x.shape();
    let out_frames = s.frames.div_ceil(k);
    let mut out = VideoTensor::zeros(s.with_frames(out_frames));
    let inv = 1.0 / k as f64;
    for j in 0..out_frames {
        let dst = out.frame_data_mut(j);
        for i in 0..k {
            let src = x.frame_data((j * k + i).min(s.frames - 1));
            for (d, v) in dst.iter_mut().zip(src) {
                *d += v * inv;
            }
        }
    }
    out
}

/// Nearest upsampling by `k` divided by `k`; the padded tail folds back onto
/// the last true frame.
fn temporal_pool_adjoint(y: &VideoTensor, k: usize, frames: usize) -> VideoTensor {
    let mut out = VideoTensor::zeros(y.shape().with_frames(frames));
    let inv = 1.0 / k as f64;
    for j in 0..y.shape().frames {
        let src = y.frame_data(j);
        for i in 0..k {
            let dst = out.frame_data_mut((j * k + i).min(frames - 1));
            for (d, v) in dst.iter_mut().zip(src) {
                *d += v * inv;
            }
        }
    }
    out
}

fn spatial_pool(x: &VideoTensor, f: usize) -> VideoTensor {
    let s = x.shape();
    let (oh, ow) = (s.height / f, s.width / f);
    let mut out = VideoTensor::zeros(Shape::new(s.frames, oh, ow, s.channels));
    let inv = 1.0 / (f * f) as f64;
    for t in 0..s.frames {
        for h in 0..s.height {
            for w in 0..s.width {
                for c in 0..s.channels {
                    let o = out.index(t, h / f, w / f, c);
                    out.data_mut()[o] += x.get(t, h, w, c) * inv;
                }
            }
        }
    }
    out
}

/// Each low-resolution value spreads `value / f²` over its block.
fn spatial_pool_adjoint(y: &VideoTensor, f: usize) -> VideoTensor {
    let s = y.shape();
    let inv = 1.0 / (f * f) as f64;
    VideoTensor::from_fn(
        Shape::new(s.frames, s.height * f, s.width * f, s.channels),
        |t, h, w, c| y.get(t, h / f, w / f, c) * inv,
    )
}

/// Centered circular convolution along time with the uniform length-`w`
/// kernel. The adjoint is the time-reversed filter.
fn circ_blur(x: &VideoTensor, w: usize, adjoint: bool) -> VideoTensor {
    let s = x.shape();
    let n = s.frames as isize;
    let r = (w / 2) as isize;
    let inv = 1.0 / w as f64;
    let mut out = VideoTensor::zeros(s);
    for t in 0..n {
        let dst = out.frame_data_mut(t as usize);
        for o in -r..=r {
            let src_t = if adjoint { t - o } else { t + o };
            let src = x.frame_data(src_t.rem_euclid(n) as usize);
            for (d, v) in dst.iter_mut().zip(src) {
                *d += v * inv;
            }
        }
    }
    out
}

fn replicate_frames(y: &VideoTensor, k: usize, frames: usize) -> VideoTensor {
    let mut out = VideoTensor::zeros(y.shape().with_frames(frames));
    for t in 0..frames {
        out.frame_data_mut(t).copy_from_slice(y.frame_data(t / k));
    }
    out
}

/// Bilinear upsampling by an integer factor with half-pixel centers and edge
/// clamping.
pub fn bilinear_upsample(y: &VideoTensor, f: usize) -> VideoTensor {
    let s = y.shape();
    let (h_in, w_in) = (s.height, s.width);
    let taps = |dst: usize, n_in: usize| -> (usize, usize, f64) {
        let pos = ((dst as f64 + 0.5) / f as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, pos - lo as f64)
    };
    let rows: Vec<_> = (0..h_in * f).map(|h| taps(h, h_in)).collect();
    let cols: Vec<_> = (0..w_in * f).map(|w| taps(w, w_in)).collect();
    VideoTensor::from_fn(
        Shape::new(s.frames, h_in * f, w_in * f, s.channels),
        |t, h, w, c| {
            let (h0, h1, fh) = rows[h];
            let (w0, w1, fw) = cols[w];
            let top = y.get(t, h0, w0, c) * (1.0 - fw) + y.get(t, h0, w1, c) * fw;
            let bottom = y.get(t, h1, w0, c) * (1.0 - fw) + y.get(t, h1, w1, c) * fw;
            top * (1.0 - fh) + bottom * fh
        },
    )
}

/// The three benchmark degradations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Problem {
    /// Temporal SR×4 + SR×4.
    A,
    /// Temporal blur (7) + SR×8.
    B,
    /// Temporal SR×8 + SR×8.
    C,
}

impl Problem {
    pub fn operator_kind(self) -> OpKind {
        match self {
            Problem::A => OpKind::chain([OpKind::TemporalPool(4), OpKind::SpatialPool(4)]),
            Problem::B => OpKind::chain([OpKind::TemporalCircBlur(7), OpKind::SpatialPool(8)]),
            Problem::C => OpKind::chain([OpKind::TemporalPool(8), OpKind::SpatialPool(8)]),
        }
    }
}

impl FromStr for Problem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Problem::A),
            "B" | "b" => Ok(Problem::B),
            "C" | "c" => Ok(Problem::C),
            other => Err(Error::InvalidArgument(format!(
                "unknown problem {other:?}, expected A, B or C"
            ))),
        }
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Problem::A => "A",
            Problem::B => "B",
            Problem::C => "C",
        };
        f.write_str(s)
    }
}

pub fn problem_operator(problem: Problem, input: Shape) -> Result<LinearOp> {
    LinearOp::new(problem.operator_kind(), input)
}

/// Additive white Gaussian noise, `n ~ N(0, σ_n² Id)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma_n: f64,
    pub seed: u64,
}

/// `y = 𝒜x + σ_n ε`, deterministic given the seed.
pub fn degrade(op: &LinearOp, x: &VideoTensor, noise: NoiseSpec) -> Result<VideoTensor> {
    if !(noise.sigma_n >= 0.0) || !noise.sigma_n.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sigma_n must be a finite non-negative number, got {}",
            noise.sigma_n
        )));
    }
    let mut y = op.apply(x)?;
    if noise.sigma_n > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        let eps = VideoTensor::randn(y.shape(), &mut rng);
        y.axpy(noise.sigma_n, &eps);
    }
    Ok(y)
}
