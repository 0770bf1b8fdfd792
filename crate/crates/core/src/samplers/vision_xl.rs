use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::report::{IterationRecord, RunReport};
use super::{data_residual, Init};
use crate::error::{Error, Result};
use crate::filters::blur_spatial;
use crate::operators::LinearOp;
use crate::priors::Prior;
use crate::prox::{cg_solve, CgParams};
use crate::regularizers::{tv3, TVWeights};
use crate::tensor::VideoTensor;

#[derive(Clone, Debug, PartialEq)]
pub struct VisionXlConfig {
    /// Starting noise level as a fraction of the schedule length.
    pub rho_fraction: f64,
    /// Number of timesteps on the sampling grid; `None` visits every step.
    pub grid: Option<usize>,
    /// Data-consistency CG steps per outer iteration.
    pub cg_iters: usize,
    /// Initial low-pass width in pixels, decaying linearly to zero.
    pub sigma_max: f64,
    pub seed: u64,
    pub init: Init,
}

impl Default for VisionXlConfig {
    fn default() -> Self {
        VisionXlConfig {
            rho_fraction: 0.3,
            grid: None,
            cg_iters: 5,
            sigma_max: 2.0,
            seed: 0,
            init: Init::PseudoInverse,
        }
    }
}

impl VisionXlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_fraction > 0.0 && self.rho_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rho_fraction must lie in (0, 1), got {}",
                self.rho_fraction
            )));
        }
        if self.grid.is_some_and(|g| g < 2) {
            return Err(Error::InvalidArgument("grid needs at least 2 timesteps".into()));
        }
        if !(self.sigma_max >= 0.0) || !self.sigma_max.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigma_max must be finite and >= 0, got {}",
                self.sigma_max
            )));
        }
        Ok(())
    }

    /// First timestep index on a schedule of `total` steps.
    pub fn start_timestep(&self, total: usize) -> usize {
        ((self.rho_fraction * total as f64).round() as usize).clamp(1, total - 1)
    }

    /// Descending timesteps from the start index down to 1.
    pub fn timesteps(&self, total: usize) -> Vec<usize> {
        let start = self.start_timestep(total);
        let mut ts: Vec<usize> = match self.grid {
            None => (1..=start).rev().collect(),
            Some(n) => (0..n)
                .map(|i| {
                    let f = i as f64 / (n - 1) as f64;
                    (start as f64 + f * (1.0 - start as f64)).round() as usize
                })
                .collect(),
        };
        ts.dedup();
        ts
    }

    /// Low-pass width at outer iteration `i` of `n`.
    pub fn sigma_at(&self, i: usize, n: usize) -> f64 {
        if n <= 1 {
            return 0.0;
        }
        self.sigma_max * (n - 1 - i.min(n - 1)) as f64 / (n - 1) as f64
    }
}

/// `(z − √(1−ᾱ) ε̂) / √ᾱ`
pub fn tweedie(z: &VideoTensor, eps: &VideoTensor, alpha_bar: f64) -> VideoTensor {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    z.zip_map(eps, |zi, ei| (zi - b * ei) / a)
}

fn renoise(clean: &VideoTensor, noise: &VideoTensor, alpha_bar: f64) -> VideoTensor {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    clean.zip_map(noise, |c, n| a * c + b * n)
}

/// One noise frame repeated over every frame of the latent.
fn shared_noise(like: &VideoTensor, rng: &mut ChaCha8Rng) -> VideoTensor {
    let s = like.shape();
    let frame = VideoTensor::randn(s.with_frames(1), rng);
    VideoTensor::from_fn(s, |_, h, w, c| frame.get(0, h, w, c))
}

/// A few CG steps on `𝒜ᵀ𝒜 x = 𝒜ᵀy` from `x0`.
fn data_consistency(
    op: &LinearOp,
    y: &VideoTensor,
    x0: &VideoTensor,
    iters: usize,
) -> Result<VideoTensor> {
    if iters == 0 {
        return Ok(x0.clone());
    }
    let rhs = op.adjoint(y)?;
    let params = CgParams { max_iters: iters, tol: 1e-12 };
    Ok(cg_solve(|v| op.normal(v), &rhs, x0, &params)?.x)
}

/// Starts from a deterministically inverted measurement at `ρ`, then
/// alternates one-step denoising, data-consistency CG, low-pass filtering
/// and renoising with frame-shared noise.
///
/// Each outer record describes the refined, filtered pixel estimate; the
/// last record is the final one-step denoised output.
pub fn vision_xl_restore(
    y: &VideoTensor,
    op: &LinearOp,
    prior: &dyn Prior,
    cfg: &VisionXlConfig,
) -> Result<(VideoTensor, RunReport)> {
    cfg.validate()?;
    if !prior.has_eps_predictor() {
        return Err(Error::InvalidArgument(format!(
            "vision-xl needs a prior with a noise predictor, '{}' has none",
            prior.name()
        )));
    }
    y.expect_shape(op.output_shape())?;
    y.ensure_finite()?;
    let schedule = prior.schedule();
    let ts = cfg.timesteps(schedule.total_steps());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = Instant::now();
    let x0 = cfg.init.resolve(op, y)?;
    let mut report = RunReport::new("vision-xl", cfg.init.label(), data_residual(op, &x0, y)?);
    let mut nfe = 0;

    let mut z = prior.encode(&x0)?;
    let ascending: Vec<usize> = ts.iter().rev().copied().collect();
    let mut prev: Option<usize> = None;
    for &t in &ascending {
        let (eps, clean) = match prev {
            None => (prior.eps_predict(&z, t)?, z.clone()),
            Some(p) => {
                let eps = prior.eps_predict(&z, p)?;
                let clean = tweedie(&z, &eps, schedule.alpha_bar(p));
                (eps, clean)
            }
        };
        nfe += 1;
        z = renoise(&clean, &eps, schedule.alpha_bar(t));
        prev = Some(t);
    }

    let outer = ts.len() - 1;
    let mut x = x0;
    for (k, &t) in ts.iter().enumerate() {
        let step = |z: &VideoTensor, rng: &mut ChaCha8Rng| -> Result<(VideoTensor, VideoTensor)> {
            let a = schedule.alpha_bar(t);
            let eps = prior.eps_predict(z, t)?;
            let x = prior.decode(&tweedie(z, &eps, a))?;
            if k == outer {
                return Ok((x, z.clone()));
            }
            let refined = data_consistency(op, y, &x, cfg.cg_iters)?;
            let filtered = blur_spatial(&refined, cfg.sigma_at(k, outer));
            let clean = prior.encode(&filtered)?;
            let noise = shared_noise(&clean, rng);
            Ok((filtered, renoise(&clean, &noise, schedule.alpha_bar(ts[k + 1]))))
        };
        let (xk, zn) = step(&z, &mut rng).map_err(|e| e.at_iteration(k))?;
        nfe += 1;
        x = xk;
        z = zn;
        report.iterations.push(IterationRecord {
            k,
            residual: data_residual(op, &x, y)?,
            tv: tv3(&x, &TVWeights::new(1.0, 1.0, 1.0)),
            nfe,
            ms: start.elapsed().as_secs_f64() * 1e3,
            primal: None,
        });
    }
    report.nfe = nfe;
    report.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((x, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::{GaussianPrior, IdentityPrior, SmoothingPrior};
    use crate::tensor::Shape;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn start_index_from_fraction() {
        let cfg = VisionXlConfig::default();
        assert_eq!(cfg.start_timestep(1000), 300);
        let ts = cfg.timesteps(1000);
        assert_eq!(ts.len(), 300);
        assert_eq!((ts[0], *ts.last().unwrap()), (300, 1));
        let coarse = VisionXlConfig { grid: Some(20), ..cfg };
        let ts = coarse.timesteps(1000);
        assert_eq!(ts.len(), 20);
        assert_eq!((ts[0], ts[19]), (300, 1));
        assert!(ts.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn low_pass_schedule_is_linear() {
        let cfg = VisionXlConfig::default();
        assert_eq!(cfg.sigma_at(0, 5), 2.0);
        assert_eq!(cfg.sigma_at(2, 5), 1.0);
        assert_eq!(cfg.sigma_at(4, 5), 0.0);
    }

    #[test]
    fn tweedie_identity() {
        let s = Shape::new(2, 3, 3, 1);
        let p = GaussianPrior::standard();
        let z = VideoTensor::randn(s, &mut rng(0));
        for t in [1, 120, 300, 999] {
            let a = p.schedule().alpha_bar(t);
            let eps = p.eps_predict(&z, t).unwrap();
            let zh = tweedie(&z, &eps, a);
            let back = zh.zip_map(&eps, |c, e| a.sqrt() * c + (1.0 - a).sqrt() * e);
            assert!(back.max_abs_diff(&z) < 1e-6);
        }
    }

    #[test]
    fn shared_noise_repeats_frames() {
        let z = VideoTensor::zeros(Shape::new(3, 2, 2, 2));
        let n = shared_noise(&z, &mut rng(1));
        assert_eq!(n.frame_data(0), n.frame_data(2));
        assert!(n.frame_data(0).iter().any(|v| *v != 0.0));
    }

    #[test]
    fn requires_noise_predictor() {
        let s = Shape::new(2, 4, 4, 1);
        let op = LinearOp::identity(s);
        let y = VideoTensor::zeros(s);
        let cfg = VisionXlConfig::default();
        assert!(vision_xl_restore(&y, &op, &IdentityPrior::default(), &cfg).is_err());
        assert!(vision_xl_restore(&y, &op, &SmoothingPrior::default(), &cfg).is_err());
    }

    #[test]
    fn gaussian_residual_decreases() {
        let s = Shape::new(3, 8, 8, 1);
        let op = LinearOp::identity(s);
        let p = GaussianPrior::standard();
        for seed in 0..5 {
            let y = VideoTensor::rand_uniform(s, 0.0, 1.0, &mut rng(seed));
            let cfg = VisionXlConfig { grid: Some(20), sigma_max: 0.0, seed, ..Default::default() };
            let (_, r) = vision_xl_restore(&y, &op, &p, &cfg).unwrap();
            let res: Vec<f64> = r.iterations[..r.iterations.len() - 1].iter().map(|i| i.residual).collect();
            assert!(res.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{res:?}");
        }
    }

    #[test]
    fn pooled_residual_decreases_with_cg() {
        let s = Shape::new(2, 16, 16, 1);
        let op = LinearOp::new(crate::OpKind::SpatialPool(4), s).unwrap();
        let y = VideoTensor::rand_uniform(op.output_shape(), 0.0, 1.0, &mut rng(7));
        let p = GaussianPrior::standard();
        let cfg = VisionXlConfig { grid: Some(10), sigma_max: 0.0, ..Default::default() };
        let (_, r) = vision_xl_restore(&y, &op, &p, &cfg).unwrap();
        let res: Vec<f64> = r.iterations[..r.iterations.len() - 1].iter().map(|i| i.residual).collect();
        assert!(res.iter().all(|v| *v < 1e-8), "{res:?}");
    }

    #[test]
    fn nfe_and_determinism() {
        let s = Shape::new(2, 8, 8, 1);
        let op = LinearOp::new(crate::OpKind::SpatialPool(2), s).unwrap();
        let y = VideoTensor::rand_uniform(op.output_shape(), 0.0, 1.0, &mut rng(3));
        let p = GaussianPrior::standard();
        let cfg = VisionXlConfig { grid: Some(10), seed: 4, ..Default::default() };
        let (a, r) = vision_xl_restore(&y, &op, &p, &cfg).unwrap();
        assert_eq!(r.nfe, 20);
        assert_eq!(r.iterations.len(), 10);
        let (b, _) = vision_xl_restore(&y, &op, &p, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
