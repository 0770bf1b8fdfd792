use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::report::{IterationRecord, RunReport};
use super::{data_residual, likelihood_prox, SamplerConfig};
use crate::error::{Error, Result};
use crate::operators::LinearOp;
use crate::priors::{sae_step, sae_step_per_frame, Prior};
use crate::prox::prox_quadratic_from;
use crate::regularizers::tv3;
use crate::tensor::VideoTensor;

struct Tracker<'a> {
    op: &'a LinearOp,
    y: &'a VideoTensor,
    cfg: &'a SamplerConfig,
    start: Instant,
    report: RunReport,
}

impl<'a> Tracker<'a> {
    fn new(
        sampler: &str,
        op: &'a LinearOp,
        y: &'a VideoTensor,
        x0: &VideoTensor,
        cfg: &'a SamplerConfig,
    ) -> Result<Self> {
        let initial = data_residual(op, x0, y)?;
        Ok(Tracker {
            op,
            y,
            cfg,
            start: Instant::now(),
            report: RunReport::new(sampler, cfg.init.label(), initial),
        })
    }

    fn record(&mut self, k: usize, x: &VideoTensor, nfe: usize) -> Result<()> {
        self.report.iterations.push(IterationRecord {
            k,
            residual: data_residual(self.op, x, self.y)?,
            tv: tv3(x, &self.cfg.tv_weights),
            nfe,
            ms: self.start.elapsed().as_secs_f64() * 1e3,
            primal: None,
        });
        Ok(())
    }

    fn finish(mut self, nfe: usize) -> RunReport {
        self.report.nfe = nfe;
        self.report.wall_ms = self.start.elapsed().as_secs_f64() * 1e3;
        self.report
    }
}

fn check_inputs(op: &LinearOp, y: &VideoTensor) -> Result<()> {
    y.expect_shape(op.output_shape())?;
    y.ensure_finite()
}

/// Alternates a video-prior step with a TV-regularized likelihood prox and a
/// per-frame image-prior step with a quadratic likelihood prox. The image
/// prior is skipped on the last iteration.
pub fn latino_restore(
    y: &VideoTensor,
    op: &LinearOp,
    vcm: &dyn Prior,
    icm: &dyn Prior,
    cfg: &SamplerConfig,
) -> Result<(VideoTensor, RunReport)> {
    cfg.validate()?;
    check_inputs(op, y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = cfg.init.resolve(op, y)?;
    let mut tracker = Tracker::new("latino", op, y, &x, cfg)?;
    let eps_icm = cfg.step_icm / (cfg.sigma_n * cfg.sigma_n);
    let n = cfg.vcm_timesteps.len();
    let mut nfe = 0;
    for k in 0..n {
        let mut step = || -> Result<(VideoTensor, usize)> {
            let mut used = 0;
            let u = sae_step(vcm, &x, cfg.vcm_timesteps[k], &mut rng)?;
            used += 1;
            let half = likelihood_prox(op, y, &u, cfg.step_vcm, cfg)?;
            if k + 1 == n {
                return Ok((half, used));
            }
            let u = sae_step_per_frame(icm, &half, cfg.icm_timesteps[k], &mut rng)?;
            used += 1;
            let out = prox_quadratic_from(op, y, &u, eps_icm, &half, &cfg.cg)?;
            Ok((out.x, used))
        };
        let (next, used) = step().map_err(|e| e.at_iteration(k))?;
        x = next;
        nfe += used;
        tracker.record(k, &x, nfe)?;
    }
    Ok((x, tracker.finish(nfe)))
}

/// Video-prior steps, each followed by the TV-regularized likelihood prox.
pub fn latino_v_restore(
    y: &VideoTensor,
    op: &LinearOp,
    vcm: &dyn Prior,
    cfg: &SamplerConfig,
) -> Result<(VideoTensor, RunReport)> {
    cfg.validate_video_only()?;
    check_inputs(op, y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = cfg.init.resolve(op, y)?;
    let mut tracker = Tracker::new("latino-v", op, y, &x, cfg)?;
    for (k, &t) in cfg.vcm_timesteps.iter().enumerate() {
        let u = sae_step(vcm, &x, t, &mut rng).map_err(|e| e.at_iteration(k))?;
        x = likelihood_prox(op, y, &u, cfg.step_vcm, cfg).map_err(|e| e.at_iteration(k))?;
        tracker.record(k, &x, k + 1)?;
    }
    let nfe = cfg.vcm_timesteps.len();
    Ok((x, tracker.finish(nfe)))
}

/// Single-frame loop of image-prior steps and quadratic likelihood proxes
/// over the image-prior schedule.
pub fn latino_image_restore(
    y: &VideoTensor,
    op: &LinearOp,
    icm: &dyn Prior,
    cfg: &SamplerConfig,
) -> Result<(VideoTensor, RunReport)> {
    cfg.validate_image_only()?;
    check_inputs(op, y)?;
    if op.input_shape().frames != 1 {
        return Err(Error::InvalidArgument(format!(
            "single-frame restoration needs a 1-frame operator, got {}",
            op.input_shape()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = cfg.init.resolve(op, y)?;
    let mut tracker = Tracker::new("latino-image", op, y, &x, cfg)?;
    let eps = cfg.step_icm / (cfg.sigma_n * cfg.sigma_n);
    for (k, &t) in cfg.icm_timesteps.iter().enumerate() {
        let mut step = || -> Result<VideoTensor> {
            let u = sae_step(icm, &x, t, &mut rng)?;
            Ok(prox_quadratic_from(op, y, &u, eps, &u, &cfg.cg)?.x)
        };
        x = step().map_err(|e| e.at_iteration(k))?;
        tracker.record(k, &x, k + 1)?;
    }
    let nfe = cfg.icm_timesteps.len();
    Ok((x, tracker.finish(nfe)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::OpKind;
    use crate::priors::{GaussianPrior, IdentityPrior, SmoothingPrior};
    use crate::prox::TvSolver;
    use crate::regularizers::TVWeights;
    use crate::samplers::Init;
    use crate::tensor::Shape;
    use nalgebra::{DMatrix, DVector};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn dense(op: &LinearOp) -> DMatrix<f64> {
        let n = op.input_shape().len();
        let m = op.output_shape().len();
        let mut a = DMatrix::zeros(m, n);
        for j in 0..n {
            let mut e = VideoTensor::zeros(op.input_shape());
            e.data_mut()[j] = 1.0;
            let col = op.apply(&e).unwrap();
            for (i, v) in col.data().iter().enumerate() {
                a[(i, j)] = *v;
            }
        }
        a
    }

    #[test]
    fn identity_operator_returns_measurement() {
        let s = Shape::new(3, 4, 4, 1);
        let op = LinearOp::identity(s);
        let y = VideoTensor::rand_uniform(s, 0.0, 1.0, &mut rng(0));
        let cfg = SamplerConfig { sigma_n: 1e-6, ..Default::default() };
        let p = IdentityPrior::default();
        let (x, report) = latino_restore(&y, &op, &p, &p, &cfg).unwrap();
        assert!(x.max_abs_diff(&y) < 1e-3);
        assert_eq!(report.nfe, 9);
        assert_eq!(report.iterations.len(), 5);
        assert_eq!(report.iterations.last().unwrap().nfe, 9);
    }

    #[test]
    fn nfe_counts() {
        let s = Shape::new(4, 8, 8, 1);
        let op = LinearOp::new(OpKind::chain([OpKind::TemporalPool(2), OpKind::SpatialPool(2)]), s)
            .unwrap();
        let y = VideoTensor::rand_uniform(op.output_shape(), 0.0, 1.0, &mut rng(0));
        let p = SmoothingPrior::default();
        let cfg = SamplerConfig::default();
        assert_eq!(latino_restore(&y, &op, &p, &p, &cfg).unwrap().1.nfe, 9);
        assert_eq!(latino_v_restore(&y, &op, &p, &cfg).unwrap().1.nfe, 5);
        let x0 = op.pseudo_inverse(&y).unwrap();
        let warm = SamplerConfig::default().with_warm_start(x0);
        let (_, r) = latino_restore(&y, &op, &p, &p, &warm).unwrap();
        assert_eq!(r.nfe, 7);
        assert_eq!(r.init, "file init");
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let s = Shape::new(4, 8, 8, 2);
        let op = LinearOp::new(OpKind::chain([OpKind::TemporalPool(2), OpKind::SpatialPool(2)]), s)
            .unwrap();
        let y = VideoTensor::rand_uniform(op.output_shape(), 0.0, 1.0, &mut rng(1));
        let p = SmoothingPrior::default();
        let cfg = SamplerConfig {
            tv_weights: TVWeights::temporal(0.005),
            seed: 11,
            ..Default::default()
        };
        let (a, _) = latino_restore(&y, &op, &p, &p, &cfg).unwrap();
        let (b, _) = latino_restore(&y, &op, &p, &p, &cfg).unwrap();
        assert_eq!(a, b);
        let other = SamplerConfig { seed: 12, ..cfg.clone() };
        let (c, _) = latino_restore(&y, &op, &p, &p, &other).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_weights_match_pdhg_path() {
        let s = Shape::new(4, 8, 8, 1);
        let op = LinearOp::new(OpKind::chain([OpKind::TemporalPool(2), OpKind::SpatialPool(2)]), s)
            .unwrap();
        let y = VideoTensor::rand_uniform(op.output_shape(), 0.0, 1.0, &mut rng(2));
        let p = SmoothingPrior::default();
        let plain = SamplerConfig::default();
        let (a, _) = latino_v_restore(&y, &op, &p, &plain).unwrap();
        let mut forced = plain.clone();
        forced.tv_solver = TvSolver::Pdhg;
        forced.tv_weights = TVWeights::ZERO;
        let (b, _) = latino_v_restore(&y, &op, &p, &forced).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-6);
    }

    #[test]
    fn video_only_residual_not_worse_than_init() {
        let s = Shape::new(8, 16, 16, 1);
        let op = LinearOp::new(OpKind::chain([OpKind::TemporalPool(4), OpKind::SpatialPool(4)]), s)
            .unwrap();
        let p = SmoothingPrior::default();
        for seed in 0..5 {
            let truth = VideoTensor::rand_uniform(s, 0.0, 1.0, &mut rng(seed));
            let y = crate::operators::degrade(
                &op,
                &truth,
                crate::operators::NoiseSpec { sigma_n: 1e-3, seed },
            )
            .unwrap();
            let cfg = SamplerConfig { seed, ..SamplerConfig::for_problem(crate::Problem::A) };
            let (_, r) = latino_v_restore(&y, &op, &p, &cfg).unwrap();
            assert!(r.final_residual() <= r.initial_residual, "{r}");
        }
    }

    #[test]
    fn image_loop_basics() {
        let s = Shape::new(1, 6, 6, 3);
        let op = LinearOp::identity(s);
        let y = VideoTensor::rand_uniform(s, 0.0, 1.0, &mut rng(3));
        let cfg = SamplerConfig { sigma_n: 1e-6, ..Default::default() };
        let (x, r) = latino_image_restore(&y, &op, &IdentityPrior::default(), &cfg).unwrap();
        assert!(x.max_abs_diff(&y) < 1e-3);
        assert_eq!(r.nfe, cfg.icm_timesteps.len());
        let multi = LinearOp::identity(Shape::new(2, 6, 6, 3));
        let y2 = VideoTensor::zeros(multi.output_shape());
        assert!(latino_image_restore(&y2, &multi, &IdentityPrior::default(), &cfg).is_err());
    }

    #[test]
    fn image_loop_equals_video_loop_on_one_frame() {
        let s = Shape::new(1, 8, 8, 1);
        let op = LinearOp::new(OpKind::SpatialPool(2), s).unwrap();
        let y = VideoTensor::rand_uniform(op.output_shape(), 0.0, 1.0, &mut rng(4));
        let p = SmoothingPrior::default();
        let cfg = SamplerConfig { step_icm: 2e3, seed: 5, ..Default::default() };
        let (a, _) = latino_image_restore(&y, &op, &p, &cfg).unwrap();
        let video = SamplerConfig {
            vcm_timesteps: cfg.icm_timesteps.clone(),
            step_vcm: cfg.step_icm,
            ..cfg.clone()
        };
        let (b, _) = latino_v_restore(&y, &op, &p, &video).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-6);
    }

    #[test]
    fn solver_errors_carry_iteration() {
        let s = Shape::new(4, 4, 4, 1);
        let op = LinearOp::identity(s);
        let y = VideoTensor::zeros(s);
        let cfg = SamplerConfig {
            tv_weights: TVWeights::new(0.1, 0.1, 0.0),
            tv_solver: TvSolver::Pdhg,
            ..Default::default()
        };
        let p = IdentityPrior::default();
        let err = latino_restore(&y, &op, &p, &p, &cfg).unwrap_err();
        assert!(matches!(err, Error::AtIteration { iteration: 0, .. }), "{err}");
    }

    #[test]
    fn gaussian_iterates_stay_bounded() {
        let s = Shape::new(3, 4, 4, 1);
        let op = LinearOp::identity(s);
        let p = GaussianPrior::standard();
        let bound = 10.0 * (s.len() as f64).sqrt();
        for seed in 0..100 {
            let y = VideoTensor::randn(s, &mut rng(1000 + seed));
            let cfg = SamplerConfig { seed, ..Default::default() };
            let (x, r) = latino_restore(&y, &op, &p, &p, &cfg).unwrap();
            assert!(r.iterations.iter().all(|it| it.residual.is_finite()));
            assert!(x.norm() <= bound);
        }
    }

    #[test]
    fn chain_average_approaches_posterior_mean() {
        let s = Shape::new(4, 2, 2, 1);
        let op = LinearOp::new(OpKind::TemporalPool(2), s).unwrap();
        let sigma = 0.05;
        let truth = VideoTensor::randn(s, &mut rng(21)).scaled(100.0);
        let y = crate::operators::degrade(
            &op,
            &truth,
            crate::operators::NoiseSpec { sigma_n: sigma, seed: 22 },
        )
        .unwrap();

        let a = dense(&op);
        let yv = DVector::from_column_slice(y.data());
        let lhs = a.transpose() * &a / (sigma * sigma) + DMatrix::identity(s.len(), s.len());
        let rhs = a.transpose() * yv / (sigma * sigma);
        let m = lhs.lu().solve(&rhs).unwrap();
        let m = VideoTensor::new(s, m.as_slice().to_vec()).unwrap();

        let p = GaussianPrior::standard();
        let step = 1.0 - p.schedule().alpha_bar(125).sqrt();
        let x0 = op.pseudo_inverse(&y).unwrap();
        let chains = 200;
        let mut avg = VideoTensor::zeros(s);
        for seed in 0..chains {
            let cfg = SamplerConfig {
                sigma_n: sigma,
                step_vcm: step,
                step_icm: step,
                seed,
                init: Init::PseudoInverse,
                ..Default::default()
            };
            let (x, _) = latino_restore(&y, &op, &p, &p, &cfg).unwrap();
            avg.axpy(1.0 / chains as f64, &x);
        }
        let ratio = avg.sub(&m).norm() / x0.sub(&m).norm();
        assert!(ratio <= 0.5, "error ratio {ratio}");
    }
}
