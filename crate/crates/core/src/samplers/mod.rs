//! Restoration algorithms built on the priors and proximal solvers.

pub mod admm;
pub mod latino;
pub mod report;
pub mod vision_xl;

pub use admm::{admm_tv_restore, AdmmParams};
pub use latino::{latino_image_restore, latino_restore, latino_v_restore};
pub use report::{IterationRecord, RunReport};
pub use vision_xl::{vision_xl_restore, VisionXlConfig};

use crate::error::{Error, Result};
use crate::operators::{LinearOp, Problem};
use crate::prox::{
    prox_quadratic, prox_tv_data, AdamParams, CgParams, PdhgParams, TvProxProblem, TvSolver,
};
use crate::regularizers::TVWeights;
use crate::tensor::VideoTensor;

pub const DEFAULT_VCM_TIMESTEPS: [usize; 5] = [757, 522, 375, 255, 125];
pub const DEFAULT_ICM_TIMESTEPS: [usize; 4] = [374, 249, 124, 63];
/// Shortened schedule used when a full-resolution warm start is supplied.
pub const WARM_START_VCM_TIMESTEPS: [usize; 4] = [522, 375, 255, 125];
pub const WARM_START_ICM_TIMESTEPS: [usize; 3] = [249, 124, 63];
pub const DEFAULT_SIGMA_N: f64 = 0.001;

/// Starting point of a sampler.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum Init {
    #[default]
    PseudoInverse,
    /// A full-resolution estimate, typically loaded from a file.
    Provided(VideoTensor),
}

impl Init {
    pub fn label(&self) -> &'static str {
        match self {
            Init::PseudoInverse => "pseudo-inverse",
            Init::Provided(_) => "file init",
        }
    }

    pub fn resolve(&self, op: &LinearOp, y: &VideoTensor) -> Result<VideoTensor> {
        match self {
            Init::PseudoInverse => op.pseudo_inverse(y),
            Init::Provided(x) => {
                x.expect_shape(op.input_shape())?;
                x.ensure_finite()?;
                Ok(x.clone())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub vcm_timesteps: Vec<usize>,
    pub icm_timesteps: Vec<usize>,
    /// Step of the TV-regularised likelihood prox after the video prior.
    pub step_vcm: f64,
    /// Step of the quadratic likelihood prox after the image prior.
    pub step_icm: f64,
    /// Measurement noise level used in the likelihood.
    pub sigma_n: f64,
    pub tv_weights: TVWeights,
    pub tv_solver: TvSolver,
    pub cg: CgParams,
    pub pdhg: PdhgParams,
    pub adam: AdamParams,
    pub seed: u64,
    pub init: Init,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            vcm_timesteps: DEFAULT_VCM_TIMESTEPS.to_vec(),
            icm_timesteps: DEFAULT_ICM_TIMESTEPS.to_vec(),
            step_vcm: 1e5,
            step_icm: 1e5,
            sigma_n: DEFAULT_SIGMA_N,
            tv_weights: TVWeights::ZERO,
            tv_solver: TvSolver::Auto,
            cg: CgParams::default(),
            pdhg: PdhgParams::default(),
            adam: AdamParams::default(),
            seed: 0,
            init: Init::PseudoInverse,
        }
    }
}

impl SamplerConfig {
    /// Per-problem TV weights and step sizes.
    pub fn for_problem(problem: Problem) -> Self {
        let (tv_weights, step_vcm, step_icm) = match problem {
            Problem::A => (TVWeights::new(0.0, 0.0, 0.005), 1e5, 1e5),
            Problem::B => (TVWeights::ZERO, 1e5, 2e3),
            Problem::C => (TVWeights::new(1e-4, 1e-4, 1e-6), 1e5, 1e5),
        };
        SamplerConfig {
            tv_weights,
            step_vcm,
            step_icm,
            ..Default::default()
        }
    }

    /// Supplies a full-resolution starting point and shortens both schedules.
    pub fn with_warm_start(mut self, x0: VideoTensor) -> Self {
        self.init = Init::Provided(x0);
        self.vcm_timesteps = WARM_START_VCM_TIMESTEPS.to_vec();
        self.icm_timesteps = WARM_START_ICM_TIMESTEPS.to_vec();
        self
    }

    fn check_common(&self) -> Result<()> {
        for (name, v) in [("step_vcm", self.step_vcm), ("step_icm", self.step_icm)] {
            if !(v > 0.0) || v.is_nan() {
                return Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.sigma_n > 0.0) || !self.sigma_n.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigma_n must be finite and > 0, got {}",
                self.sigma_n
            )));
        }
        self.tv_weights.validate()?;
        self.cg.validate()?;
        Ok(())
    }

    /// Checks the two-prior schedule: `N ≥ 1` video steps and `N − 1` image steps.
    pub fn validate(&self) -> Result<()> {
        self.check_common()?;
        let n = self.vcm_timesteps.len();
        if n == 0 {
            return Err(Error::InvalidArgument("vcm_timesteps is empty".into()));
        }
        if self.icm_timesteps.len() + 1 != n {
            return Err(Error::InvalidArgument(format!(
                "icm_timesteps must have one entry fewer than vcm_timesteps ({} vs {n})",
                self.icm_timesteps.len()
            )));
        }
        Ok(())
    }

    /// Checks the video-prior-only schedule.
    pub fn validate_video_only(&self) -> Result<()> {
        self.check_common()?;
        if self.vcm_timesteps.is_empty() {
            return Err(Error::InvalidArgument("vcm_timesteps is empty".into()));
        }
        Ok(())
    }

    /// Checks the image-prior-only schedule.
    pub fn validate_image_only(&self) -> Result<()> {
        self.check_common()?;
        if self.icm_timesteps.is_empty() {
            return Err(Error::InvalidArgument("icm_timesteps is empty".into()));
        }
        Ok(())
    }
}

/// `‖𝒜x − y‖`
pub fn data_residual(op: &LinearOp, x: &VideoTensor, y: &VideoTensor) -> Result<f64> {
    Ok(op.apply(x)?.sub(y).norm())
}

/// Likelihood prox with TV, or the plain quadratic prox when the weights vanish.
pub(crate) fn likelihood_prox(
    op: &LinearOp,
    y: &VideoTensor,
    anchor: &VideoTensor,
    step: f64,
    cfg: &SamplerConfig,
) -> Result<VideoTensor> {
    if cfg.tv_weights.is_zero() {
        return prox_quadratic(op, y, anchor, step / (cfg.sigma_n * cfg.sigma_n), &cfg.cg);
    }
    let problem = TvProxProblem::new(op, y, anchor, cfg.tv_weights, cfg.sigma_n, step)?;
    prox_tv_data(&problem, cfg.tv_solver, &cfg.pdhg, &cfg.adam, &cfg.cg)
}
