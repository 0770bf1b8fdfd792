//! Proximal solvers for the data-consistency and TV-regularized sub-problems.

pub mod adam;
pub mod cg;
pub mod pdhg;
pub mod quadratic;

pub use adam::{prox_tv_data_adam, AdamOutcome, AdamParams};
pub use cg::{cg_solve, CgOutcome, CgParams};
pub use pdhg::{prox_tv_data_pdhg, PdhgOutcome, PdhgParams};
pub use quadratic::{prox_quadratic, prox_quadratic_from, prox_quadratic_residual};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::LinearOp;
use crate::regularizers::{tv3, TVWeights};
use crate::tensor::VideoTensor;

/// Trust weights at or above this value drop the anchor term entirely.
pub const TRUST_DROP_THRESHOLD: f64 = 1e5;

/// Which solver handles the TV-regularized prox.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TvSolver {
    #[default]
    Auto,
    Pdhg,
    Adam,
}

impl std::str::FromStr for TvSolver {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(TvSolver::Auto),
            "pdhg" => Ok(TvSolver::Pdhg),
            "adam" => Ok(TvSolver::Adam),
            other => Err(Error::InvalidArgument(format!(
                "unknown TV solver '{other}', expected auto, pdhg or adam"
            ))),
        }
    }
}

/// `argmin_x (1/2σ²)‖𝒜x − y‖² + TV3_λ(x) + (1/2δη)‖x − anchor‖²`
///
/// The anchor term is omitted when `keep_trust` is false.
#[derive(Clone, Copy, Debug)]
pub struct TvProxProblem<'a> {
    pub op: &'a LinearOp,
    pub y: &'a VideoTensor,
    pub anchor: &'a VideoTensor,
    pub weights: TVWeights,
    pub sigma_n: f64,
    pub delta_eta: f64,
    pub keep_trust: bool,
}

impl<'a> TvProxProblem<'a> {
    pub fn new(
        op: &'a LinearOp,
        y: &'a VideoTensor,
        anchor: &'a VideoTensor,
        weights: TVWeights,
        sigma_n: f64,
        delta_eta: f64,
    ) -> Result<Self> {
        y.expect_shape(op.output_shape())?;
        anchor.expect_shape(op.input_shape())?;
        weights.validate()?;
        if !(sigma_n > 0.0) || !sigma_n.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigma_n must be finite and > 0, got {sigma_n}"
            )));
        }
        if !(delta_eta > 0.0) || delta_eta.is_nan() {
            return Err(Error::InvalidArgument(format!(
                "step must be > 0, got {delta_eta}"
            )));
        }
        Ok(TvProxProblem {
            op,
            y,
            anchor,
            weights,
            sigma_n,
            delta_eta,
            keep_trust: delta_eta < TRUST_DROP_THRESHOLD,
        })
    }

    pub fn with_trust_term(mut self, keep: bool) -> Self {
        self.keep_trust = keep;
        self
    }

    /// Coefficient of the anchor term, zero when it is dropped.
    pub fn trust_weight(&self) -> f64 {
        if self.keep_trust {
            1.0 / self.delta_eta
        } else {
            0.0
        }
    }

    pub fn data_term(&self, x: &VideoTensor) -> Result<f64> {
        let r = self.op.apply(x)?.sub(self.y);
        Ok(r.norm_sq() / (2.0 * self.sigma_n * self.sigma_n))
    }

    pub fn objective(&self, x: &VideoTensor) -> Result<f64> {
        let mut f = self.data_term(x)? + tv3(x, &self.weights);
        if self.keep_trust {
            f += x.sub(self.anchor).norm_sq() * self.trust_weight() / 2.0;
        }
        Ok(f)
    }

    /// Gradient of the smooth part (data and anchor terms).
    pub fn smooth_gradient(&self, x: &VideoTensor) -> Result<VideoTensor> {
        let r = self.op.apply(x)?.sub(self.y);
        let mut g = self.op.adjoint(&r)?;
        g.scale(1.0 / (self.sigma_n * self.sigma_n));
        if self.keep_trust {
            g.axpy(self.trust_weight(), &x.sub(self.anchor));
        }
        Ok(g)
    }
}

/// Solves the TV prox with the requested solver.
///
/// `Auto` picks PDHG for zero or purely temporal weights and Adam otherwise.
pub fn prox_tv_data(
    problem: &TvProxProblem<'_>,
    solver: TvSolver,
    pdhg: &PdhgParams,
    adam: &AdamParams,
    cg: &CgParams,
) -> Result<VideoTensor> {
    let use_pdhg = match solver {
        TvSolver::Pdhg => true,
        TvSolver::Adam => false,
        TvSolver::Auto => problem.weights.is_pure_temporal(),
    };
    if use_pdhg {
        prox_tv_data_pdhg(problem, pdhg, cg).map(|o| o.x)
    } else {
        prox_tv_data_adam(problem, adam).map(|o| o.x)
    }
}
