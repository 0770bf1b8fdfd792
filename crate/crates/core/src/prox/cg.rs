//! Conjugate gradient for self-adjoint positive definite operators on videos.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::VideoTensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgParams {
    pub max_iters: usize,
    /// Stop once `‖r‖ ≤ tol·‖b‖`.
    pub tol: f64,
}

impl Default for CgParams {
    fn default() -> Self {
        CgParams {
            max_iters: 10,
            tol: 1e-6,
        }
    }
}

impl CgParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("cg.iters must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cg.tol must be > 0, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub x: VideoTensor,
    pub iterations: usize,
    pub converged: bool,
    /// `‖r‖` before the first update and after each iteration.
    pub residual_norms: Vec<f64>,
}

/// Solves `M x = b` starting from `x0`.
///
/// `m` must be symmetric positive definite; a non-positive curvature
/// `⟨p, Mp⟩ ≤ 0` or any non-finite value is reported as a solver error.
pub fn cg_solve<M>(m: M, b: &VideoTensor, x0: &VideoTensor, params: &CgParams) -> Result<CgOutcome>
where
    M: Fn(&VideoTensor) -> Result<VideoTensor>,
{
    params.validate()?;
    b.expect_shape(x0.shape())?;
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            x: VideoTensor::zeros(b.shape()),
            iterations: 0,
            converged: true,
            residual_norms: vec![0.0],
        });
    }
    let threshold = params.tol * b_norm;

    let mut x = x0.clone();
    let mut r = b.sub(&m(&x)?);
    let mut rr = r.norm_sq();
    let mut residuals = vec![rr.sqrt()];
    if !rr.is_finite() {
        return Err(Error::Solver("non-finite initial residual".into()));
    }
    if rr.sqrt() <= threshold {
        return Ok(CgOutcome {
            x,
            iterations: 0,
            converged: true,
            residual_norms: residuals,
        });
    }

    let mut p = r.clone();
    for k in 0..params.max_iters {
        let mp = m(&p)?;
        let curvature = p.dot(&mp);
        if !curvature.is_finite() || curvature <= 0.0 {
            return Err(Error::Solver(format!(
                "CG iteration {k}: curvature {curvature:e}, operator is not positive definite"
            )));
        }
        let alpha = rr / curvature;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &mp);
        let rr_new = r.norm_sq();
        if !rr_new.is_finite() {
            return Err(Error::Solver(format!("CG iteration {k}: non-finite residual")));
        }
        residuals.push(rr_new.sqrt());
        if rr_new.sqrt() <= threshold {
            return Ok(CgOutcome {
                x,
                iterations: k + 1,
                converged: true,
                residual_norms: residuals,
            });
        }
        let beta = rr_new / rr;
        p.scale(beta);
        p.axpy(1.0, &r);
        rr = rr_new;
    }
    Ok(CgOutcome {
        x,
        iterations: params.max_iters,
        converged: false,
        residual_norms: residuals,
    })
}
