use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prox::cg::{cg_solve, CgParams};
use crate::prox::quadratic::prox_quadratic;
use crate::prox::TvProxProblem;
use crate::regularizers::{div3, grad3, GradField};
use crate::tensor::VideoTensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdhgParams {
    pub iters: usize,
    /// Primal step; defaults to `0.99/‖D_λ‖`.
    pub rho: Option<f64>,
    /// Dual step; defaults to `0.99/‖D_λ‖`.
    pub sigma: Option<f64>,
    pub theta: f64,
}

impl Default for PdhgParams {
    fn default() -> Self {
        PdhgParams {
            iters: 200,
            rho: None,
            sigma: None,
            theta: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PdhgOutcome {
    pub x: VideoTensor,
    pub dual: GradField,
    pub rho: f64,
    pub sigma: f64,
    pub iterations: usize,
}

/// Primal-dual hybrid gradient on the TV prox.
///
/// Only zero or purely temporal weights are accepted. With zero weights the
/// problem is quadratic and is handed to [`prox_quadratic`] with `ε = δη/σ²`.
pub fn prox_tv_data_pdhg(
    problem: &TvProxProblem<'_>,
    params: &PdhgParams,
    cg: &CgParams,
) -> Result<PdhgOutcome> {
    let w = problem.weights;
    let shape = problem.op.input_shape();
    if w.is_zero() {
        let eps = problem.delta_eta / (problem.sigma_n * problem.sigma_n);
        let x = prox_quadratic(problem.op, problem.y, problem.anchor, eps, cg)?;
        return Ok(PdhgOutcome {
            x,
            dual: GradField::zeros(shape),
            rho: 0.0,
            sigma: 0.0,
            iterations: 0,
        });
    }
    if !w.is_pure_temporal() {
        return Err(Error::InvalidArgument(format!(
            "PDHG handles only temporal TV weights, got (λ_h={}, λ_v={}, λ_t={}); use the adam solver",
            w.lambda_h, w.lambda_v, w.lambda_t
        )));
    }
    if params.iters == 0 {
        return Err(Error::InvalidArgument("pdhg.iters must be >= 1".into()));
    }
    if !(params.theta >= 0.0 && params.theta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "pdhg.theta must lie in [0, 1], got {}",
            params.theta
        )));
    }
    let d_norm = w.norm_sq_bound().sqrt();
    let rho = params.rho.unwrap_or(0.99 / d_norm);
    let sigma = params.sigma.unwrap_or(0.99 / d_norm);
    if !(rho > 0.0 && sigma > 0.0) || rho * sigma * d_norm * d_norm >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "PDHG steps rho={rho}, sigma={sigma} violate rho*sigma*|D|^2 < 1 (|D| <= {d_norm})"
        )));
    }

    let s2 = problem.sigma_n * problem.sigma_n;
    let c = problem.trust_weight();
    let mut rhs_fixed = problem.op.adjoint(problem.y)?;
    rhs_fixed.scale(1.0 / s2);
    if c > 0.0 {
        rhs_fixed.axpy(c, problem.anchor);
    }
    rhs_fixed.scale(rho);
    let system = |v: &VideoTensor| {
        let mut out = problem.op.normal(v)?;
        out.scale(rho / s2);
        out.axpy(1.0 + rho * c, v);
        Ok(out)
    };

    let mut u = problem.anchor.clone();
    let mut u_bar = u.clone();
    let mut p = GradField::zeros(shape);
    for k in 0..params.iters {
        p.axpy(sigma, &grad3(&u_bar, &w));
        p.project_unit_ball();
        let mut rhs = u.clone();
        rhs.axpy(-rho, &div3(&p, &w));
        rhs.axpy(1.0, &rhs_fixed);
        let next = cg_solve(system, &rhs, &u, cg)
            .map_err(|e| e.at_iteration(k))?
            .x;
        u_bar = next.zip_map(&u, |a, b| a + params.theta * (a - b));
        u = next;
        u.ensure_finite().map_err(|e| e.at_iteration(k))?;
    }
    Ok(PdhgOutcome {
        x: u,
        dual: p,
        rho,
        sigma,
        iterations: params.iters,
    })
}
