use std::time::Instant;

use super::report::{IterationRecord, RunReport};
use super::data_residual;
use crate::error::{Error, Result};
use crate::operators::LinearOp;
use crate::prox::{cg_solve, CgParams};
use crate::regularizers::{div3, grad3, tv3, GradField, TVWeights};
use crate::tensor::VideoTensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AdmmParams {
    /// Penalty on the splitting constraint `v = D_λ x`.
    pub rho: f64,
    pub iters: usize,
    /// Inner CG for the `x` update.
    pub cg: CgParams,
}

impl Default for AdmmParams {
    fn default() -> Self {
        AdmmParams {
            rho: 10.0,
            iters: 50,
            cg: CgParams { max_iters: 20, tol: 1e-8 },
        }
    }
}

impl AdmmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "ADMM penalty must be finite and > 0, got {}",
                self.rho
            )));
        }
        if self.iters == 0 {
            return Err(Error::InvalidArgument("ADMM needs at least one iteration".into()));
        }
        self.cg.validate()
    }
}

/// `(1/2σ²)‖𝒜x − y‖² + TV3_λ(x)`
pub fn admm_objective(
    op: &LinearOp,
    y: &VideoTensor,
    x: &VideoTensor,
    weights: &TVWeights,
    sigma_n: f64,
) -> Result<f64> {
    let r = op.apply(x)?.sub(y).norm_sq();
    Ok(r / (2.0 * sigma_n * sigma_n) + tv3(x, weights))
}

fn field_sub(a: &GradField, b: &GradField) -> GradField {
    let mut out = a.clone();
    out.axpy(-1.0, b);
    out
}

/// Scaled-form ADMM on `(1/2σ²)‖𝒜x − y‖² + TV3_λ(x)` with the split
/// `v = D_λ x`, started from the pseudo-inverse.
pub fn admm_tv_restore(
    y: &VideoTensor,
    op: &LinearOp,
    weights: &TVWeights,
    sigma_n: f64,
    params: &AdmmParams,
) -> Result<(VideoTensor, RunReport)> {
    params.validate()?;
    weights.validate()?;
    if !(sigma_n > 0.0) || !sigma_n.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sigma_n must be finite and > 0, got {sigma_n}"
        )));
    }
    y.expect_shape(op.output_shape())?;
    y.ensure_finite()?;
    let start = Instant::now();
    let rho = params.rho;
    let inv_var = 1.0 / (sigma_n * sigma_n);
    let mut x = op.pseudo_inverse(y)?;
    let mut report = RunReport::new("admm-tv", "pseudo-inverse", data_residual(op, &x, y)?);
    let mut aty = op.adjoint(y)?;
    aty.scale(inv_var);
    let mut v = grad3(&x, weights);
    let mut u = GradField::zeros(x.shape());

    for k in 0..params.iters {
        let mut rhs = div3(&field_sub(&v, &u), weights);
        rhs.scale(rho);
        rhs.axpy(1.0, &aty);
        let system = |p: &VideoTensor| -> Result<VideoTensor> {
            let mut out = op.normal(p)?;
            out.scale(inv_var);
            out.axpy(rho, &div3(&grad3(p, weights), weights));
            Ok(out)
        };
        x = cg_solve(system, &rhs, &x, &params.cg)
            .map_err(|e| e.at_iteration(k))?
            .x;
        let dx = grad3(&x, weights);
        v = dx.clone();
        v.axpy(1.0, &u);
        v.group_shrink(1.0 / rho);
        let gap = field_sub(&dx, &v);
        u.axpy(1.0, &gap);
        report.iterations.push(IterationRecord {
            k,
            residual: data_residual(op, &x, y)?,
            tv: tv3(&x, weights),
            nfe: 0,
            ms: start.elapsed().as_secs_f64() * 1e3,
            primal: Some(gap.norm_sq().sqrt()),
        });
    }
    report.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((x, report))
}
