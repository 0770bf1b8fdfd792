use crate::error::{Error, Result};
use crate::operators::LinearOp;
use crate::prox::cg::{cg_solve, CgOutcome, CgParams};
use crate::tensor::VideoTensor;

/// `argmin_x (ε/2)‖𝒜x − y‖² + ½‖x − u‖²`, warm-started at `u`.
pub fn prox_quadratic(
    op: &LinearOp,
    y: &VideoTensor,
    u: &VideoTensor,
    epsilon: f64,
    cg: &CgParams,
) -> Result<VideoTensor> {
    prox_quadratic_from(op, y, u, epsilon, u, cg).map(|o| o.x)
}

/// Same as [`prox_quadratic`] with an explicit CG starting point.
///
/// Solves the normal equations `(Id + ε𝒜ᵀ𝒜) x = u + ε𝒜ᵀy`.
pub fn prox_quadratic_from(
    op: &LinearOp,
    y: &VideoTensor,
    u: &VideoTensor,
    epsilon: f64,
    x0: &VideoTensor,
    cg: &CgParams,
) -> Result<CgOutcome> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be finite and > 0, got {epsilon}"
        )));
    }
    u.expect_shape(op.input_shape())?;
    x0.expect_shape(op.input_shape())?;
    let mut rhs = op.adjoint(y)?;
    rhs.scale(epsilon);
    rhs.axpy(1.0, u);
    cg_solve(
        |v| {
            let mut out = op.normal(v)?;
            out.scale(epsilon);
            out.axpy(1.0, v);
            Ok(out)
        },
        &rhs,
        x0,
        cg,
    )
}

/// Relative normal-equation residual `‖(Id+ε𝒜ᵀ𝒜)x − u − ε𝒜ᵀy‖ / ‖u + ε𝒜ᵀy‖`.
pub fn prox_quadratic_residual(
    op: &LinearOp,
    y: &VideoTensor,
    u: &VideoTensor,
    epsilon: f64,
    x: &VideoTensor,
) -> Result<f64> {
    let mut rhs = op.adjoint(y)?;
    rhs.scale(epsilon);
    rhs.axpy(1.0, u);
    let mut lhs = op.normal(x)?;
    lhs.scale(epsilon);
    lhs.axpy(1.0, x);
    Ok(lhs.sub(&rhs).norm() / rhs.norm())
}
