use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prox::TvProxProblem;
use crate::regularizers::{div3, grad3};
use crate::tensor::VideoTensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub iters: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Smoothing of the TV magnitude, `√(‖g‖² + μ²) − μ`.
    pub mu: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-3,
            iters: 100,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            mu: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::InvalidArgument(format!("adam.{what} out of range: {v}")))
        };
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr", self.lr);
        }
        if self.iters == 0 {
            return Err(Error::InvalidArgument("adam.iters must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", self.beta1);
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", self.beta2);
        }
        if !(self.eps > 0.0) {
            return bad("eps", self.eps);
        }
        if !(self.mu > 0.0) {
            return bad("mu", self.mu);
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AdamOutcome {
    pub x: VideoTensor,
    pub objective: f64,
}

/// Objective with the TV term replaced by its smoothed version.
pub fn smoothed_objective(problem: &TvProxProblem<'_>, x: &VideoTensor, mu: f64) -> Result<f64> {
    let g = grad3(x, &problem.weights);
    let tv: f64 = (0..g.h.len())
        .map(|i| (g.magnitude(i).powi(2) + mu * mu).sqrt() - mu)
        .sum();
    let mut f = problem.data_term(x)? + tv;
    if problem.keep_trust {
        f += x.sub(problem.anchor).norm_sq() * problem.trust_weight() / 2.0;
    }
    Ok(f)
}

pub fn smoothed_gradient(
    problem: &TvProxProblem<'_>,
    x: &VideoTensor,
    mu: f64,
) -> Result<VideoTensor> {
    let mut grad = problem.smooth_gradient(x)?;
    if !problem.weights.is_zero() {
        let mut g = grad3(x, &problem.weights);
        for i in 0..g.h.len() {
            let s = (g.magnitude(i).powi(2) + mu * mu).sqrt();
            g.h[i] /= s;
            g.v[i] /= s;
            g.t[i] /= s;
        }
        grad.axpy(1.0, &div3(&g, &problem.weights));
    }
    Ok(grad)
}

/// Adam on the smoothed objective, started from the anchor.
pub fn prox_tv_data_adam(problem: &TvProxProblem<'_>, params: &AdamParams) -> Result<AdamOutcome> {
    params.validate()?;
    let mut x = problem.anchor.clone();
    let n = x.len();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let (b1, b2) = (params.beta1, params.beta2);
    for k in 0..params.iters {
        let g = smoothed_gradient(problem, &x, params.mu)?;
        g.ensure_finite().map_err(|e| e.at_iteration(k))?;
        let c1 = 1.0 - b1.powi(k as i32 + 1);
        let c2 = 1.0 - b2.powi(k as i32 + 1);
        for ((xi, gi), (mi, vi)) in x
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            *xi -= params.lr * (*mi / c1) / ((*vi / c2).sqrt() + params.eps);
        }
    }
    let objective = smoothed_objective(problem, &x, params.mu)?;
    Ok(AdamOutcome { x, objective })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{LinearOp, OpKind};
    use crate::prox::cg::CgParams;
    use crate::prox::pdhg::{prox_tv_data_pdhg, PdhgParams};
    use crate::regularizers::TVWeights;
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = Shape::new(4, 4, 4, 2);
        let op = LinearOp::new(OpKind::chain([OpKind::TemporalPool(2), OpKind::SpatialPool(2)]), s)
            .unwrap();
        let mut r = rng(0);
        let y = VideoTensor::randn(op.output_shape(), &mut r);
        let anchor = VideoTensor::randn(s, &mut r);
        let x = VideoTensor::randn(s, &mut r);
        let mu = 1e-2;
        let p = TvProxProblem::new(&op, &y, &anchor, TVWeights::new(0.3, 0.2, 0.5), 0.7, 4.0)
            .unwrap();
        let g = smoothed_gradient(&p, &x, mu).unwrap();
        let h = 1e-6;
        for idx in [0, 7, 31, 64, 127] {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            let fd = (smoothed_objective(&p, &xp, mu).unwrap() - smoothed_objective(&p, &xm, mu).unwrap())
                / (2.0 * h);
            assert!((fd - g.data()[idx]).abs() < 1e-5 * (1.0 + fd.abs()), "{idx}: {fd} vs {}", g.data()[idx]);
        }
    }

    #[test]
    fn smoothed_objective_approaches_exact() {
        let s = Shape::new(3, 3, 3, 1);
        let op = LinearOp::identity(s);
        let mut r = rng(1);
        let y = VideoTensor::randn(s, &mut r);
        let p = TvProxProblem::new(&op, &y, &y, TVWeights::new(0.2, 0.2, 0.2), 1.0, 1.0).unwrap();
        let x = VideoTensor::randn(s, &mut r);
        let diff = (smoothed_objective(&p, &x, 1e-8).unwrap() - p.objective(&x).unwrap()).abs();
        // each voxel contributes at most μ
        assert!(diff <= x.len() as f64 * 1e-8);
    }

    #[test]
    fn decreases_objective() {
        let s = Shape::new(4, 6, 6, 1);
        let op = LinearOp::new(OpKind::SpatialPool(2), s).unwrap();
        let mut r = rng(2);
        let y = VideoTensor::randn(op.output_shape(), &mut r);
        let anchor = VideoTensor::randn(s, &mut r);
        let p = TvProxProblem::new(&op, &y, &anchor, TVWeights::new(0.1, 0.1, 0.1), 1.0, 1.0).unwrap();
        let out = prox_tv_data_adam(&p, &AdamParams { lr: 1e-2, iters: 200, ..Default::default() })
            .unwrap();
        assert!(out.objective < p.objective(&anchor).unwrap());
    }

    #[test]
    fn agrees_with_pdhg_on_temporal_tv() {
        let s = Shape::new(8, 4, 4, 1);
        let op = LinearOp::new(OpKind::TemporalPool(2), s).unwrap();
        let mut r = rng(3);
        let y = VideoTensor::randn(op.output_shape(), &mut r);
        let anchor = VideoTensor::randn(s, &mut r);
        let p = TvProxProblem::new(&op, &y, &anchor, TVWeights::temporal(0.2), 1.0, 2.0).unwrap();
        let pd = prox_tv_data_pdhg(
            &p,
            &PdhgParams { iters: 2000, ..Default::default() },
            &CgParams { max_iters: 20, tol: 1e-12 },
        )
        .unwrap();
        let ad = prox_tv_data_adam(&p, &AdamParams { lr: 1e-2, iters: 3000, ..Default::default() })
            .unwrap();
        let (fp, fa) = (p.objective(&pd.x).unwrap(), p.objective(&ad.x).unwrap());
        assert!((fp - fa).abs() <= 5e-3 * fp.abs(), "pdhg {fp} adam {fa}");
        assert!(fp <= fa + 1e-9);
    }

    #[test]
    fn invalid_params() {
        assert!(AdamParams { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(AdamParams { beta1: 1.0, ..Default::default() }.validate().is_err());
        assert!(AdamParams { iters: 0, ..Default::default() }.validate().is_err());
    }
}
