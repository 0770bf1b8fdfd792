//! Self-checks: adjoint dot tests, a dense oracle for the quadratic prox and
//! agreement between the two TV prox solvers.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::operators::{LinearOp, OpKind, Problem};
use crate::prox::{
    prox_quadratic, prox_tv_data_adam, prox_tv_data_pdhg, AdamParams, CgParams, PdhgParams,
    TvProxProblem,
};
use crate::regularizers::TVWeights;
use crate::tensor::{Shape, VideoTensor};

pub const DOT_TOLERANCE: f64 = 1e-5;
pub const CG_TOLERANCE: f64 = 1e-5;
pub const TV_GAP_TOLERANCE: f64 = 5e-3;

/// One named measurement against a threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
        }
    }

    pub fn passed(&self) -> bool {
        self.value <= self.threshold
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {:.3e} (limit {:.1e})", self.name, self.value, self.threshold)
    }
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub seeds: u64,
    pub shape: Shape,
    /// Perturbs every adjoint so the dot tests must fail.
    pub break_adjoint: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seeds: 20,
            shape: Shape::new(9, 16, 16, 3),
            break_adjoint: false,
        }
    }
}

/// Single operators and the three benchmark compositions.
pub fn operator_suite() -> Vec<(String, OpKind)> {
    vec![
        ("temporal-pool(4)".into(), OpKind::TemporalPool(4)),
        ("temporal-pool(8)".into(), OpKind::TemporalPool(8)),
        ("spatial-pool(4)".into(), OpKind::SpatialPool(4)),
        ("spatial-pool(8)".into(), OpKind::SpatialPool(8)),
        ("temporal-circ-blur(7)".into(), OpKind::TemporalCircBlur(7)),
        ("problem A".into(), Problem::A.operator_kind()),
        ("problem B".into(), Problem::B.operator_kind()),
        ("problem C".into(), Problem::C.operator_kind()),
    ]
}

/// `|⟨𝒜x, y⟩ − ⟨x, 𝒜ᵀy⟩| / (‖𝒜x‖‖y‖)` for Gaussian `x`, `y`.
pub fn dot_test(op: &LinearOp, seed: u64, broken: bool) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = VideoTensor::randn(op.input_shape(), &mut rng);
    let y = VideoTensor::randn(op.output_shape(), &mut rng);
    let ax = op.apply(&x)?;
    let mut aty = op.adjoint(&y)?;
    if broken {
        aty.scale(1.01);
        aty.data_mut()[0] += 1.0;
    }
    Ok((ax.dot(&y) - x.dot(&aty)).abs() / (ax.norm() * y.norm()))
}

/// Worst dot-test error over the seeds for every operator in the suite.
pub fn check_adjoints(opts: &VerifyOptions) -> Result<Vec<Check>> {
    operator_suite()
        .into_iter()
        .map(|(name, kind)| {
            let op = LinearOp::new(kind, opts.shape)?;
            let mut worst: f64 = 0.0;
            for seed in 0..opts.seeds {
                worst = worst.max(dot_test(&op, seed, opts.break_adjoint)?);
            }
            Ok(Check::new(format!("dot test {name}"), worst, DOT_TOLERANCE))
        })
        .collect()
}

/// Materializes `𝒜` column by column.
pub fn dense_matrix(op: &LinearOp) -> Result<DMatrix<f64>> {
    let n = op.input_shape().len();
    let mut a = DMatrix::zeros(op.output_shape().len(), n);
    let mut e = VideoTensor::zeros(op.input_shape());
    for j in 0..n {
        e.data_mut()[j] = 1.0;
        let col = op.apply(&e)?;
        e.data_mut()[j] = 0.0;
        for (i, v) in col.data().iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
    Ok(a)
}

/// Dense solution of `(Id + ε𝒜ᵀ𝒜) x = u + ε𝒜ᵀy`.
pub fn dense_prox_quadratic(
    op: &LinearOp,
    y: &VideoTensor,
    u: &VideoTensor,
    epsilon: f64,
) -> Result<VideoTensor> {
    let a = dense_matrix(op)?;
    let n = a.ncols();
    let lhs = DMatrix::identity(n, n) + epsilon * a.transpose() * &a;
    let rhs = DVector::from_column_slice(u.data())
        + epsilon * a.transpose() * DVector::from_column_slice(y.data());
    let x = lhs
        .cholesky()
        .expect("Id + εAᵀA is positive definite")
        .solve(&rhs);
    VideoTensor::new(op.input_shape(), x.as_slice().to_vec())
}

/// 64-dimensional instance for the dense comparison.
pub fn cg_oracle_operator() -> Result<LinearOp> {
    LinearOp::new(
        OpKind::chain([OpKind::TemporalCircBlur(3), OpKind::SpatialPool(2)]),
        Shape::new(4, 4, 4, 1),
    )
}

/// Relative error of CG against the dense solve for each `ε`.
pub fn check_cg_oracle(epsilons: &[f64]) -> Result<Vec<Check>> {
    let op = cg_oracle_operator()?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let y = VideoTensor::randn(op.output_shape(), &mut rng);
    let u = VideoTensor::randn(op.input_shape(), &mut rng);
    let cg = CgParams {
        max_iters: 200,
        tol: 1e-13,
    };
    epsilons
        .iter()
        .map(|&eps| {
            let x = prox_quadratic(&op, &y, &u, eps, &cg)?;
            let d = dense_prox_quadratic(&op, &y, &u, eps)?;
            let err = x.sub(&d).norm() / d.norm();
            Ok(Check::new(format!("CG vs dense solve, eps={eps:e}"), err, CG_TOLERANCE))
        })
        .collect()
}

/// The bundled 8×8×5 TV prox instance: a drifting bright square measured
/// through a 3-frame circular blur.
pub struct TvInstance {
    pub op: LinearOp,
    pub y: VideoTensor,
    pub anchor: VideoTensor,
    pub weights: TVWeights,
    pub sigma_n: f64,
    pub delta_eta: f64,
}

impl TvInstance {
    pub fn bundled() -> Result<Self> {
        let s = Shape::new(5, 8, 8, 1);
        let op = LinearOp::new(OpKind::TemporalCircBlur(3), s)?;
        let truth = VideoTensor::from_fn(s, |t, h, w, _| {
            if (2..5).contains(&h) && (t..t + 3).contains(&w) {
                0.9
            } else {
                0.1
            }
        });
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut y = op.apply(&truth)?;
        y.axpy(0.05, &VideoTensor::randn(s, &mut rng));
        let mut anchor = truth.clone();
        anchor.axpy(0.1, &VideoTensor::randn(s, &mut rng));
        Ok(TvInstance {
            op,
            y,
            anchor,
            weights: TVWeights::temporal(0.05),
            sigma_n: 0.1,
            delta_eta: 0.5,
        })
    }

    pub fn problem(&self) -> Result<TvProxProblem<'_>> {
        TvProxProblem::new(
            &self.op,
            &self.y,
            &self.anchor,
            self.weights,
            self.sigma_n,
            self.delta_eta,
        )
    }
}

/// Objective values reached by PDHG and Adam on the bundled instance.
pub fn tv_solver_objectives() -> Result<(f64, f64)> {
    let inst = TvInstance::bundled()?;
    let p = inst.problem()?;
    let cg = CgParams {
        max_iters: 30,
        tol: 1e-12,
    };
    let pd = prox_tv_data_pdhg(&p, &PdhgParams { iters: 2000, ..Default::default() }, &cg)?;
    let ad = prox_tv_data_adam(
        &p,
        &AdamParams {
            lr: 1e-2,
            iters: 3000,
            ..Default::default()
        },
    )?;
    Ok((p.objective(&pd.x)?, p.objective(&ad.x)?))
}

pub fn check_tv_cross_solver() -> Result<Check> {
    let (fp, fa) = tv_solver_objectives()?;
    let gap = (fp - fa).abs() / fp.abs().max(f64::MIN_POSITIVE);
    Ok(Check::new("PDHG vs Adam objective gap", gap, TV_GAP_TOLERANCE))
}

/// Every check, in a fixed order.
pub fn run_all(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let mut out = check_adjoints(opts)?;
    out.extend(check_cg_oracle(&[1.0, 1e3, 1e5])?);
    out.push(check_tv_cross_solver()?);
    Ok(out)
}
