use crate::error::{Error, Result};
use crate::priors::schedule::AlphaSchedule;
use crate::priors::Prior;
use crate::tensor::VideoTensor;

#[derive(Clone, Debug, PartialEq)]
pub enum GaussianMean {
    Scalar(f64),
    /// Either the full input shape, or a single frame broadcast over time.
    Tensor(VideoTensor),
}

/// Isotropic Gaussian target `N(μ, s²I)` with the identity codec.
///
/// Its consistency map and noise predictor are available in closed form.
#[derive(Clone, Debug)]
pub struct GaussianPrior {
    mean: GaussianMean,
    std: f64,
    schedule: AlphaSchedule,
}

impl GaussianPrior {
    pub fn new(mean: GaussianMean, std: f64, schedule: AlphaSchedule) -> Result<Self> {
        if !(std > 0.0) || !std.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "Gaussian prior std must be finite and > 0, got {std}"
            )));
        }
        if let GaussianMean::Tensor(m) = &mean {
            m.ensure_finite()?;
        }
        Ok(GaussianPrior {
            mean,
            std,
            schedule,
        })
    }

    /// `N(0, I)` on the default schedule.
    pub fn standard() -> Self {
        GaussianPrior::new(GaussianMean::Scalar(0.0), 1.0, AlphaSchedule::default())
            .expect("standard prior is valid")
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn mean(&self) -> &GaussianMean {
        &self.mean
    }

    /// Mean at flat index `i` of a tensor shaped like `z`.
    fn mean_fn<'a>(&'a self, z: &VideoTensor) -> Result<Box<dyn Fn(usize) -> f64 + 'a>> {
        match &self.mean {
            GaussianMean::Scalar(m) => {
                let m = *m;
                Ok(Box::new(move |_| m))
            }
            GaussianMean::Tensor(m) => {
                let (ms, zs) = (m.shape(), z.shape());
                if ms == zs {
                    Ok(Box::new(move |i| m.data()[i]))
                } else if ms.frames == 1 && ms.with_frames(zs.frames) == zs {
                    let fl = ms.frame_len();
                    Ok(Box::new(move |i| m.data()[i % fl]))
                } else {
                    Err(Error::ShapeMismatch {
                        expected: ms,
                        actual: zs,
                    })
                }
            }
        }
    }

    /// Posterior mean `E[z_0 | z_t]`.
    pub fn posterior_mean(&self, z: &VideoTensor, t: usize) -> Result<VideoTensor> {
        self.schedule.check_timestep(t)?;
        let a = self.schedule.alpha_bar(t);
        let s2 = self.std * self.std;
        let gain = a.sqrt() * s2 / (a * s2 + 1.0 - a);
        let mu = self.mean_fn(z)?;
        let mut out = z.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let m = mu(i);
            *v = m + gain * (*v - a.sqrt() * m);
        }
        Ok(out)
    }
}

impl Prior for GaussianPrior {
    fn name(&self) -> String {
        "gaussian".into()
    }

    fn schedule(&self) -> &AlphaSchedule {
        &self.schedule
    }

    /// `μ + (z_t − √ᾱ_t μ) · s / √(ᾱ_t s² + 1 − ᾱ_t)`
    fn consistency(&self, z: &VideoTensor, t: usize) -> Result<VideoTensor> {
        self.schedule.check_timestep(t)?;
        let a = self.schedule.alpha_bar(t);
        let factor = self.std / (a * self.std * self.std + 1.0 - a).sqrt();
        let mu = self.mean_fn(z)?;
        let mut out = z.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let m = mu(i);
            *v = m + (*v - a.sqrt() * m) * factor;
        }
        Ok(out)
    }

    fn has_eps_predictor(&self) -> bool {
        true
    }

    /// `(z_t − √ᾱ_t E[z_0|z_t]) / √(1 − ᾱ_t)`
    fn eps_predict(&self, z: &VideoTensor, t: usize) -> Result<VideoTensor> {
        let a = self.schedule.alpha_bar(t);
        let e = self.posterior_mean(z, t)?;
        Ok(z.zip_map(&e, |zi, ei| (zi - a.sqrt() * ei) / (1.0 - a).sqrt()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::sae_step;
    use crate::tensor::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn prior(mu: f64, s: f64) -> GaussianPrior {
        GaussianPrior::new(GaussianMean::Scalar(mu), s, AlphaSchedule::default()).unwrap()
    }

    fn scalar(v: f64) -> VideoTensor {
        VideoTensor::filled(Shape::new(1, 1, 1, 1), v)
    }

    /// Integrates `dx/du = ½x + ½∇log p_u(x)` in `u = ln ᾱ` from `ln ᾱ_t` to 0
    /// where `p_u = N(√ᾱ μ, ᾱs² + 1 − ᾱ)`.
    fn pf_ode_endpoint(z: f64, alpha_t: f64, mu: f64, s: f64, steps: usize) -> f64 {
        let rhs = |u: f64, x: f64| {
            let a = u.exp();
            let score = -(x - a.sqrt() * mu) / (a * s * s + 1.0 - a);
            0.5 * x + 0.5 * score
        };
        let u0 = alpha_t.ln();
        let h = -u0 / steps as f64;
        let (mut u, mut x) = (u0, z);
        for _ in 0..steps {
            let k1 = rhs(u, x);
            let k2 = rhs(u + h / 2.0, x + h / 2.0 * k1);
            let k3 = rhs(u + h / 2.0, x + h / 2.0 * k2);
            let k4 = rhs(u + h, x + h * k3);
            x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            u += h;
        }
        x
    }

    #[test]
    fn standard_normal_is_identity() {
        let p = GaussianPrior::standard();
        let z = VideoTensor::randn(Shape::new(2, 3, 3, 1), &mut rng(0));
        for t in [1, 125, 757, 999] {
            assert!(p.consistency(&z, t).unwrap().max_abs_diff(&z) < 1e-14);
        }
    }

    #[test]
    fn scaled_mean_is_fixed_point() {
        let p = prior(0.7, 2.5);
        for t in [10, 400, 900] {
            let a = p.schedule().alpha_bar(t);
            let out = p.consistency(&scalar(a.sqrt() * 0.7), t).unwrap();
            assert!((out.data()[0] - 0.7).abs() < 1e-14);
        }
    }

    #[test]
    fn matches_probability_flow_ode() {
        for (mu, s) in [(0.0, 2.0), (0.3, 0.5), (-1.0, 1.5)] {
            let p = prior(mu, s);
            for t in [125, 375, 757] {
                let a = p.schedule().alpha_bar(t);
                for z in [-1.3, 0.2, 2.1] {
                    let f = p.consistency(&scalar(z), t).unwrap().data()[0];
                    let ode = pf_ode_endpoint(z, a, mu, s, 10_000);
                    assert!((f - ode).abs() < 1e-4, "t={t} z={z}: {f} vs {ode}");
                }
            }
        }
    }

    #[test]
    fn tweedie_round_trip() {
        let p = prior(0.4, 1.7);
        let z = VideoTensor::randn(Shape::new(2, 2, 2, 2), &mut rng(1));
        for t in [50, 500, 950] {
            let a = p.schedule().alpha_bar(t);
            let e = p.posterior_mean(&z, t).unwrap();
            let eps = p.eps_predict(&z, t).unwrap();
            let back = e.zip_map(&eps, |ei, ni| a.sqrt() * ei + (1.0 - a).sqrt() * ni);
            assert!(back.max_abs_diff(&z) < 1e-12);
        }
    }

    #[test]
    fn standard_eps_closed_form() {
        let p = GaussianPrior::standard();
        let z = VideoTensor::randn(Shape::new(1, 3, 3, 1), &mut rng(2));
        let a = p.schedule().alpha_bar(300);
        let eps = p.eps_predict(&z, 300).unwrap();
        assert!(eps.max_abs_diff(&z.scaled((1.0 - a).sqrt())) < 1e-14);
        let zero = p.eps_predict(&VideoTensor::zeros(z.shape()), 300).unwrap();
        assert_eq!(zero.norm(), 0.0);
    }

    #[test]
    fn eps_matches_conditional_monte_carlo() {
        // E[ε | z_t] is affine in z_t; fit it by least squares on 10⁶ samples.
        let (mu, s, t) = (0.5, 1.5, 400);
        let p = prior(mu, s);
        let a = p.schedule().alpha_bar(t);
        let mut r = rng(3);
        let n = 1_000_000;
        let (mut sz, mut se, mut szz, mut sze) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let x0 = mu + s * r.sample::<f64, _>(StandardNormal);
            let e: f64 = r.sample(StandardNormal);
            let z = a.sqrt() * x0 + (1.0 - a).sqrt() * e;
            sz += z;
            se += e;
            szz += z * z;
            sze += z * e;
        }
        let nf = n as f64;
        let slope = (sze / nf - sz / nf * se / nf) / (szz / nf - (sz / nf).powi(2));
        let intercept = se / nf - slope * sz / nf;
        let e0 = p.eps_predict(&scalar(0.0), t).unwrap().data()[0];
        let e1 = p.eps_predict(&scalar(1.0), t).unwrap().data()[0];
        assert!((slope - (e1 - e0)).abs() < 5e-3, "{slope} vs {}", e1 - e0);
        assert!((intercept - e0).abs() < 5e-3, "{intercept} vs {e0}");
    }

    #[test]
    fn sae_step_preserves_target_law() {
        let (mu, s) = (0.3, 1.8);
        let p = prior(mu, s);
        let shape = Shape::new(1, 40, 50, 1);
        let n = shape.len() as f64;
        let mut r = rng(4);
        for t in [125, 522, 757] {
            let x = VideoTensor::randn(shape, &mut r).map(|v| mu + s * v);
            let out = sae_step(&p, &x, t, &mut r).unwrap();
            let m = out.mean();
            let var = out.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
            assert!((m - mu).abs() <= 3.0 * s / n.sqrt(), "t={t} mean {m}");
            assert!((var - s * s).abs() <= 3.0 * s * s * (2.0 / (n - 1.0)).sqrt(), "t={t} var {var}");
        }
    }

    #[test]
    fn repeated_steps_forget_initialisation() {
        let p = GaussianPrior::standard();
        let shape = Shape::new(1, 1, 1, 4);
        let dim = shape.len() as f64;
        let mut sum = VideoTensor::zeros(shape);
        let chains = 1000;
        for c in 0..chains {
            let mut r = rng(100 + c);
            let mut x = VideoTensor::filled(shape, 5.0);
            for _ in 0..10 {
                x = sae_step(&p, &x, 500, &mut r).unwrap();
            }
            sum.axpy(1.0, &x);
        }
        sum.scale(1.0 / chains as f64);
        assert!(sum.norm() <= 0.1 * dim.sqrt());
    }

    #[test]
    fn injected_variance_grows_with_t() {
        let p = GaussianPrior::standard();
        let shape = Shape::new(1, 50, 80, 1);
        let x = VideoTensor::randn(shape, &mut rng(5));
        let mut last = 0.0;
        for t in [125, 255, 375, 522, 757] {
            let out = sae_step(&p, &x, t, &mut rng(6)).unwrap();
            // conditional mean given x is √ᾱ x
            let a = p.schedule().alpha_bar(t);
            let resid = out.zip_map(&x, |o, xi| o - a.sqrt() * xi);
            let var = resid.norm_sq() / shape.len() as f64;
            assert!(var > last, "t={t}: {var} <= {last}");
            last = var;
        }
    }

    #[test]
    fn broadcasts_single_frame_mean() {
        let m = VideoTensor::from_fn(Shape::new(1, 2, 2, 1), |_, h, w, _| (h * 2 + w) as f64);
        let p = GaussianPrior::new(GaussianMean::Tensor(m.clone()), 1.0, AlphaSchedule::default())
            .unwrap();
        let t = 200;
        let a = p.schedule().alpha_bar(t);
        let z = VideoTensor::from_fn(Shape::new(3, 2, 2, 1), |_, h, w, _| a.sqrt() * (h * 2 + w) as f64);
        let out = p.consistency(&z, t).unwrap();
        for k in 0..3 {
            assert_eq!(out.frame(k).data().len(), 4);
            for (o, e) in out.frame_data(k).iter().zip(m.data()) {
                assert!((o - e).abs() < 1e-12);
            }
        }
        let bad = VideoTensor::zeros(Shape::new(3, 3, 2, 1));
        assert!(p.consistency(&bad, t).is_err());
    }

    #[test]
    fn rejects_nonpositive_std() {
        assert!(GaussianPrior::new(GaussianMean::Scalar(0.0), 0.0, AlphaSchedule::default()).is_err());
    }
}
