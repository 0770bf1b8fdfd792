//! Stochastic-autoencoder priors: encode, diffuse to level `t`, apply a
//! consistency map, decode.

pub mod external;
pub mod gaussian;
pub mod protocol;
pub mod schedule;
pub mod smoothing;

pub use external::{ExternalPrior, ExternalPriorConfig};
pub use gaussian::{GaussianMean, GaussianPrior};
pub use schedule::AlphaSchedule;
pub use smoothing::SmoothingPrior;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Shape, VideoTensor};

/// A consistency-model prior behind an encoder/decoder pair.
pub trait Prior: Send + Sync {
    fn name(&self) -> String;

    fn schedule(&self) -> &AlphaSchedule;

    fn encode(&self, x: &VideoTensor) -> Result<VideoTensor> {
        Ok(x.clone())
    }

    fn decode(&self, z: &VideoTensor) -> Result<VideoTensor> {
        Ok(z.clone())
    }

    /// Latent shape for a pixel-space input of shape `pixel`.
    fn latent_shape(&self, pixel: Shape) -> Shape {
        pixel
    }

    /// Estimate of the clean latent from `z_t`.
    fn consistency(&self, z: &VideoTensor, t: usize) -> Result<VideoTensor>;

    fn has_eps_predictor(&self) -> bool {
        false
    }

    /// Estimate of the noise contained in `z_t`.
    fn eps_predict(&self, _z: &VideoTensor, _t: usize) -> Result<VideoTensor> {
        Err(Error::Prior(format!("prior '{}' has no noise predictor", self.name())))
    }
}

/// Consistency map `f(z, t) = z` with the identity codec.
#[derive(Clone, Debug, Default)]
pub struct IdentityPrior {
    schedule: AlphaSchedule,
}

impl IdentityPrior {
    pub fn new(schedule: AlphaSchedule) -> Self {
        IdentityPrior { schedule }
    }
}

impl Prior for IdentityPrior {
    fn name(&self) -> String {
        "identity".into()
    }

    fn schedule(&self) -> &AlphaSchedule {
        &self.schedule
    }

    fn consistency(&self, z: &VideoTensor, t: usize) -> Result<VideoTensor> {
        self.schedule.check_timestep(t)?;
        Ok(z.clone())
    }
}

/// `𝒟(f(√ᾱ_t ℰ(x) + √(1−ᾱ_t) ε, t))` with `ε ~ N(0, I)` drawn from `rng`.
pub fn sae_step<R: Rng>(
    prior: &dyn Prior,
    x: &VideoTensor,
    t: usize,
    rng: &mut R,
) -> Result<VideoTensor> {
    let schedule = prior.schedule();
    schedule.check_timestep(t)?;
    sae_step_at(prior, x, t, schedule.alpha_bar(t), rng)
}

/// SAE step with an explicit noise level `ᾱ`, passing `t` to the consistency map.
pub(crate) fn sae_step_at<R: Rng>(
    prior: &dyn Prior,
    x: &VideoTensor,
    t: usize,
    alpha_bar: f64,
    rng: &mut R,
) -> Result<VideoTensor> {
    let noise = VideoTensor::randn(prior.latent_shape(x.shape()), rng);
    sae_apply(prior, x, t, alpha_bar, &noise)
}

fn sae_apply(
    prior: &dyn Prior,
    x: &VideoTensor,
    t: usize,
    alpha_bar: f64,
    noise: &VideoTensor,
) -> Result<VideoTensor> {
    let z0 = prior.encode(x)?;
    let latent = prior.latent_shape(x.shape());
    if z0.shape() != latent {
        return Err(Error::Prior(format!(
            "latent shape mismatch: prior '{}' expects {latent}, encoder produced {}",
            prior.name(),
            z0.shape()
        )));
    }
    let mut z = noise.scaled((1.0 - alpha_bar).sqrt());
    z.axpy(alpha_bar.sqrt(), &z0);
    let out = prior.consistency(&z, t)?;
    if out.shape() != latent {
        return Err(Error::Prior(format!(
            "latent shape mismatch: consistency returned {}, expected {latent}",
            out.shape()
        )));
    }
    let x_out = prior.decode(&out)?;
    x_out.expect_shape(x.shape())?;
    Ok(x_out)
}

/// Applies an SAE step to every frame separately with independent noise.
///
/// Noise is drawn frame by frame from `rng` in order, so the result does
/// not depend on how the frames are scheduled across threads.
pub fn sae_step_per_frame<R: Rng>(
    prior: &dyn Prior,
    x: &VideoTensor,
    t: usize,
    rng: &mut R,
) -> Result<VideoTensor> {
    let schedule = prior.schedule();
    schedule.check_timestep(t)?;
    let alpha_bar = schedule.alpha_bar(t);
    let frames: Vec<VideoTensor> = (0..x.shape().frames).map(|k| x.frame(k)).collect();
    let noises: Vec<VideoTensor> = frames
        .iter()
        .map(|f| VideoTensor::randn(prior.latent_shape(f.shape()), rng))
        .collect();
    let out = frames
        .par_iter()
        .zip(noises.par_iter())
        .map(|(f, n)| sae_apply(prior, f, t, alpha_bar, n))
        .collect::<Result<Vec<_>>>()?;
    VideoTensor::stack(&out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn noiseless_identity_step_returns_input() {
        let s = Shape::new(2, 3, 3, 1);
        let x = VideoTensor::randn(s, &mut rng(0));
        let prior = IdentityPrior::default();
        let out = sae_step_at(&prior, &x, 1, 1.0, &mut rng(1)).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn rejects_out_of_range_timestep() {
        let s = Shape::new(1, 2, 2, 1);
        let x = VideoTensor::zeros(s);
        let prior = IdentityPrior::default();
        assert!(sae_step(&prior, &x, 0, &mut rng(0)).is_err());
        assert!(sae_step(&prior, &x, 1000, &mut rng(0)).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let s = Shape::new(3, 4, 4, 2);
        let x = VideoTensor::randn(s, &mut rng(0));
        let prior = GaussianPrior::standard();
        let a = sae_step(&prior, &x, 375, &mut rng(7)).unwrap();
        let b = sae_step(&prior, &x, 375, &mut rng(7)).unwrap();
        assert_eq!(a, b);
        let smooth = SmoothingPrior::default();
        let a = sae_step_per_frame(&smooth, &x, 255, &mut rng(3)).unwrap();
        let b = sae_step_per_frame(&smooth, &x, 255, &mut rng(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_step_is_noisy_scaled_input() {
        let s = Shape::new(1, 4, 4, 1);
        let x = VideoTensor::randn(s, &mut rng(0));
        let prior = IdentityPrior::default();
        let t = 522;
        let a = prior.schedule().alpha_bar(t);
        let out = sae_step(&prior, &x, t, &mut rng(5)).unwrap();
        let eps = VideoTensor::randn(s, &mut rng(5));
        let expected = x.zip_map(&eps, |xi, ei| a.sqrt() * xi + (1.0 - a).sqrt() * ei);
        assert!(out.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn per_frame_step_uses_independent_noise() {
        let s = Shape::new(3, 2, 2, 1);
        let x = VideoTensor::zeros(s);
        let out = sae_step_per_frame(&IdentityPrior::default(), &x, 500, &mut rng(0)).unwrap();
        assert_eq!(out.shape(), s);
        assert_ne!(out.frame_data(0), out.frame_data(1));
    }

    #[test]
    fn per_frame_matches_sequential_frame_steps() {
        let s = Shape::new(4, 5, 5, 2);
        let x = VideoTensor::randn(s, &mut rng(0));
        let prior = SmoothingPrior::default();
        let par = sae_step_per_frame(&prior, &x, 375, &mut rng(9)).unwrap();
        let mut r = rng(9);
        let seq: Vec<_> = (0..4).map(|k| sae_step(&prior, &x.frame(k), 375, &mut r).unwrap()).collect();
        assert_eq!(par, VideoTensor::stack(&seq).unwrap());
    }

    #[test]
    fn identity_prior_has_no_eps() {
        let p = IdentityPrior::default();
        assert!(!p.has_eps_predictor());
        assert!(p.eps_predict(&VideoTensor::zeros(Shape::new(1, 1, 1, 1)), 5).is_err());
    }
}
