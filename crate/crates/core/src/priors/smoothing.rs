use crate::error::Result;
use crate::filters::{blur_axis, gaussian_kernel, Axis};
use crate::priors::schedule::AlphaSchedule;
use crate::priors::Prior;
use crate::tensor::VideoTensor;

/// Stand-in denoiser: undo the `√ᾱ_t` scaling, then blur with a width
/// proportional to the remaining noise level `√(1 − ᾱ)/√ᾱ`.
#[derive(Clone, Debug)]
pub struct SmoothingPrior {
    schedule: AlphaSchedule,
    /// Spatial blur width per unit of noise level; time uses half of it.
    scale: f64,
}

impl Default for SmoothingPrior {
    fn default() -> Self {
        SmoothingPrior::new(AlphaSchedule::default())
    }
}

impl SmoothingPrior {
    pub const DEFAULT_SCALE: f64 = 8.0;

    pub fn new(schedule: AlphaSchedule) -> Self {
        SmoothingPrior {
            schedule,
            scale: Self::DEFAULT_SCALE,
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Spatial and temporal blur widths at level `ᾱ`.
    pub fn blur_sigmas(&self, alpha_bar: f64) -> (f64, f64) {
        let spatial = self.scale * (1.0 - alpha_bar).sqrt() / alpha_bar.sqrt();
        (spatial, spatial / 2.0)
    }

    pub(crate) fn apply(&self, z: &VideoTensor, alpha_bar: f64) -> VideoTensor {
        let (ss, st) = self.blur_sigmas(alpha_bar);
        let ks = gaussian_kernel(ss);
        let kt = gaussian_kernel(st);
        let scaled = z.scaled(1.0 / alpha_bar.sqrt());
        let out = blur_axis(&scaled, Axis::Height, &ks);
        let out = blur_axis(&out, Axis::Width, &ks);
        blur_axis(&out, Axis::Time, &kt)
    }
}

impl Prior for SmoothingPrior {
    fn name(&self) -> String {
        "smoothing".into()
    }

    fn schedule(&self) -> &AlphaSchedule {
        &self.schedule
    }

    fn consistency(&self, z: &VideoTensor, t: usize) -> Result<VideoTensor> {
        self.schedule.check_timestep(t)?;
        Ok(self.apply(z, self.schedule.alpha_bar(t)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noiseless_level_is_identity() {
        let z = VideoTensor::randn(Shape::new(3, 6, 6, 2), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(SmoothingPrior::default().apply(&z, 1.0).max_abs_diff(&z) < 1e-15);
        // smallest schedule step: σ ≈ 0.02 px, kernel still narrow
        let p = SmoothingPrior::default();
        let out = p.consistency(&z, 1).unwrap();
        assert!(out.max_abs_diff(&z) < 1e-2);
    }

    #[test]
    fn constants_only_rescaled() {
        let p = SmoothingPrior::default();
        let z = VideoTensor::filled(Shape::new(4, 8, 8, 3), 0.6);
        for t in [125, 522, 757] {
            let a = p.schedule().alpha_bar(t);
            let out = p.consistency(&z, t).unwrap();
            assert!(out.map(|v| v * a.sqrt()).max_abs_diff(&z) < 1e-12);
        }
    }

    #[test]
    fn blur_widths_follow_noise_level() {
        let s = AlphaSchedule::default();
        let mut last = 0.0;
        for t in [125, 255, 375, 522, 757] {
            let (sp, tm) = SmoothingPrior::default().blur_sigmas(s.alpha_bar(t));
            assert!(sp > last);
            assert!((tm - sp / 2.0).abs() < 1e-15);
            last = sp;
        }
    }

    #[test]
    fn shape_preserved_and_noise_reduced() {
        let p = SmoothingPrior::default();
        let s = Shape::new(5, 16, 16, 1);
        let z = VideoTensor::randn(s, &mut ChaCha8Rng::seed_from_u64(1));
        let t = 255;
        let out = p.consistency(&z, t).unwrap();
        assert_eq!(out.shape(), s);
        let a = p.schedule().alpha_bar(t);
        assert!(out.norm() < z.norm() / a.sqrt());
    }
}
