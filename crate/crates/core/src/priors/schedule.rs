use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear-β variance-preserving noise schedule with cumulative products `ᾱ_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaSchedule {
    total_steps: usize,
    beta_start: f64,
    beta_end: f64,
    alpha_bar: Vec<f64>,
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        AlphaSchedule::linear(1000, 1e-4, 0.02).expect("default schedule is valid")
    }
}

impl AlphaSchedule {
    pub fn linear(total_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if total_steps < 2 {
            return Err(Error::InvalidArgument(format!(
                "schedule needs at least 2 steps, got {total_steps}"
            )));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let mut alpha_bar = Vec::with_capacity(total_steps);
        let mut acc = 1.0;
        for i in 0..total_steps {
            acc *= 1.0 - beta_at(i, total_steps, beta_start, beta_end);
            alpha_bar.push(acc);
        }
        Ok(AlphaSchedule {
            total_steps,
            beta_start,
            beta_end,
            alpha_bar,
        })
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn beta(&self, t: usize) -> f64 {
        beta_at(t, self.total_steps, self.beta_start, self.beta_end)
    }

    /// Timesteps usable by a sampler: `0 < t < total_steps`.
    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t == 0 || t >= self.total_steps {
            return Err(Error::InvalidArgument(format!(
                "timestep {t} outside 1..{}",
                self.total_steps
            )));
        }
        Ok(())
    }

    /// `ᾱ_t = Π_{i ≤ t} (1 − β_i)`; defined for `0 ≤ t < total_steps`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
}

fn beta_at(i: usize, n: usize, b0: f64, b1: f64) -> f64 {
    b0 + (b1 - b0) * i as f64 / (n - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strictly_decreasing_in_open_unit_interval() {
        let s = AlphaSchedule::default();
        assert_eq!(s.total_steps(), 1000);
        let a = s.alpha_bars();
        assert!((a[0] - 0.9999).abs() < 1e-15);
        assert!(a[999] < 1e-4);
        for w in a.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(a.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn recomputes_from_beta() {
        let s = AlphaSchedule::default();
        let mut acc = 1.0;
        for t in 0..s.total_steps() {
            acc *= 1.0 - s.beta(t);
            assert!((acc - s.alpha_bar(t)).abs() <= 1e-12);
        }
        assert!((s.beta(0) - 1e-4).abs() < 1e-18);
        assert!((s.beta(999) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn timestep_range() {
        let s = AlphaSchedule::default();
        assert!(s.check_timestep(0).is_err());
        assert!(s.check_timestep(1000).is_err());
        assert!(s.check_timestep(1).is_ok());
        assert!(s.check_timestep(999).is_ok());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(AlphaSchedule::linear(1, 1e-4, 0.02).is_err());
        assert!(AlphaSchedule::linear(10, 0.0, 0.02).is_err());
        assert!(AlphaSchedule::linear(10, 0.03, 0.02).is_err());
        assert!(AlphaSchedule::linear(10, 1e-4, 1.0).is_err());
    }
}
