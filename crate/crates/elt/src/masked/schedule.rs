//! Cosine unmasking schedule and the annealed sampling temperature.

use serde::{Deserialize, Serialize};

use crate::error::{EltError, Result};

pub const DEFAULT_TEMP_BIAS: f64 = 0.5;
pub const DEFAULT_TEMP_SCALE: f64 = 0.8;

/// Tokens still masked AFTER step k of a K-step decode:
/// floor(cos(pi/2 * (k+1)/K) * n_tokens). Zero at the final step.
pub fn cosine_mask_count(k: usize, steps: usize, n_tokens: usize) -> Result<usize> {
    if k >= steps {
        return Err(EltError::Config(format!(
            "step {k} out of range for a {steps}-step schedule"
        )));
    }
    let r = (k + 1) as f64 / steps as f64;
    let frac = (std::f64::consts::FRAC_PI_2 * r).cos();
    Ok((frac * n_tokens as f64).floor() as usize)
}

/// STemp = bias + scale * (1 - (k+1)/K).
pub fn sampling_temperature(k: usize, steps: usize, bias: f64, scale: f64) -> f64 {
    bias + scale * (1.0 - (k + 1) as f64 / steps as f64)
}

/// Precomputed decode schedule: per-step target mask counts plus the
/// temperature parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeSchedule {
    pub steps: usize,
    pub mask_counts: Vec<usize>,
    pub temp_bias: f64,
    pub temp_scale: f64,
}

impl DecodeSchedule {
    pub fn cosine(steps: usize, n_tokens: usize, temp_bias: f64, temp_scale: f64) -> Result<Self> {
        if steps == 0 {
            return Err(EltError::Config("decode needs at least one step".to_string()));
        }
        let mask_counts = (0..steps)
            .map(|k| cosine_mask_count(k, steps, n_tokens))
            .collect::<Result<Vec<_>>>()?;
        debug_assert!(mask_counts.windows(2).all(|w| w[0] >= w[1]));
        debug_assert_eq!(*mask_counts.last().expect("steps >= 1"), 0);
        Ok(DecodeSchedule {
            steps,
            mask_counts,
            temp_bias,
            temp_scale,
        })
    }

    /// Target number of still-masked tokens after step k.
    pub fn count_after(&self, k: usize) -> usize {
        self.mask_counts[k]
    }

    pub fn temperature(&self, k: usize) -> f64 {
        sampling_temperature(k, self.steps, self.temp_bias, self.temp_scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn final_step_reveals_everything() {
        for (steps, n) in [(2, 16), (8, 4), (24, 256)] {
            assert_eq!(cosine_mask_count(steps - 1, steps, n).unwrap(), 0);
        }
    }

    #[test]
    fn two_step_sixteen_tokens() {
        // floor(cos(pi/4) * 16) = floor(11.31) = 11.
        assert_eq!(cosine_mask_count(0, 2, 16).unwrap(), 11);
    }

    #[test]
    fn monotone_non_increasing_exhaustive() {
        let steps = 24;
        let n = 256;
        let counts: Vec<usize> = (0..steps)
            .map(|k| cosine_mask_count(k, steps, n).unwrap())
            .collect();
        for w in counts.windows(2) {
            assert!(w[0] >= w[1], "counts must not increase: {counts:?}");
        }
        assert_eq!(counts[steps - 1], 0);
    }

    #[test]
    fn out_of_range_step_errors() {
        assert!(cosine_mask_count(2, 2, 16).is_err());
    }

    #[test]
    fn temperature_endpoints() {
        // Final step: bias exactly (0.5 with the reference constants).
        let t = sampling_temperature(23, 24, DEFAULT_TEMP_BIAS, DEFAULT_TEMP_SCALE);
        assert_eq!(t, 0.5);
        // First of 24 steps: 0.5 + 0.8 * 23/24.
        let t0 = sampling_temperature(0, 24, DEFAULT_TEMP_BIAS, DEFAULT_TEMP_SCALE);
        assert!((t0 - (0.5 + 0.8 * 23.0 / 24.0)).abs() < 1e-12);
        assert!((t0 - 1.2667).abs() < 1e-3);
    }

    #[test]
    fn zero_scale_is_constant_bias() {
        for k in 0..10 {
            assert_eq!(sampling_temperature(k, 10, 0.7, 0.0), 0.7);
        }
    }

    #[test]
    fn temperature_strictly_decreasing_when_scaled() {
        let s = DecodeSchedule::cosine(8, 64, DEFAULT_TEMP_BIAS, DEFAULT_TEMP_SCALE).unwrap();
        for k in 1..8 {
            assert!(s.temperature(k) < s.temperature(k - 1));
        }
    }
}
