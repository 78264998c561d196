//! Variance-preserving shifted-cosine noise schedule and the derived
//! posterior sampler coefficients for the x0 parameterization.
//!
//! logSNR(t) = -2 log(tan(pi t / 2T)) + 2 log(shift). Signal and noise
//! amplitudes are a(t) = sqrt(sigmoid(logSNR)) and sigma(t) with
//! a^2 + sigma^2 = 1 at every grid point; t = 0 is the clean boundary.

use serde::{Deserialize, Serialize};

use crate::error::{EltError, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSchedule {
    steps: usize,
    shift: f64,
    log_snr: Vec<f64>,
    alpha_bar: Vec<f64>,
    one_minus_alpha_bar: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// The three time-dependent sampler scalars of one denoising step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerCoefficients {
    /// Multiplies the current state x_t.
    pub a1: f64,
    /// Multiplies the model's x0 prediction.
    pub a2: f64,
    /// Multiplies fresh standard normal noise; zero at the final step.
    pub a3: f64,
}

impl NoiseSchedule {
    pub fn shifted_cosine(steps: usize, shift: f64) -> Result<Self> {
        if steps == 0 {
            return Err(EltError::Config("schedule needs steps >= 1".to_string()));
        }
        if !(shift.is_finite() && shift > 0.0) {
            return Err(EltError::Config(format!("shift must be positive, got {shift}")));
        }
        let mut log_snr = Vec::with_capacity(steps);
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut one_minus = Vec::with_capacity(steps);
        for t in 1..=steps {
            let angle = std::f64::consts::FRAC_PI_2 * t as f64 / steps as f64;
            let l = -2.0 * angle.tan().ln() + 2.0 * shift.ln();
            log_snr.push(l);
            alpha_bar.push(sigmoid(l));
            one_minus.push(sigmoid(-l));
        }
        Ok(NoiseSchedule {
            steps,
            shift,
            log_snr,
            alpha_bar,
            one_minus_alpha_bar: one_minus,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(EltError::Config(format!(
                "timestep {t} out of range 1..={}",
                self.steps
            )));
        }
        Ok(())
    }

    pub fn log_snr(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.log_snr[t - 1])
    }

    /// Cumulative squared signal amplitude; 1 at the clean boundary t = 0.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(1.0);
        }
        self.check_t(t)?;
        Ok(self.alpha_bar[t - 1])
    }

    /// Signal amplitude a(t).
    pub fn signal(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bar(t)?.sqrt())
    }

    /// Noise amplitude sigma(t), with a^2 + sigma^2 = 1.
    pub fn noise(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(0.0);
        }
        self.check_t(t)?;
        Ok(self.one_minus_alpha_bar[t - 1].sqrt())
    }

    /// Sigmoid loss weight w(t) = sigmoid(b - logSNR(t)); monotone
    /// non-decreasing in t since logSNR decreases.
    pub fn sigmoid_weight(&self, t: usize, offset: f64) -> Result<f64> {
        Ok(sigmoid(offset - self.log_snr(t)?))
    }

    /// Forward corruption x_t = a(t) x0 + sigma(t) eps.
    pub fn q_sample(&self, x0: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor> {
        self.check_t(t)?;
        if x0.shape() != eps.shape() {
            return Err(EltError::shape(
                "q_sample",
                format!("{:?} vs {:?}", x0.shape(), eps.shape()),
            ));
        }
        let a = self.signal(t)?;
        let s = self.noise(t)?;
        Ok(x0.zip_map(eps, |x, e| a * x + s * e))
    }

    /// Posterior-mean coefficients of the x0 parameterization with the small
    /// (posterior) variance choice. At t = 1 they reduce to (0, 1, 0): the
    /// final step returns the prediction with no injected noise.
    pub fn sampler_coefficients(&self, t: usize) -> Result<SamplerCoefficients> {
        self.check_t(t)?;
        let ab_t = self.alpha_bar(t)?;
        let ab_p = self.alpha_bar(t - 1)?;
        let alpha_t = ab_t / ab_p;
        let beta_t = 1.0 - alpha_t;
        let denom = 1.0 - ab_t;
        let a1 = alpha_t.sqrt() * (1.0 - ab_p) / denom;
        let a2 = ab_p.sqrt() * beta_t / denom;
        let a3 = ((1.0 - ab_p) / denom * beta_t).sqrt();
        Ok(SamplerCoefficients { a1, a2, a3 })
    }
}
