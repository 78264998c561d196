//! Analytic denoiser for diagonal-Gaussian data: the exact Bayes-optimal x0
//! prediction E[x0 | x_t] under the schedule, usable anywhere a trained model
//! is. The sampler is verified end to end against it.

use crate::diffusion::sampler::Denoiser;
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{EltError, Result};
use crate::numerics::Tensor;

pub struct GaussianOracle {
    mean: Vec<f64>,
    var: Vec<f64>,
    seq_len: usize,
    schedule: NoiseSchedule,
}

impl GaussianOracle {
    /// Target distribution N(mean, diag(var)) over each latent row.
    pub fn new(
        mean: Vec<f64>,
        var: Vec<f64>,
        seq_len: usize,
        schedule: NoiseSchedule,
    ) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(EltError::shape(
                "gaussian_oracle",
                format!("{} means vs {} variances", mean.len(), var.len()),
            ));
        }
        if var.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(EltError::Config(
                "oracle variances must be positive".to_string(),
            ));
        }
        Ok(GaussianOracle {
            mean,
            var,
            seq_len,
            schedule,
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    /// Closed-form posterior mean per dimension:
    /// (sigma^2 mu + a s^2 x) / (sigma^2 + a^2 s^2).
    pub fn posterior_mean(&self, dim: usize, x: f64, t: usize) -> Result<f64> {
        let a = self.schedule.signal(t)?;
        let sig2 = self.schedule.noise(t)?.powi(2);
        let s2 = self.var[dim];
        Ok((sig2 * self.mean[dim] + a * s2 * x) / (sig2 + a * a * s2))
    }
}

impl Denoiser for GaussianOracle {
    fn predict_x0(
        &self,
        x_t: &Tensor,
        t: usize,
        _class_id: Option<usize>,
        _loops: usize,
    ) -> Result<Tensor> {
        if x_t.cols() != self.mean.len() {
            return Err(EltError::shape(
                "gaussian_oracle",
                format!("{} dims vs {} configured", x_t.cols(), self.mean.len()),
            ));
        }
        let mut out = x_t.clone();
        for r in 0..out.rows() {
            for (d, v) in out.row_mut(r).iter_mut().enumerate() {
                // Inline posterior mean; schedule lookups are cheap.
                *v = {
                    let a = self.schedule.signal(t)?;
                    let sig2 = self.schedule.noise(t)?.powi(2);
                    let s2 = self.var[d];
                    (sig2 * self.mean[d] + a * s2 * *v) / (sig2 + a * a * s2)
                };
            }
        }
        Ok(out)
    }

    fn latent_shape(&self) -> (usize, usize) {
        (self.seq_len, self.mean.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle(t_steps: usize) -> GaussianOracle {
        let s = NoiseSchedule::shifted_cosine(t_steps, 1.0).unwrap();
        GaussianOracle::new(vec![0.0], vec![1.0], 1, s).unwrap()
    }

    #[test]
    fn rejects_non_positive_variance() {
        let s = NoiseSchedule::shifted_cosine(8, 1.0).unwrap();
        assert!(GaussianOracle::new(vec![0.0], vec![0.0], 1, s).is_err());
    }

    #[test]
    fn deep_noise_shrinks_toward_the_prior_mean() {
        // mu = 0, s^2 = 1, t = T: prediction ~ a * x_t (strong shrinkage).
        let o = oracle(64);
        let t = 64;
        let s = NoiseSchedule::shifted_cosine(64, 1.0).unwrap();
        let a = s.signal(t).unwrap();
        let x = 2.0;
        let want = a * 1.0 * x / (s.noise(t).unwrap().powi(2) + a * a);
        let got = o.posterior_mean(0, x, t).unwrap();
        assert!((got - want).abs() < 1e-15);
        assert!(got.abs() < 1e-10, "near-total shrinkage at t=T, got {got}");
    }

    #[test]
    fn low_noise_limit_returns_x_t() {
        // As sigma -> 0 (small t), the prediction approaches x_t itself.
        let o = oracle(4096);
        let x = 0.8;
        let got = o.posterior_mean(0, x, 1).unwrap();
        assert!((got - x).abs() < 1e-3, "got {got}");
    }

    #[test]
    fn matches_numerical_quadrature() {
        // E[x0 | x_t] = int x p(x) N(x_t; a x, sigma^2) dx / normalizer on a
        // dense 1-d grid, compared at several (x_t, t) to 1e-6.
        let steps = 32;
        let sched = NoiseSchedule::shifted_cosine(steps, 1.0).unwrap();
        let mu = 0.7;
        let s2 = 2.25;
        let o = GaussianOracle::new(vec![mu], vec![s2], 1, sched.clone()).unwrap();
        for t in [1, 8, 16, 31] {
            let a = sched.signal(t).unwrap();
            let sig = sched.noise(t).unwrap();
            for x_t in [-2.0, 0.0, 0.5, 3.0] {
                let mut num = 0.0;
                let mut den = 0.0;
                let lo = mu - 12.0 * s2.sqrt();
                let hi = mu + 12.0 * s2.sqrt();
                let n = 400_000;
                let h = (hi - lo) / n as f64;
                for i in 0..=n {
                    let x0 = lo + i as f64 * h;
                    let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                    let prior = (-(x0 - mu) * (x0 - mu) / (2.0 * s2)).exp();
                    let lik = (-(x_t - a * x0) * (x_t - a * x0) / (2.0 * sig * sig)).exp();
                    num += w * x0 * prior * lik;
                    den += w * prior * lik;
                }
                let quad = num / den;
                let closed = o.posterior_mean(0, x_t, t).unwrap();
                assert!(
                    (quad - closed).abs() < 1e-6,
                    "t={t} x_t={x_t}: quad {quad} vs closed {closed}"
                );
            }
        }
    }
}
