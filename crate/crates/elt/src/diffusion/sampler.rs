//! The generic DDPM denoising recurrence for x0-predicting models:
//! x_{t-1} = a1(t) x_t + a2(t) pred + a3(t) z.

use rand::rngs::StdRng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffusion::latent::LatentTensor;
use crate::diffusion::schedule::{NoiseSchedule, SamplerCoefficients};
use crate::error::{EltError, Result};
use crate::model::LoopedModel;
use crate::numerics::{Graph, Tensor};

/// An x0-predicting denoiser: a trained model or an analytic oracle.
pub trait Denoiser {
    fn predict_x0(
        &self,
        x_t: &Tensor,
        t: usize,
        class_id: Option<usize>,
        loops: usize,
    ) -> Result<Tensor>;
    /// (seq_len, latent_dim) of the latents this denoiser operates on.
    fn latent_shape(&self) -> (usize, usize);
}

impl Denoiser for LoopedModel {
    fn predict_x0(
        &self,
        x_t: &Tensor,
        t: usize,
        class_id: Option<usize>,
        loops: usize,
    ) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let out = self.forward_latent(&mut g, &bound, x_t, t, class_id, loops)?;
        Ok(g.value(out).clone())
    }

    fn latent_shape(&self) -> (usize, usize) {
        (
            self.cfg().seq_len,
            self.cfg().latent_dim.unwrap_or(0),
        )
    }
}

/// Guidance in prediction space: uncond + scale * (cond - uncond).
pub fn cfg_prediction(cond: &Tensor, uncond: &Tensor, scale: f64) -> Result<Tensor> {
    if cond.shape() != uncond.shape() {
        return Err(EltError::shape(
            "cfg_prediction",
            format!("{:?} vs {:?}", cond.shape(), uncond.shape()),
        ));
    }
    Ok(uncond.zip_map(cond, |u, c| u + scale * (c - u)))
}

pub fn standard_normal_tensor(shape: Vec<usize>, rng: &mut StdRng) -> Tensor {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Tensor::from_vec(shape, data).expect("length matches")
}

/// The three-term recurrence with explicit scalars.
pub fn ddpm_step_with_coefficients(
    x_t: &Tensor,
    x0_pred: &Tensor,
    coef: SamplerCoefficients,
    rng: &mut StdRng,
) -> Result<Tensor> {
    if x_t.shape() != x0_pred.shape() {
        return Err(EltError::shape(
            "ddpm_step",
            format!("{:?} vs {:?}", x_t.shape(), x0_pred.shape()),
        ));
    }
    let mut out = x_t.zip_map(x0_pred, |x, p| coef.a1 * x + coef.a2 * p);
    if coef.a3 != 0.0 {
        let z = standard_normal_tensor(x_t.shape().to_vec(), rng);
        for (o, zv) in out.data_mut().iter_mut().zip(z.data().iter()) {
            *o += coef.a3 * zv;
        }
    }
    Ok(out)
}

/// One reverse step from t to t-1 under the schedule's posterior
/// coefficients; injects no noise at the final step.
pub fn ddpm_step(
    x_t: &Tensor,
    x0_pred: &Tensor,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut StdRng,
) -> Result<Tensor> {
    let coef = schedule.sampler_coefficients(t)?;
    ddpm_step_with_coefficients(x_t, x0_pred, coef, rng)
}

#[derive(Debug, Clone)]
pub struct SampleOptions {
    pub loops: usize,
    pub cfg_scale: f64,
    /// Spatial shape recorded on the returned latent.
    pub spatial_shape: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SampleStats {
    pub model_calls: u64,
}

/// Full reverse chain from x_T ~ N(0, I). Every step calls the denoiser at
/// the given loop budget; guidance (scale != 1) adds one null-class call.
pub fn sample(
    model: &dyn Denoiser,
    schedule: &NoiseSchedule,
    class_id: Option<usize>,
    opts: &SampleOptions,
    rng: &mut StdRng,
) -> Result<(LatentTensor, SampleStats)> {
    if opts.loops < 1 {
        return Err(EltError::Config("loop budget must be >= 1".to_string()));
    }
    let (seq, dim) = model.latent_shape();
    let n: usize = opts.spatial_shape.iter().product();
    if n != seq {
        return Err(EltError::Config(format!(
            "spatial shape {:?} flattens to {n}, denoiser expects {seq}",
            opts.spatial_shape
        )));
    }
    let mut x = standard_normal_tensor(vec![seq, dim], rng);
    let mut stats = SampleStats::default();
    let guided = opts.cfg_scale != 1.0;
    for t in (1..=schedule.steps()).rev() {
        let cond = model.predict_x0(&x, t, class_id, opts.loops)?;
        stats.model_calls += 1;
        let pred = if guided {
            let uncond = model.predict_x0(&x, t, None, opts.loops)?;
            stats.model_calls += 1;
            cfg_prediction(&cond, &uncond, opts.cfg_scale)?
        } else {
            cond
        };
        x = ddpm_step(&x, &pred, t, schedule, rng)?;
    }
    Ok((
        LatentTensor::new(x, opts.spatial_shape.clone())?,
        stats,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn identity_coefficients_pass_x_through() {
        let x = Tensor::from_vec(vec![2, 2], vec![0.1, -0.4, 2.0, 1.0]).unwrap();
        let pred = Tensor::zeros(vec![2, 2]);
        let coef = SamplerCoefficients {
            a1: 1.0,
            a2: 0.0,
            a3: 0.0,
        };
        let mut rng = rng_from_seed(0);
        let out = ddpm_step_with_coefficients(&x, &pred, coef, &mut rng).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn final_step_injects_no_noise() {
        let s = NoiseSchedule::shifted_cosine(32, 1.0).unwrap();
        let x = Tensor::from_vec(vec![1, 3], vec![0.5, -0.5, 0.25]).unwrap();
        let pred = Tensor::from_vec(vec![1, 3], vec![0.4, -0.4, 0.2]).unwrap();
        let mut r1 = rng_from_seed(1);
        let mut r2 = rng_from_seed(999);
        let a = ddpm_step(&x, &pred, 1, &s, &mut r1).unwrap();
        let b = ddpm_step(&x, &pred, 1, &s, &mut r2).unwrap();
        assert_eq!(a, b, "no rng consumption at the final step");
        // a1 ~ 0, a2 ~ 1: the output is the prediction itself.
        for (got, want) in a.data().iter().zip(pred.data().iter()) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn coefficients_match_independent_bayes_posterior() {
        // Independent route: q(x_{t-1} | x_t, x0) via precision addition.
        let s = NoiseSchedule::shifted_cosine(64, 1.0).unwrap();
        for t in 2..=64 {
            let ab_t = s.alpha_bar(t).unwrap();
            let ab_p = s.alpha_bar(t - 1).unwrap();
            let alpha_t = ab_t / ab_p;
            let beta_t = 1.0 - alpha_t;
            let precision = alpha_t / beta_t + 1.0 / (1.0 - ab_p);
            let var = 1.0 / precision;
            let coef = s.sampler_coefficients(t).unwrap();
            // Mean coefficients.
            let x_t_coef = (alpha_t.sqrt() / beta_t) * var;
            let x0_coef = (ab_p.sqrt() / (1.0 - ab_p)) * var;
            assert!((coef.a1 - x_t_coef).abs() < 1e-12, "t={t}");
            assert!((coef.a2 - x0_coef).abs() < 1e-12, "t={t}");
            assert!((coef.a3 * coef.a3 - var).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn cfg_scale_one_is_the_conditional_prediction() {
        let cond = Tensor::from_vec(vec![1, 2], vec![2.0, -1.0]).unwrap();
        let uncond = Tensor::from_vec(vec![1, 2], vec![1.0, 1.0]).unwrap();
        assert_eq!(cfg_prediction(&cond, &uncond, 1.0).unwrap(), cond);
        assert_eq!(cfg_prediction(&cond, &uncond, 0.0).unwrap(), uncond);
        let g = cfg_prediction(&cond, &uncond, 3.0).unwrap();
        assert_eq!(g.data()[0], 4.0);
    }
}
