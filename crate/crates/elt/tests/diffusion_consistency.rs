//! Sampler consistency across step counts and the guidance identity, checked
//! with the analytic Gaussian oracle.

use elt::diffusion::{
    ddpm_step, sample, standard_normal_tensor, GaussianOracle, NoiseSchedule, SampleOptions,
};
use elt::rng::rng_from_seed;

fn normal_cdf(x: f64) -> f64 {
    // Abramowitz-Stegun style erf approximation is overkill; use erf via
    // tanh-free rational approximation accurate to ~1e-7.
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn erf(x: f64) -> f64 {
    // Numerical Recipes erfc approximation, |error| <= 1.2e-7.
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let tau = t
        * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587
                                        + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        1.0 - tau
    } else {
        tau - 1.0
    }
}

fn ks_against_normal(samples: &mut [f64], mean: f64, std: f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mut ks: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let cdf = normal_cdf((x - mean) / std);
        let hi = (i + 1) as f64 / n;
        let lo = i as f64 / n;
        ks = ks.max((cdf - lo).abs().max((hi - cdf).abs()));
    }
    ks
}

/// More steps never hurt the oracle: the 1-d marginal KS statistic against
/// the target does not increase from T=64 to T=256.
#[test]
fn ks_statistic_does_not_increase_with_more_steps() {
    let mean = 0.3;
    let var = 1.5;
    let draws = 60_000;
    let mut ks_by_steps = Vec::new();
    for steps in [64usize, 256] {
        let schedule = NoiseSchedule::shifted_cosine(steps, 1.0).unwrap();
        let oracle =
            GaussianOracle::new(vec![mean], vec![var], 1, schedule.clone()).unwrap();
        let opts = SampleOptions {
            loops: 1,
            cfg_scale: 1.0,
            spatial_shape: vec![1],
        };
        let mut rng = rng_from_seed(4321);
        let mut xs: Vec<f64> = (0..draws)
            .map(|_| {
                sample(&oracle, &schedule, None, &opts, &mut rng)
                    .unwrap()
                    .0
                    .values
                    .data()[0]
            })
            .collect();
        ks_by_steps.push(ks_against_normal(&mut xs, mean, var.sqrt()));
    }
    assert!(
        ks_by_steps[1] <= ks_by_steps[0],
        "KS grew with more steps: T=64 -> {:.4}, T=256 -> {:.4}",
        ks_by_steps[0],
        ks_by_steps[1]
    );
}

/// Guidance at scale 1 is the conditional-only trajectory, bit-exact under a
/// fixed seed.
#[test]
fn guidance_scale_one_trajectory_is_bit_exact_conditional() {
    let steps = 32;
    let schedule = NoiseSchedule::shifted_cosine(steps, 1.0).unwrap();
    let oracle =
        GaussianOracle::new(vec![0.0, 1.0], vec![1.0, 0.5], 2, schedule.clone()).unwrap();

    // Manual conditional-only rollout.
    let manual = {
        let mut rng = rng_from_seed(99);
        let mut x = standard_normal_tensor(vec![2, 2], &mut rng);
        for t in (1..=steps).rev() {
            let pred = elt::diffusion::Denoiser::predict_x0(&oracle, &x, t, Some(0), 1).unwrap();
            x = ddpm_step(&x, &pred, t, &schedule, &mut rng).unwrap();
        }
        x
    };

    let opts = SampleOptions {
        loops: 1,
        cfg_scale: 1.0,
        spatial_shape: vec![2],
    };
    let mut rng = rng_from_seed(99);
    let (latent, _) = sample(&oracle, &schedule, Some(0), &opts, &mut rng).unwrap();
    assert_eq!(latent.values.data(), manual.data());
}
