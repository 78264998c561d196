//! Training corruption for diffusion: uniform timestep, forward noising,
//! sigmoid loss weight.

use rand::rngs::StdRng;
use rand::RngExt;

use crate::diffusion::sampler::standard_normal_tensor;
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::Result;
use crate::numerics::Tensor;
use crate::train::DiffusionExample;

/// t ~ U{1..T}, eps ~ N(0, I), x_t = q_sample(x0, t, eps), w_t = w(t).
pub fn corrupt_for_training_diffusion(
    x0: &Tensor,
    class_id: Option<usize>,
    schedule: &NoiseSchedule,
    weight_offset: f64,
    rng: &mut StdRng,
) -> Result<DiffusionExample> {
    let t = rng.random_range(1..=schedule.steps());
    let eps = standard_normal_tensor(x0.shape().to_vec(), rng);
    let x_t = schedule.q_sample(x0, t, &eps)?;
    let w_t = schedule.sigmoid_weight(t, weight_offset)?;
    Ok(DiffusionExample {
        x_t,
        x0: x0.clone(),
        timestep: t,
        w_t,
        class_id,
    })
}
