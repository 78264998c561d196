//! Diffusion regime: shifted-cosine noise schedule, forward corruption,
//! sigmoid loss weighting, DDPM sampling and the analytic Gaussian oracle.

pub mod corrupt;
pub mod latent;
pub mod oracle;
pub mod sampler;
pub mod schedule;

pub use corrupt::corrupt_for_training_diffusion;
pub use latent::LatentTensor;
pub use oracle::GaussianOracle;
pub use sampler::{
    cfg_prediction, ddpm_step, sample, standard_normal_tensor, Denoiser, SampleOptions,
    SampleStats,
};
pub use schedule::{NoiseSchedule, SamplerCoefficients};
