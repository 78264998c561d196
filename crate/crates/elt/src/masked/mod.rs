//! Masked-generative regime: token grids, cosine unmasking schedule,
//! confidence-based parallel decoding with classifier-free guidance, and the
//! training-time masking corruption.

pub mod corrupt;
pub mod decode;
pub mod grid;
pub mod schedule;

pub use corrupt::corrupt_for_training;
pub use decode::{cfg_logits, generate, sample_and_mask, GenerateOptions, GenerateStats, MaskedDenoiser};
pub use grid::TokenGrid;
pub use schedule::{
    cosine_mask_count, sampling_temperature, DecodeSchedule, DEFAULT_TEMP_BIAS, DEFAULT_TEMP_SCALE,
};
