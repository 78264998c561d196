//! Architecture and loop hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{EltError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Masked,
    Diffusion,
}

/// MLP variant inside each transformer layer. Masked models use the plain
/// two-matrix GELU MLP; diffusion models default to the gated (three-matrix)
/// form, which is what the reference parameter budgets imply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MlpKind {
    Gelu,
    GatedGelu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    /// Number of unique transformer layers in the shared block (N).
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub mlp_dim: usize,
    /// Smallest loop count the student may be sampled at.
    pub l_min: usize,
    /// Loop count the teacher path runs at during training.
    pub l_max: usize,
    pub seq_len: usize,
    pub mode: Mode,
    /// Token vocabulary (masked mode). The mask sentinel is `vocab_size`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
    /// Latent channel width (diffusion mode).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<usize>,
    /// Class labels 0..n_classes; the null (unconditional) label gets its own
    /// learned embedding row at index `n_classes`.
    pub n_classes: usize,
    #[serde(default)]
    pub mlp: Option<MlpKind>,
}

impl LoopConfig {
    pub fn masked(
        n_layers: usize,
        d_model: usize,
        n_heads: usize,
        mlp_dim: usize,
        l_min: usize,
        l_max: usize,
        seq_len: usize,
        vocab_size: usize,
        n_classes: usize,
    ) -> Self {
        LoopConfig {
            n_layers,
            d_model,
            n_heads,
            mlp_dim,
            l_min,
            l_max,
            seq_len,
            mode: Mode::Masked,
            vocab_size: Some(vocab_size),
            latent_dim: None,
            n_classes,
            mlp: None,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn diffusion(
        n_layers: usize,
        d_model: usize,
        n_heads: usize,
        mlp_dim: usize,
        l_min: usize,
        l_max: usize,
        seq_len: usize,
        latent_dim: usize,
        n_classes: usize,
    ) -> Self {
        LoopConfig {
            n_layers,
            d_model,
            n_heads,
            mlp_dim,
            l_min,
            l_max,
            seq_len,
            mode: Mode::Diffusion,
            vocab_size: None,
            latent_dim: Some(latent_dim),
            n_classes,
            mlp: None,
        }
    }

    pub fn mlp_kind(&self) -> MlpKind {
        self.mlp.unwrap_or(match self.mode {
            Mode::Masked => MlpKind::Gelu,
            Mode::Diffusion => MlpKind::GatedGelu,
        })
    }

    pub fn vocab_size(&self) -> Result<usize> {
        self.vocab_size
            .ok_or_else(|| EltError::Config("masked mode requires vocab_size".to_string()))
    }

    pub fn latent_dim(&self) -> Result<usize> {
        self.latent_dim
            .ok_or_else(|| EltError::Config("diffusion mode requires latent_dim".to_string()))
    }

    /// Mask sentinel id: one past the last real token.
    pub fn mask_id(&self) -> Result<usize> {
        Ok(self.vocab_size()?)
    }

    /// Output width of the shared prediction head.
    pub fn head_out_dim(&self) -> Result<usize> {
        match self.mode {
            Mode::Masked => self.vocab_size(),
            Mode::Diffusion => self.latent_dim(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(EltError::Config(msg));
        if self.n_layers == 0 {
            return fail("n_layers must be >= 1".to_string());
        }
        if self.d_model == 0 || self.mlp_dim == 0 || self.seq_len == 0 {
            return fail("d_model, mlp_dim and seq_len must be positive".to_string());
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!(
                "n_heads {} must divide d_model {}",
                self.n_heads, self.d_model
            ));
        }
        if self.l_min < 1 || self.l_min > self.l_max {
            return fail(format!(
                "loop range requires 1 <= l_min <= l_max, got [{}, {}]",
                self.l_min, self.l_max
            ));
        }
        match self.mode {
            Mode::Masked => {
                if self.vocab_size()? == 0 {
                    return fail("vocab_size must be positive".to_string());
                }
            }
            Mode::Diffusion => {
                if self.latent_dim()? == 0 {
                    return fail("latent_dim must be positive".to_string());
                }
            }
        }
        Ok(())
    }
}
