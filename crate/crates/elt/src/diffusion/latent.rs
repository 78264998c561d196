//! Continuous latent: a sequence of latent vectors plus the spatial shape
//! they unflatten to.

use crate::error::{EltError, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    /// seq_len x latent_dim values.
    pub values: Tensor,
    /// Spatial shape metadata; its product equals seq_len.
    pub spatial_shape: Vec<usize>,
}

impl LatentTensor {
    pub fn new(values: Tensor, spatial_shape: Vec<usize>) -> Result<Self> {
        if !values.all_finite() {
            return Err(EltError::Numeric("latent holds non-finite values".to_string()));
        }
        let n: usize = spatial_shape.iter().product();
        if n != values.rows() {
            return Err(EltError::shape(
                "latent_tensor",
                format!(
                    "spatial shape {:?} flattens to {n}, values have {} rows",
                    spatial_shape,
                    values.rows()
                ),
            ));
        }
        Ok(LatentTensor {
            values,
            spatial_shape,
        })
    }

    pub fn seq_len(&self) -> usize {
        self.values.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.values.cols()
    }
}
