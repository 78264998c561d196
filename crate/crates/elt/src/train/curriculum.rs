//! Linear curriculum for the weight trading the student's ground-truth loss
//! against its distillation loss: 1 at step 0, 0 at the end.

use serde::{Deserialize, Serialize};

use crate::error::{EltError, Result};

pub fn lambda_at(step: usize, total_steps: usize) -> Result<f64> {
    if total_steps == 0 {
        return Err(EltError::Config(
            "curriculum needs total_steps >= 1".to_string(),
        ));
    }
    Ok((1.0 - step as f64 / total_steps as f64).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurriculumState {
    pub step: usize,
    pub total_steps: usize,
}

impl CurriculumState {
    pub fn new(total_steps: usize) -> Result<Self> {
        if total_steps == 0 {
            return Err(EltError::Config(
                "curriculum needs total_steps >= 1".to_string(),
            ));
        }
        Ok(CurriculumState {
            step: 0,
            total_steps,
        })
    }

    pub fn lambda(&self) -> f64 {
        lambda_at(self.step, self.total_steps).expect("total_steps validated at construction")
    }

    pub fn advance(&mut self) {
        self.step += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        assert_eq!(lambda_at(0, 100).unwrap(), 1.0);
        assert_eq!(lambda_at(100, 100).unwrap(), 0.0);
        assert_eq!(lambda_at(50, 100).unwrap(), 0.5);
    }

    #[test]
    fn clamps_past_the_end() {
        assert_eq!(lambda_at(150, 100).unwrap(), 0.0);
    }

    #[test]
    fn zero_total_is_an_error() {
        assert!(lambda_at(0, 0).is_err());
        assert!(CurriculumState::new(0).is_err());
    }

    #[test]
    fn strictly_linear() {
        let total = 8;
        for step in 0..=total {
            let l = lambda_at(step, total).unwrap();
            assert_eq!(l, 1.0 - step as f64 / total as f64);
        }
    }
}
