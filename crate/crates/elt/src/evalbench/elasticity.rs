//! Held-out loss across loop counts: the any-time elasticity curve.

use serde::{Deserialize, Serialize};

use crate::error::{EltError, Result};
use crate::model::{ConditioningContext, LoopedModel, Mode};
use crate::numerics::Graph;
use crate::train::Batch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticityPoint {
    pub loops: usize,
    pub metric: f64,
    /// True when the loop count exceeds the trained l_max.
    pub extrapolation: bool,
}

/// Held-out teacher-style loss at a fixed loop budget: masked cross-entropy
/// over masked positions, or sigmoid-weighted MSE for diffusion batches.
pub fn held_out_loss(model: &LoopedModel, batch: &Batch, loops: usize) -> Result<f64> {
    if batch.is_empty() {
        return Err(EltError::Config("empty eval batch".to_string()));
    }
    let mut total = 0.0;
    match batch {
        Batch::Masked(examples) => {
            if model.cfg().mode != Mode::Masked {
                return Err(EltError::Config("masked batch on a diffusion model".to_string()));
            }
            for ex in examples {
                let mut g = Graph::new();
                let bound = model.bind(&mut g, false);
                let logits =
                    model.forward_masked(&mut g, &bound, &ex.tokens, ex.class_id, loops)?;
                let loss = g.masked_cross_entropy(logits, &ex.targets, &ex.mask)?;
                total += g.value(loss).scalar_value();
            }
        }
        Batch::Diffusion(examples) => {
            if model.cfg().mode != Mode::Diffusion {
                return Err(EltError::Config("diffusion batch on a masked model".to_string()));
            }
            for ex in examples {
                let mut g = Graph::new();
                let bound = model.bind(&mut g, false);
                let ctx = ConditioningContext::class_and_time(ex.class_id, ex.timestep);
                let cond = model.conditioning(&mut g, &bound, &ctx)?;
                let x = model.embed_latent(&mut g, &bound, &ex.x_t)?;
                let h = model.loop_forward(&mut g, &bound, x, cond, loops)?;
                let pred = model.predict_head(&mut g, &bound, h)?;
                let x0 = g.constant(ex.x0.clone());
                let m = g.mse(pred, x0)?;
                let w = g.scale(m, ex.w_t);
                total += g.value(w).scalar_value();
            }
        }
    }
    Ok(total / batch.len() as f64)
}

/// Evaluate the held-out metric at every requested loop count. Values above
/// the trained l_max are flagged as extrapolation and must still return
/// finite metrics.
pub fn elasticity_curve(
    model: &LoopedModel,
    eval_set: &Batch,
    l_values: &[usize],
) -> Result<Vec<ElasticityPoint>> {
    let l_max = model.cfg().l_max;
    let mut out = Vec::with_capacity(l_values.len());
    for &loops in l_values {
        if loops < 1 {
            return Err(EltError::Config("loop counts start at 1".to_string()));
        }
        let metric = held_out_loss(model, eval_set, loops)?;
        if !metric.is_finite() {
            return Err(EltError::Numeric(format!(
                "non-finite held-out metric at L={loops}"
            )));
        }
        out.push(ElasticityPoint {
            loops,
            metric,
            extrapolation: loops > l_max,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::MarkovGridSource;
    use crate::masked::corrupt_for_training;
    use crate::model::LoopConfig;
    use crate::rng::rng_from_seed;

    fn eval_batch(n: usize) -> Batch {
        let src = MarkovGridSource::cyclic_peaked(vec![2, 2], 4, 2, 0.9).unwrap();
        let mut rng = rng_from_seed(55);
        let mut v = Vec::new();
        for i in 0..n {
            let clean = src.sample(i % 2, &mut rng).unwrap();
            v.push(corrupt_for_training(&clean, Some(i % 2), &mut rng).unwrap());
        }
        Batch::Masked(v)
    }

    #[test]
    fn curve_length_matches_requested_loops() {
        let cfg = LoopConfig::masked(1, 16, 4, 32, 1, 2, 4, 4, 2);
        let model = LoopedModel::init(cfg, 3).unwrap();
        let batch = eval_batch(4);
        let curve = elasticity_curve(&model, &batch, &[1, 2, 3, 4]).unwrap();
        assert_eq!(curve.len(), 4);
        assert!(!curve[0].extrapolation);
        assert!(!curve[1].extrapolation);
        assert!(curve[2].extrapolation, "L=3 > l_max=2");
        assert!(curve[3].extrapolation);
        for p in &curve {
            assert!(p.metric.is_finite());
        }
    }

    #[test]
    fn extrapolation_beyond_l_max_never_crashes() {
        let cfg = LoopConfig::masked(2, 16, 4, 32, 1, 4, 4, 4, 2);
        let model = LoopedModel::init(cfg, 9).unwrap();
        let batch = eval_batch(2);
        let curve = elasticity_curve(&model, &batch, &[6]).unwrap();
        assert!(curve[0].extrapolation);
        assert!(curve[0].metric.is_finite());
    }

    #[test]
    fn diffusion_batches_use_weighted_mse() {
        use crate::data::DataSourceSpec;
        let cfg = LoopConfig::diffusion(1, 8, 2, 16, 1, 2, 1, 2, 2);
        let model = LoopedModel::init(cfg, 4).unwrap();
        let spec = DataSourceSpec::GaussianMixture {
            seq_len: 1,
            timesteps: 8,
            weight_offset: 0.0,
            shift: 1.0,
        };
        let batch = spec.assemble_batch(6, 0.0, 21).unwrap();
        let curve = elasticity_curve(&model, &batch, &[1, 2, 3]).unwrap();
        assert_eq!(curve.len(), 3);
        assert!(curve.iter().all(|p| p.metric.is_finite() && p.metric >= 0.0));
        // Mode mismatch is rejected.
        let masked = LoopedModel::init(LoopConfig::masked(1, 8, 2, 16, 1, 2, 4, 4, 2), 0).unwrap();
        assert!(held_out_loss(&masked, &batch, 1).is_err());
    }
}
