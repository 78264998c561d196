//! Wall-clock throughput of model invocations at a fixed loop budget.
//! A generic timer only; no hardware memory model is implied.

use std::time::Instant;

use crate::error::{EltError, Result};
use crate::masked::grid::TokenGrid;
use crate::masked::MaskedDenoiser;
use crate::model::{LoopedModel, Mode};
use crate::numerics::Tensor;

use crate::diffusion::Denoiser;

#[derive(Debug, Clone)]
pub struct ThroughputMeasurement {
    pub samples_per_sec_median: f64,
    /// (25th, 75th) percentile; None when repeats < 2 (dispersion undefined).
    pub iqr: Option<(f64, f64)>,
    pub repeats: usize,
    pub loops: usize,
    pub batch: usize,
    pub config_fingerprint: String,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

/// Median and IQR of samples/sec over `repeats` timed rounds of `batch`
/// model invocations each, after `warmup` untimed rounds.
pub fn throughput_measure(
    model: &LoopedModel,
    loops: usize,
    batch: usize,
    repeats: usize,
    warmup: usize,
) -> Result<ThroughputMeasurement> {
    if batch == 0 || repeats == 0 {
        return Err(EltError::Config(
            "throughput needs batch >= 1 and repeats >= 1".to_string(),
        ));
    }
    let cfg = model.cfg();
    let invoke: Box<dyn Fn() -> Result<()>> = match cfg.mode {
        Mode::Masked => {
            let grid = TokenGrid::fully_masked(vec![cfg.seq_len], cfg.vocab_size()?);
            Box::new(move || {
                MaskedDenoiser::logits(model, &grid, Some(0), loops)?;
                Ok(())
            })
        }
        Mode::Diffusion => {
            let x = Tensor::zeros(vec![cfg.seq_len, cfg.latent_dim()?]);
            Box::new(move || {
                Denoiser::predict_x0(model, &x, 1, Some(0), loops)?;
                Ok(())
            })
        }
    };
    for _ in 0..warmup {
        invoke()?;
    }
    let mut rates = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let started = Instant::now();
        for _ in 0..batch {
            invoke()?;
        }
        let secs = started.elapsed().as_secs_f64().max(1e-9);
        rates.push(batch as f64 / secs);
    }
    rates.sort_by(f64::total_cmp);
    let median = percentile(&rates, 0.5);
    let iqr = (repeats >= 2).then(|| (percentile(&rates, 0.25), percentile(&rates, 0.75)));
    Ok(ThroughputMeasurement {
        samples_per_sec_median: median,
        iqr,
        repeats,
        loops,
        batch,
        config_fingerprint: format!(
            "mode={:?},n={},d={},heads={},mlp={},seq={},loops={loops}",
            cfg.mode, cfg.n_layers, cfg.d_model, cfg.n_heads, cfg.mlp_dim, cfg.seq_len
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LoopConfig;

    #[test]
    fn single_repeat_has_no_dispersion() {
        let cfg = LoopConfig::masked(1, 8, 2, 16, 1, 2, 4, 4, 1);
        let model = LoopedModel::init(cfg, 0).unwrap();
        let m = throughput_measure(&model, 1, 2, 1, 0).unwrap();
        assert!(m.iqr.is_none());
        assert!(m.samples_per_sec_median > 0.0);
    }

    #[test]
    fn fingerprint_carries_the_config() {
        let cfg = LoopConfig::masked(2, 16, 4, 32, 1, 4, 4, 8, 2);
        let model = LoopedModel::init(cfg, 0).unwrap();
        let m = throughput_measure(&model, 3, 1, 1, 0).unwrap();
        assert!(m.config_fingerprint.contains("n=2"));
        assert!(m.config_fingerprint.contains("loops=3"));
    }

    /// Wall-clock smoke checks flake under heavy external load; give them a
    /// few attempts before declaring the bound violated.
    fn eventually(attempts: usize, check: impl Fn() -> std::result::Result<(), String>) {
        let mut last = String::new();
        for _ in 0..attempts {
            match check() {
                Ok(()) => return,
                Err(e) => last = e,
            }
            std::thread::sleep(std::time::Duration::from_millis(200));
        }
        panic!("{last}");
    }

    #[test]
    fn doubling_loops_roughly_halves_throughput() {
        // Smoke bound for a CPU desk run, not a hardware claim: the block
        // dominates at this size, so the ratio sits near 2.
        let cfg = LoopConfig::masked(2, 64, 4, 128, 1, 8, 16, 16, 2);
        let model = LoopedModel::init(cfg, 1).unwrap();
        eventually(3, || {
            let lo = throughput_measure(&model, 4, 8, 5, 2).unwrap();
            let hi = throughput_measure(&model, 8, 8, 5, 2).unwrap();
            let ratio = lo.samples_per_sec_median / hi.samples_per_sec_median;
            if (1.7..=2.3).contains(&ratio) {
                Ok(())
            } else {
                Err(format!("L4 vs L8 throughput ratio {ratio:.3}"))
            }
        });
    }

    #[test]
    fn repeated_measurement_is_stable() {
        let cfg = LoopConfig::masked(2, 64, 4, 128, 1, 8, 16, 16, 2);
        let model = LoopedModel::init(cfg, 1).unwrap();
        eventually(3, || {
            let a = throughput_measure(&model, 4, 8, 5, 2).unwrap();
            let b = throughput_measure(&model, 4, 8, 5, 2).unwrap();
            let rel = (a.samples_per_sec_median / b.samples_per_sec_median - 1.0).abs();
            assert!(a.iqr.is_some());
            if rel < 0.15 {
                Ok(())
            } else {
                Err(format!("medians differ by {:.1}%", rel * 100.0))
            }
        });
    }
}
