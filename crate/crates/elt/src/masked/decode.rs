//! Confidence-based Sample-then-Mask parallel decoding.
//!
//! Each step samples every masked position categorically from the tempered
//! logits, ranks positions by the probability of their sampled token, keeps
//! the most confident draws per the cosine schedule and re-masks the rest.
//! Revealed tokens never change. The final step reveals everything.

use rand::rngs::StdRng;
use rand::RngExt;

use crate::error::{EltError, Result};
use crate::masked::grid::TokenGrid;
use crate::masked::schedule::DecodeSchedule;
use crate::model::LoopedModel;
use crate::numerics::{Graph, Tensor};

/// Anything that maps a partially masked grid to per-position logits under a
/// loop budget: a trained model or an exact enumeration oracle.
pub trait MaskedDenoiser {
    fn logits(&self, grid: &TokenGrid, class_id: Option<usize>, loops: usize) -> Result<Tensor>;
    fn seq_len(&self) -> usize;
}

impl MaskedDenoiser for LoopedModel {
    fn logits(&self, grid: &TokenGrid, class_id: Option<usize>, loops: usize) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let out = self.forward_masked(&mut g, &bound, grid.tokens(), class_id, loops)?;
        Ok(g.value(out).clone())
    }

    fn seq_len(&self) -> usize {
        self.cfg().seq_len
    }
}

/// Classifier-free guidance in logit space: uncond + scale * (cond - uncond).
pub fn cfg_logits(cond: &Tensor, uncond: &Tensor, scale: f64) -> Result<Tensor> {
    if cond.shape() != uncond.shape() {
        return Err(EltError::shape(
            "cfg_logits",
            format!("{:?} vs {:?}", cond.shape(), uncond.shape()),
        ));
    }
    Ok(uncond.zip_map(cond, |u, c| u + scale * (c - u)))
}

fn tempered_probs(row: &[f64], temp: f64) -> Vec<f64> {
    let mut p: Vec<f64> = row.iter().map(|v| v / temp).collect();
    crate::numerics::graph::softmax_row_in_place(&mut p);
    p
}

fn categorical(probs: &[f64], rng: &mut StdRng) -> usize {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if r < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// One decode step: sample all masked positions, reveal the most confident
/// draws, re-mask exactly `schedule.count_after(k)` lowest-confidence ones.
pub fn sample_and_mask(
    logits: &Tensor,
    grid: &TokenGrid,
    k: usize,
    schedule: &DecodeSchedule,
    rng: &mut StdRng,
) -> Result<TokenGrid> {
    if !logits.all_finite() {
        return Err(EltError::Numeric("non-finite logits".to_string()));
    }
    if logits.rows() != grid.n_tokens() || logits.cols() != grid.vocab_size() {
        return Err(EltError::shape(
            "sample_and_mask",
            format!(
                "logits {:?} for {} tokens over vocab {}",
                logits.shape(),
                grid.n_tokens(),
                grid.vocab_size()
            ),
        ));
    }
    if k >= schedule.steps {
        return Err(EltError::Config(format!(
            "step {k} out of range for a {}-step schedule",
            schedule.steps
        )));
    }
    let final_step = k == schedule.steps - 1;
    let masked = grid.masked_positions();
    if masked.is_empty() {
        if final_step {
            return Ok(grid.clone());
        }
        return Err(EltError::Config(
            "zero masked positions before the final step".to_string(),
        ));
    }

    let temp = schedule.temperature(k);
    // (position, sampled token, confidence), drawn in ascending position
    // order for determinism.
    let mut draws = Vec::with_capacity(masked.len());
    for &pos in &masked {
        let probs = tempered_probs(logits.row(pos), temp);
        let tok = categorical(&probs, rng);
        draws.push((pos, tok, probs[tok]));
    }

    // The final step bypasses re-masking entirely and reveals everything.
    let target_after = if final_step { 0 } else { schedule.count_after(k) };
    let n_reveal = masked.len().saturating_sub(target_after);
    draws.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));

    let mut out = grid.clone();
    for &(pos, tok, _) in draws.iter().take(n_reveal) {
        out.set(pos, tok)?;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    /// Spatial shape of the grid; must flatten to the model's seq_len.
    pub shape: Vec<usize>,
    pub steps: usize,
    pub loops: usize,
    pub cfg_scale: f64,
    pub temp_bias: f64,
    pub temp_scale: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GenerateStats {
    pub model_calls: u64,
}

/// Full K-step generation from a fully masked grid. Every step runs one model
/// forward at the given loop budget (two when guidance is active), so model
/// calls are exactly K or 2K regardless of how early the schedule empties.
pub fn generate(
    model: &dyn MaskedDenoiser,
    vocab_size: usize,
    class_id: Option<usize>,
    opts: &GenerateOptions,
    rng: &mut StdRng,
) -> Result<(TokenGrid, GenerateStats)> {
    let n: usize = opts.shape.iter().product();
    if n != model.seq_len() {
        return Err(EltError::Config(format!(
            "grid shape {:?} flattens to {n}, model expects {}",
            opts.shape,
            model.seq_len()
        )));
    }
    if opts.loops < 1 {
        return Err(EltError::Config("loop budget must be >= 1".to_string()));
    }
    let schedule = DecodeSchedule::cosine(opts.steps, n, opts.temp_bias, opts.temp_scale)?;
    let mut grid = TokenGrid::fully_masked(opts.shape.clone(), vocab_size);
    let mut stats = GenerateStats::default();
    let guided = opts.cfg_scale != 1.0;

    for k in 0..opts.steps {
        let cond = model.logits(&grid, class_id, opts.loops)?;
        stats.model_calls += 1;
        let logits = if guided {
            let uncond = model.logits(&grid, None, opts.loops)?;
            stats.model_calls += 1;
            cfg_logits(&cond, &uncond, opts.cfg_scale)?
        } else {
            cond
        };
        if grid.n_masked() == 0 {
            // Schedule emptied early (tiny grids); nothing left to sample.
            continue;
        }
        grid = sample_and_mask(&logits, &grid, k, &schedule, rng)?;
    }
    debug_assert!(grid.is_fully_revealed());
    Ok((grid, stats))
}
