//! Total-variation distance between generated grids and an enumerable
//! source: the desk-scale quality metric for masked generation.

use crate::data::markov::MarkovGridSource;
use crate::error::{EltError, Result};
use crate::masked::grid::TokenGrid;

/// 0.5 * sum over outcomes of |empirical - true|. Errors when the source's
/// support is too large to enumerate.
pub fn tv_distance(
    samples: &[TokenGrid],
    source: &MarkovGridSource,
    class_id: Option<usize>,
) -> Result<f64> {
    if !source.enumerable() {
        return Err(EltError::Config(
            "total variation needs an enumerable source".to_string(),
        ));
    }
    if samples.is_empty() {
        return Err(EltError::Config("no samples".to_string()));
    }
    let probs = source.enumerate(class_id)?;
    let mut counts = vec![0u64; probs.len()];
    for g in samples {
        counts[source.outcome_index(g)?] += 1;
    }
    Ok(tv_from_counts(&counts, &probs))
}

pub fn tv_from_counts(counts: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    0.5 * counts
        .iter()
        .zip(probs.iter())
        .map(|(&c, &p)| (c as f64 / n as f64 - p).abs())
        .sum::<f64>()
}
