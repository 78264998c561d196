//! Training corruption for masked modeling: cosine-distributed mask ratio,
//! at least one position always masked.

use rand::rngs::StdRng;
use rand::RngExt;

use crate::error::Result;
use crate::masked::grid::TokenGrid;
use crate::train::MaskedExample;

/// Draw u ~ U(0,1), mask ratio r = cos(pi/2 * u), and mask round(r * n)
/// positions (clamped to at least one), chosen uniformly without replacement.
pub fn corrupt_for_training(
    clean: &TokenGrid,
    class_id: Option<usize>,
    rng: &mut StdRng,
) -> Result<MaskedExample> {
    let n = clean.n_tokens();
    let u: f64 = rng.random();
    let r = (std::f64::consts::FRAC_PI_2 * u).cos();
    let count = ((r * n as f64).round() as usize).clamp(1, n);

    // Partial Fisher-Yates: the first `count` entries are a uniform draw
    // without replacement.
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..count {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let mut mask = vec![false; n];
    for &i in &idx[..count] {
        mask[i] = true;
    }

    let mut tokens = clean.tokens().to_vec();
    for (i, m) in mask.iter().enumerate() {
        if *m {
            tokens[i] = clean.mask_id();
        }
    }
    Ok(MaskedExample {
        tokens,
        targets: clean.tokens().to_vec(),
        mask,
        class_id,
    })
}
