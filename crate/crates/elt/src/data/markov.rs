//! First-order Markov source over a flattened token grid, with exact
//! enumeration of the joint distribution and of every conditional. Stands in
//! for real token data at desk scale: small enough to verify samplers
//! against the exact law, structured enough to be worth learning.

use rand::rngs::StdRng;
use rand::RngExt;

use crate::error::{EltError, Result};
use crate::masked::decode::MaskedDenoiser;
use crate::masked::grid::TokenGrid;
use crate::numerics::Tensor;

/// Conditionals emitted by the enumeration oracle are rounded to this many
/// decimals. Enumeration sums values in arbitrary order, so mathematically
/// tied probabilities can differ in the last few ulps; the decode ranks by
/// confidence, where an ulp acts like a full preference. Rounding restores
/// exact ties.
const ORACLE_ROUND_DECIMALS: i32 = 12;

#[derive(Debug, Clone)]
pub struct MarkovGridSource {
    shape: Vec<usize>,
    vocab: usize,
    /// Initial distribution, shared across classes.
    init: Vec<f64>,
    /// Per-class transition rows: trans[class][from][to].
    trans: Vec<Vec<Vec<f64>>>,
}

impl MarkovGridSource {
    pub fn new(
        shape: Vec<usize>,
        vocab: usize,
        init: Vec<f64>,
        trans: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        if init.len() != vocab {
            return Err(EltError::Config(format!(
                "init has {} entries for vocab {vocab}",
                init.len()
            )));
        }
        let close = |s: f64| (s - 1.0).abs() < 1e-9;
        if !close(init.iter().sum::<f64>()) {
            return Err(EltError::Config("init must sum to 1".to_string()));
        }
        for per_class in &trans {
            if per_class.len() != vocab {
                return Err(EltError::Config("transition table must be vocab x vocab".to_string()));
            }
            for row in per_class {
                if row.len() != vocab || !close(row.iter().sum::<f64>()) {
                    return Err(EltError::Config("transition rows must sum to 1".to_string()));
                }
                if row.iter().any(|p| *p < 0.0) {
                    return Err(EltError::Config("probabilities must be non-negative".to_string()));
                }
            }
        }
        Ok(MarkovGridSource {
            shape,
            vocab,
            init,
            trans,
        })
    }

    /// Cyclic family: class c favors the transition i -> (i + 1 + c) mod V
    /// with probability `peak`, the rest uniform. Uniform initial token.
    pub fn cyclic_peaked(
        shape: Vec<usize>,
        vocab: usize,
        n_classes: usize,
        peak: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&peak) {
            return Err(EltError::Config(format!("peak {peak} outside [0, 1]")));
        }
        let rest = (1.0 - peak) / (vocab - 1) as f64;
        let trans = (0..n_classes)
            .map(|c| {
                (0..vocab)
                    .map(|i| {
                        (0..vocab)
                            .map(|j| {
                                if j == (i + 1 + c) % vocab {
                                    peak
                                } else {
                                    rest
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        MarkovGridSource::new(shape, vocab, vec![1.0 / vocab as f64; vocab], trans)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn n_classes(&self) -> usize {
        self.trans.len()
    }

    pub fn n_tokens(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn support_size(&self) -> u128 {
        (self.vocab as u128).pow(self.n_tokens() as u32)
    }

    pub fn enumerable(&self) -> bool {
        self.support_size() <= 1_000_000
    }

    fn rows(&self, class_id: usize) -> Result<&Vec<Vec<f64>>> {
        self.trans.get(class_id).ok_or_else(|| {
            EltError::Config(format!(
                "class {class_id} out of range ({} classes)",
                self.trans.len()
            ))
        })
    }

    /// Joint probability of a fully revealed flattened sequence.
    pub fn joint(&self, tokens: &[usize], class_id: usize) -> Result<f64> {
        let rows = self.rows(class_id)?;
        let mut p = self.init[tokens[0]];
        for w in tokens.windows(2) {
            p *= rows[w[0]][w[1]];
        }
        Ok(p)
    }

    /// Class-marginal joint (uniform prior over classes).
    pub fn joint_unconditional(&self, tokens: &[usize]) -> Result<f64> {
        let mut p = 0.0;
        for c in 0..self.trans.len() {
            p += self.joint(tokens, c)?;
        }
        Ok(p / self.trans.len() as f64)
    }

    /// Ancestral sample of a clean grid.
    pub fn sample(&self, class_id: usize, rng: &mut StdRng) -> Result<TokenGrid> {
        let rows = self.rows(class_id)?.clone();
        let n = self.n_tokens();
        let mut tokens = Vec::with_capacity(n);
        let draw = |dist: &[f64], rng: &mut StdRng| {
            let r: f64 = rng.random();
            let mut acc = 0.0;
            for (i, p) in dist.iter().enumerate() {
                acc += p;
                if r < acc {
                    return i;
                }
            }
            dist.len() - 1
        };
        tokens.push(draw(&self.init, rng));
        for i in 1..n {
            let prev = tokens[i - 1];
            tokens.push(draw(&rows[prev], rng));
        }
        TokenGrid::new(self.shape.clone(), tokens, self.vocab)
    }

    /// Base-V outcome index of a fully revealed grid.
    pub fn outcome_index(&self, grid: &TokenGrid) -> Result<usize> {
        if grid.n_masked() > 0 {
            return Err(EltError::Config(
                "outcome index needs a fully revealed grid".to_string(),
            ));
        }
        let mut idx = 0usize;
        for &t in grid.tokens() {
            idx = idx * self.vocab + t;
        }
        Ok(idx)
    }

    fn decode_outcome(&self, mut idx: usize) -> Vec<usize> {
        let n = self.n_tokens();
        let mut tokens = vec![0usize; n];
        for slot in tokens.iter_mut().rev() {
            *slot = idx % self.vocab;
            idx /= self.vocab;
        }
        tokens
    }

    /// The full joint distribution by outcome index; `class_id` None gives
    /// the class marginal under a uniform class prior.
    pub fn enumerate(&self, class_id: Option<usize>) -> Result<Vec<f64>> {
        if !self.enumerable() {
            return Err(EltError::Config(format!(
                "support size {} exceeds the enumeration bound",
                self.support_size()
            )));
        }
        let size = self.support_size() as usize;
        let mut probs = Vec::with_capacity(size);
        for idx in 0..size {
            let tokens = self.decode_outcome(idx);
            let p = match class_id {
                Some(c) => self.joint(&tokens, c)?,
                None => self.joint_unconditional(&tokens)?,
            };
            probs.push(p);
        }
        Ok(probs)
    }

    /// Exact per-position conditionals P(x_i = v | revealed tokens) by
    /// enumeration, rounded for tie stability. Rows for revealed positions
    /// are a one-hot on the revealed token.
    pub fn conditionals(&self, grid: &TokenGrid, class_id: Option<usize>) -> Result<Tensor> {
        if !self.enumerable() {
            return Err(EltError::Config(
                "conditionals need an enumerable source".to_string(),
            ));
        }
        let n = self.n_tokens();
        let v = self.vocab;
        let size = self.support_size() as usize;
        let mut acc = vec![0.0f64; n * v];
        let mut total = 0.0;
        for idx in 0..size {
            let tokens = self.decode_outcome(idx);
            let consistent = (0..n).all(|i| grid.is_masked(i) || grid.token(i) == tokens[i]);
            if !consistent {
                continue;
            }
            let p = match class_id {
                Some(c) => self.joint(&tokens, c)?,
                None => self.joint_unconditional(&tokens)?,
            };
            total += p;
            for (i, &t) in tokens.iter().enumerate() {
                acc[i * v + t] += p;
            }
        }
        if total <= 0.0 {
            return Err(EltError::Numeric(
                "revealed tokens have zero probability under the source".to_string(),
            ));
        }
        let scale = 10f64.powi(ORACLE_ROUND_DECIMALS);
        for val in &mut acc {
            *val = (*val / total * scale).round() / scale;
        }
        Tensor::from_vec(vec![n, v], acc)
    }
}

/// The enumeration oracle as a drop-in model: emits the log of the exact
/// conditionals. Loop budget is irrelevant and ignored.
pub struct ExactConditionalOracle<'a> {
    pub source: &'a MarkovGridSource,
}

impl MaskedDenoiser for ExactConditionalOracle<'_> {
    fn logits(&self, grid: &TokenGrid, class_id: Option<usize>, _loops: usize) -> Result<Tensor> {
        let probs = self.source.conditionals(grid, class_id)?;
        Ok(probs.map(|p| p.max(1e-300).ln()))
    }

    fn seq_len(&self) -> usize {
        self.source.n_tokens()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn source() -> MarkovGridSource {
        MarkovGridSource::cyclic_peaked(vec![2, 2], 4, 2, 0.97).unwrap()
    }

    #[test]
    fn joint_sums_to_one() {
        let s = source();
        for class in [Some(0), Some(1), None] {
            let probs = s.enumerate(class).unwrap();
            assert_eq!(probs.len(), 256);
            let total: f64 = probs.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn outcome_index_round_trips() {
        let s = source();
        let mut rng = rng_from_seed(2);
        for _ in 0..50 {
            let g = s.sample(0, &mut rng).unwrap();
            let idx = s.outcome_index(&g).unwrap();
            assert_eq!(s.decode_outcome(idx), g.tokens());
        }
    }

    #[test]
    fn conditionals_reduce_to_transition_rows() {
        let s = source();
        // Reveal x0 = 1; the conditional of x1 is exactly the transition row.
        let mut g = TokenGrid::fully_masked(vec![2, 2], 4);
        g.set(0, 1).unwrap();
        let cond = s.conditionals(&g, Some(0)).unwrap();
        for v in 0..4 {
            let want = if v == 2 { 0.97 } else { 0.01 };
            assert!((cond.row(1)[v] - want).abs() < 1e-9, "v={v}");
        }
    }

    #[test]
    fn all_masked_marginals_are_tied_uniform() {
        // Doubly stochastic transitions keep every marginal uniform; after
        // rounding, the oracle's values must tie exactly.
        let s = source();
        let g = TokenGrid::fully_masked(vec![2, 2], 4);
        let cond = s.conditionals(&g, Some(1)).unwrap();
        for i in 0..4 {
            for v in 0..4 {
                assert_eq!(cond.row(i)[v], 0.25, "position {i} value {v}");
            }
        }
    }

    #[test]
    fn empirical_sampling_matches_enumeration() {
        let s = source();
        let probs = s.enumerate(Some(0)).unwrap();
        let mut rng = rng_from_seed(7);
        let draws = 40_000;
        let mut counts = vec![0u32; probs.len()];
        for _ in 0..draws {
            let g = s.sample(0, &mut rng).unwrap();
            counts[s.outcome_index(&g).unwrap()] += 1;
        }
        let tv: f64 = counts
            .iter()
            .zip(probs.iter())
            .map(|(&c, &p)| (c as f64 / draws as f64 - p).abs())
            .sum::<f64>()
            * 0.5;
        assert!(tv < 0.03, "ancestral sampler TV {tv}");
    }
}
