//! Stochastic student sampling: one intermediate depth drawn per training
//! step, uniform over {l_min, ..., l_max - 1} (upper bound exclusive).

use rand::rngs::StdRng;
use rand::RngExt;

use crate::error::{EltError, Result};

pub fn sample_student_depth(rng: &mut StdRng, l_min: usize, l_max: usize) -> Result<usize> {
    if l_min >= l_max {
        return Err(EltError::Config(format!(
            "intra-loop distillation requires at least one intermediate depth (l_min {l_min} >= l_max {l_max})"
        )));
    }
    Ok(rng.random_range(l_min..l_max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn singleton_support() {
        let mut rng = rng_from_seed(0);
        for _ in 0..100 {
            assert_eq!(sample_student_depth(&mut rng, 3, 4).unwrap(), 3);
        }
    }

    #[test]
    fn rejects_empty_support() {
        let mut rng = rng_from_seed(0);
        assert!(sample_student_depth(&mut rng, 4, 4).is_err());
        assert!(sample_student_depth(&mut rng, 5, 4).is_err());
    }

    #[test]
    fn frequencies_are_uniform_over_support() {
        // (l_min=2, l_max=4): values in {2, 3}, each within +-1% of 0.5
        // over 1e5 draws.
        let mut rng = rng_from_seed(17);
        let n = 100_000;
        let mut counts = [0u32; 2];
        for _ in 0..n {
            let v = sample_student_depth(&mut rng, 2, 4).unwrap();
            assert!(v == 2 || v == 3);
            counts[v - 2] += 1;
        }
        for c in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.5).abs() < 0.01, "freq {freq}");
        }
    }

    #[test]
    fn support_endpoints_are_reached() {
        // (l_min=1, l_max=8): min observed 1 and max observed 7 over 1e4 draws.
        let mut rng = rng_from_seed(23);
        let mut lo = usize::MAX;
        let mut hi = 0;
        for _ in 0..10_000 {
            let v = sample_student_depth(&mut rng, 1, 8).unwrap();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        assert_eq!(lo, 1);
        assert_eq!(hi, 7);
    }
}
