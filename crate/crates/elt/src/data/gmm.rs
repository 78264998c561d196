//! Diagonal Gaussian mixture over latent rows; the diffusion-regime stand-in
//! for real latent data. Classes map to components.

use rand::rngs::StdRng;
use rand::RngExt;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{EltError, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GaussianMixtureSource {
    components: Vec<MixtureComponent>,
    seq_len: usize,
}

impl GaussianMixtureSource {
    pub fn new(components: Vec<MixtureComponent>, seq_len: usize) -> Result<Self> {
        if components.is_empty() {
            return Err(EltError::Config("mixture needs components".to_string()));
        }
        let dim = components[0].mean.len();
        let wsum: f64 = components.iter().map(|c| c.weight).sum();
        if (wsum - 1.0).abs() > 1e-9 {
            return Err(EltError::Config("mixture weights must sum to 1".to_string()));
        }
        for c in &components {
            if c.mean.len() != dim || c.var.len() != dim {
                return Err(EltError::Config("component dims disagree".to_string()));
            }
            if c.var.iter().any(|v| *v <= 0.0) {
                return Err(EltError::Config("variances must be positive".to_string()));
            }
        }
        Ok(GaussianMixtureSource {
            components,
            seq_len,
        })
    }

    /// The classic two-component 2-d toy: well-separated means, unit-ish
    /// spread, equal weights.
    pub fn two_component_2d(seq_len: usize) -> Self {
        GaussianMixtureSource::new(
            vec![
                MixtureComponent {
                    weight: 0.5,
                    mean: vec![-2.0, 0.0],
                    var: vec![0.5, 0.5],
                },
                MixtureComponent {
                    weight: 0.5,
                    mean: vec![2.0, 1.0],
                    var: vec![0.5, 0.5],
                },
            ],
            seq_len,
        )
        .expect("valid fixed mixture")
    }

    pub fn latent_dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    /// Clean latent draw. A class id pins the component; None samples the
    /// mixture.
    pub fn sample(&self, class_id: Option<usize>, rng: &mut StdRng) -> Result<Tensor> {
        let dim = self.latent_dim();
        let mut data = Vec::with_capacity(self.seq_len * dim);
        for _ in 0..self.seq_len {
            let c = match class_id {
                Some(c) if c < self.components.len() => c,
                Some(c) => {
                    return Err(EltError::Config(format!(
                        "class {c} out of range ({} components)",
                        self.components.len()
                    )))
                }
                None => {
                    let r: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut pick = self.components.len() - 1;
                    for (i, comp) in self.components.iter().enumerate() {
                        acc += comp.weight;
                        if r < acc {
                            pick = i;
                            break;
                        }
                    }
                    pick
                }
            };
            let comp = &self.components[c];
            for d in 0..dim {
                let z: f64 = StandardNormal.sample(rng);
                data.push(comp.mean[d] + comp.var[d].sqrt() * z);
            }
        }
        Tensor::from_vec(vec![self.seq_len, dim], data)
    }

    /// Mixture mean per dimension.
    pub fn mixture_mean(&self) -> Vec<f64> {
        let dim = self.latent_dim();
        let mut m = vec![0.0; dim];
        for c in &self.components {
            for d in 0..dim {
                m[d] += c.weight * c.mean[d];
            }
        }
        m
    }

    /// Mixture variance per dimension (law of total variance).
    pub fn mixture_var(&self) -> Vec<f64> {
        let dim = self.latent_dim();
        let m = self.mixture_mean();
        let mut v = vec![0.0; dim];
        for c in &self.components {
            for d in 0..dim {
                let dm = c.mean[d] - m[d];
                v[d] += c.weight * (c.var[d] + dm * dm);
            }
        }
        v
    }

    /// Nearest-mean component assignment accuracy of labeled samples.
    pub fn assignment_accuracy(&self, samples: &[(usize, Tensor)]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let mut correct = 0usize;
        let mut total = 0usize;
        for (label, x) in samples {
            for r in 0..x.rows() {
                let row = x.row(r);
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (ci, c) in self.components.iter().enumerate() {
                    let d: f64 = row
                        .iter()
                        .zip(c.mean.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    if d < best_d {
                        best_d = d;
                        best = ci;
                    }
                }
                total += 1;
                if best == *label {
                    correct += 1;
                }
            }
        }
        correct as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn moments_match_monte_carlo() {
        let src = GaussianMixtureSource::two_component_2d(1);
        let mut rng = rng_from_seed(4);
        let n = 200_000;
        let dim = src.latent_dim();
        let mut mean = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for _ in 0..n {
            let x = src.sample(None, &mut rng).unwrap();
            for d in 0..dim {
                mean[d] += x.data()[d];
                sq[d] += x.data()[d] * x.data()[d];
            }
        }
        let want_m = src.mixture_mean();
        let want_v = src.mixture_var();
        for d in 0..dim {
            mean[d] /= n as f64;
            let var = sq[d] / n as f64 - mean[d] * mean[d];
            assert!((mean[d] - want_m[d]).abs() < 0.02, "dim {d} mean");
            assert!((var - want_v[d]).abs() / want_v[d] < 0.02, "dim {d} var");
        }
    }

    #[test]
    fn class_pins_the_component() {
        let src = GaussianMixtureSource::two_component_2d(1);
        let mut rng = rng_from_seed(8);
        let mut labeled = Vec::new();
        for _ in 0..500 {
            labeled.push((0, src.sample(Some(0), &mut rng).unwrap()));
            labeled.push((1, src.sample(Some(1), &mut rng).unwrap()));
        }
        assert!(src.assignment_accuracy(&labeled) > 0.98);
    }
}
