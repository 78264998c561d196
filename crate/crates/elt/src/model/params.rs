//! The single shared parameter set for the looped block, embeddings and head.
//!
//! Exactly `n_layers` unique layer parameter sets exist regardless of the
//! loop count; the head is one parameter set reused at every exit depth.

use rand::rngs::StdRng;
use rand::RngExt;

use crate::error::Result;
use crate::model::config::{LoopConfig, MlpKind, Mode};
use crate::numerics::Tensor;
use crate::rng::rng_from_seed;

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub w_q: Tensor,
    pub b_q: Tensor,
    pub w_k: Tensor,
    pub b_k: Tensor,
    pub w_v: Tensor,
    pub b_v: Tensor,
    pub w_o: Tensor,
    pub b_o: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
    pub w_up: Tensor,
    pub b_up: Tensor,
    pub w_gate: Option<Tensor>,
    pub b_gate: Option<Tensor>,
    pub w_down: Tensor,
    pub b_down: Tensor,
}

#[derive(Debug, Clone)]
pub struct BlockParams {
    pub layers: Vec<LayerParams>,
    /// Token embedding incl. the mask sentinel row (masked mode).
    pub token_emb: Option<Tensor>,
    /// Input projection from latent channels to d_model (diffusion mode).
    pub latent_in_w: Option<Tensor>,
    pub latent_in_b: Option<Tensor>,
    /// Learned positional embedding, added once at embedding time.
    pub pos_emb: Tensor,
    /// Class embedding incl. the null (unconditional) row.
    pub class_emb: Tensor,
    /// Two-layer MLP over sinusoidal timestep features (diffusion mode).
    pub time_w1: Option<Tensor>,
    pub time_b1: Option<Tensor>,
    pub time_w2: Option<Tensor>,
    pub time_b2: Option<Tensor>,
    pub head_ln_gamma: Tensor,
    pub head_ln_beta: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

const INIT_STD: f64 = 0.02;

fn trunc_normal(rng: &mut StdRng, shape: Vec<usize>, std: f64) -> Tensor {
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    while data.len() < numel {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        let z = (-2.0 * u1.max(f64::MIN_POSITIVE).ln()).sqrt()
            * (2.0 * std::f64::consts::PI * u2).cos();
        if z.abs() <= 2.0 {
            data.push(z * std);
        }
    }
    Tensor::from_vec(shape, data).expect("shape/data length agree by construction")
}

impl BlockParams {
    /// Truncated-normal init (std 0.02) for weights, zeros for biases, ones
    /// for layernorm gains. Each layer's output projections (attention out,
    /// MLP down) start at zero so the block begins as an identity map and
    /// looping is stable from step one.
    pub fn init(cfg: &LoopConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_from_seed(seed);
        let d = cfg.d_model;
        let m = cfg.mlp_dim;
        let gated = cfg.mlp_kind() == MlpKind::GatedGelu;

        let layers = (0..cfg.n_layers)
            .map(|_| LayerParams {
                ln1_gamma: Tensor::full(vec![d], 1.0),
                ln1_beta: Tensor::zeros(vec![d]),
                w_q: trunc_normal(&mut rng, vec![d, d], INIT_STD),
                b_q: Tensor::zeros(vec![d]),
                w_k: trunc_normal(&mut rng, vec![d, d], INIT_STD),
                b_k: Tensor::zeros(vec![d]),
                w_v: trunc_normal(&mut rng, vec![d, d], INIT_STD),
                b_v: Tensor::zeros(vec![d]),
                w_o: Tensor::zeros(vec![d, d]),
                b_o: Tensor::zeros(vec![d]),
                ln2_gamma: Tensor::full(vec![d], 1.0),
                ln2_beta: Tensor::zeros(vec![d]),
                w_up: trunc_normal(&mut rng, vec![d, m], INIT_STD),
                b_up: Tensor::zeros(vec![m]),
                w_gate: gated.then(|| trunc_normal(&mut rng, vec![d, m], INIT_STD)),
                b_gate: gated.then(|| Tensor::zeros(vec![m])),
                w_down: Tensor::zeros(vec![m, d]),
                b_down: Tensor::zeros(vec![d]),
            })
            .collect();

        let (token_emb, latent_in_w, latent_in_b) = match cfg.mode {
            Mode::Masked => (
                Some(trunc_normal(
                    &mut rng,
                    vec![cfg.vocab_size()? + 1, d],
                    INIT_STD,
                )),
                None,
                None,
            ),
            Mode::Diffusion => (
                None,
                Some(trunc_normal(&mut rng, vec![cfg.latent_dim()?, d], INIT_STD)),
                Some(Tensor::zeros(vec![d])),
            ),
        };
        let diffusion = cfg.mode == Mode::Diffusion;
        let out_dim = cfg.head_out_dim()?;

        Ok(BlockParams {
            layers,
            token_emb,
            latent_in_w,
            latent_in_b,
            pos_emb: trunc_normal(&mut rng, vec![cfg.seq_len, d], INIT_STD),
            class_emb: trunc_normal(&mut rng, vec![cfg.n_classes + 1, d], INIT_STD),
            time_w1: diffusion.then(|| trunc_normal(&mut rng, vec![d, d], INIT_STD)),
            time_b1: diffusion.then(|| Tensor::zeros(vec![d])),
            time_w2: diffusion.then(|| trunc_normal(&mut rng, vec![d, d], INIT_STD)),
            time_b2: diffusion.then(|| Tensor::zeros(vec![d])),
            head_ln_gamma: Tensor::full(vec![d], 1.0),
            head_ln_beta: Tensor::zeros(vec![d]),
            head_w: trunc_normal(&mut rng, vec![d, out_dim], INIT_STD),
            head_b: Tensor::zeros(vec![out_dim]),
        })
    }

    /// Visit every tensor with its canonical name, in a fixed order shared by
    /// the optimizer, checkpoints and gradient maps.
    pub fn visit(&self, mut f: impl FnMut(&str, &Tensor)) {
        self.for_each(|name, t| f(name, t));
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor)) {
        self.for_each_mut(|name, t| f(name, t));
    }

    fn for_each(&self, mut f: impl FnMut(&str, &Tensor)) {
        for (i, l) in self.layers.iter().enumerate() {
            let mut emit = |field: &str, t: &Tensor| f(&format!("layers.{i}.{field}"), t);
            emit("ln1_gamma", &l.ln1_gamma);
            emit("ln1_beta", &l.ln1_beta);
            emit("w_q", &l.w_q);
            emit("b_q", &l.b_q);
            emit("w_k", &l.w_k);
            emit("b_k", &l.b_k);
            emit("w_v", &l.w_v);
            emit("b_v", &l.b_v);
            emit("w_o", &l.w_o);
            emit("b_o", &l.b_o);
            emit("ln2_gamma", &l.ln2_gamma);
            emit("ln2_beta", &l.ln2_beta);
            emit("w_up", &l.w_up);
            emit("b_up", &l.b_up);
            if let Some(t) = &l.w_gate {
                emit("w_gate", t);
            }
            if let Some(t) = &l.b_gate {
                emit("b_gate", t);
            }
            emit("w_down", &l.w_down);
            emit("b_down", &l.b_down);
        }
        if let Some(t) = &self.token_emb {
            f("token_emb", t);
        }
        if let Some(t) = &self.latent_in_w {
            f("latent_in_w", t);
        }
        if let Some(t) = &self.latent_in_b {
            f("latent_in_b", t);
        }
        f("pos_emb", &self.pos_emb);
        f("class_emb", &self.class_emb);
        if let Some(t) = &self.time_w1 {
            f("time_w1", t);
        }
        if let Some(t) = &self.time_b1 {
            f("time_b1", t);
        }
        if let Some(t) = &self.time_w2 {
            f("time_w2", t);
        }
        if let Some(t) = &self.time_b2 {
            f("time_b2", t);
        }
        f("head_ln_gamma", &self.head_ln_gamma);
        f("head_ln_beta", &self.head_ln_beta);
        f("head_w", &self.head_w);
        f("head_b", &self.head_b);
    }

    fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            let mut emit = |field: &str, t: &mut Tensor| f(&format!("layers.{i}.{field}"), t);
            emit("ln1_gamma", &mut l.ln1_gamma);
            emit("ln1_beta", &mut l.ln1_beta);
            emit("w_q", &mut l.w_q);
            emit("b_q", &mut l.b_q);
            emit("w_k", &mut l.w_k);
            emit("b_k", &mut l.b_k);
            emit("w_v", &mut l.w_v);
            emit("b_v", &mut l.b_v);
            emit("w_o", &mut l.w_o);
            emit("b_o", &mut l.b_o);
            emit("ln2_gamma", &mut l.ln2_gamma);
            emit("ln2_beta", &mut l.ln2_beta);
            emit("w_up", &mut l.w_up);
            emit("b_up", &mut l.b_up);
            if let Some(t) = &mut l.w_gate {
                emit("w_gate", t);
            }
            if let Some(t) = &mut l.b_gate {
                emit("b_gate", t);
            }
            emit("w_down", &mut l.w_down);
            emit("b_down", &mut l.b_down);
        }
        if let Some(t) = &mut self.token_emb {
            f("token_emb", t);
        }
        if let Some(t) = &mut self.latent_in_w {
            f("latent_in_w", t);
        }
        if let Some(t) = &mut self.latent_in_b {
            f("latent_in_b", t);
        }
        f("pos_emb", &mut self.pos_emb);
        f("class_emb", &mut self.class_emb);
        if let Some(t) = &mut self.time_w1 {
            f("time_w1", t);
        }
        if let Some(t) = &mut self.time_b1 {
            f("time_b1", t);
        }
        if let Some(t) = &mut self.time_w2 {
            f("time_w2", t);
        }
        if let Some(t) = &mut self.time_b2 {
            f("time_b2", t);
        }
        f("head_ln_gamma", &mut self.head_ln_gamma);
        f("head_ln_beta", &mut self.head_ln_beta);
        f("head_w", &mut self.head_w);
        f("head_b", &mut self.head_b);
    }

    pub fn num_params(&self) -> u64 {
        let mut total = 0u64;
        self.visit(|_, t| total += t.numel() as u64);
        total
    }

    /// Set every tensor to zero. Used by identity/residual tests.
    pub fn zero_all(&mut self) {
        self.visit_mut(|_, t| t.data_mut().iter_mut().for_each(|v| *v = 0.0));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let cfg = LoopConfig::masked(2, 16, 4, 32, 1, 4, 4, 8, 2);
        let a = BlockParams::init(&cfg, 11).unwrap();
        let b = BlockParams::init(&cfg, 11).unwrap();
        let mut names = Vec::new();
        a.visit(|n, t| names.push((n.to_string(), t.clone())));
        let mut i = 0;
        b.visit(|n, t| {
            assert_eq!(names[i].0, n);
            assert_eq!(&names[i].1, t);
            i += 1;
        });
    }

    #[test]
    fn layer_count_is_exactly_n() {
        let cfg = LoopConfig::masked(3, 8, 2, 16, 1, 7, 4, 4, 1);
        let p = BlockParams::init(&cfg, 0).unwrap();
        assert_eq!(p.layers.len(), 3);
    }

    #[test]
    fn trunc_normal_respects_bounds() {
        let mut rng = rng_from_seed(3);
        let t = trunc_normal(&mut rng, vec![4096], 0.02);
        assert!(t.data().iter().all(|v| v.abs() <= 0.04 + 1e-12));
        let mean: f64 = t.data().iter().sum::<f64>() / t.numel() as f64;
        assert!(mean.abs() < 0.002);
    }
}
