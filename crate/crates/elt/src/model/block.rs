//! The weight-tied composite block, its L-fold composition, single-pass
//! dual-output capture for the distillation objective, and the shared head.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{EltError, Result};
use crate::model::config::{LoopConfig, MlpKind, Mode};
use crate::model::params::BlockParams;
use crate::numerics::{Graph, NodeId, Tensor};

pub const LN_EPS: f64 = 1e-6;

/// Class / timestep conditioning for one model invocation. The derived
/// conditioning vector is computed once per forward pass and the same graph
/// node is fed to every loop iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConditioningContext {
    /// `None` means the null (unconditional) label.
    pub class_id: Option<usize>,
    /// Diffusion timestep; required in diffusion mode, rejected in masked.
    pub timestep: Option<usize>,
}

impl ConditioningContext {
    pub fn class(class_id: Option<usize>) -> Self {
        ConditioningContext {
            class_id,
            timestep: None,
        }
    }

    pub fn class_and_time(class_id: Option<usize>, timestep: usize) -> Self {
        ConditioningContext {
            class_id,
            timestep: Some(timestep),
        }
    }
}

#[derive(Clone)]
pub struct LayerNodes {
    pub ln1_gamma: NodeId,
    pub ln1_beta: NodeId,
    pub w_q: NodeId,
    pub b_q: NodeId,
    pub w_k: NodeId,
    pub b_k: NodeId,
    pub w_v: NodeId,
    pub b_v: NodeId,
    pub w_o: NodeId,
    pub b_o: NodeId,
    pub ln2_gamma: NodeId,
    pub ln2_beta: NodeId,
    pub w_up: NodeId,
    pub b_up: NodeId,
    pub w_gate: Option<NodeId>,
    pub b_gate: Option<NodeId>,
    pub w_down: NodeId,
    pub b_down: NodeId,
}

/// Graph-bound parameter node ids plus the (name, id) list in canonical
/// visit order, used to route gradients back to named tensors.
pub struct BoundParams {
    pub layers: Vec<LayerNodes>,
    pub token_emb: Option<NodeId>,
    pub latent_in_w: Option<NodeId>,
    pub latent_in_b: Option<NodeId>,
    pub pos_emb: NodeId,
    pub class_emb: NodeId,
    pub time_w1: Option<NodeId>,
    pub time_b1: Option<NodeId>,
    pub time_w2: Option<NodeId>,
    pub time_b2: Option<NodeId>,
    pub head_ln_gamma: NodeId,
    pub head_ln_beta: NodeId,
    pub head_w: NodeId,
    pub head_b: NodeId,
    pub bindings: Vec<(String, NodeId)>,
}

/// A looped transformer: one parameter set, any loop count.
pub struct LoopedModel {
    cfg: LoopConfig,
    params: BlockParams,
    applications: AtomicU64,
}

impl LoopedModel {
    pub fn new(cfg: LoopConfig, params: BlockParams) -> Result<Self> {
        cfg.validate()?;
        Ok(LoopedModel {
            cfg,
            params,
            applications: AtomicU64::new(0),
        })
    }

    pub fn init(cfg: LoopConfig, seed: u64) -> Result<Self> {
        let params = BlockParams::init(&cfg, seed)?;
        LoopedModel::new(cfg, params)
    }

    pub fn cfg(&self) -> &LoopConfig {
        &self.cfg
    }

    pub fn params(&self) -> &BlockParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BlockParams {
        &mut self.params
    }

    /// Total block applications since the last reset. One application is one
    /// full pass through the N unique layers.
    pub fn block_applications(&self) -> u64 {
        self.applications.load(Ordering::Relaxed)
    }

    pub fn reset_block_applications(&self) {
        self.applications.store(0, Ordering::Relaxed);
    }

    /// Insert every parameter as a graph leaf (trainable or constant).
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> BoundParams {
        let mut bindings: Vec<(String, NodeId)> = Vec::new();
        self.params.visit(|name, t| {
            let id = if trainable {
                graph.param(t.clone())
            } else {
                graph.constant(t.clone())
            };
            bindings.push((name.to_string(), id));
        });
        let map: HashMap<&str, NodeId> = bindings
            .iter()
            .map(|(n, id)| (n.as_str(), *id))
            .collect();
        let get = |name: &str| map[name];
        let opt = |name: &str| map.get(name).copied();
        let layers = (0..self.cfg.n_layers)
            .map(|i| LayerNodes {
                ln1_gamma: get(&format!("layers.{i}.ln1_gamma")),
                ln1_beta: get(&format!("layers.{i}.ln1_beta")),
                w_q: get(&format!("layers.{i}.w_q")),
                b_q: get(&format!("layers.{i}.b_q")),
                w_k: get(&format!("layers.{i}.w_k")),
                b_k: get(&format!("layers.{i}.b_k")),
                w_v: get(&format!("layers.{i}.w_v")),
                b_v: get(&format!("layers.{i}.b_v")),
                w_o: get(&format!("layers.{i}.w_o")),
                b_o: get(&format!("layers.{i}.b_o")),
                ln2_gamma: get(&format!("layers.{i}.ln2_gamma")),
                ln2_beta: get(&format!("layers.{i}.ln2_beta")),
                w_up: get(&format!("layers.{i}.w_up")),
                b_up: get(&format!("layers.{i}.b_up")),
                w_gate: opt(&format!("layers.{i}.w_gate")),
                b_gate: opt(&format!("layers.{i}.b_gate")),
                w_down: get(&format!("layers.{i}.w_down")),
                b_down: get(&format!("layers.{i}.b_down")),
            })
            .collect();
        BoundParams {
            layers,
            token_emb: opt("token_emb"),
            latent_in_w: opt("latent_in_w"),
            latent_in_b: opt("latent_in_b"),
            pos_emb: get("pos_emb"),
            class_emb: get("class_emb"),
            time_w1: opt("time_w1"),
            time_b1: opt("time_b1"),
            time_w2: opt("time_w2"),
            time_b2: opt("time_b2"),
            head_ln_gamma: get("head_ln_gamma"),
            head_ln_beta: get("head_ln_beta"),
            head_w: get("head_w"),
            head_b: get("head_b"),
            bindings,
        }
    }

    /// Class embedding plus (in diffusion mode) a two-layer MLP over
    /// sinusoidal timestep features. Shape (1, d_model).
    pub fn conditioning(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        ctx: &ConditioningContext,
    ) -> Result<NodeId> {
        let class_row = ctx.class_id.unwrap_or(self.cfg.n_classes);
        if class_row > self.cfg.n_classes {
            return Err(EltError::Config(format!(
                "class id {} out of range (n_classes = {})",
                class_row, self.cfg.n_classes
            )));
        }
        let class_vec = graph.embed_rows(bound.class_emb, &[class_row])?;
        match self.cfg.mode {
            Mode::Masked => {
                if ctx.timestep.is_some() {
                    return Err(EltError::Config(
                        "masked mode takes no timestep".to_string(),
                    ));
                }
                Ok(class_vec)
            }
            Mode::Diffusion => {
                let t = ctx.timestep.ok_or_else(|| {
                    EltError::Config("diffusion mode requires a timestep".to_string())
                })?;
                let feats = graph.constant(sinusoidal_features(t, self.cfg.d_model));
                let w1 = bound.time_w1.expect("diffusion params carry time_w1");
                let b1 = bound.time_b1.expect("diffusion params carry time_b1");
                let w2 = bound.time_w2.expect("diffusion params carry time_w2");
                let b2 = bound.time_b2.expect("diffusion params carry time_b2");
                let h = graph.matmul(feats, w1)?;
                let h = graph.add_row(h, b1)?;
                let h = graph.gelu(h);
                let h = graph.matmul(h, w2)?;
                let h = graph.add_row(h, b2)?;
                graph.add(class_vec, h)
            }
        }
    }

    /// Token ids (incl. the mask sentinel) to hidden states: embedding rows
    /// plus the learned positional embedding, added once.
    pub fn embed_tokens(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        tokens: &[usize],
    ) -> Result<NodeId> {
        if tokens.len() != self.cfg.seq_len {
            return Err(EltError::shape(
                "embed_tokens",
                format!("{} tokens for seq_len {}", tokens.len(), self.cfg.seq_len),
            ));
        }
        let table = bound
            .token_emb
            .ok_or_else(|| EltError::Config("token embedding requires masked mode".to_string()))?;
        let emb = graph.embed_rows(table, tokens)?;
        graph.add(emb, bound.pos_emb)
    }

    /// Continuous latents (seq_len x latent_dim) to hidden states.
    pub fn embed_latent(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        latent: &Tensor,
    ) -> Result<NodeId> {
        let w = bound.latent_in_w.ok_or_else(|| {
            EltError::Config("latent embedding requires diffusion mode".to_string())
        })?;
        let b = bound.latent_in_b.expect("diffusion params carry latent_in_b");
        let x = graph.constant(latent.clone());
        let proj = graph.matmul(x, w)?;
        let proj = graph.add_row(proj, b)?;
        graph.add(proj, bound.pos_emb)
    }

    /// One pass through the N unique layers. The conditioning vector is added
    /// before the first layernorm input is computed, so the block stays a
    /// pure function of (x, cond).
    pub fn apply_block(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        x: NodeId,
        cond: NodeId,
    ) -> Result<NodeId> {
        if graph.value(x).cols() != self.cfg.d_model {
            return Err(EltError::shape(
                "apply_block",
                format!(
                    "hidden width {} != d_model {}",
                    graph.value(x).cols(),
                    self.cfg.d_model
                ),
            ));
        }
        let mut h = graph.add_row(x, cond)?;
        for layer in &bound.layers {
            h = self.layer_forward(graph, layer, h)?;
        }
        self.applications.fetch_add(1, Ordering::Relaxed);
        Ok(h)
    }

    fn layer_forward(&self, g: &mut Graph, l: &LayerNodes, x: NodeId) -> Result<NodeId> {
        // Pre-norm attention sublayer.
        let n1 = g.normalize_rows(x, LN_EPS);
        let n1 = g.mul_row(n1, l.ln1_gamma)?;
        let a_in = g.add_row(n1, l.ln1_beta)?;
        let q = g.matmul(a_in, l.w_q)?;
        let q = g.add_row(q, l.b_q)?;
        let k = g.matmul(a_in, l.w_k)?;
        let k = g.add_row(k, l.b_k)?;
        let v = g.matmul(a_in, l.w_v)?;
        let v = g.add_row(v, l.b_v)?;
        let dh = self.cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.cfg.n_heads);
        for hix in 0..self.cfg.n_heads {
            let qh = g.slice_cols(q, hix * dh, dh)?;
            let kh = g.slice_cols(k, hix * dh, dh)?;
            let vh = g.slice_cols(v, hix * dh, dh)?;
            let scores = g.matmul_nt(qh, kh)?;
            let scores = g.scale(scores, scale);
            let probs = g.softmax(scores);
            heads.push(g.matmul(probs, vh)?);
        }
        let merged = g.concat_cols(&heads)?;
        let proj = g.matmul(merged, l.w_o)?;
        let proj = g.add_row(proj, l.b_o)?;
        let x = g.add(x, proj)?;

        // Pre-norm MLP sublayer.
        let n2 = g.normalize_rows(x, LN_EPS);
        let n2 = g.mul_row(n2, l.ln2_gamma)?;
        let m_in = g.add_row(n2, l.ln2_beta)?;
        let mlp = match self.cfg.mlp_kind() {
            MlpKind::Gelu => {
                let up = g.matmul(m_in, l.w_up)?;
                let up = g.add_row(up, l.b_up)?;
                let act = g.gelu(up);
                let down = g.matmul(act, l.w_down)?;
                g.add_row(down, l.b_down)?
            }
            MlpKind::GatedGelu => {
                let up = g.matmul(m_in, l.w_up)?;
                let up = g.add_row(up, l.b_up)?;
                let w_gate = l.w_gate.expect("gated mlp params carry w_gate");
                let b_gate = l.b_gate.expect("gated mlp params carry b_gate");
                let gate = g.matmul(m_in, w_gate)?;
                let gate = g.add_row(gate, b_gate)?;
                let gate = g.gelu(gate);
                let mixed = g.mul(gate, up)?;
                let down = g.matmul(mixed, l.w_down)?;
                g.add_row(down, l.b_down)?
            }
        };
        g.add(x, mlp)
    }

    /// Exactly L applications of the shared block; no re-injection of the
    /// input between loops.
    pub fn loop_forward(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        x: NodeId,
        cond: NodeId,
        loops: usize,
    ) -> Result<NodeId> {
        if loops < 1 {
            return Err(EltError::Config("loop count must be >= 1".to_string()));
        }
        let mut h = x;
        for _ in 0..loops {
            h = self.apply_block(graph, bound, h, cond)?;
        }
        Ok(h)
    }

    /// Single forward pass of `l_max` loops that also returns the state after
    /// exactly `l_int` loops. The student state is a strict prefix of the
    /// teacher trajectory; no block application happens twice.
    pub fn loop_forward_capture(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        x: NodeId,
        cond: NodeId,
        l_max: usize,
        l_int: usize,
    ) -> Result<(NodeId, NodeId)> {
        if !(1..l_max).contains(&l_int) {
            return Err(EltError::Config(format!(
                "capture depth must satisfy 1 <= l_int < l_max, got l_int={l_int}, l_max={l_max}"
            )));
        }
        let mut h = x;
        let mut intermediate = None;
        for i in 1..=l_max {
            h = self.apply_block(graph, bound, h, cond)?;
            if i == l_int {
                intermediate = Some(h);
            }
        }
        Ok((intermediate.expect("l_int < l_max"), h))
    }

    /// Shared prediction head: final layernorm plus a linear projection to
    /// vocab logits (masked) or an x0 prediction (diffusion). The same
    /// parameters serve every exit depth.
    pub fn predict_head(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        features: NodeId,
    ) -> Result<NodeId> {
        if graph.value(features).cols() != self.cfg.d_model {
            return Err(EltError::shape(
                "predict_head",
                format!(
                    "feature width {} != d_model {}",
                    graph.value(features).cols(),
                    self.cfg.d_model
                ),
            ));
        }
        let n = graph.normalize_rows(features, LN_EPS);
        let n = graph.mul_row(n, bound.head_ln_gamma)?;
        let n = graph.add_row(n, bound.head_ln_beta)?;
        let out = graph.matmul(n, bound.head_w)?;
        graph.add_row(out, bound.head_b)
    }

    /// Full masked-mode forward: tokens -> logits at the given loop budget.
    pub fn forward_masked(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        tokens: &[usize],
        class_id: Option<usize>,
        loops: usize,
    ) -> Result<NodeId> {
        let ctx = ConditioningContext::class(class_id);
        let cond = self.conditioning(graph, bound, &ctx)?;
        let x = self.embed_tokens(graph, bound, tokens)?;
        let h = self.loop_forward(graph, bound, x, cond, loops)?;
        self.predict_head(graph, bound, h)
    }

    /// Full diffusion-mode forward: noised latent -> x0 prediction.
    pub fn forward_latent(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        x_t: &Tensor,
        timestep: usize,
        class_id: Option<usize>,
        loops: usize,
    ) -> Result<NodeId> {
        let ctx = ConditioningContext::class_and_time(class_id, timestep);
        let cond = self.conditioning(graph, bound, &ctx)?;
        let x = self.embed_latent(graph, bound, x_t)?;
        let h = self.loop_forward(graph, bound, x, cond, loops)?;
        self.predict_head(graph, bound, h)
    }
}

/// Standard sinusoidal features of an integer timestep, shape (1, d).
fn sinusoidal_features(t: usize, d: usize) -> Tensor {
    let half = (d / 2).max(1);
    let mut data = vec![0.0; d];
    for (i, v) in data.iter_mut().enumerate() {
        let pair = i / 2;
        let freq = (10_000f64).powf(-(pair as f64) / half as f64);
        let arg = t as f64 * freq;
        *v = if i % 2 == 0 { arg.sin() } else { arg.cos() };
    }
    Tensor::from_vec(vec![1, d], data).expect("length matches")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> LoopConfig {
        LoopConfig::masked(2, 16, 4, 32, 1, 4, 4, 8, 2)
    }

    fn forward_once(model: &LoopedModel, loops: usize) -> Vec<f64> {
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let logits = model
            .forward_masked(&mut g, &bound, &[1, 8, 3, 0], Some(1), loops)
            .unwrap();
        g.value(logits).data().to_vec()
    }

    #[test]
    fn output_shape_equals_input_shape() {
        let model = LoopedModel::init(tiny_cfg(), 5).unwrap();
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let ctx = ConditioningContext::class(Some(0));
        let cond = model.conditioning(&mut g, &bound, &ctx).unwrap();
        let x = model.embed_tokens(&mut g, &bound, &[0, 1, 2, 3]).unwrap();
        let y = model.apply_block(&mut g, &bound, x, cond).unwrap();
        assert_eq!(g.value(y).shape(), g.value(x).shape());
    }

    #[test]
    fn zeroed_weights_leave_residual_identity() {
        let mut model = LoopedModel::init(tiny_cfg(), 5).unwrap();
        model.params_mut().zero_all();
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let ctx = ConditioningContext::class(Some(1));
        let cond = model.conditioning(&mut g, &bound, &ctx).unwrap();
        let x = g.constant(Tensor::from_vec(vec![4, 16], (0..64).map(|v| v as f64 * 0.1).collect()).unwrap());
        let y = model.apply_block(&mut g, &bound, x, cond).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn forward_is_deterministic() {
        let model = LoopedModel::init(tiny_cfg(), 5).unwrap();
        assert_eq!(forward_once(&model, 3), forward_once(&model, 3));
    }

    #[test]
    fn loop_forward_composes() {
        let model = LoopedModel::init(tiny_cfg(), 9).unwrap();
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let ctx = ConditioningContext::class(None);
        let cond = model.conditioning(&mut g, &bound, &ctx).unwrap();
        let x = model.embed_tokens(&mut g, &bound, &[8, 8, 8, 8]).unwrap();

        let once = model.loop_forward(&mut g, &bound, x, cond, 1).unwrap();
        let direct = model.apply_block(&mut g, &bound, x, cond).unwrap();
        assert_eq!(g.value(once).data(), g.value(direct).data());

        let twice = model.loop_forward(&mut g, &bound, x, cond, 2).unwrap();
        let composed = model.apply_block(&mut g, &bound, direct, cond).unwrap();
        assert_eq!(g.value(twice).data(), g.value(composed).data());

        // L=4 equals L=2 applied to the L=2 state.
        let four = model.loop_forward(&mut g, &bound, x, cond, 4).unwrap();
        let two_two = model.loop_forward(&mut g, &bound, twice, cond, 2).unwrap();
        assert_eq!(g.value(four).data(), g.value(two_two).data());
    }

    #[test]
    fn capture_matches_independent_prefix() {
        let model = LoopedModel::init(tiny_cfg(), 13).unwrap();
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let ctx = ConditioningContext::class(Some(0));
        let cond = model.conditioning(&mut g, &bound, &ctx).unwrap();
        let x = model.embed_tokens(&mut g, &bound, &[1, 2, 3, 4]).unwrap();
        model.reset_block_applications();
        let (f_int, f_max) = model
            .loop_forward_capture(&mut g, &bound, x, cond, 4, 2)
            .unwrap();
        assert_eq!(model.block_applications(), 4);
        let ind_int = model.loop_forward(&mut g, &bound, x, cond, 2).unwrap();
        let ind_max = model.loop_forward(&mut g, &bound, x, cond, 4).unwrap();
        assert_eq!(g.value(f_int).data(), g.value(ind_int).data());
        assert_eq!(g.value(f_max).data(), g.value(ind_max).data());
    }

    #[test]
    fn capture_rejects_bad_depth() {
        let model = LoopedModel::init(tiny_cfg(), 1).unwrap();
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let ctx = ConditioningContext::class(None);
        let cond = model.conditioning(&mut g, &bound, &ctx).unwrap();
        let x = model.embed_tokens(&mut g, &bound, &[0, 0, 0, 0]).unwrap();
        assert!(model
            .loop_forward_capture(&mut g, &bound, x, cond, 4, 4)
            .is_err());
        assert!(model
            .loop_forward_capture(&mut g, &bound, x, cond, 4, 0)
            .is_err());
    }

    #[test]
    fn head_shape_is_seq_by_vocab() {
        let cfg = LoopConfig::masked(1, 16, 4, 32, 1, 2, 16, 32, 4);
        let model = LoopedModel::init(cfg, 2).unwrap();
        let tokens = vec![32usize; 16];
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let logits = model
            .forward_masked(&mut g, &bound, &tokens, Some(3), 1)
            .unwrap();
        assert_eq!(g.value(logits).shape(), &[16, 32]);
    }

    #[test]
    fn conditioning_is_stationary_within_an_invocation() {
        let cfg = LoopConfig::diffusion(1, 8, 2, 16, 1, 2, 2, 3, 2);
        let model = LoopedModel::init(cfg, 7).unwrap();
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let ctx = ConditioningContext::class_and_time(Some(1), 5);
        let cond = model.conditioning(&mut g, &bound, &ctx).unwrap();
        let before = g.value(cond).clone();
        let latent = Tensor::zeros(vec![2, 3]);
        let x = model.embed_latent(&mut g, &bound, &latent).unwrap();
        let _ = model.loop_forward(&mut g, &bound, x, cond, 2).unwrap();
        assert_eq!(g.value(cond), &before);
        let again = model.conditioning(&mut g, &bound, &ctx).unwrap();
        assert_eq!(g.value(again), &before);
    }

    #[test]
    fn masked_mode_rejects_timestep() {
        let model = LoopedModel::init(tiny_cfg(), 0).unwrap();
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let ctx = ConditioningContext::class_and_time(Some(0), 3);
        assert!(model.conditioning(&mut g, &bound, &ctx).is_err());
    }

    #[test]
    fn one_shared_head_serves_every_exit_depth() {
        // The head is a single parameter set: perturbing it moves the output
        // at every loop budget.
        let cfg = tiny_cfg();
        let model = LoopedModel::init(cfg.clone(), 17).unwrap();
        let outputs = |m: &LoopedModel, loops: usize| forward(m, loops);
        fn forward(m: &LoopedModel, loops: usize) -> Vec<f64> {
            let mut g = Graph::new();
            let bound = m.bind(&mut g, false);
            let out = m
                .forward_masked(&mut g, &bound, &[1, 8, 3, 0], Some(1), loops)
                .unwrap();
            g.value(out).data().to_vec()
        }
        let base: Vec<Vec<f64>> = (1..=4).map(|l| outputs(&model, l)).collect();
        let mut params = model.params().clone();
        params.visit_mut(|name, t| {
            if name == "head_w" {
                t.data_mut()[0] += 0.5;
            }
        });
        let perturbed = LoopedModel::new(cfg, params).unwrap();
        for (l, b) in (1..=4).zip(base.iter()) {
            let p = outputs(&perturbed, l);
            assert_ne!(b, &p, "head change must reach the exit at L={l}");
        }
    }

    #[test]
    fn model_is_shareable_across_threads() {
        fn assert_sync<T: Sync + Send>() {}
        assert_sync::<LoopedModel>();
    }
}
