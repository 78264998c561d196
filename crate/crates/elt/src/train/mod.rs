//! Training: the dual-path objective over a captured loop trajectory, one
//! optimizer step, and the per-step CSV log.

pub mod curriculum;
pub mod loss;
pub mod optim;
pub mod student;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::rngs::StdRng;

pub use curriculum::{lambda_at, CurriculumState};
pub use loss::{ilsd_loss_diffusion, ilsd_loss_masked, DistillSpace, LossBreakdown, LossNodes};
pub use optim::{clip_factor, global_grad_norm, OptimizerConfig, OptimizerState};
pub use student::sample_student_depth;

use crate::error::{EltError, Result};
use crate::model::{ConditioningContext, LoopedModel};
use crate::numerics::{Graph, NodeId, Tensor};
use crate::train::loss::combine_terms;

/// One masked training example, as produced by the masking corruption op.
#[derive(Debug, Clone)]
pub struct MaskedExample {
    /// Token ids with masked positions replaced by the mask sentinel.
    pub tokens: Vec<usize>,
    /// Clean tokens; read at masked positions only.
    pub targets: Vec<usize>,
    pub mask: Vec<bool>,
    pub class_id: Option<usize>,
}

/// One diffusion training example, as produced by the noising corruption op.
#[derive(Debug, Clone)]
pub struct DiffusionExample {
    pub x_t: Tensor,
    pub x0: Tensor,
    pub timestep: usize,
    pub w_t: f64,
    pub class_id: Option<usize>,
}

#[derive(Debug, Clone)]
pub enum Batch {
    Masked(Vec<MaskedExample>),
    Diffusion(Vec<DiffusionExample>),
}

impl Batch {
    pub fn len(&self) -> usize {
        match self {
            Batch::Masked(v) => v.len(),
            Batch::Diffusion(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct StepStats {
    pub step: usize,
    pub breakdown: LossBreakdown,
    pub grad_norm: f64,
    pub wall_ms: f64,
    pub block_applications: u64,
}

/// Owns the model, optimizer and curriculum; single writer of the parameters.
pub struct Trainer {
    model: LoopedModel,
    opt_cfg: OptimizerConfig,
    opt: OptimizerState,
    curriculum: CurriculumState,
    ilsd_enabled: bool,
    distill_space: DistillSpace,
}

impl Trainer {
    pub fn new(
        model: LoopedModel,
        opt_cfg: OptimizerConfig,
        total_steps: usize,
        ilsd_enabled: bool,
        distill_space: DistillSpace,
    ) -> Result<Self> {
        if ilsd_enabled && model.cfg().l_min >= model.cfg().l_max {
            return Err(EltError::Config(
                "intra-loop distillation requires at least one intermediate depth".to_string(),
            ));
        }
        Ok(Trainer {
            model,
            opt_cfg,
            opt: OptimizerState::new(),
            curriculum: CurriculumState::new(total_steps)?,
            ilsd_enabled,
            distill_space,
        })
    }

    pub fn model(&self) -> &LoopedModel {
        &self.model
    }

    pub fn into_model(self) -> LoopedModel {
        self.model
    }

    pub fn step_index(&self) -> usize {
        self.curriculum.step
    }

    /// One capture forward, one backward, one AdamW update. Gradients from
    /// both exits accumulate into the single shared parameter set. A
    /// non-finite loss rejects the step: no parameter is touched.
    pub fn train_step(&mut self, batch: &Batch, rng: &mut StdRng) -> Result<StepStats> {
        if batch.is_empty() {
            return Err(EltError::Config("empty batch".to_string()));
        }
        let started = Instant::now();
        let step = self.curriculum.step;
        let lambda = self.curriculum.lambda();
        let cfg = self.model.cfg().clone();
        let l_int = if self.ilsd_enabled {
            sample_student_depth(rng, cfg.l_min, cfg.l_max)?
        } else {
            0
        };
        self.model.reset_block_applications();

        let annotate = |e: EltError| match e {
            EltError::Numeric(msg) => EltError::Numeric(format!("step {step}: {msg}")),
            other => other,
        };
        let mut g = Graph::new();
        let bound = self.model.bind(&mut g, true);
        let mut gt_max_terms = Vec::with_capacity(batch.len());
        let mut gt_int_terms = Vec::with_capacity(batch.len());
        let mut distill_terms = Vec::with_capacity(batch.len());

        match batch {
            Batch::Masked(examples) => {
                for ex in examples {
                    let ctx = ConditioningContext::class(ex.class_id);
                    let cond = self.model.conditioning(&mut g, &bound, &ctx)?;
                    let x = self.model.embed_tokens(&mut g, &bound, &ex.tokens)?;
                    if self.ilsd_enabled {
                        let (f_int, f_max) = self.model.loop_forward_capture(
                            &mut g, &bound, x, cond, cfg.l_max, l_int,
                        )?;
                        let logits_int = self.model.predict_head(&mut g, &bound, f_int)?;
                        let logits_max = self.model.predict_head(&mut g, &bound, f_max)?;
                        let nodes = ilsd_loss_masked(
                            &mut g, logits_int, logits_max, &ex.targets, &ex.mask, lambda,
                        )?;
                        gt_max_terms.push(nodes.gt_max);
                        gt_int_terms.push(nodes.gt_int);
                        distill_terms.push(nodes.distill);
                    } else {
                        let f_max =
                            self.model.loop_forward(&mut g, &bound, x, cond, cfg.l_max)?;
                        let logits = self.model.predict_head(&mut g, &bound, f_max)?;
                        let gt =
                            g.masked_cross_entropy(logits, &ex.targets, &ex.mask)?;
                        gt_max_terms.push(gt);
                    }
                }
            }
            Batch::Diffusion(examples) => {
                for ex in examples {
                    let ctx = ConditioningContext::class_and_time(ex.class_id, ex.timestep);
                    let cond = self.model.conditioning(&mut g, &bound, &ctx)?;
                    let x = self.model.embed_latent(&mut g, &bound, &ex.x_t)?;
                    let x0 = g.constant(ex.x0.clone());
                    if self.ilsd_enabled {
                        let (f_int, f_max) = self.model.loop_forward_capture(
                            &mut g, &bound, x, cond, cfg.l_max, l_int,
                        )?;
                        let pred_int = self.model.predict_head(&mut g, &bound, f_int)?;
                        let pred_max = self.model.predict_head(&mut g, &bound, f_max)?;
                        let nodes = ilsd_loss_diffusion(
                            &mut g,
                            f_int,
                            f_max,
                            pred_int,
                            pred_max,
                            x0,
                            ex.w_t,
                            lambda,
                            self.distill_space,
                        )
                        .map_err(annotate)?;
                        gt_max_terms.push(nodes.gt_max);
                        gt_int_terms.push(nodes.gt_int);
                        distill_terms.push(nodes.distill);
                    } else {
                        if !ex.w_t.is_finite() {
                            return Err(annotate(EltError::Numeric(format!(
                                "non-finite loss weight {}",
                                ex.w_t
                            ))));
                        }
                        let f_max =
                            self.model.loop_forward(&mut g, &bound, x, cond, cfg.l_max)?;
                        let pred = self.model.predict_head(&mut g, &bound, f_max)?;
                        let m = g.mse(pred, x0)?;
                        gt_max_terms.push(g.scale(m, ex.w_t));
                    }
                }
            }
        }

        let inv_b = 1.0 / batch.len() as f64;
        let gt_max = mean_of(&mut g, &gt_max_terms, inv_b)?;
        let gt_int = if gt_int_terms.is_empty() {
            g.constant(Tensor::scalar(0.0))
        } else {
            mean_of(&mut g, &gt_int_terms, inv_b)?
        };
        let distill = if distill_terms.is_empty() {
            g.constant(Tensor::scalar(0.0))
        } else {
            mean_of(&mut g, &distill_terms, inv_b)?
        };
        let nodes = combine_terms(&mut g, gt_max, gt_int, distill, lambda)?;
        let breakdown = nodes.breakdown(&g, lambda, l_int);
        if !breakdown.is_finite() {
            return Err(EltError::Numeric(format!(
                "non-finite loss at step {step}: {breakdown:?}"
            )));
        }
        // (Any error above leaves parameters and optimizer untouched: the
        // step is rejected as a whole.)

        let grads = g.backward(nodes.total)?;
        let mut named: Vec<(String, Tensor)> = bound
            .bindings
            .iter()
            .map(|(name, id)| (name.clone(), grads.get_or_zeros(*id)))
            .collect();
        let grad_norm = global_grad_norm(named.iter().map(|(_, t)| t));
        if !grad_norm.is_finite() {
            return Err(EltError::Numeric(format!(
                "non-finite gradient norm at step {step}"
            )));
        }
        if let Some(clip) = self.opt_cfg.grad_clip {
            let factor = clip_factor(grad_norm, clip);
            if factor != 1.0 {
                for (_, t) in &mut named {
                    t.scale_assign(factor);
                }
            }
        }
        let by_name: HashMap<&str, &Tensor> =
            named.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let Trainer {
            model, opt, opt_cfg, ..
        } = self;
        model.params_mut().visit_mut(|name, p| {
            let grad = by_name
                .get(name)
                .expect("binding names cover every parameter");
            opt.update(opt_cfg, name, p, grad);
        });
        self.opt.finish_step();
        self.curriculum.advance();

        Ok(StepStats {
            step,
            breakdown,
            grad_norm,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            block_applications: self.model.block_applications(),
        })
    }
}

fn mean_of(g: &mut Graph, terms: &[NodeId], inv_b: f64) -> Result<NodeId> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    Ok(g.scale(acc, inv_b))
}

/// Training log: one CSV row per step.
pub struct TrainCsv {
    w: BufWriter<File>,
}

impl TrainCsv {
    pub fn create(path: &Path) -> Result<Self> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(
            w,
            "step,l_int,lambda,gt_max,gt_int,distill,total,grad_norm,wall_ms"
        )?;
        Ok(TrainCsv { w })
    }

    pub fn append(&mut self, s: &StepStats) -> Result<()> {
        let b = &s.breakdown;
        writeln!(
            self.w,
            "{},{},{},{},{},{},{},{},{}",
            s.step, b.l_int, b.lambda, b.gt_max, b.gt_int, b.distill, b.total, s.grad_norm, s.wall_ms
        )?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}
