//! The joint training objective: ground truth for the teacher exit, ground
//! truth for the student exit weighted by lambda, and the teacher-to-student
//! distillation term weighted by (1 - lambda). The teacher input to the
//! distillation term is detached, so that term trains only the student path.

use serde::{Deserialize, Serialize};

use crate::error::{EltError, Result};
use crate::numerics::{Graph, NodeId};

/// The three loss terms of one training step, recorded for auditing.
/// `total == gt_max + lambda * gt_int + (1 - lambda) * distill`, in exactly
/// that summation order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub gt_max: f64,
    pub gt_int: f64,
    pub distill: f64,
    pub lambda: f64,
    pub l_int: usize,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.gt_max.is_finite()
            && self.gt_int.is_finite()
            && self.distill.is_finite()
            && self.total.is_finite()
    }
}

/// Node ids of the assembled loss terms; values are unweighted, the weighted
/// combination lives in `total`.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: NodeId,
    pub gt_max: NodeId,
    pub gt_int: NodeId,
    pub distill: NodeId,
}

impl LossNodes {
    pub fn breakdown(&self, g: &Graph, lambda: f64, l_int: usize) -> LossBreakdown {
        LossBreakdown {
            gt_max: g.value(self.gt_max).scalar_value(),
            gt_int: g.value(self.gt_int).scalar_value(),
            distill: g.value(self.distill).scalar_value(),
            lambda,
            l_int,
            total: g.value(self.total).scalar_value(),
        }
    }
}

/// Where the diffusion distillation distance is measured: on the shared
/// head's x0 prediction (default, loss in x0 units) or directly on the loop
/// features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillSpace {
    HeadOutput,
    Features,
}

impl Default for DistillSpace {
    fn default() -> Self {
        DistillSpace::HeadOutput
    }
}

/// total = gt_max + lambda * gt_int + (1 - lambda) * distill, in exactly
/// this summation order (the breakdown invariant is stated against it).
pub(crate) fn combine_terms(
    g: &mut Graph,
    gt_max: NodeId,
    gt_int: NodeId,
    distill: NodeId,
    lambda: f64,
) -> Result<LossNodes> {
    let weighted_int = g.scale(gt_int, lambda);
    let weighted_distill = g.scale(distill, 1.0 - lambda);
    let partial = g.add(gt_max, weighted_int)?;
    let total = g.add(partial, weighted_distill)?;
    Ok(LossNodes {
        total,
        gt_max,
        gt_int,
        distill,
    })
}

/// Masked-mode joint loss. Ground-truth terms are cross-entropy over masked
/// positions only; the distillation term is soft cross-entropy between the
/// detached teacher softmax and the student log-softmax over the full
/// vocabulary, masked positions only.
pub fn ilsd_loss_masked(
    g: &mut Graph,
    logits_int: NodeId,
    logits_max: NodeId,
    targets: &[usize],
    mask: &[bool],
    lambda: f64,
) -> Result<LossNodes> {
    let gt_max = g.masked_cross_entropy(logits_max, targets, mask)?;
    let gt_int = g.masked_cross_entropy(logits_int, targets, mask)?;
    let teacher_detached = g.stop_gradient(logits_max);
    let teacher_probs = g.softmax(teacher_detached);
    let distill = g.soft_cross_entropy_masked(logits_int, teacher_probs, mask)?;
    combine_terms(g, gt_max, gt_int, distill, lambda)
}

/// Diffusion-mode joint loss: sigmoid-weighted MSE against the clean latent
/// at both exits, plus a weighted MSE distillation between the exits.
#[allow(clippy::too_many_arguments)]
pub fn ilsd_loss_diffusion(
    g: &mut Graph,
    features_int: NodeId,
    features_max: NodeId,
    pred_int: NodeId,
    pred_max: NodeId,
    x0: NodeId,
    w_t: f64,
    lambda: f64,
    space: DistillSpace,
) -> Result<LossNodes> {
    if !w_t.is_finite() {
        return Err(EltError::Numeric(format!("non-finite loss weight {w_t}")));
    }
    let gt_max = {
        let m = g.mse(pred_max, x0)?;
        g.scale(m, w_t)
    };
    let gt_int = {
        let m = g.mse(pred_int, x0)?;
        g.scale(m, w_t)
    };
    let distill = match space {
        DistillSpace::HeadOutput => {
            let teacher = g.stop_gradient(pred_max);
            let m = g.mse(pred_int, teacher)?;
            g.scale(m, w_t)
        }
        DistillSpace::Features => {
            let teacher = g.stop_gradient(features_max);
            let m = g.mse(features_int, teacher)?;
            g.scale(m, w_t)
        }
    };
    combine_terms(g, gt_max, gt_int, distill, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn lambda_one_drops_the_distill_weight() {
        let mut g = Graph::new();
        let li = g.param(Tensor::from_vec(vec![1, 2], vec![0.2, -0.1]).unwrap());
        let lm = g.param(Tensor::from_vec(vec![1, 2], vec![0.9, 0.4]).unwrap());
        let nodes = ilsd_loss_masked(&mut g, li, lm, &[1], &[true], 1.0).unwrap();
        let b = nodes.breakdown(&g, 1.0, 1);
        assert_eq!(b.total, b.gt_max + b.gt_int);
        assert!(b.distill > 0.0);
    }

    #[test]
    fn uniform_teacher_equal_student_gives_ln2() {
        let mut g = Graph::new();
        let li = g.param(Tensor::from_vec(vec![1, 2], vec![0.3, 0.3]).unwrap());
        let lm = g.param(Tensor::from_vec(vec![1, 2], vec![0.7, 0.7]).unwrap());
        let nodes = ilsd_loss_masked(&mut g, li, lm, &[0], &[true], 0.5).unwrap();
        let b = nodes.breakdown(&g, 0.5, 1);
        assert!((b.distill - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn identical_logits_distill_equals_teacher_entropy_with_zero_grad() {
        let vals = vec![0.4, -0.3, 1.1, 0.0];
        let mut g = Graph::new();
        let li = g.param(Tensor::from_vec(vec![1, 4], vals.clone()).unwrap());
        let lm_const = g.constant(Tensor::from_vec(vec![1, 4], vals.clone()).unwrap());
        let nodes = ilsd_loss_masked(&mut g, li, lm_const, &[2], &[true], 0.0).unwrap();
        // Teacher entropy computed independently.
        let mut probs = vals.clone();
        crate::numerics::graph::softmax_row_in_place(&mut probs);
        let entropy: f64 = probs.iter().map(|p| -p * p.ln()).sum();
        let b = nodes.breakdown(&g, 0.0, 1);
        assert!((b.distill - entropy).abs() < 1e-12);
        // Gradient of the distillation term w.r.t. the student is softmax
        // difference, which vanishes when logits agree.
        let grads = g.backward(nodes.distill).unwrap();
        for &v in grads.get(li).unwrap().data() {
            assert!(v.abs() < 1e-14);
        }
    }

    #[test]
    fn diffusion_one_dimensional_arithmetic() {
        // head outputs 2.0 (int) and 3.0 (max), x0 = 0, w = 1, lambda = 0.5:
        // gt_max = 9, gt_int = 4 (weighted 2), distill = 1 (weighted 0.5),
        // total = 11.5.
        let mut g = Graph::new();
        let f_int = g.param(Tensor::scalar(0.0));
        let f_max = g.param(Tensor::scalar(0.0));
        let pred_int = g.param(Tensor::scalar(2.0));
        let pred_max = g.param(Tensor::scalar(3.0));
        let x0 = g.constant(Tensor::scalar(0.0));
        let nodes = ilsd_loss_diffusion(
            &mut g,
            f_int,
            f_max,
            pred_int,
            pred_max,
            x0,
            1.0,
            0.5,
            DistillSpace::HeadOutput,
        )
        .unwrap();
        let b = nodes.breakdown(&g, 0.5, 1);
        assert_eq!(b.gt_max, 9.0);
        assert_eq!(b.gt_int, 4.0);
        assert_eq!(b.distill, 1.0);
        assert_eq!(b.total, 11.5);
    }

    #[test]
    fn equal_exits_have_zero_distill() {
        let mut g = Graph::new();
        let x = Tensor::from_vec(vec![2, 2], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let f_int = g.param(x.clone());
        let f_max = g.param(x.clone());
        let p_int = g.param(x.clone());
        let p_max = g.param(x.clone());
        let x0 = g.constant(Tensor::zeros(vec![2, 2]));
        for space in [DistillSpace::HeadOutput, DistillSpace::Features] {
            let nodes =
                ilsd_loss_diffusion(&mut g, f_int, f_max, p_int, p_max, x0, 0.7, 0.3, space)
                    .unwrap();
            assert_eq!(g.value(nodes.distill).scalar_value(), 0.0);
        }
    }

    #[test]
    fn zero_weight_annihilates_all_terms() {
        let mut g = Graph::new();
        let f_int = g.param(Tensor::scalar(1.0));
        let f_max = g.param(Tensor::scalar(2.0));
        let p_int = g.param(Tensor::scalar(3.0));
        let p_max = g.param(Tensor::scalar(4.0));
        let x0 = g.constant(Tensor::scalar(5.0));
        let nodes = ilsd_loss_diffusion(
            &mut g,
            f_int,
            f_max,
            p_int,
            p_max,
            x0,
            0.0,
            0.5,
            DistillSpace::HeadOutput,
        )
        .unwrap();
        let b = nodes.breakdown(&g, 0.5, 1);
        assert_eq!(b.gt_max, 0.0);
        assert_eq!(b.gt_int, 0.0);
        assert_eq!(b.distill, 0.0);
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn non_finite_weight_is_rejected() {
        let mut g = Graph::new();
        let a = g.param(Tensor::scalar(1.0));
        let x0 = g.constant(Tensor::scalar(0.0));
        assert!(ilsd_loss_diffusion(
            &mut g,
            a,
            a,
            a,
            a,
            x0,
            f64::NAN,
            0.5,
            DistillSpace::HeadOutput
        )
        .is_err());
    }
}
