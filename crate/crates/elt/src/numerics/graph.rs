//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is an append-only arena of nodes. Parents always have smaller
//! ids than children, so insertion order is a topological order; backward
//! walks ids in reverse and visits each node exactly once. Values are
//! computed eagerly at insertion. Topological order is implicit per graph and
//! nothing is cached across graphs.

use crate::error::{EltError, Result};
use crate::numerics::tensor::{self, DType, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

const GELU_COEF: f64 = 0.044715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    StopGrad(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Broadcast-add a row vector over every row of a matrix.
    AddRow(NodeId, NodeId),
    /// Broadcast-multiply every row of a matrix by a row vector.
    MulRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Matmul(NodeId, NodeId),
    /// A @ B^T with B stored untransposed.
    MatmulNT(NodeId, NodeId),
    SliceCols {
        parent: NodeId,
        start: usize,
        len: usize,
    },
    ConcatCols(Vec<NodeId>),
    Softmax(NodeId),
    /// Row-wise (x - mean) / sqrt(var + eps); the pre-affine part of layer norm.
    NormalizeRows {
        parent: NodeId,
        eps: f64,
    },
    Gelu(NodeId),
    /// Gather rows of an embedding table.
    EmbedRows {
        table: NodeId,
        ids: Vec<usize>,
    },
    SumAll(NodeId),
    /// Mean over masked rows of -log softmax(logits)[target].
    MaskedCrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        mask: Vec<bool>,
    },
    /// Mean over masked rows of -sum_v q_v * log softmax(s)_v.
    SoftCrossEntropyMasked {
        student: NodeId,
        teacher_probs: NodeId,
        mask: Vec<bool>,
    },
}

impl Op {
    fn parents(&self, out: &mut Vec<NodeId>) {
        out.clear();
        match self {
            Op::Leaf => {}
            Op::StopGrad(p)
            | Op::Scale(p, _)
            | Op::Softmax(p)
            | Op::Gelu(p)
            | Op::SumAll(p)
            | Op::SliceCols { parent: p, .. }
            | Op::NormalizeRows { parent: p, .. }
            | Op::EmbedRows { table: p, .. }
            | Op::MaskedCrossEntropy { logits: p, .. } => out.push(*p),
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b)
            | Op::Matmul(a, b)
            | Op::MatmulNT(a, b) => {
                out.push(*a);
                out.push(*b);
            }
            Op::SoftCrossEntropyMasked {
                student,
                teacher_probs,
                ..
            } => {
                out.push(*student);
                out.push(*teacher_probs);
            }
            Op::ConcatCols(ps) => out.extend_from_slice(ps),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::StopGrad(_) => "stop_gradient",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Scale(..) => "scale",
            Op::Matmul(..) => "matmul",
            Op::MatmulNT(..) => "matmul_nt",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols(_) => "concat_cols",
            Op::Softmax(_) => "softmax",
            Op::NormalizeRows { .. } => "layernorm",
            Op::Gelu(_) => "gelu",
            Op::EmbedRows { .. } => "embed_rows",
            Op::SumAll(_) => "sum",
            Op::MaskedCrossEntropy { .. } => "masked_cross_entropy",
            Op::SoftCrossEntropyMasked { .. } => "soft_cross_entropy",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients keyed by node id, as produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Gradient for `id`, zeros when no gradient flowed there (e.g. the node
    /// is only reachable through stop-gradient).
    pub fn get_or_zeros(&self, id: NodeId) -> Tensor {
        match &self.grads[id.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(self.shapes[id.0].clone()),
        }
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    precision: Option<DType>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// Force every inserted value through the given precision (`F32` rounds
    /// each op output through `f32`). Default keeps each tensor's own dtype.
    pub fn with_precision(precision: DType) -> Self {
        Graph {
            nodes: Vec::new(),
            precision: Some(precision),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        let value = match self.precision {
            Some(DType::F32) => value.with_dtype(DType::F32),
            _ => value,
        };
        debug_assert!(
            value.all_finite(),
            "non-finite value produced by op `{}`",
            op.name()
        );
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        id
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Trainable leaf: a parameter.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf: an input or constant.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Identity on values; gradient flow into the subtree is cut to zero.
    pub fn stop_gradient(&mut self, p: NodeId) -> NodeId {
        let value = self.value(p).clone();
        self.push(value, Op::StopGrad(p), false)
    }

    fn binary_same_shape(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(EltError::shape(
                op_name,
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let value = ta.zip_map(tb, f);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, op, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, mat: NodeId, row: NodeId) -> Result<NodeId> {
        let (tm, tr) = (self.value(mat), self.value(row));
        if tr.numel() != tm.cols() {
            return Err(EltError::shape(
                "add_row",
                format!("matrix {:?} + row {:?}", tm.shape(), tr.shape()),
            ));
        }
        let cols = tm.cols();
        let rdata = tr.data().to_vec();
        let mut value = tm.clone();
        for r in 0..value.rows() {
            for (v, rv) in value.row_mut(r).iter_mut().zip(rdata.iter()) {
                *v += rv;
            }
        }
        let _ = cols;
        let needs = self.needs(mat) || self.needs(row);
        Ok(self.push(value, Op::AddRow(mat, row), needs))
    }

    pub fn mul_row(&mut self, mat: NodeId, row: NodeId) -> Result<NodeId> {
        let (tm, tr) = (self.value(mat), self.value(row));
        if tr.numel() != tm.cols() {
            return Err(EltError::shape(
                "mul_row",
                format!("matrix {:?} * row {:?}", tm.shape(), tr.shape()),
            ));
        }
        let rdata = tr.data().to_vec();
        let mut value = tm.clone();
        for r in 0..value.rows() {
            for (v, rv) in value.row_mut(r).iter_mut().zip(rdata.iter()) {
                *v *= rv;
            }
        }
        let needs = self.needs(mat) || self.needs(row);
        Ok(self.push(value, Op::MulRow(mat, row), needs))
    }

    pub fn scale(&mut self, p: NodeId, c: f64) -> NodeId {
        let value = self.value(p).map(|v| v * c);
        let needs = self.needs(p);
        self.push(value, Op::Scale(p, c), needs)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = tensor::matmul(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Matmul(a, b), needs))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = tensor::matmul_nt(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatmulNT(a, b), needs))
    }

    pub fn slice_cols(&mut self, p: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let t = self.value(p);
        let (r, c) = (t.rows(), t.cols());
        if start + len > c {
            return Err(EltError::shape(
                "slice_cols",
                format!("[{start}..{}) of {c} columns", start + len),
            ));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&t.row(i)[start..start + len]);
        }
        let value = Tensor::from_vec(vec![r, len], data)?;
        let needs = self.needs(p);
        Ok(self.push(value, Op::SliceCols { parent: p, start, len }, needs))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(EltError::shape("concat_cols", "no parts".to_string()));
        }
        let rows = self.value(parts[0]).rows();
        let mut total_cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(EltError::shape(
                    "concat_cols",
                    format!("row counts differ: {} vs {}", rows, t.rows()),
                ));
            }
            total_cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total_cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::from_vec(vec![rows, total_cols], data)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), needs))
    }

    pub fn softmax(&mut self, p: NodeId) -> NodeId {
        let t = self.value(p);
        let mut value = t.clone();
        for r in 0..value.rows() {
            softmax_row_in_place(value.row_mut(r));
        }
        let needs = self.needs(p);
        self.push(value, Op::Softmax(p), needs)
    }

    /// Row-wise normalization (x - mean) / sqrt(var + eps). A constant row
    /// normalizes to zeros; eps keeps the denominator finite.
    pub fn normalize_rows(&mut self, p: NodeId, eps: f64) -> NodeId {
        let t = self.value(p);
        let mut value = t.clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
        }
        let needs = self.needs(p);
        self.push(value, Op::NormalizeRows { parent: p, eps }, needs)
    }

    pub fn gelu(&mut self, p: NodeId) -> NodeId {
        let value = self.value(p).map(gelu_tanh);
        let needs = self.needs(p);
        self.push(value, Op::Gelu(p), needs)
    }

    pub fn embed_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let t = self.value(table);
        let (rows, cols) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(EltError::shape(
                    "embed_rows",
                    format!("row {id} out of {rows}"),
                ));
            }
            data.extend_from_slice(t.row(id));
        }
        let value = Tensor::from_vec(vec![ids.len(), cols], data)?;
        let needs = self.needs(table);
        Ok(self.push(
            value,
            Op::EmbedRows {
                table,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    pub fn sum_all(&mut self, p: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(p).sum());
        let needs = self.needs(p);
        self.push(value, Op::SumAll(p), needs)
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let n = self.value(a).numel() as f64;
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        let s = self.sum_all(sq);
        Ok(self.scale(s, 1.0 / n))
    }

    /// Mean over masked rows of the negative log-likelihood of `targets`.
    pub fn masked_cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        mask: &[bool],
    ) -> Result<NodeId> {
        let t = self.value(logits);
        let (rows, cols) = (t.rows(), t.cols());
        if targets.len() != rows || mask.len() != rows {
            return Err(EltError::shape(
                "masked_cross_entropy",
                format!(
                    "logits {rows} rows, {} targets, {} mask entries",
                    targets.len(),
                    mask.len()
                ),
            ));
        }
        let n_masked = mask.iter().filter(|&&m| m).count();
        if n_masked == 0 {
            return Err(EltError::Config(
                "masked cross-entropy needs at least one masked position".to_string(),
            ));
        }
        let mut total = 0.0;
        for r in 0..rows {
            if !mask[r] {
                continue;
            }
            if targets[r] >= cols {
                return Err(EltError::shape(
                    "masked_cross_entropy",
                    format!("target {} out of vocabulary {cols}", targets[r]),
                ));
            }
            let row = t.row(r);
            total += log_sum_exp(row) - row[targets[r]];
        }
        let value = Tensor::scalar(total / n_masked as f64);
        let needs = self.needs(logits);
        Ok(self.push(
            value,
            Op::MaskedCrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
            },
            needs,
        ))
    }

    /// Mean over masked rows of -sum_v q_v log softmax(s)_v, the distillation
    /// cross-entropy between teacher probabilities q and student logits s.
    pub fn soft_cross_entropy_masked(
        &mut self,
        student_logits: NodeId,
        teacher_probs: NodeId,
        mask: &[bool],
    ) -> Result<NodeId> {
        let (ts, tq) = (self.value(student_logits), self.value(teacher_probs));
        if ts.shape() != tq.shape() {
            return Err(EltError::shape(
                "soft_cross_entropy",
                format!("{:?} vs {:?}", ts.shape(), tq.shape()),
            ));
        }
        if mask.len() != ts.rows() {
            return Err(EltError::shape(
                "soft_cross_entropy",
                format!("{} rows, {} mask entries", ts.rows(), mask.len()),
            ));
        }
        let n_masked = mask.iter().filter(|&&m| m).count();
        if n_masked == 0 {
            return Err(EltError::Config(
                "soft cross-entropy needs at least one masked position".to_string(),
            ));
        }
        let mut total = 0.0;
        for r in 0..ts.rows() {
            if !mask[r] {
                continue;
            }
            let srow = ts.row(r);
            let qrow = tq.row(r);
            let lse = log_sum_exp(srow);
            for (s, q) in srow.iter().zip(qrow.iter()) {
                total -= q * (s - lse);
            }
        }
        let value = Tensor::scalar(total / n_masked as f64);
        let needs = self.needs(student_logits) || self.needs(teacher_probs);
        Ok(self.push(
            value,
            Op::SoftCrossEntropyMasked {
                student: student_logits,
                teacher_probs,
                mask: mask.to_vec(),
            },
            needs,
        ))
    }

    /// Reverse pass from a scalar root. Gradients accumulate per parent slot;
    /// stop-gradient nodes propagate nothing into their subtree.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_val = self.value(root);
        if !root_val.is_scalar() {
            return Err(EltError::shape(
                "backward",
                format!("root must be scalar, got {:?}", root_val.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));

        let mut parents = Vec::new();
        for idx in (0..=root.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                // Nothing below here requires grad; keep the slot for callers.
                grads[idx] = Some(g);
                continue;
            }
            node.op.parents(&mut parents);
            let contribs = self.vjp(idx, &g)?;
            debug_assert_eq!(contribs.len(), parents.len());
            for (pid, contrib) in parents.iter().zip(contribs.into_iter()) {
                let contrib = match contrib {
                    Some(c) => c,
                    None => continue,
                };
                match &mut grads[pid.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
        })
    }

    /// Vector-Jacobian products for the node at `idx` given upstream grad `g`.
    /// Returns one entry per parent slot, in `Op::parents` order.
    fn vjp(&self, idx: usize, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let node = &self.nodes[idx];
        let out = &node.value;
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::StopGrad(_) => vec![None],
            Op::Add(..) => vec![Some(g.clone()), Some(g.clone())],
            Op::Sub(..) => vec![Some(g.clone()), Some(g.map(|v| -v))],
            Op::Mul(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                vec![Some(g.zip_map(tb, |gv, bv| gv * bv)), Some(g.zip_map(ta, |gv, av| gv * av))]
            }
            Op::AddRow(_, row) => {
                let row_shape = self.value(*row).shape().to_vec();
                let data = g.col_sums().into_data();
                vec![Some(g.clone()), Some(Tensor::from_vec(row_shape, data)?)]
            }
            Op::MulRow(mat, row) => {
                let tm = self.value(*mat);
                let tr = self.value(*row);
                let rdata = tr.data();
                let mut gm = g.clone();
                for r in 0..gm.rows() {
                    for (v, rv) in gm.row_mut(r).iter_mut().zip(rdata.iter()) {
                        *v *= rv;
                    }
                }
                let prod = g.zip_map(tm, |gv, mv| gv * mv);
                let data = prod.col_sums().into_data();
                vec![Some(gm), Some(Tensor::from_vec(tr.shape().to_vec(), data)?)]
            }
            Op::Scale(_, c) => vec![Some(g.map(|v| v * c))],
            Op::Matmul(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                vec![
                    Some(tensor::matmul_nt(g, tb)?),
                    Some(tensor::matmul_tn(ta, g)?),
                ]
            }
            Op::MatmulNT(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                vec![
                    Some(tensor::matmul(g, tb)?),
                    Some(tensor::matmul_tn(g, ta)?),
                ]
            }
            Op::SliceCols { parent, start, len } => {
                let t = self.value(*parent);
                let mut dp = Tensor::zeros(t.shape().to_vec());
                for r in 0..t.rows() {
                    let grow = g.row(r);
                    let drow = dp.row_mut(r);
                    drow[*start..*start + *len].copy_from_slice(grow);
                }
                vec![Some(dp)]
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                let mut contribs = Vec::with_capacity(parts.len());
                for &p in parts {
                    let t = self.value(p);
                    let c = t.cols();
                    let mut dp = Tensor::zeros(t.shape().to_vec());
                    for r in 0..t.rows() {
                        dp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + c]);
                    }
                    offset += c;
                    contribs.push(Some(dp));
                }
                contribs
            }
            Op::Softmax(_) => {
                let mut dx = g.clone();
                for r in 0..dx.rows() {
                    let p = out.row(r);
                    let dot: f64 = dx.row(r).iter().zip(p.iter()).map(|(gv, pv)| gv * pv).sum();
                    for (d, pv) in dx.row_mut(r).iter_mut().zip(p.iter()) {
                        *d = pv * (*d - dot);
                    }
                }
                vec![Some(dx)]
            }
            Op::NormalizeRows { parent, eps } => {
                let x = self.value(*parent);
                let mut dx = g.clone();
                for r in 0..dx.rows() {
                    let xrow = x.row(r);
                    let yrow = out.row(r);
                    let n = xrow.len() as f64;
                    let mean = xrow.iter().sum::<f64>() / n;
                    let var = xrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let inv = 1.0 / (var + eps).sqrt();
                    let gmean: f64 = dx.row(r).iter().sum::<f64>() / n;
                    let gydot: f64 =
                        dx.row(r).iter().zip(yrow.iter()).map(|(gv, yv)| gv * yv).sum::<f64>() / n;
                    for (d, yv) in dx.row_mut(r).iter_mut().zip(yrow.iter()) {
                        *d = inv * (*d - gmean - yv * gydot);
                    }
                }
                vec![Some(dx)]
            }
            Op::Gelu(p) => {
                let x = self.value(*p);
                vec![Some(g.zip_map(x, |gv, xv| gv * gelu_tanh_grad(xv)))]
            }
            Op::EmbedRows { table, ids } => {
                let t = self.value(*table);
                let mut dt = Tensor::zeros(t.shape().to_vec());
                for (r, &id) in ids.iter().enumerate() {
                    let grow = g.row(r);
                    for (d, gv) in dt.row_mut(id).iter_mut().zip(grow.iter()) {
                        *d += gv;
                    }
                }
                vec![Some(dt)]
            }
            Op::SumAll(p) => {
                let gv = g.scalar_value();
                vec![Some(Tensor::full(self.value(*p).shape().to_vec(), gv))]
            }
            Op::MaskedCrossEntropy {
                logits,
                targets,
                mask,
            } => {
                let t = self.value(*logits);
                let n_masked = mask.iter().filter(|&&m| m).count() as f64;
                let gv = g.scalar_value() / n_masked;
                let mut dx = Tensor::zeros(t.shape().to_vec());
                for r in 0..t.rows() {
                    if !mask[r] {
                        continue;
                    }
                    let mut p = t.row(r).to_vec();
                    softmax_row_in_place(&mut p);
                    let drow = dx.row_mut(r);
                    for (d, pv) in drow.iter_mut().zip(p.iter()) {
                        *d = gv * pv;
                    }
                    drow[targets[r]] -= gv;
                }
                vec![Some(dx)]
            }
            Op::SoftCrossEntropyMasked {
                student,
                teacher_probs,
                mask,
            } => {
                let ts = self.value(*student);
                let tq = self.value(*teacher_probs);
                let n_masked = mask.iter().filter(|&&m| m).count() as f64;
                let gv = g.scalar_value() / n_masked;
                let mut ds = Tensor::zeros(ts.shape().to_vec());
                let mut dq = Tensor::zeros(tq.shape().to_vec());
                for r in 0..ts.rows() {
                    if !mask[r] {
                        continue;
                    }
                    let srow = ts.row(r);
                    let qrow = tq.row(r);
                    let lse = log_sum_exp(srow);
                    let dsrow = ds.row_mut(r);
                    for ((d, &s), &q) in dsrow.iter_mut().zip(srow.iter()).zip(qrow.iter()) {
                        *d = gv * ((s - lse).exp() - q);
                    }
                    let dqrow = dq.row_mut(r);
                    for (d, &s) in dqrow.iter_mut().zip(srow.iter()) {
                        *d = -gv * (s - lse);
                    }
                }
                vec![Some(ds), Some(dq)]
            }
        })
    }
}

pub(crate) fn softmax_row_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn gelu_tanh(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_COEF * x * x * x)).tanh())
}

fn gelu_tanh_grad(x: f64) -> f64 {
    let inner = SQRT_2_OVER_PI * (x + GELU_COEF * x * x * x);
    let t = inner.tanh();
    let dinner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEF * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![1, 2], vec![0.0, 0.0]).unwrap());
        let s = g.softmax(x);
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn layernorm_of_constant_row_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![1, 4], vec![3.0; 4]).unwrap());
        let y = g.normalize_rows(x, 1e-6);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn d_x_squared_is_two_x() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().scalar_value(), 6.0);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap());
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn stop_gradient_keeps_value_and_kills_grad() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.0));
        let sg = g.stop_gradient(x);
        assert_eq!(g.value(sg).scalar_value(), 2.0);
        let y = g.mul(sg, sg).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.get(x).is_none());
        assert_eq!(grads.get_or_zeros(x).scalar_value(), 0.0);
    }

    #[test]
    fn mse_against_detached_teacher_matches_constant_copy() {
        // d/ds MSE(s, sg(t)) where t = 3*s: the teacher path contributes nothing.
        let mut g = Graph::new();
        let s = g.param(Tensor::scalar(1.5));
        let t = g.scale(s, 3.0);
        let t_detached = g.stop_gradient(t);
        let loss = g.mse(s, t_detached).unwrap();
        let grads = g.backward(loss).unwrap();
        let got = grads.get(s).unwrap().scalar_value();

        let mut g2 = Graph::new();
        let s2 = g2.param(Tensor::scalar(1.5));
        let t2 = g2.constant(Tensor::scalar(4.5));
        let loss2 = g2.mse(s2, t2).unwrap();
        let grads2 = g2.backward(loss2).unwrap();
        assert_eq!(got, grads2.get(s2).unwrap().scalar_value());
    }

    #[test]
    fn soft_cross_entropy_uniform_teacher_equal_logits() {
        // Teacher uniform over V=2, student logits equal: ln 2 per position.
        let mut g = Graph::new();
        let s = g.param(Tensor::from_vec(vec![1, 2], vec![0.7, 0.7]).unwrap());
        let q = g.constant(Tensor::from_vec(vec![1, 2], vec![0.5, 0.5]).unwrap());
        let l = g.soft_cross_entropy_masked(s, q, &[true]).unwrap();
        assert!((g.value(l).scalar_value() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn soft_cross_entropy_gradient_is_prob_difference() {
        // When student logits equal teacher logits the grad w.r.t. student is 0.
        let logits = vec![0.3, -1.2, 0.9, 0.0];
        let mut g = Graph::new();
        let s = g.param(Tensor::from_vec(vec![1, 4], logits.clone()).unwrap());
        let t = g.constant(Tensor::from_vec(vec![1, 4], logits).unwrap());
        let q = g.softmax(t);
        let l = g.soft_cross_entropy_masked(s, q, &[true]).unwrap();
        let grads = g.backward(l).unwrap();
        for &v in grads.get(s).unwrap().data() {
            assert!(v.abs() < 1e-15, "grad {v} should vanish");
        }
    }

    #[test]
    fn masked_cross_entropy_rejects_empty_mask() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![2, 3], vec![0.0; 6]).unwrap());
        let err = g.masked_cross_entropy(x, &[0, 1], &[false, false]);
        assert!(err.is_err());
    }

    #[test]
    fn repeated_parent_slots_accumulate() {
        // y = x + x => dy/dx = 2.
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(5.0));
        let y = g.add(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().scalar_value(), 2.0);
    }
}
