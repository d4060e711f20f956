//! Define-by-run reverse-mode autodiff.
//!
//! A `Tape` records every primitive executed during a forward pass; `backward`
//! replays the record once in reverse, accumulating vector-Jacobian products.
//! Tensors are cheap handles (tape pointer + node index). The tape is rebuilt
//! for every forward pass and consumed by a single backward call.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{CoreError, Result};
use crate::kernels;
use crate::param::{GradCell, Param};
use crate::Real;

type NodeId = usize;

enum Op {
    Leaf,
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: Real },
    AddScalar { x: NodeId },
    Relu { x: NodeId },
    Gelu { x: NodeId },
    Softplus { x: NodeId },
    Matmul { a: NodeId, b: NodeId, m: usize, k: usize, n: usize },
    MatmulNt { a: NodeId, b: NodeId, m: usize, k: usize, n: usize },
    AddBiasRows { x: NodeId, bias: NodeId, rows: usize, cols: usize },
    EmbedLookup { table: NodeId, ids: Vec<u32>, dim: usize, vocab: usize },
    Row { x: NodeId, index: usize, cols: usize },
    RowSlice { x: NodeId, start: usize, cols: usize },
    ColSlice { x: NodeId, start: usize, len: usize, cols: usize },
    ConcatCols { parts: Vec<NodeId>, widths: Vec<usize> },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, rows: usize, cols: usize, mean: Vec<Real>, rstd: Vec<Real> },
    CausalSoftmax { x: NodeId, rows: usize, cols: usize },
    L2Normalize { x: NodeId, rows: usize, cols: usize, norms: Vec<Real> },
    CosineSim { a: NodeId, b: NodeId, norm_a: Real, norm_b: Real, cos: Real },
    Dot { a: NodeId, b: NodeId },
    StackScalars { parts: Vec<NodeId> },
    MeanAll { x: NodeId },
    SumAll { x: NodeId },
    CrossEntropyRow { logits: NodeId, target: usize, probs: Vec<Real> },
    CrossEntropyRowsMean { logits: NodeId, targets: Vec<u32>, rows: usize, cols: usize, probs: Vec<Real> },
    KlRefMean { cur: NodeId, ref_probs: Rc<Vec<Real>>, rows: usize, cur_probs: Vec<Real> },
}

struct Node {
    values: Rc<Vec<Real>>,
    shape: Vec<usize>,
    op: Op,
    requires_grad: bool,
    sink: Option<GradCell>,
}

struct TapeInner {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Shared handle to a recording tape.
#[derive(Clone)]
pub struct Tape(Rc<RefCell<TapeInner>>);

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to one recorded tensor on a tape.
#[derive(Clone)]
pub struct Tensor {
    tape: Tape,
    id: NodeId,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape(Rc::new(RefCell::new(TapeInner {
            nodes: Vec::new(),
            consumed: false,
        })))
    }

    fn push(
        &self,
        values: Rc<Vec<Real>>,
        shape: Vec<usize>,
        op: Op,
        requires_grad: bool,
        sink: Option<GradCell>,
    ) -> Tensor {
        let mut inner = self.0.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            values,
            shape,
            op,
            requires_grad,
            sink,
        });
        Tensor {
            tape: self.clone(),
            id,
        }
    }

    fn requires(&self, id: NodeId) -> bool {
        self.0.borrow().nodes[id].requires_grad
    }

    /// Non-trainable input, owned values.
    pub fn constant(&self, values: Vec<Real>, shape: &[usize]) -> Tensor {
        self.constant_shared(Rc::new(values), shape)
    }

    /// Non-trainable input sharing an existing buffer (no copy).
    pub fn constant_shared(&self, values: Rc<Vec<Real>>, shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(values.len(), numel, "value count must match shape");
        self.push(values, shape.to_vec(), Op::Leaf, false, None)
    }

    pub fn scalar(&self, v: Real) -> Tensor {
        self.constant(vec![v], &[1])
    }

    /// Trainable leaf: aliases the param values, links its gradient cell.
    pub fn leaf(&self, param: &Param) -> Tensor {
        self.push(
            param.value_rc(),
            param.shape().to_vec(),
            Op::Leaf,
            true,
            Some(param.grad_cell()),
        )
    }

    /// Frozen view of a param: participates in the graph, receives no gradient.
    pub fn frozen(&self, param: &Param) -> Tensor {
        self.constant_shared(param.value_rc(), param.shape())
    }

    /// Concatenate 2-D tensors along columns.
    pub fn concat_cols(&self, parts: &[Tensor]) -> Result<Tensor> {
        assert!(!parts.is_empty());
        for p in parts {
            if !Rc::ptr_eq(&p.tape.0, &self.0) {
                return Err(CoreError::TapeMismatch);
            }
        }
        let rows = parts[0].shape2d("concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = p.shape2d("concat_cols")?;
            if r != rows {
                return Err(CoreError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: parts[0].shape(),
                    rhs: p.shape(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        {
            let inner = self.0.borrow();
            let mut offset = 0;
            for (p, &w) in parts.iter().zip(&widths) {
                let vals = &inner.nodes[p.id].values;
                for r in 0..rows {
                    out[r * total + offset..r * total + offset + w]
                        .copy_from_slice(&vals[r * w..(r + 1) * w]);
                }
                offset += w;
            }
        }
        let req = parts.iter().any(|p| self.requires(p.id));
        Ok(self.push(
            Rc::new(out),
            vec![rows, total],
            Op::ConcatCols {
                parts: parts.iter().map(|p| p.id).collect(),
                widths,
            },
            req,
            None,
        ))
    }

    /// Stack scalar tensors into a vector.
    pub fn stack_scalars(&self, parts: &[Tensor]) -> Result<Tensor> {
        assert!(!parts.is_empty());
        let mut out = Vec::with_capacity(parts.len());
        for p in parts {
            if !Rc::ptr_eq(&p.tape.0, &self.0) {
                return Err(CoreError::TapeMismatch);
            }
            out.push(p.item()?);
        }
        let req = parts.iter().any(|p| self.requires(p.id));
        let n = parts.len();
        Ok(self.push(
            Rc::new(out),
            vec![n],
            Op::StackScalars {
                parts: parts.iter().map(|p| p.id).collect(),
            },
            req,
            None,
        ))
    }

    /// Drop every recorded node, releasing all value references.
    pub fn clear(&self) {
        let mut inner = self.0.borrow_mut();
        inner.nodes.clear();
        inner.consumed = true;
    }

    pub fn len(&self) -> usize {
        self.0.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_consumed(&self) -> bool {
        self.0.borrow().consumed
    }
}

impl Tensor {
    pub fn shape(&self) -> Vec<usize> {
        self.tape.0.borrow().nodes[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.values().len()
    }

    pub fn values(&self) -> Rc<Vec<Real>> {
        Rc::clone(&self.tape.0.borrow().nodes[self.id].values)
    }

    /// Extract the single value of a scalar tensor.
    pub fn item(&self) -> Result<Real> {
        let v = self.values();
        if v.len() != 1 {
            return Err(CoreError::Usage(format!(
                "item() requires a scalar, got shape {:?}",
                self.shape()
            )));
        }
        Ok(v[0])
    }

    fn shape2d(&self, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape();
        match s.len() {
            1 => Ok((1, s[0])),
            2 => Ok((s[0], s[1])),
            _ => Err(CoreError::Usage(format!("{op}: expected 1-D or 2-D, got {s:?}"))),
        }
    }

    fn same_tape(&self, other: &Tensor, _op: &'static str) -> Result<()> {
        if Rc::ptr_eq(&self.tape.0, &other.tape.0) {
            Ok(())
        } else {
            Err(CoreError::TapeMismatch)
        }
    }

    fn unary(&self, values: Vec<Real>, shape: Vec<usize>, op: Op) -> Tensor {
        let req = self.tape.requires(self.id);
        self.tape.push(Rc::new(values), shape, op, req, None)
    }

    fn binary(&self, other: &Tensor, values: Vec<Real>, shape: Vec<usize>, op: Op) -> Tensor {
        let req = self.tape.requires(self.id) || self.tape.requires(other.id);
        self.tape.push(Rc::new(values), shape, op, req, None)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.same_tape(other, "add")?;
        let (a, b) = (self.values(), other.values());
        if self.shape() != other.shape() {
            return Err(CoreError::ShapeMismatch {
                op: "add",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let out = a.iter().zip(b.iter()).map(|(x, y)| x + y).collect();
        Ok(self.binary(other, out, self.shape(), Op::Add { a: self.id, b: other.id }))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.same_tape(other, "mul")?;
        if self.shape() != other.shape() {
            return Err(CoreError::ShapeMismatch {
                op: "mul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let (a, b) = (self.values(), other.values());
        let out = a.iter().zip(b.iter()).map(|(x, y)| x * y).collect();
        Ok(self.binary(other, out, self.shape(), Op::Mul { a: self.id, b: other.id }))
    }

    pub fn scale(&self, c: Real) -> Tensor {
        let out = self.values().iter().map(|x| x * c).collect();
        self.unary(out, self.shape(), Op::Scale { x: self.id, c })
    }

    pub fn add_scalar(&self, c: Real) -> Tensor {
        let out = self.values().iter().map(|x| x + c).collect();
        self.unary(out, self.shape(), Op::AddScalar { x: self.id })
    }

    pub fn relu(&self) -> Tensor {
        let out = self.values().iter().map(|&x| x.max(0.0)).collect();
        self.unary(out, self.shape(), Op::Relu { x: self.id })
    }

    pub fn gelu(&self) -> Tensor {
        let out = self.values().iter().map(|&x| kernels::gelu(x)).collect();
        self.unary(out, self.shape(), Op::Gelu { x: self.id })
    }

    pub fn softplus(&self) -> Tensor {
        let out = self.values().iter().map(|&x| kernels::softplus(x)).collect();
        self.unary(out, self.shape(), Op::Softplus { x: self.id })
    }

    /// Standard matrix product; `self` is m×k, `other` k×n.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.same_tape(other, "matmul")?;
        let (m, k) = self.shape2d("matmul")?;
        let (k2, n) = other.shape2d("matmul")?;
        if k != k2 {
            return Err(CoreError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(&mut out, &self.values(), &other.values(), m, k, n);
        let shape = if self.shape().len() == 1 { vec![n] } else { vec![m, n] };
        Ok(self.binary(other, out, shape, Op::Matmul { a: self.id, b: other.id, m, k, n }))
    }

    /// `self @ otherᵀ`; `self` is m×k, `other` n×k.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        self.same_tape(other, "matmul_nt")?;
        let (m, k) = self.shape2d("matmul_nt")?;
        let (n, k2) = other.shape2d("matmul_nt")?;
        if k != k2 {
            return Err(CoreError::ShapeMismatch {
                op: "matmul_nt",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_nt_acc(&mut out, &self.values(), &other.values(), m, k, n);
        Ok(self.binary(other, out, vec![m, n], Op::MatmulNt { a: self.id, b: other.id, m, k, n }))
    }

    /// Add a length-`cols` bias vector to every row of a 2-D tensor.
    pub fn add_bias_rows(&self, bias: &Tensor) -> Result<Tensor> {
        self.same_tape(bias, "add_bias_rows")?;
        let (rows, cols) = self.shape2d("add_bias_rows")?;
        if bias.numel() != cols {
            return Err(CoreError::ShapeMismatch {
                op: "add_bias_rows",
                lhs: self.shape(),
                rhs: bias.shape(),
            });
        }
        let x = self.values();
        let b = bias.values();
        let mut out = x.as_ref().clone();
        for r in 0..rows {
            for c in 0..cols {
                out[r * cols + c] += b[c];
            }
        }
        Ok(self.binary(bias, out, self.shape(), Op::AddBiasRows { x: self.id, bias: bias.id, rows, cols }))
    }

    /// Gather rows of an embedding table: `self` is vocab×dim.
    pub fn embed_lookup(&self, ids: &[u32]) -> Result<Tensor> {
        let (vocab, dim) = self.shape2d("embed_lookup")?;
        let table = self.values();
        let mut out = vec![0.0; ids.len() * dim];
        for (r, &id) in ids.iter().enumerate() {
            let id = id as usize;
            if id >= vocab {
                return Err(CoreError::IndexOutOfRange {
                    op: "embed_lookup",
                    index: id,
                    extent: vocab,
                });
            }
            out[r * dim..(r + 1) * dim].copy_from_slice(&table[id * dim..(id + 1) * dim]);
        }
        let n = ids.len();
        Ok(self.unary(
            out,
            vec![n, dim],
            Op::EmbedLookup { table: self.id, ids: ids.to_vec(), dim, vocab },
        ))
    }

    /// Select a single row of a 2-D tensor as a 1-D tensor.
    pub fn row(&self, index: usize) -> Result<Tensor> {
        let (rows, cols) = self.shape2d("row")?;
        if index >= rows {
            return Err(CoreError::IndexOutOfRange { op: "row", index, extent: rows });
        }
        let x = self.values();
        let out = x[index * cols..(index + 1) * cols].to_vec();
        Ok(self.unary(out, vec![cols], Op::Row { x: self.id, index, cols }))
    }

    /// Select a contiguous block of rows.
    pub fn row_slice(&self, start: usize, len: usize) -> Result<Tensor> {
        let (rows, cols) = self.shape2d("row_slice")?;
        if start + len > rows {
            return Err(CoreError::IndexOutOfRange {
                op: "row_slice",
                index: start + len,
                extent: rows,
            });
        }
        let x = self.values();
        let out = x[start * cols..(start + len) * cols].to_vec();
        Ok(self.unary(out, vec![len, cols], Op::RowSlice { x: self.id, start, cols }))
    }

    /// Select a contiguous block of columns.
    pub fn col_slice(&self, start: usize, len: usize) -> Result<Tensor> {
        let (rows, cols) = self.shape2d("col_slice")?;
        if start + len > cols {
            return Err(CoreError::IndexOutOfRange {
                op: "col_slice",
                index: start + len,
                extent: cols,
            });
        }
        let x = self.values();
        let mut out = vec![0.0; rows * len];
        for r in 0..rows {
            out[r * len..(r + 1) * len].copy_from_slice(&x[r * cols + start..r * cols + start + len]);
        }
        Ok(self.unary(out, vec![rows, len], Op::ColSlice { x: self.id, start, len, cols }))
    }

    /// Per-row layer normalization with learned gain and bias.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: Real) -> Result<Tensor> {
        self.same_tape(gain, "layer_norm")?;
        self.same_tape(bias, "layer_norm")?;
        let (rows, cols) = self.shape2d("layer_norm")?;
        if gain.numel() != cols || bias.numel() != cols {
            return Err(CoreError::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape(),
                rhs: gain.shape(),
            });
        }
        let x = self.values();
        let g = gain.values();
        let b = bias.values();
        let mut out = vec![0.0; rows * cols];
        let mut means = vec![0.0; rows];
        let mut rstds = vec![0.0; rows];
        for r in 0..rows {
            let row = &x[r * cols..(r + 1) * cols];
            let mean: Real = row.iter().sum::<Real>() / cols as Real;
            let var: Real = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / cols as Real;
            let rstd = 1.0 / (var + eps).sqrt();
            means[r] = mean;
            rstds[r] = rstd;
            for c in 0..cols {
                out[r * cols + c] = g[c] * (row[c] - mean) * rstd + b[c];
            }
        }
        let req = self.tape.requires(self.id)
            || self.tape.requires(gain.id)
            || self.tape.requires(bias.id);
        Ok(self.tape.push(
            Rc::new(out),
            self.shape(),
            Op::LayerNorm { x: self.id, gain: gain.id, bias: bias.id, rows, cols, mean: means, rstd: rstds },
            req,
            None,
        ))
    }

    /// Row-wise softmax over the causal prefix (row i attends to columns 0..=i).
    pub fn causal_softmax(&self) -> Result<Tensor> {
        let (rows, cols) = self.shape2d("causal_softmax")?;
        let out = kernels::causal_softmax(&self.values(), rows, cols);
        Ok(self.unary(out, self.shape(), Op::CausalSoftmax { x: self.id, rows, cols }))
    }

    /// L2-normalize each row (or the whole vector if 1-D).
    pub fn l2_normalize(&self) -> Result<Tensor> {
        let (rows, cols) = self.shape2d("l2_normalize")?;
        let x = self.values();
        let mut out = vec![0.0; rows * cols];
        let mut norms = vec![0.0; rows];
        for r in 0..rows {
            let row = &x[r * cols..(r + 1) * cols];
            let norm = kernels::l2_norm(row);
            if norm == 0.0 {
                return Err(CoreError::DegenerateInput {
                    op: "l2_normalize",
                    detail: format!("row {r} has zero norm"),
                });
            }
            norms[r] = norm;
            for c in 0..cols {
                out[r * cols + c] = row[c] / norm;
            }
        }
        Ok(self.unary(out, self.shape(), Op::L2Normalize { x: self.id, rows, cols, norms }))
    }

    /// Cosine similarity of two 1-D tensors.
    pub fn cosine_sim(&self, other: &Tensor) -> Result<Tensor> {
        self.same_tape(other, "cosine_sim")?;
        if self.shape() != other.shape() || self.shape().len() != 1 {
            return Err(CoreError::ShapeMismatch {
                op: "cosine_sim",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let a = self.values();
        let b = other.values();
        let norm_a = kernels::l2_norm(&a);
        let norm_b = kernels::l2_norm(&b);
        if norm_a == 0.0 || norm_b == 0.0 {
            return Err(CoreError::DegenerateInput {
                op: "cosine_sim",
                detail: "zero-norm operand".to_owned(),
            });
        }
        let cos = kernels::dot(&a, &b) / (norm_a * norm_b);
        Ok(self.binary(
            other,
            vec![cos],
            vec![1],
            Op::CosineSim { a: self.id, b: other.id, norm_a, norm_b, cos },
        ))
    }

    /// Inner product of two 1-D tensors.
    pub fn dot(&self, other: &Tensor) -> Result<Tensor> {
        self.same_tape(other, "dot")?;
        if self.shape() != other.shape() || self.shape().len() != 1 {
            return Err(CoreError::ShapeMismatch {
                op: "dot",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let v = kernels::dot(&self.values(), &other.values());
        Ok(self.binary(other, vec![v], vec![1], Op::Dot { a: self.id, b: other.id }))
    }

    pub fn mean_all(&self) -> Tensor {
        let x = self.values();
        let v = x.iter().sum::<Real>() / x.len() as Real;
        self.unary(vec![v], vec![1], Op::MeanAll { x: self.id })
    }

    pub fn sum_all(&self) -> Tensor {
        let v = self.values().iter().sum::<Real>();
        self.unary(vec![v], vec![1], Op::SumAll { x: self.id })
    }

    /// −log softmax(logits)[target] for a 1-D logit vector.
    pub fn cross_entropy(&self, target: usize) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 1 {
            return Err(CoreError::Usage(format!(
                "cross_entropy: expected 1-D logits, got {s:?}"
            )));
        }
        if target >= s[0] {
            return Err(CoreError::IndexOutOfRange {
                op: "cross_entropy",
                index: target,
                extent: s[0],
            });
        }
        let probs = kernels::softmax(&self.values());
        let loss = -probs[target].ln();
        Ok(self.unary(vec![loss], vec![1], Op::CrossEntropyRow { logits: self.id, target, probs }))
    }

    /// Mean of per-row −log softmax(row)[target] over a 2-D logit matrix.
    pub fn cross_entropy_rows_mean(&self, targets: &[u32]) -> Result<Tensor> {
        let (rows, cols) = self.shape2d("cross_entropy_rows_mean")?;
        if targets.len() != rows {
            return Err(CoreError::Usage(format!(
                "cross_entropy_rows_mean: {rows} rows but {} targets",
                targets.len()
            )));
        }
        let x = self.values();
        let mut probs = vec![0.0; rows * cols];
        let mut total = 0.0;
        for r in 0..rows {
            let t = targets[r] as usize;
            if t >= cols {
                return Err(CoreError::IndexOutOfRange {
                    op: "cross_entropy_rows_mean",
                    index: t,
                    extent: cols,
                });
            }
            let p = kernels::softmax(&x[r * cols..(r + 1) * cols]);
            total -= p[t].ln();
            probs[r * cols..(r + 1) * cols].copy_from_slice(&p);
        }
        let loss = total / rows as Real;
        Ok(self.unary(
            vec![loss],
            vec![1],
            Op::CrossEntropyRowsMean { logits: self.id, targets: targets.to_vec(), rows, cols, probs },
        ))
    }

    /// Mean per-row KL(ref ‖ softmax(self)); `ref_probs` is a constant
    /// rows×cols probability matrix.
    pub fn kl_vs_ref_mean(&self, ref_probs: Rc<Vec<Real>>) -> Result<Tensor> {
        let (rows, cols) = self.shape2d("kl_vs_ref_mean")?;
        if ref_probs.len() != rows * cols {
            return Err(CoreError::ShapeMismatch {
                op: "kl_vs_ref_mean",
                lhs: vec![rows, cols],
                rhs: vec![ref_probs.len()],
            });
        }
        let x = self.values();
        let mut cur_probs = vec![0.0; rows * cols];
        let mut total = 0.0;
        for r in 0..rows {
            let cur_logp = kernels::log_softmax(&x[r * cols..(r + 1) * cols]);
            for c in 0..cols {
                let p_ref = ref_probs[r * cols + c];
                cur_probs[r * cols + c] = cur_logp[c].exp();
                if p_ref > 0.0 {
                    total += p_ref * (p_ref.ln() - cur_logp[c]);
                }
            }
        }
        let loss = total / rows as Real;
        Ok(self.unary(
            vec![loss],
            vec![1],
            Op::KlRefMean { cur: self.id, ref_probs, rows, cur_probs },
        ))
    }

    /// Reverse-mode sweep from this scalar. Populates the gradient cells of
    /// every trainable leaf reachable from it and consumes the tape.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(CoreError::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        {
            let inner = self.tape.0.borrow();
            if inner.consumed {
                return Err(CoreError::TapeConsumed);
            }
        }
        {
            let inner = self.tape.0.borrow();
            let nodes = &inner.nodes;
            let mut grads: Vec<Option<Vec<Real>>> = (0..nodes.len()).map(|_| None).collect();
            grads[self.id] = Some(vec![1.0]);

            for id in (0..=self.id).rev() {
                let Some(g) = grads[id].take() else { continue };
                let node = &nodes[id];
                if !node.requires_grad {
                    continue;
                }
                if let Some(sink) = &node.sink {
                    let mut cell = sink.borrow_mut();
                    match cell.as_mut() {
                        Some(acc) => {
                            for (a, gi) in acc.iter_mut().zip(&g) {
                                *a += gi;
                            }
                        }
                        None => *cell = Some(g.clone()),
                    }
                }
                backward_op(nodes, id, &g, &mut grads);
            }
        }
        self.tape.0.borrow_mut().consumed = true;
        Ok(())
    }
}

fn acc(grads: &mut [Option<Vec<Real>>], nodes: &[Node], id: NodeId, contribution: &[Real]) {
    if !nodes[id].requires_grad {
        return;
    }
    match grads[id].as_mut() {
        Some(g) => {
            for (a, c) in g.iter_mut().zip(contribution) {
                *a += c;
            }
        }
        None => grads[id] = Some(contribution.to_vec()),
    }
}

fn acc_owned(grads: &mut [Option<Vec<Real>>], nodes: &[Node], id: NodeId, contribution: Vec<Real>) {
    if !nodes[id].requires_grad {
        return;
    }
    match grads[id].as_mut() {
        Some(g) => {
            for (a, c) in g.iter_mut().zip(&contribution) {
                *a += c;
            }
        }
        None => grads[id] = Some(contribution),
    }
}

#[allow(clippy::needless_range_loop)]
fn backward_op(nodes: &[Node], id: NodeId, g: &[Real], grads: &mut [Option<Vec<Real>>]) {
    match &nodes[id].op {
        Op::Leaf => {}

        Op::Add { a, b } => {
            acc(grads, nodes, *a, g);
            acc(grads, nodes, *b, g);
        }

        Op::Mul { a, b } => {
            let va = &nodes[*a].values;
            let vb = &nodes[*b].values;
            acc_owned(grads, nodes, *a, g.iter().zip(vb.iter()).map(|(gi, y)| gi * y).collect());
            acc_owned(grads, nodes, *b, g.iter().zip(va.iter()).map(|(gi, x)| gi * x).collect());
        }

        Op::Scale { x, c } => {
            acc_owned(grads, nodes, *x, g.iter().map(|gi| gi * c).collect());
        }

        Op::AddScalar { x } => {
            acc(grads, nodes, *x, g);
        }

        Op::Relu { x } => {
            let vx = &nodes[*x].values;
            acc_owned(
                grads,
                nodes,
                *x,
                g.iter()
                    .zip(vx.iter())
                    .map(|(gi, &xi)| if xi > 0.0 { *gi } else { 0.0 })
                    .collect(),
            );
        }

        Op::Gelu { x } => {
            let vx = &nodes[*x].values;
            acc_owned(
                grads,
                nodes,
                *x,
                g.iter()
                    .zip(vx.iter())
                    .map(|(gi, &xi)| gi * kernels::gelu_derivative(xi))
                    .collect(),
            );
        }

        Op::Softplus { x } => {
            let vx = &nodes[*x].values;
            acc_owned(
                grads,
                nodes,
                *x,
                g.iter()
                    .zip(vx.iter())
                    .map(|(gi, &xi)| gi * kernels::sigmoid(xi))
                    .collect(),
            );
        }

        Op::Matmul { a, b, m, k, n } => {
            let va = &nodes[*a].values;
            let vb = &nodes[*b].values;
            if nodes[*a].requires_grad {
                // dA = g @ Bᵀ : (m×n)·(n×k ᵀ-of k×n)
                let mut da = vec![0.0; m * k];
                kernels::matmul_nt_acc(&mut da, g, vb, *m, *n, *k);
                acc_owned(grads, nodes, *a, da);
            }
            if nodes[*b].requires_grad {
                // dB = Aᵀ @ g : (k×m)·(m×n)
                let mut db = vec![0.0; k * n];
                kernels::matmul_tn_acc(&mut db, va, g, *k, *m, *n);
                acc_owned(grads, nodes, *b, db);
            }
        }

        Op::MatmulNt { a, b, m, k, n } => {
            let va = &nodes[*a].values;
            let vb = &nodes[*b].values;
            if nodes[*a].requires_grad {
                // dA = g @ B : (m×n)·(n×k)
                let mut da = vec![0.0; m * k];
                kernels::matmul_acc(&mut da, g, vb, *m, *n, *k);
                acc_owned(grads, nodes, *a, da);
            }
            if nodes[*b].requires_grad {
                // dB = gᵀ @ A : (n×m)·(m×k)
                let mut db = vec![0.0; n * k];
                kernels::matmul_tn_acc(&mut db, g, va, *n, *m, *k);
                acc_owned(grads, nodes, *b, db);
            }
        }

        Op::AddBiasRows { x, bias, rows, cols } => {
            acc(grads, nodes, *x, g);
            if nodes[*bias].requires_grad {
                let mut db = vec![0.0; *cols];
                for r in 0..*rows {
                    for c in 0..*cols {
                        db[c] += g[r * cols + c];
                    }
                }
                acc_owned(grads, nodes, *bias, db);
            }
        }

        Op::EmbedLookup { table, ids, dim, vocab } => {
            if nodes[*table].requires_grad {
                let mut dt = vec![0.0; vocab * dim];
                for (r, &tok) in ids.iter().enumerate() {
                    let base = tok as usize * dim;
                    for c in 0..*dim {
                        dt[base + c] += g[r * dim + c];
                    }
                }
                acc_owned(grads, nodes, *table, dt);
            }
        }

        Op::Row { x, index, cols } => {
            if nodes[*x].requires_grad {
                let mut dx = vec![0.0; nodes[*x].values.len()];
                dx[index * cols..(index + 1) * cols].copy_from_slice(g);
                acc_owned(grads, nodes, *x, dx);
            }
        }

        Op::RowSlice { x, start, cols } => {
            if nodes[*x].requires_grad {
                let mut dx = vec![0.0; nodes[*x].values.len()];
                dx[start * cols..start * cols + g.len()].copy_from_slice(g);
                acc_owned(grads, nodes, *x, dx);
            }
        }

        Op::ColSlice { x, start, len, cols } => {
            if nodes[*x].requires_grad {
                let mut dx = vec![0.0; nodes[*x].values.len()];
                let rows = g.len() / len;
                for r in 0..rows {
                    for c in 0..*len {
                        dx[r * cols + start + c] = g[r * len + c];
                    }
                }
                acc_owned(grads, nodes, *x, dx);
            }
        }

        Op::ConcatCols { parts, widths } => {
            let total: usize = widths.iter().sum();
            let rows = g.len() / total;
            let mut offset = 0;
            for (part, &w) in parts.iter().zip(widths) {
                if nodes[*part].requires_grad {
                    let mut dp = vec![0.0; rows * w];
                    for r in 0..rows {
                        dp[r * w..(r + 1) * w]
                            .copy_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    acc_owned(grads, nodes, *part, dp);
                }
                offset += w;
            }
        }

        Op::LayerNorm { x, gain, bias, rows, cols, mean, rstd } => {
            let vx = &nodes[*x].values;
            let vg = &nodes[*gain].values;
            let n = *cols as Real;
            if nodes[*x].requires_grad {
                let mut dx = vec![0.0; rows * cols];
                for r in 0..*rows {
                    let xr = &vx[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let mut sum_hg = 0.0;
                    let mut sum_hg_xhat = 0.0;
                    for c in 0..*cols {
                        let xhat = (xr[c] - mean[r]) * rstd[r];
                        let hg = vg[c] * gr[c];
                        sum_hg += hg;
                        sum_hg_xhat += hg * xhat;
                    }
                    for c in 0..*cols {
                        let xhat = (xr[c] - mean[r]) * rstd[r];
                        let hg = vg[c] * gr[c];
                        dx[r * cols + c] = rstd[r] * (hg - sum_hg / n - xhat * sum_hg_xhat / n);
                    }
                }
                acc_owned(grads, nodes, *x, dx);
            }
            if nodes[*gain].requires_grad {
                let mut dg = vec![0.0; *cols];
                for r in 0..*rows {
                    for c in 0..*cols {
                        let xhat = (vx[r * cols + c] - mean[r]) * rstd[r];
                        dg[c] += g[r * cols + c] * xhat;
                    }
                }
                acc_owned(grads, nodes, *gain, dg);
            }
            if nodes[*bias].requires_grad {
                let mut db = vec![0.0; *cols];
                for r in 0..*rows {
                    for c in 0..*cols {
                        db[c] += g[r * cols + c];
                    }
                }
                acc_owned(grads, nodes, *bias, db);
            }
        }

        Op::CausalSoftmax { x, rows, cols } => {
            if nodes[*x].requires_grad {
                let y = &nodes[id].values;
                let mut dx = vec![0.0; rows * cols];
                for r in 0..*rows {
                    let width = (r + 1).min(*cols);
                    let mut dot = 0.0;
                    for c in 0..width {
                        dot += g[r * cols + c] * y[r * cols + c];
                    }
                    for c in 0..width {
                        dx[r * cols + c] = y[r * cols + c] * (g[r * cols + c] - dot);
                    }
                }
                acc_owned(grads, nodes, *x, dx);
            }
        }

        Op::L2Normalize { x, rows, cols, norms } => {
            if nodes[*x].requires_grad {
                let y = &nodes[id].values;
                let mut dx = vec![0.0; rows * cols];
                for r in 0..*rows {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let dot = kernels::dot(gr, yr);
                    for c in 0..*cols {
                        dx[r * cols + c] = (gr[c] - yr[c] * dot) / norms[r];
                    }
                }
                acc_owned(grads, nodes, *x, dx);
            }
        }

        Op::CosineSim { a, b, norm_a, norm_b, cos } => {
            let va = &nodes[*a].values;
            let vb = &nodes[*b].values;
            let gs = g[0];
            if nodes[*a].requires_grad {
                let da: Vec<Real> = va
                    .iter()
                    .zip(vb.iter())
                    .map(|(&ai, &bi)| gs * (bi / (norm_a * norm_b) - cos * ai / (norm_a * norm_a)))
                    .collect();
                acc_owned(grads, nodes, *a, da);
            }
            if nodes[*b].requires_grad {
                let db: Vec<Real> = va
                    .iter()
                    .zip(vb.iter())
                    .map(|(&ai, &bi)| gs * (ai / (norm_a * norm_b) - cos * bi / (norm_b * norm_b)))
                    .collect();
                acc_owned(grads, nodes, *b, db);
            }
        }

        Op::Dot { a, b } => {
            let va = &nodes[*a].values;
            let vb = &nodes[*b].values;
            let gs = g[0];
            acc_owned(grads, nodes, *a, vb.iter().map(|y| gs * y).collect());
            acc_owned(grads, nodes, *b, va.iter().map(|x| gs * x).collect());
        }

        Op::StackScalars { parts } => {
            for (i, part) in parts.iter().enumerate() {
                acc(grads, nodes, *part, &[g[i]]);
            }
        }

        Op::MeanAll { x } => {
            let n = nodes[*x].values.len() as Real;
            let gi = g[0] / n;
            acc_owned(grads, nodes, *x, vec![gi; nodes[*x].values.len()]);
        }

        Op::SumAll { x } => {
            acc_owned(grads, nodes, *x, vec![g[0]; nodes[*x].values.len()]);
        }

        Op::CrossEntropyRow { logits, target, probs } => {
            if nodes[*logits].requires_grad {
                let gs = g[0];
                let mut dl: Vec<Real> = probs.iter().map(|p| gs * p).collect();
                dl[*target] -= gs;
                acc_owned(grads, nodes, *logits, dl);
            }
        }

        Op::CrossEntropyRowsMean { logits, targets, rows, cols, probs } => {
            if nodes[*logits].requires_grad {
                let gs = g[0] / *rows as Real;
                let mut dl: Vec<Real> = probs.iter().map(|p| gs * p).collect();
                for (r, &t) in targets.iter().enumerate() {
                    dl[r * cols + t as usize] -= gs;
                }
                acc_owned(grads, nodes, *logits, dl);
            }
        }

        Op::KlRefMean { cur, ref_probs, rows, cur_probs } => {
            if nodes[*cur].requires_grad {
                let gs = g[0] / *rows as Real;
                let dl: Vec<Real> = cur_probs
                    .iter()
                    .zip(ref_probs.iter())
                    .map(|(pc, pr)| gs * (pc - pr))
                    .collect();
                acc_owned(grads, nodes, *cur, dl);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::Param;

    fn param(name: &str, shape: &[usize], values: Vec<Real>) -> Param {
        Param::new(name, shape, values)
    }

    #[test]
    fn matmul_identity_passthrough() {
        let tape = Tape::new();
        let eye = tape.constant(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[3, 3]);
        let x = tape.constant(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[3, 2]);
        let y = eye.matmul(&x).unwrap();
        assert_eq!(*y.values(), *x.values());

        let a = tape.constant(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let i2 = tape.constant(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]);
        let b = a.matmul(&i2).unwrap();
        assert_eq!(*b.values(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.constant(vec![0.0; 6], &[2, 3]);
        let b = tape.constant(vec![0.0; 8], &[4, 2]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn cosine_identities() {
        let tape = Tape::new();
        let v = tape.constant(vec![0.3, -1.2, 2.0], &[3]);
        assert!((v.cosine_sim(&v).unwrap().item().unwrap() - 1.0).abs() < 1e-12);

        let e1 = tape.constant(vec![1.0, 0.0], &[2]);
        let e2 = tape.constant(vec![0.0, 1.0], &[2]);
        assert!(e1.cosine_sim(&e2).unwrap().item().unwrap().abs() < 1e-12);

        let neg = tape.constant(vec![-1.0, 0.0], &[2]);
        assert!((e1.cosine_sim(&neg).unwrap().item().unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_norm_is_error() {
        let tape = Tape::new();
        let z = tape.constant(vec![0.0, 0.0], &[2]);
        let v = tape.constant(vec![1.0, 0.0], &[2]);
        assert!(matches!(
            z.cosine_sim(&v),
            Err(CoreError::DegenerateInput { .. })
        ));
    }

    #[test]
    fn cross_entropy_uniform_and_saturated() {
        let tape = Tape::new();
        let v = 11;
        let uniform = tape.constant(vec![0.7; v], &[v]);
        let loss = uniform.cross_entropy(3).unwrap().item().unwrap();
        assert!((loss - (v as Real).ln()).abs() < 1e-9);

        let mut hot = vec![0.0; 8];
        hot[2] = 1000.0;
        let saturated = tape.constant(hot, &[8]);
        assert!(saturated.cross_entropy(2).unwrap().item().unwrap() < 1e-9);
    }

    #[test]
    fn cross_entropy_index_error() {
        let tape = Tape::new();
        let logits = tape.constant(vec![0.0; 4], &[4]);
        assert!(matches!(
            logits.cross_entropy(4),
            Err(CoreError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let tape = Tape::new();
        let p = param("x", &[4], vec![1.0, -2.0, 0.5, 3.0]);
        let x = tape.leaf(&p);
        x.sum_all().backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn cosine_gradient_vanishes_at_parallel() {
        // d cos(x, c)/dx at x = c has no radial component, and cos is maximal
        // there, so the full gradient is ~0.
        let tape = Tape::new();
        let p = param("x", &[3], vec![0.6, -0.8, 0.2]);
        let x = tape.leaf(&p);
        let c = tape.constant(vec![0.6, -0.8, 0.2], &[3]);
        x.cosine_sim(&c).unwrap().backward().unwrap();
        let g = p.grad().unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12), "{g:?}");
    }

    #[test]
    fn second_backward_is_usage_error() {
        let tape = Tape::new();
        let p = param("x", &[2], vec![1.0, 2.0]);
        let loss = tape.leaf(&p).sum_all();
        loss.backward().unwrap();
        assert!(matches!(loss.backward(), Err(CoreError::TapeConsumed)));
    }

    #[test]
    fn clear_releases_value_references() {
        let p = param("x", &[2], vec![1.0, 2.0]);
        let tape = Tape::new();
        let _t = tape.leaf(&p);
        let rc = p.value_rc();
        assert_eq!(Rc::strong_count(&rc), 3); // param + tape + rc
        tape.clear();
        assert_eq!(Rc::strong_count(&rc), 2); // param + rc
    }

    #[test]
    fn gradient_accumulates_across_uses() {
        // y = x*2 + x*3 → dy/dx = 5
        let tape = Tape::new();
        let p = param("x", &[1], vec![1.0]);
        let x = tape.leaf(&p);
        let y = x.scale(2.0).add(&x.scale(3.0)).unwrap();
        y.backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![5.0]);
    }

    #[test]
    fn causal_softmax_rows_sum_to_one() {
        let tape = Tape::new();
        let x = tape.constant((0..9).map(|i| i as Real * 0.1).collect(), &[3, 3]);
        let y = x.causal_softmax().unwrap();
        let v = y.values();
        for r in 0..3 {
            let s: Real = v[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // strictly causal: row 0 puts zero mass beyond column 0
        assert_eq!(v[1], 0.0);
        assert_eq!(v[2], 0.0);
    }

    #[test]
    fn embed_lookup_out_of_range() {
        let tape = Tape::new();
        let table = tape.constant(vec![0.0; 8], &[4, 2]);
        assert!(matches!(
            table.embed_lookup(&[5]),
            Err(CoreError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn kl_of_self_is_zero() {
        let tape = Tape::new();
        let logits = vec![0.3, -1.0, 2.0, 0.0, 0.5, -0.5];
        let x = tape.constant(logits.clone(), &[2, 3]);
        let mut ref_probs = Vec::new();
        for r in 0..2 {
            ref_probs.extend(kernels::softmax(&logits[r * 3..(r + 1) * 3]));
        }
        let kl = x.kl_vs_ref_mean(Rc::new(ref_probs)).unwrap();
        assert!(kl.item().unwrap().abs() < 1e-12);
    }
}
