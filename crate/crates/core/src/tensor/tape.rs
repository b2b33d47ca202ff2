use alloc::borrow::Cow;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    MatMulBt,
    Add,
    AddRow,
    Mul,
    Scale,
    Gelu,
    LayerNorm,
    Softmax,
    CrossEntropy,
    CosineRows,
    ConcatRows,
    ConcatCols,
    SliceCols,
    GatherRows,
    Sum,
    Mean,
}

impl OpKind {
    pub fn from_name(name: &str) -> Option<OpKind> {
        Some(match name {
            "matmul" => OpKind::MatMul,
            "matmul_bt" => OpKind::MatMulBt,
            "add" => OpKind::Add,
            "add_row" => OpKind::AddRow,
            "mul" => OpKind::Mul,
            "scale" => OpKind::Scale,
            "gelu" => OpKind::Gelu,
            "layer_norm" => OpKind::LayerNorm,
            "softmax" => OpKind::Softmax,
            "cross_entropy" => OpKind::CrossEntropy,
            "cosine" => OpKind::CosineRows,
            "concat_rows" => OpKind::ConcatRows,
            "concat_cols" => OpKind::ConcatCols,
            "slice_cols" => OpKind::SliceCols,
            "gather_rows" => OpKind::GatherRows,
            "sum" => OpKind::Sum,
            "mean" => OpKind::Mean,
            _ => return None,
        })
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    CrossEntropy {
        logits: Var,
        /// `(row, target)` for every counted position.
        picks: Vec<(usize, usize)>,
        probs: Vec<f64>,
        scale: f64,
    },
    CosineRows {
        a: Var,
        b: Var,
        dots: Vec<f64>,
        sq_a: Vec<f64>,
        sq_b: Vec<f64>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::MatMulBt(..) => OpKind::MatMulBt,
            Op::Add(..) => OpKind::Add,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Gelu(..) => OpKind::Gelu,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::CosineRows { .. } => OpKind::CosineRows,
            Op::ConcatRows(..) => OpKind::ConcatRows,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::SliceCols { .. } => OpKind::SliceCols,
            Op::GatherRows { .. } => OpKind::GatherRows,
            Op::Sum(..) => OpKind::Sum,
            Op::Mean(..) => OpKind::Mean,
        }
    }
}

struct Node<'a> {
    shape: Vec<usize>,
    value: Cow<'a, [f64]>,
    requires_grad: bool,
    op: Op,
}

/// Append-only record of a forward computation.
///
/// Parents always precede their consumers, so a reverse sweep over the node
/// list is a valid topological order for backpropagation. Leaves borrow their
/// data from the tensors they were registered from.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    corruption: Option<(OpKind, f64)>,
}

/// Gradients of one backward sweep, kept for leaves only.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Test fixture: scales the backward rule of every `kind` node by
    /// `factor`, so gradient checks can be shown to catch a broken rule.
    #[doc(hidden)]
    pub fn corrupt_rule(&mut self, kind: OpKind, factor: f64) {
        self.corruption = Some((kind, factor));
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a tensor as a leaf, borrowing its data.
    pub fn leaf(&mut self, t: &'a Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            Cow::Borrowed(t.data()),
            t.requires_grad(),
            Op::Leaf,
        )
    }

    /// Registers an owned value that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, Cow::Owned(t.into_data()), false, Op::Leaf)
    }

    /// Registers an owned value as a differentiable leaf.
    pub fn input(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, Cow::Owned(t.into_data()), true, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.to_vec()).expect("tape shapes are valid")
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'a, [f64]>, rg: bool, op: Op) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            requires_grad: rg,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn owned(&mut self, shape: Vec<usize>, value: Vec<f64>, parents: &[Var], op: Op) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(shape, Cow::Owned(value), rg, op)
    }

    fn matrix(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Shape(format!("{op} expects a matrix, got shape {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul")?;
        let (k2, n) = self.matrix(b, "matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(m, k, n, self.value(a), self.value(b), &mut out);
        Ok(self.owned(vec![m, n], out, &[a, b], Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul_bt")?;
        let (n, k2) = self.matrix(b, "matmul_bt")?;
        if k != k2 {
            return Err(Error::dim("matmul_bt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(m, k, n, self.value(a), self.value(b), &mut out);
        Ok(self.owned(vec![m, n], out, &[a, b], Op::MatMulBt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("add", self.shape(a), self.shape(b)));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.owned(shape, out, &[a, b], Op::Add(a, b)))
    }

    /// Adds a length-`n` row to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, n) = self.matrix(a, "add_row")?;
        if self.shape(row) != [n] {
            return Err(Error::dim("add_row", self.shape(a), self.shape(row)));
        }
        let r = self.value(row);
        let out = self
            .value(a)
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(x, y)| x + y))
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.owned(shape, out, &[a, row], Op::AddRow(a, row)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("mul", self.shape(a), self.shape(b)));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.owned(shape, out, &[a, b], Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        self.owned(shape, out, &[a], Op::Scale(a, factor))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .iter()
            .map(|&x| {
                let t = libm::tanh(GELU_C * (x + GELU_A * x * x * x));
                0.5 * x * (1.0 + t)
            })
            .collect();
        let shape = self.shape(a).to_vec();
        self.owned(shape, out, &[a], Op::Gelu(a))
    }

    /// Normalizes over the last dimension, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::Contract(format!("layer_norm eps must be positive, got {eps}")));
        }
        let shape = self.shape(x).to_vec();
        let d = *shape
            .last()
            .ok_or_else(|| Error::Shape("layer_norm needs rank >= 1".into()))?;
        if self.shape(gamma) != [d] {
            return Err(Error::dim("layer_norm", &shape, self.shape(gamma)));
        }
        if self.shape(beta) != [d] {
            return Err(Error::dim("layer_norm", &shape, self.shape(beta)));
        }
        let xs = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        let rows = xs.len() / d;
        let mut xhat = vec![0.0; xs.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xs.len()];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / libm::sqrt(var + eps);
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        Ok(self.owned(
            shape,
            out,
            &[x, gamma, beta],
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Dimension {
                op: "softmax",
                lhs: shape,
                rhs: vec![axis],
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xs = self.value(x);
        let mut out = vec![0.0; xs.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| xs[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = libm::exp(xs[at(j)] - max);
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[at(j)] /= total;
                }
            }
        }
        Ok(self.owned(shape, out, &[x], Op::Softmax { x, outer, len, inner }))
    }

    /// Mean token negative log-likelihood over positions whose target is not
    /// `ignore_id`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore_id: usize) -> Result<Var> {
        self.cross_entropy_scaled(logits, targets, ignore_id, None)
            .map(|(v, _)| v)
    }

    /// Summed negative log-likelihood and the number of counted positions.
    pub fn cross_entropy_sum(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore_id: usize,
    ) -> Result<(Var, usize)> {
        self.cross_entropy_scaled(logits, targets, ignore_id, Some(1.0))
    }

    fn cross_entropy_scaled(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore_id: usize,
        fixed_scale: Option<f64>,
    ) -> Result<(Var, usize)> {
        let (n, v) = self.matrix(logits, "cross_entropy")?;
        if targets.len() != n {
            return Err(Error::dim("cross_entropy", &[n, v], &[targets.len()]));
        }
        let mut picks = Vec::new();
        for (row, &t) in targets.iter().enumerate() {
            if t == ignore_id {
                continue;
            }
            if t >= v {
                return Err(Error::Contract(format!(
                    "target id {t} at position {row} outside vocabulary of {v}"
                )));
            }
            picks.push((row, t));
        }
        if picks.is_empty() {
            return Err(Error::EmptyBatch("every target position is ignored"));
        }
        let xs = self.value(logits);
        let mut probs = vec![0.0; picks.len() * v];
        let mut total = 0.0;
        for (k, &(row, t)) in picks.iter().enumerate() {
            let r = &xs[row * v..(row + 1) * v];
            let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, &x) in r.iter().enumerate() {
                let e = libm::exp(x - max);
                probs[k * v + j] = e;
                z += e;
            }
            for p in &mut probs[k * v..(k + 1) * v] {
                *p /= z;
            }
            total += max + libm::log(z) - r[t];
        }
        let count = picks.len();
        let scale = fixed_scale.unwrap_or(1.0 / count as f64);
        let out = vec![total * scale];
        let var = self.owned(
            Vec::new(),
            out,
            &[logits],
            Op::CrossEntropy {
                logits,
                picks,
                probs,
                scale,
            },
        );
        Ok((var, count))
    }

    /// `1 − a·b / (‖a‖‖b‖)` for two vectors of equal length.
    pub fn cosine_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a).len() != 1 || self.shape(a) != self.shape(b) {
            return Err(Error::dim("cosine_distance", self.shape(a), self.shape(b)));
        }
        let rows = self.cosine_rows_impl(a, b, 1)?;
        Ok(rows)
    }

    /// Row-wise cosine distance of two `n×d` matrices, giving a length-`n`
    /// vector.
    pub fn cosine_distance_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, _) = self.matrix(a, "cosine_distance_rows")?;
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("cosine_distance_rows", self.shape(a), self.shape(b)));
        }
        self.cosine_rows_impl(a, b, n)
    }

    fn cosine_rows_impl(&mut self, a: Var, b: Var, n: usize) -> Result<Var> {
        let d = self.value(a).len() / n;
        let (xa, xb) = (self.value(a), self.value(b));
        let mut dots = vec![0.0; n];
        let mut sq_a = vec![0.0; n];
        let mut sq_b = vec![0.0; n];
        let mut out = vec![0.0; n];
        for r in 0..n {
            let ra = &xa[r * d..(r + 1) * d];
            let rb = &xb[r * d..(r + 1) * d];
            let saa: f64 = ra.iter().map(|x| x * x).sum();
            let sbb: f64 = rb.iter().map(|x| x * x).sum();
            if saa == 0.0 || sbb == 0.0 {
                return Err(Error::Degenerate(format!(
                    "zero-norm vector in cosine distance (row {r})"
                )));
            }
            let ab: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
            // sqrt(s*s) == s exactly, so identical inputs give exactly zero.
            let cos = ab / libm::sqrt(saa * sbb);
            out[r] = (1.0 - cos).clamp(0.0, 2.0);
            dots[r] = ab;
            sq_a[r] = saa;
            sq_b[r] = sbb;
        }
        let shape = if self.shape(a).len() == 1 { Vec::new() } else { vec![n] };
        Ok(self.owned(
            shape,
            out,
            &[a, b],
            Op::CosineRows {
                a,
                b,
                dots,
                sq_a,
                sq_b,
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Shape("concat_rows of nothing".into()))?;
        let (_, c) = self.matrix(first, "concat_rows")?;
        let mut rows = 0;
        for &p in parts {
            let (r, pc) = self.matrix(p, "concat_rows")?;
            if pc != c {
                return Err(Error::dim("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += r;
        }
        let mut out = Vec::with_capacity(rows * c);
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        Ok(self.owned(vec![rows, c], out, parts, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Shape("concat_cols of nothing".into()))?;
        let (r, _) = self.matrix(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.matrix(p, "concat_cols")?;
            if pr != r {
                return Err(Error::dim("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(pc);
        }
        let c: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        Ok(self.owned(vec![r, c], out, parts, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.matrix(x, "slice_cols")?;
        if len == 0 || start + len > c {
            return Err(Error::Dimension {
                op: "slice_cols",
                lhs: vec![r, c],
                rhs: vec![start, len],
            });
        }
        let xs = self.value(x);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&xs[i * c + start..i * c + start + len]);
        }
        Ok(self.owned(vec![r, len], out, &[x], Op::SliceCols { x, start }))
    }

    /// Embedding lookup: row `ids[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.matrix(table, "gather_rows")?;
        if ids.is_empty() {
            return Err(Error::EmptyBatch("gather_rows with no ids"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Contract(format!("row id {bad} outside table of {v} rows")));
        }
        let xs = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&xs[i * d..(i + 1) * d]);
        }
        Ok(self.owned(
            vec![ids.len(), d],
            out,
            &[table],
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.owned(Vec::new(), vec![s], &[a], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let xs = self.value(a);
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        self.owned(Vec::new(), vec![m], &[a], Op::Mean(a))
    }

    /// Reverse sweep from a scalar `loss`, seeded with 1.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.backward_seeded(loss, 1.0)
    }

    pub fn backward_seeded(&self, loss: Var, seed: f64) -> Result<Gradients> {
        let shape = self.shape(loss);
        if numel(shape) != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {shape:?}"
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![seed]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(mut g) = grads[i].take() else {
                continue;
            };
            if let Some((kind, factor)) = self.corruption {
                if kind == node.op.kind() {
                    g.iter_mut().for_each(|x| *x *= factor);
                }
            }
            self.propagate(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<'a>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if let Some(ga) = self.slot(grads, *a) {
                    gemm_nt(m, n, k, g, self.value(*b), ga);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm_tn(k, m, n, self.value(*a), g, gb);
                }
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[0];
                if let Some(ga) = self.slot(grads, *a) {
                    gemm_nn(m, n, k, g, self.value(*b), ga);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm_tn(n, m, k, g, self.value(*a), gb);
                }
            }
            Op::Add(a, b) => {
                for p in [*a, *b] {
                    if let Some(gp) = self.slot(grads, p) {
                        add_into(gp, g);
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(ga) = self.slot(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gr) = self.slot(grads, *row) {
                    let n = gr.len();
                    for chunk in g.chunks(n) {
                        add_into(gr, chunk);
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((x, gi), bi) in ga.iter_mut().zip(g).zip(self.value(*b)) {
                        *x += gi * bi;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((x, gi), ai) in gb.iter_mut().zip(g).zip(self.value(*a)) {
                        *x += gi * ai;
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for (x, gi) in ga.iter_mut().zip(g) {
                        *x += gi * f;
                    }
                }
            }
            Op::Gelu(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((x, gi), &v) in ga.iter_mut().zip(g).zip(self.value(*a)) {
                        let u = GELU_C * (v + GELU_A * v * v * v);
                        let t = libm::tanh(u);
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        *x += gi * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = self.shape(*gamma)[0];
                let gam = self.value(*gamma);
                if let Some(gg) = self.slot(grads, *gamma) {
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *beta) {
                    for gr in g.chunks(d) {
                        add_into(gb, gr);
                    }
                }
                if let Some(gx) = self.slot(grads, *x) {
                    let mut dh = vec![0.0; d];
                    for (r, rs) in rstd.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..d {
                            dh[j] = gr[j] * gam[j];
                            mean_dh += dh[j];
                            mean_dh_h += dh[j] * hr[j];
                        }
                        mean_dh /= d as f64;
                        mean_dh_h /= d as f64;
                        let out = &mut gx[r * d..(r + 1) * d];
                        for j in 0..d {
                            out[j] += rs * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            } => {
                if let Some(gx) = self.slot(grads, *x) {
                    let y = &node.value;
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let at = |j: usize| o * len * inner + j * inner + i;
                            let s: f64 = (0..*len).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..*len {
                                gx[at(j)] += y[at(j)] * (g[at(j)] - s);
                            }
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                picks,
                probs,
                scale,
            } => {
                let v = self.shape(*logits)[1];
                if let Some(gl) = self.slot(grads, *logits) {
                    let c = g[0] * scale;
                    for (k, &(row, t)) in picks.iter().enumerate() {
                        let out = &mut gl[row * v..(row + 1) * v];
                        for j in 0..v {
                            out[j] += c * probs[k * v + j];
                        }
                        out[t] -= c;
                    }
                }
            }
            Op::CosineRows {
                a,
                b,
                dots,
                sq_a,
                sq_b,
            } => {
                let n = dots.len();
                let d = self.value(*a).len() / n;
                for (this, other, sq_this) in [(*a, *b, sq_a), (*b, *a, sq_b)] {
                    let Some(gt) = self.slot(grads, this) else {
                        continue;
                    };
                    let xt = self.value(this);
                    let xo = self.value(other);
                    for r in 0..n {
                        let norm = libm::sqrt(sq_a[r] * sq_b[r]);
                        let cos = dots[r] / norm;
                        // d(1 - cos)/dt = -(o/(|t||o|) - cos * t/|t|²)
                        for j in 0..d {
                            let t = xt[r * d + j];
                            let o = xo[r * d + j];
                            gt[r * d + j] -= g[r] * (o / norm - cos * t / sq_this[r]);
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(gp) = self.slot(grads, p) {
                        add_into(gp, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let rows = node.shape[0];
                let total = node.shape[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if let Some(gp) = self.slot(grads, p) {
                        for i in 0..rows {
                            add_into(
                                &mut gp[i * w..(i + 1) * w],
                                &g[i * total + offset..i * total + offset + w],
                            );
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                let len = node.shape[1];
                if let Some(gx) = self.slot(grads, *x) {
                    for i in 0..r {
                        add_into(
                            &mut gx[i * c + start..i * c + start + len],
                            &g[i * len..(i + 1) * len],
                        );
                    }
                }
            }
            Op::GatherRows { table, ids } => {
                let d = self.shape(*table)[1];
                if let Some(gt) = self.slot(grads, *table) {
                    for (k, &i) in ids.iter().enumerate() {
                        add_into(&mut gt[i * d..(i + 1) * d], &g[k * d..(k + 1) * d]);
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let c = g[0] / ga.len() as f64;
                    ga.iter_mut().for_each(|x| *x += c);
                }
            }
        }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut [f64]> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
