//! Reverse-mode tape.
//!
//! Every primitive evaluates eagerly, checks its output for NaN/Inf and
//! appends a record holding the indices of its inputs. Records are appended
//! in evaluation order, so the tape is always topologically sorted and
//! `backward` is a single reverse sweep.

use super::tensor::{gemm, Tensor};
use super::AutodiffError;

/// Norm guard added under every square root in the normalizing primitives.
pub const NORM_EPS: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    ConcatCols(Var, Var),
    RowMean(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    L2NormalizeRows(Var),
    CosineRows(Var, Var),
    Pow(Var, f64),
    Sum(Var),
    Mean(Var),
    GatherRows(Var, Vec<usize>),
    ScatterMeanRows(Var, Vec<usize>),
    ReplaceRows(Var, Var, Vec<usize>),
    BceWithLogits(Var, Vec<f64>),
    StackRows(Vec<Var>),
}

#[derive(Debug)]
struct Record {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    records: Vec<Record>,
}

/// Gradients produced by [`Tape::backward`], indexed by leaf handle.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf. Leaves that did not influence the loss get `None`.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, materialized as zeros if it did not influence the loss.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), AutodiffError> {
    if a.shape() != b.shape() {
        return Err(AutodiffError::ShapeMismatch {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.records[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.records[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.records[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.records.push(Record {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.records.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, op: &'static str, value: Tensor, kind: Op) -> Result<Var, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op });
        }
        let requires_grad = match &kind {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::AddRow(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::ConcatCols(a, b)
            | Op::CosineRows(a, b)
            | Op::ReplaceRows(a, b, _) => self.requires_grad(*a) || self.requires_grad(*b),
            Op::Affine(a, _)
            | Op::RowMean(a)
            | Op::LeakyRelu(a, _)
            | Op::Sigmoid(a)
            | Op::L2NormalizeRows(a)
            | Op::Pow(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::GatherRows(a, _)
            | Op::ScatterMeanRows(a, _)
            | Op::BceWithLogits(a, _) => self.requires_grad(*a),
            Op::StackRows(parts) => parts.iter().any(|p| self.requires_grad(*p)),
        };
        self.records.push(Record {
            value,
            op: kind,
            requires_grad,
        });
        Ok(Var(self.records.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let out = gemm(av, false, bv, false);
        self.push("matmul", out, Op::MatMul(a, b))
    }

    /// Elementwise sum. A `1 x c` right operand is broadcast over the rows of
    /// an `r x c` left operand (bias addition).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            let out = av.zip_map(bv, |x, y| x + y);
            return self.push("add", out, Op::Add(a, b));
        }
        if bv.rows() == 1 && bv.cols() == av.cols() {
            let mut out = av.clone();
            for r in 0..out.rows() {
                for (o, y) in out.row_mut(r).iter_mut().zip(bv.data()) {
                    *o += y;
                }
            }
            return self.push("add", out, Op::AddRow(a, b));
        }
        Err(AutodiffError::ShapeMismatch {
            op: "add",
            lhs: av.shape(),
            rhs: bv.shape(),
        })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same("sub", av, bv)?;
        let out = av.zip_map(bv, |x, y| x - y);
        self.push("sub", out, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same("mul", av, bv)?;
        let out = av.zip_map(bv, |x, y| x * y);
        self.push("mul", out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, AutodiffError> {
        self.affine(a, factor, 0.0)
    }

    /// `factor * a + offset`, elementwise.
    pub fn affine(&mut self, a: Var, factor: f64, offset: f64) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(|x| factor * x + offset);
        self.push("affine", out, Op::Affine(a, factor))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat_cols",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let cols = av.cols() + bv.cols();
        let mut data = Vec::with_capacity(av.rows() * cols);
        for r in 0..av.rows() {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let out = Tensor::from_vec(av.rows(), cols, data)?;
        self.push("concat_cols", out, Op::ConcatCols(a, b))
    }

    /// Mean over rows: `r x c -> 1 x c`.
    pub fn row_mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if av.rows() == 0 {
            return Err(AutodiffError::Empty { op: "row_mean" });
        }
        let out = av.column_mean();
        self.push("row_mean", out, Op::RowMean(a))
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: f64) -> Result<Var, AutodiffError> {
        let out = self
            .value(a)
            .map(|x| if x > 0.0 { x } else { alpha * x });
        self.push("leaky_relu", out, Op::LeakyRelu(a, alpha))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(a))
    }

    /// Divide each row by `sqrt(|row|^2 + eps)`.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        let mut out = av.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let s = (row.iter().map(|v| v * v).sum::<f64>() + NORM_EPS).sqrt();
            row.iter_mut().for_each(|v| *v /= s);
        }
        self.push("l2_normalize_rows", out, Op::L2NormalizeRows(a))
    }

    /// Row-wise cosine similarity: `r x c, r x c -> r x 1`.
    pub fn cosine_similarity_rows(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same("cosine_similarity_rows", av, bv)?;
        let data = (0..av.rows())
            .map(|r| {
                let (x, y) = (av.row(r), bv.row(r));
                let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
                let nx = (x.iter().map(|v| v * v).sum::<f64>() + NORM_EPS).sqrt();
                let ny = (y.iter().map(|v| v * v).sum::<f64>() + NORM_EPS).sqrt();
                dot / (nx * ny)
            })
            .collect();
        let out = Tensor::from_vec(av.rows(), 1, data)?;
        self.push("cosine_similarity_rows", out, Op::CosineRows(a, b))
    }

    /// Elementwise power with a constant exponent.
    pub fn pow(&mut self, a: Var, exponent: f64) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(|x| x.powf(exponent));
        self.push("pow", out, Op::Pow(a, exponent))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if av.is_empty() {
            return Err(AutodiffError::Empty { op: "mean" });
        }
        let s = av.data().iter().sum::<f64>() / av.len() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(a))
    }

    /// Select rows by index (with repetition allowed).
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        let mut out = Tensor::zeros(index.len(), av.cols());
        for (i, &src) in index.iter().enumerate() {
            if src >= av.rows() {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "gather_rows",
                    index: src,
                    rows: av.rows(),
                });
            }
            out.row_mut(i).copy_from_slice(av.row(src));
        }
        self.push("gather_rows", out, Op::GatherRows(a, index.to_vec()))
    }

    /// Average rows into `segments` buckets: row `i` of the input lands in
    /// bucket `segment[i]`. Empty buckets are zero.
    pub fn scatter_mean_rows(
        &mut self,
        a: Var,
        segment: &[usize],
        segments: usize,
    ) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if segment.len() != av.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "scatter_mean_rows",
                lhs: av.shape(),
                rhs: (segment.len(), 1),
            });
        }
        let mut counts = vec![0usize; segments];
        for &s in segment {
            if s >= segments {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "scatter_mean_rows",
                    index: s,
                    rows: segments,
                });
            }
            counts[s] += 1;
        }
        let mut out = Tensor::zeros(segments, av.cols());
        for (i, &s) in segment.iter().enumerate() {
            let w = 1.0 / counts[s] as f64;
            for (o, v) in out.row_mut(s).iter_mut().zip(av.row(i)) {
                *o += w * v;
            }
        }
        self.push(
            "scatter_mean_rows",
            out,
            Op::ScatterMeanRows(a, segment.to_vec()),
        )
    }

    /// Copy of `a` with the listed rows overwritten by the `1 x c` `token`.
    pub fn replace_rows(&mut self, a: Var, token: Var, rows: &[usize]) -> Result<Var, AutodiffError> {
        let (av, tv) = (self.value(a), self.value(token));
        if tv.rows() != 1 || tv.cols() != av.cols() {
            return Err(AutodiffError::ShapeMismatch {
                op: "replace_rows",
                lhs: av.shape(),
                rhs: tv.shape(),
            });
        }
        let mut rows = rows.to_vec();
        rows.sort_unstable();
        rows.dedup();
        let mut out = av.clone();
        for &r in &rows {
            if r >= av.rows() {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "replace_rows",
                    index: r,
                    rows: av.rows(),
                });
            }
            out.row_mut(r).copy_from_slice(tv.data());
        }
        self.push("replace_rows", out, Op::ReplaceRows(a, token, rows))
    }

    /// Per-row binary cross-entropy on logits against soft targets:
    /// `softplus(x) - t * x`, evaluated stably. Input must be `r x 1`.
    pub fn bce_with_logits(&mut self, a: Var, targets: &[f64]) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if av.cols() != 1 || av.rows() != targets.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "bce_with_logits",
                lhs: av.shape(),
                rhs: (targets.len(), 1),
            });
        }
        let data = av
            .data()
            .iter()
            .zip(targets)
            .map(|(&x, &t)| x.max(0.0) - t * x + (-x.abs()).exp().ln_1p())
            .collect();
        let out = Tensor::from_vec(targets.len(), 1, data)?;
        self.push("bce_with_logits", out, Op::BceWithLogits(a, targets.to_vec()))
    }

    /// Concatenate tensors of equal width top to bottom.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = parts.first().ok_or(AutodiffError::Empty { op: "stack_rows" })?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = self.value(*p);
            if v.cols() != cols {
                return Err(AutodiffError::ShapeMismatch {
                    op: "stack_rows",
                    lhs: self.value(*first).shape(),
                    rhs: v.shape(),
                });
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        self.push("stack_rows", out, Op::StackRows(parts.to_vec()))
    }

    /// Back-propagate from a scalar loss. The tape is cleared afterwards;
    /// all handles issued before the call become invalid.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, AutodiffError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(AutodiffError::NotScalar { shape });
        }
        let n = self.records.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let rec = &self.records[idx];
            if !rec.requires_grad {
                continue;
            }
            if let Op::Leaf = rec.op {
                grads[idx] = Some(g);
                continue;
            }
            for (target, contrib) in self.local_grads(idx, &g) {
                if !self.records[target.0].requires_grad {
                    continue;
                }
                match &mut grads[target.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }

        // Only leaf gradients survive the sweep.
        for (i, rec) in self.records.iter().enumerate() {
            if !matches!(rec.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        self.records.clear();
        Ok(Gradients { grads })
    }

    /// Vector-Jacobian products of record `idx` for upstream gradient `g`.
    fn local_grads(&self, idx: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let rec = &self.records[idx];
        let y = &rec.value;
        match &rec.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut out = Vec::with_capacity(2);
                if self.requires_grad(*a) {
                    out.push((*a, gemm(g, false, bv, true)));
                }
                if self.requires_grad(*b) {
                    out.push((*b, gemm(av, true, g, false)));
                }
                out
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::AddRow(a, b) => vec![(*a, g.clone()), (*b, g.column_mean().map(|v| v * g.rows() as f64))],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                vec![
                    (*a, g.zip_map(bv, |gi, bi| gi * bi)),
                    (*b, g.zip_map(av, |gi, ai| gi * ai)),
                ]
            }
            Op::Affine(a, factor) => vec![(*a, g.map(|v| v * factor))],
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let mut ga = Tensor::zeros(g.rows(), ca);
                let mut gb = Tensor::zeros(g.rows(), cb);
                for r in 0..g.rows() {
                    ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::RowMean(a) => {
                let av = self.value(*a);
                let n = av.rows() as f64;
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    for (o, v) in ga.row_mut(r).iter_mut().zip(g.data()) {
                        *o = v / n;
                    }
                }
                vec![(*a, ga)]
            }
            Op::LeakyRelu(a, alpha) => {
                let av = self.value(*a);
                vec![(*a, g.zip_map(av, |gi, x| if x > 0.0 { gi } else { alpha * gi }))]
            }
            Op::Sigmoid(a) => vec![(*a, g.zip_map(y, |gi, s| gi * s * (1.0 - s)))],
            Op::L2NormalizeRows(a) => {
                let av = self.value(*a);
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let x = av.row(r);
                    let gr = g.row(r);
                    let s = (x.iter().map(|v| v * v).sum::<f64>() + NORM_EPS).sqrt();
                    let xg: f64 = x.iter().zip(gr).map(|(p, q)| p * q).sum();
                    let s3 = s * s * s;
                    for ((o, &xi), &gi) in ga.row_mut(r).iter_mut().zip(x).zip(gr) {
                        *o = gi / s - xi * xg / s3;
                    }
                }
                vec![(*a, ga)]
            }
            Op::CosineRows(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                for r in 0..av.rows() {
                    let (x, z) = (av.row(r), bv.row(r));
                    let nx2 = x.iter().map(|v| v * v).sum::<f64>() + NORM_EPS;
                    let nz2 = z.iter().map(|v| v * v).sum::<f64>() + NORM_EPS;
                    let (nx, nz) = (nx2.sqrt(), nz2.sqrt());
                    let c = y.get(r, 0);
                    let gr = g.get(r, 0);
                    for (k, o) in ga.row_mut(r).iter_mut().enumerate() {
                        *o = gr * (z[k] / (nx * nz) - c * x[k] / nx2);
                    }
                    for (k, o) in gb.row_mut(r).iter_mut().enumerate() {
                        *o = gr * (x[k] / (nx * nz) - c * z[k] / nz2);
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Pow(a, p) => {
                let av = self.value(*a);
                vec![(*a, g.zip_map(av, |gi, x| gi * p * x.powf(p - 1.0)))]
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                vec![(*a, Tensor::filled(r, c, g.item()))]
            }
            Op::Mean(a) => {
                let (r, c) = self.shape(*a);
                vec![(*a, Tensor::filled(r, c, g.item() / (r * c) as f64))]
            }
            Op::GatherRows(a, index) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for (i, &src) in index.iter().enumerate() {
                    for (o, v) in ga.row_mut(src).iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                vec![(*a, ga)]
            }
            Op::ScatterMeanRows(a, segment) => {
                let (r, c) = self.shape(*a);
                let mut counts = vec![0usize; g.rows()];
                for &s in segment {
                    counts[s] += 1;
                }
                let mut ga = Tensor::zeros(r, c);
                for (i, &s) in segment.iter().enumerate() {
                    let w = 1.0 / counts[s] as f64;
                    for (o, v) in ga.row_mut(i).iter_mut().zip(g.row(s)) {
                        *o = w * v;
                    }
                }
                vec![(*a, ga)]
            }
            Op::ReplaceRows(a, token, rows) => {
                let mut ga = g.clone();
                let mut gt = Tensor::zeros(1, g.cols());
                for &r in rows {
                    for (o, v) in gt.data_mut().iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                    ga.row_mut(r).iter_mut().for_each(|v| *v = 0.0);
                }
                vec![(*a, ga), (*token, gt)]
            }
            Op::BceWithLogits(a, targets) => {
                let av = self.value(*a);
                let data = av
                    .data()
                    .iter()
                    .zip(targets)
                    .zip(g.data())
                    .map(|((&x, &t), &gi)| gi * (sigmoid(x) - t))
                    .collect();
                vec![(*a, Tensor::from_vec(av.rows(), 1, data).expect("shape"))]
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|p| {
                        let (r, c) = self.shape(*p);
                        let slice = g.data()[offset * c..(offset + r) * c].to_vec();
                        offset += r;
                        (*p, Tensor::from_vec(r, c, slice).expect("shape"))
                    })
                    .collect()
            }
        }
    }
}
