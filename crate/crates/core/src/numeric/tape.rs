//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every operation of one forward pass. Leaves are either
//! constants or trainable parameters identified by a slot index; after
//! [`Tape::backward`] the gradient of a scalar output is accumulated into a
//! caller-provided slice of tensors, one per slot.
//!
//! Shape errors inside recorded ops are programming errors and panic.
//! Non-finite values are recorded on the tape and surface as an error from
//! [`Tape::backward`] or [`Tape::check`].

use std::collections::HashMap;

use super::tensor::{log_sum_exp, matmul_into, sigmoid, softmax_in_place, Tensor};
use super::NumericError;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(usize),
    Gather { slot: usize, rows: Vec<usize> },
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulScalar(Var, Var),
    Sigmoid(Var),
    Sqrt(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Transpose(Var),
    MeanRows(Var),
    MeanCols(Var),
    SumAll(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
    poisoned: Option<String>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// Fails if any recorded value was non-finite.
    pub fn check(&self) -> Result<(), NumericError> {
        match &self.poisoned {
            None => Ok(()),
            Some(msg) => Err(NumericError::NonFinite(msg.clone())),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        if self.poisoned.is_none() && !value.is_finite() {
            self.poisoned = Some(format!("node {} ({})", self.nodes.len(), op_name(&op)));
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// Trainable leaf for `slot`. Repeated calls return the same node.
    pub fn param(&mut self, slot: usize, value: &Tensor) -> Var {
        if let Some(&v) = self.params.get(&slot) {
            return v;
        }
        let v = self.push(value.clone(), Op::Param(slot));
        self.params.insert(slot, v);
        v
    }

    /// Rows of an embedding table; the gradient is scattered back into `slot`.
    pub fn gather(&mut self, slot: usize, table: &Tensor, rows: &[usize]) -> Var {
        let cols = table.cols();
        let mut out = Tensor::zeros(rows.len(), cols);
        for (i, &r) in rows.iter().enumerate() {
            assert!(r < table.rows(), "gather row {r} outside table of {} rows", table.rows());
            out.row_mut(i).copy_from_slice(table.row(r));
        }
        self.push(out, Op::Gather { slot, rows: rows.to_vec() })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols(), bv.rows(), "matmul {:?} x {:?}", av.shape(), bv.shape());
        let mut out = Tensor::zeros(av.rows(), bv.cols());
        matmul_into(av, bv, &mut out);
        self.push(out, Op::MatMul(a, b))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols(), bv.cols(), "matmul_nt {:?} x {:?}^T", av.shape(), bv.shape());
        let mut out = Tensor::zeros(av.rows(), bv.rows());
        for i in 0..av.rows() {
            let ar = av.row(i);
            for j in 0..bv.rows() {
                out.set(i, j, dot(ar, bv.row(j)));
            }
        }
        self.push(out, Op::MatMulNT(a, b))
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise {}", op_name(&op));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), data).expect("shape");
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Adds the `1 x cols` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(r));
        assert!(rv.rows() == 1 && rv.cols() == av.cols(), "add_row {:?} + {:?}", av.shape(), rv.shape());
        let mut out = av.clone();
        let row = rv.row(0).to_vec();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&row) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, r))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v + c);
        self.push(out, Op::AddConst(a))
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_const(neg, 1.0)
    }

    /// `s * a` with `s` a `1 x 1` node.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.value(s);
        assert_eq!(sv.shape(), (1, 1), "mul_scalar expects a 1x1 scale");
        let c = sv.item();
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::MulScalar(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::sqrt);
        self.push(out, Op::Sqrt(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows col mismatch");
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        let out = Tensor::from_vec(rows, cols, data).expect("shape");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let av = self.value(a);
        assert!(start <= end && end <= av.rows(), "slice_rows {start}..{end} of {}", av.rows());
        let data = av.data()[start * av.cols()..end * av.cols()].to_vec();
        let out = Tensor::from_vec(end - start, av.cols(), data).expect("shape");
        self.push(out, Op::SliceRows(a, start))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let av = self.value(a);
        assert!(start <= end && end <= av.cols(), "slice_cols {start}..{end} of {}", av.cols());
        let mut out = Tensor::zeros(av.rows(), end - start);
        for r in 0..av.rows() {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..end]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    /// Average over rows: `n x m -> 1 x m`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        assert!(av.rows() > 0, "mean_rows of an empty tensor");
        let mut out = Tensor::zeros(1, av.cols());
        for r in 0..av.rows() {
            for (o, v) in out.row_mut(0).iter_mut().zip(av.row(r)) {
                *o += v;
            }
        }
        let n = av.rows() as f64;
        out.data_mut().iter_mut().for_each(|v| *v /= n);
        self.push(out, Op::MeanRows(a))
    }

    /// Average over columns: `n x m -> n x 1`.
    pub fn mean_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        assert!(av.cols() > 0, "mean_cols of an empty tensor");
        let m = av.cols() as f64;
        let data = (0..av.rows()).map(|r| av.row(r).iter().sum::<f64>() / m).collect();
        let out = Tensor::from_vec(av.rows(), 1, data).expect("shape");
        self.push(out, Op::MeanCols(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    /// `sum_i w_i * (logsumexp(z_i) - z_i[y_i])` over the rows of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len(), "cross_entropy targets");
        assert_eq!(lv.rows(), weights.len(), "cross_entropy weights");
        let mut total = 0.0;
        for (r, (&y, &w)) in targets.iter().zip(weights).enumerate() {
            let row = lv.row(r);
            assert!(y < row.len(), "cross_entropy target {y} out of range");
            if w != 0.0 {
                total += w * (log_sum_exp(row) - row[y]);
            }
        }
        self.push(
            Tensor::scalar(total),
            Op::CrossEntropy { logits, targets: targets.to_vec(), weights: weights.to_vec() },
        )
    }

    /// Accumulates `scale * d(output)/d(slot)` into `grads[slot]`.
    ///
    /// `output` must be `1 x 1`.
    pub fn backward(&self, output: Var, scale: f64, grads: &mut [Tensor]) -> Result<(), NumericError> {
        self.check()?;
        assert_eq!(self.value(output).shape(), (1, 1), "backward from a non-scalar node");
        let mut adj: Vec<Option<Tensor>> = (0..=output.0).map(|_| None).collect();
        adj[output.0] = Some(Tensor::scalar(scale));

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(slot) => grads[*slot].add_assign_scaled(&g, 1.0),
                Op::Gather { slot, rows } => {
                    let table = &mut grads[*slot];
                    for (i, &r) in rows.iter().enumerate() {
                        for (t, v) in table.row_mut(r).iter_mut().zip(g.row(i)) {
                            *t += v;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    // dA = G B^T
                    let mut da = Tensor::zeros(av.rows(), av.cols());
                    for i in 0..g.rows() {
                        let gr = g.row(i);
                        for k in 0..bv.rows() {
                            da.set(i, k, dot(gr, bv.row(k)));
                        }
                    }
                    // dB = A^T G
                    let mut db = Tensor::zeros(bv.rows(), bv.cols());
                    for i in 0..av.rows() {
                        let gr = g.row(i);
                        for (k, &aik) in av.row(i).iter().enumerate() {
                            if aik == 0.0 {
                                continue;
                            }
                            for (d, gv) in db.row_mut(k).iter_mut().zip(gr) {
                                *d += aik * gv;
                            }
                        }
                    }
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::MatMulNT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    // C = A B^T: dA = G B, dB = G^T A
                    let mut da = Tensor::zeros(av.rows(), av.cols());
                    matmul_into(&g, bv, &mut da);
                    let mut db = Tensor::zeros(bv.rows(), bv.cols());
                    for i in 0..g.rows() {
                        let ar = av.row(i);
                        for (j, &gij) in g.row(i).iter().enumerate() {
                            if gij == 0.0 {
                                continue;
                            }
                            for (d, x) in db.row_mut(j).iter_mut().zip(ar) {
                                *d += gij * x;
                            }
                        }
                    }
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.map(|v| -v));
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = hadamard(&g, self.value(*b));
                    let db = hadamard(&g, self.value(*a));
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Div(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut da = g.clone();
                    let mut db = g;
                    for i in 0..da.len() {
                        let (x, y) = (av.data()[i], bv.data()[i]);
                        da.data_mut()[i] /= y;
                        db.data_mut()[i] *= -x / (y * y);
                    }
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::AddRow(a, r) => {
                    let mut dr = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (d, v) in dr.row_mut(0).iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut adj, *r, dr);
                    accumulate(&mut adj, *a, g);
                }
                Op::Scale(a, c) => accumulate(&mut adj, *a, g.map(|v| v * c)),
                Op::AddConst(a) => accumulate(&mut adj, *a, g),
                Op::MulScalar(a, s) => {
                    let c = self.value(*s).item();
                    let ds = dot(g.data(), self.value(*a).data());
                    accumulate(&mut adj, *s, Tensor::scalar(ds));
                    accumulate(&mut adj, *a, g.map(|v| v * c));
                }
                Op::Sigmoid(a) => {
                    let mut da = g;
                    for (d, &y) in da.data_mut().iter_mut().zip(node.value.data()) {
                        *d *= y * (1.0 - y);
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::Sqrt(a) => {
                    let mut da = g;
                    for (d, &y) in da.data_mut().iter_mut().zip(node.value.data()) {
                        *d *= if y > 0.0 { 0.5 / y } else { 0.0 };
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut da = g;
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let inner = dot(da.row(r), yr);
                        for (d, &p) in da.row_mut(r).iter_mut().zip(yr) {
                            *d = p * (*d - inner);
                        }
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        let mut dp = Tensor::zeros(g.rows(), pc);
                        for r in 0..g.rows() {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + pc]);
                        }
                        offset += pc;
                        accumulate(&mut adj, p, dp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pr = self.value(p).rows();
                        let data = g.data()[offset * g.cols()..(offset + pr) * g.cols()].to_vec();
                        offset += pr;
                        accumulate(&mut adj, p, Tensor::from_vec(pr, g.cols(), data).expect("shape"));
                    }
                }
                Op::SliceRows(a, start) => {
                    let av = self.value(*a);
                    let mut da = Tensor::zeros(av.rows(), av.cols());
                    let c = av.cols();
                    da.data_mut()[start * c..(start + g.rows()) * c].copy_from_slice(g.data());
                    accumulate(&mut adj, *a, da);
                }
                Op::SliceCols(a, start) => {
                    let av = self.value(*a);
                    let mut da = Tensor::zeros(av.rows(), av.cols());
                    for r in 0..g.rows() {
                        da.row_mut(r)[*start..start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::Transpose(a) => accumulate(&mut adj, *a, g.transpose()),
                Op::MeanRows(a) => {
                    let av = self.value(*a);
                    let n = av.rows() as f64;
                    let mut da = Tensor::zeros(av.rows(), av.cols());
                    for r in 0..av.rows() {
                        for (d, v) in da.row_mut(r).iter_mut().zip(g.row(0)) {
                            *d = v / n;
                        }
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::MeanCols(a) => {
                    let av = self.value(*a);
                    let m = av.cols() as f64;
                    let mut da = Tensor::zeros(av.rows(), av.cols());
                    for r in 0..av.rows() {
                        let v = g.get(r, 0) / m;
                        da.row_mut(r).iter_mut().for_each(|d| *d = v);
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::SumAll(a) => {
                    let av = self.value(*a);
                    accumulate(&mut adj, *a, Tensor::filled(av.rows(), av.cols(), g.item()));
                }
                Op::CrossEntropy { logits, targets, weights } => {
                    let lv = self.value(*logits);
                    let upstream = g.item();
                    let mut dl = Tensor::zeros(lv.rows(), lv.cols());
                    for (r, (&y, &w)) in targets.iter().zip(weights).enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        let row = dl.row_mut(r);
                        row.copy_from_slice(lv.row(r));
                        softmax_in_place(row);
                        row[y] -= 1.0;
                        row.iter_mut().for_each(|v| *v *= w * upstream);
                    }
                    accumulate(&mut adj, *logits, dl);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign_scaled(&g, 1.0),
        slot @ None => *slot = Some(g),
    }
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("shape")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Constant => "constant",
        Op::Param(_) => "param",
        Op::Gather { .. } => "gather",
        Op::MatMul(..) => "matmul",
        Op::MatMulNT(..) => "matmul_nt",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Div(..) => "div",
        Op::AddRow(..) => "add_row",
        Op::Scale(..) => "scale",
        Op::AddConst(..) => "add_const",
        Op::MulScalar(..) => "mul_scalar",
        Op::Sigmoid(..) => "sigmoid",
        Op::Sqrt(..) => "sqrt",
        Op::SoftmaxRows(..) => "softmax_rows",
        Op::ConcatCols(..) => "concat_cols",
        Op::ConcatRows(..) => "concat_rows",
        Op::SliceRows(..) => "slice_rows",
        Op::SliceCols(..) => "slice_cols",
        Op::Transpose(..) => "transpose",
        Op::MeanRows(..) => "mean_rows",
        Op::MeanCols(..) => "mean_cols",
        Op::SumAll(..) => "sum_all",
        Op::CrossEntropy { .. } => "cross_entropy",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::gradcheck::{central_difference, max_relative_error};

    fn mat(rows: usize, cols: usize, seed: u64) -> Tensor {
        // small deterministic pseudo-random fill
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let data = (0..rows * cols)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Tensor::from_vec(rows, cols, data).unwrap()
    }

    /// Builds a scalar from two parameter slots exercising every op once.
    fn composite(tape: &mut Tape, p: &[Tensor]) -> Var {
        let a = tape.param(0, &p[0]); // 3x4
        let b = tape.param(1, &p[1]); // 4x2
        let r = tape.param(2, &p[2]); // 1x2
        let s = tape.param(3, &p[3]); // 1x1
        let table = tape.gather(4, &p[4], &[2, 0, 2]); // 3x4
        let ab = tape.matmul(a, b);
        let ab = tape.add_row(ab, r);
        let sm = tape.softmax_rows(ab);
        let nt = tape.matmul_nt(a, table);
        let sig = tape.sigmoid(nt);
        let bias = tape.mul_scalar(sig, s);
        let cat = tape.concat_cols(&[sm, bias]);
        let top = tape.slice_rows(cat, 0, 2);
        let left = tape.slice_cols(top, 1, 4);
        let t = tape.transpose(left);
        let m1 = tape.mean_rows(t);
        let m2 = tape.mean_cols(t);
        let m2t = tape.transpose(m2);
        let m2s = tape.slice_cols(m2t, 1, 3);
        let mixed = tape.concat_rows(&[m1, m2s]);
        let q = tape.mul(mixed, mixed);
        let q = tape.add_const(q, 1.0);
        let root = tape.sqrt(q);
        let ratio = tape.div(root, q);
        let om = tape.one_minus(ratio);
        let diff = tape.sub(om, mixed);
        let sc = tape.scale(diff, 0.7);
        let added = tape.add(sc, mixed);
        let logits = tape.concat_cols(&[added, mixed]);
        let ce = tape.cross_entropy(logits, &[1, 3], &[0.6, 1.4]);
        let total = tape.sum_all(added);
        tape.add(ce, total)
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let params = vec![mat(3, 4, 1), mat(4, 2, 2), mat(1, 2, 3), mat(1, 1, 4), mat(3, 4, 5)];
        let mut tape = Tape::new();
        let out = composite(&mut tape, &params);
        let mut grads: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        tape.backward(out, 1.0, &mut grads).unwrap();

        for slot in 0..params.len() {
            let numeric = central_difference(
                |x| {
                    let mut p = params.clone();
                    p[slot] = x.clone();
                    let mut t = Tape::new();
                    let o = composite(&mut t, &p);
                    t.scalar(o)
                },
                &params[slot],
                1e-5,
            )
            .unwrap();
            let err = max_relative_error(&grads[slot], &numeric);
            assert!(err < 1e-6, "slot {slot}: relative error {err}");
        }
        // unused table row gets zero gradient
        assert!(grads[4].row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn repeated_param_requests_share_a_node() {
        let p = Tensor::scalar(2.0);
        let mut tape = Tape::new();
        let a = tape.param(0, &p);
        let b = tape.param(0, &p);
        assert_eq!(a, b);
        let sq = tape.mul(a, b);
        let mut g = vec![Tensor::zeros(1, 1)];
        tape.backward(sq, 1.0, &mut g).unwrap();
        assert_eq!(g[0].item(), 4.0);
    }

    #[test]
    fn non_finite_values_poison_the_tape() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::scalar(-1.0));
        let r = tape.sqrt(a);
        let s = tape.sum_all(r);
        let mut g: Vec<Tensor> = vec![];
        assert!(matches!(tape.check(), Err(NumericError::NonFinite(_))));
        assert!(tape.backward(s, 1.0, &mut g).is_err());
    }
}
