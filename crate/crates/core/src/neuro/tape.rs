//! Reverse-mode differentiation over a recorded tape of matrix ops.
//!
//! Each op appends a node holding its forward value. [`Tape::backward`]
//! walks the nodes in reverse and accumulates adjoints. Only the ops the
//! gesture pipeline needs are provided.

use super::params::{ModelParameters, ParamId};
use super::tensor::{matmul_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Column(Var, usize),
    /// Channel-wise max per row segment; `argmax[s * cols + c]` is the
    /// winning input row.
    SegmentMax(Var, Vec<usize>),
    SumRows(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LogSumExp(Var),
    SumAll(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Option<Var>>,
}

/// Adjoints of every node, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    for (o, &x) in out.iter_mut().zip(row) {
        *o = x - lse;
    }
}

/// Row-wise softmax of a plain tensor.
pub fn softmax(t: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(t.rows(), t.cols());
    for r in 0..t.rows() {
        softmax_row(t.row(r), out.row_mut(r));
    }
    out
}

/// Row-wise log-softmax of a plain tensor.
pub fn log_softmax(t: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(t.rows(), t.cols());
    for r in 0..t.rows() {
        log_softmax_row(t.row(r), out.row_mut(r));
    }
    out
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A constant input (receives a gradient but is not a parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// The node bound to a model parameter; created once per tape.
    pub fn param(&mut self, params: &ModelParameters, id: ParamId) -> Var {
        if id.0 >= self.params.len() {
            self.params.resize(id.0 + 1, None);
        }
        if let Some(v) = self.params[id.0] {
            return v;
        }
        let v = self.push(params.tensor(id).clone(), Op::Param);
        self.params[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// Adds a `1 x m` row to every row of an `n x m` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(Error::Shape(format!(
                "bias {:?} does not broadcast over {:?}",
                b.shape(),
                x.shape()
            )));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddRow(a, bias)))
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "{:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let mut out = self.value(a).clone();
        out.add_scaled(self.value(b), 1.0);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let mut out = self.value(a).clone();
        out.add_scaled(self.value(b), -1.0);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v += s);
        self.push(out, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v = relu(*v));
        self.push(out, Op::Relu(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            return Err(Error::Shape("concat_cols row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let src = self.value(*p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        if parts.iter().any(|p| self.value(*p).cols() != cols) {
            return Err(Error::Shape("concat_rows column counts differ".into()));
        }
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let rows = data.len() / cols.max(1);
        let out = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let src = self.value(a);
        if let Some(bad) = index.iter().find(|&&i| i >= src.rows()) {
            return Err(Error::Shape(format!("row {bad} out of range")));
        }
        let mut out = Tensor::zeros(index.len(), src.cols());
        for (r, &i) in index.iter().enumerate() {
            out.row_mut(r).copy_from_slice(src.row(i));
        }
        Ok(self.push(out, Op::GatherRows(a, index.to_vec())))
    }

    /// Column `c` as an `n x 1` matrix.
    pub fn column(&mut self, a: Var, c: usize) -> Result<Var> {
        let src = self.value(a);
        if c >= src.cols() {
            return Err(Error::Shape(format!("column {c} out of range")));
        }
        let data = (0..src.rows()).map(|r| src.get(r, c)).collect();
        let out = Tensor::from_vec(src.rows(), 1, data)?;
        Ok(self.push(out, Op::Column(a, c)))
    }

    /// Channel-wise max over row segments `offsets[s]..offsets[s + 1]`.
    /// Ties go to the lowest row index.
    pub fn segment_max(&mut self, a: Var, offsets: &[usize]) -> Result<Var> {
        let src = self.value(a);
        let cols = src.cols();
        let segs = offsets.len().saturating_sub(1);
        if offsets.last().copied() != Some(src.rows()) || offsets.first() != Some(&0) {
            return Err(Error::Shape("segment offsets do not cover the input".into()));
        }
        let mut out = Tensor::zeros(segs, cols);
        let mut argmax = vec![0; segs * cols];
        for s in 0..segs {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            if lo >= hi {
                return Err(Error::Shape(format!("segment {s} is empty")));
            }
            let best = &mut argmax[s * cols..(s + 1) * cols];
            best.iter_mut().for_each(|b| *b = lo);
            let orow = out.row_mut(s);
            orow.copy_from_slice(src.row(lo));
            for r in lo + 1..hi {
                for (c, &v) in src.row(r).iter().enumerate() {
                    if v > orow[c] {
                        orow[c] = v;
                        best[c] = r;
                    }
                }
            }
        }
        Ok(self.push(out, Op::SegmentMax(a, argmax)))
    }

    /// Channel-wise max over all rows, giving a `1 x m` row.
    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        let rows = self.value(a).rows();
        self.segment_max(a, &[0, rows])
    }

    /// Column sums as a `1 x m` row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let mut out = Tensor::zeros(1, src.cols());
        for r in 0..src.rows() {
            for (o, &v) in out.data_mut().iter_mut().zip(src.row(r)) {
                *o += v;
            }
        }
        self.push(out, Op::SumRows(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax(self.value(a));
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let out = log_softmax(self.value(a));
        self.push(out, Op::LogSoftmaxRows(a))
    }

    /// `log(sum(exp(a)))` over every element.
    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        let d = self.value(a).data();
        let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let v = max + d.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        self.push(Tensor::scalar(v), Op::LogSumExp(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(v), Op::SumAll(a))
    }

    /// Fails if any value of `v` is NaN or infinite.
    pub fn ensure_finite(&self, v: Var, context: &str) -> Result<()> {
        if self.value(v).all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    /// Reverse accumulation from a `1 x 1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::NoForward);
        }
        if self.value(loss).shape() != [1, 1] {
            return Err(Error::Shape("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_scaled(&g, 1.0),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    matmul_into(&g, &bv.transpose(), &mut ga);
                    let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                    matmul_into(&av.transpose(), &g, &mut gb);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, b) => {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *b, gb);
                    acc(&mut grads, *a, g.clone());
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g.clone());
                }
                Op::Sub(a, b) => {
                    let mut neg = g.clone();
                    neg.data_mut().iter_mut().for_each(|v| *v = -*v);
                    acc(&mut grads, *b, neg);
                    acc(&mut grads, *a, g.clone());
                }
                Op::Scale(a, s) => {
                    let mut ga = g.clone();
                    ga.data_mut().iter_mut().for_each(|v| *v *= s);
                    acc(&mut grads, *a, ga);
                }
                Op::AddScalar(a) => acc(&mut grads, *a, g.clone()),
                Op::Relu(a) => {
                    let mut ga = g.clone();
                    for (gv, &x) in ga.data_mut().iter_mut().zip(self.value(*a).data()) {
                        if x <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let pc = self.value(*p).cols();
                        let mut gp = Tensor::zeros(g.rows(), pc);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + pc]);
                        }
                        off += pc;
                        acc(&mut grads, *p, gp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let n = pv.len();
                        let gp = Tensor::from_vec(
                            pv.rows(),
                            pv.cols(),
                            g.data()[off..off + n].to_vec(),
                        )?;
                        off += n;
                        acc(&mut grads, *p, gp);
                    }
                }
                Op::GatherRows(a, index) => {
                    let av = self.value(*a);
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    for (r, &i) in index.iter().enumerate() {
                        for (o, &v) in ga.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Column(a, c) => {
                    let av = self.value(*a);
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    for r in 0..av.rows() {
                        ga.set(r, *c, g.get(r, 0));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SegmentMax(a, argmax) => {
                    let av = self.value(*a);
                    let cols = av.cols();
                    let mut ga = Tensor::zeros(av.rows(), cols);
                    for s in 0..g.rows() {
                        for c in 0..cols {
                            let r = argmax[s * cols + c];
                            let cur = ga.get(r, c);
                            ga.set(r, c, cur + g.get(s, c));
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SumRows(a) => {
                    let av = self.value(*a);
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    for r in 0..av.rows() {
                        ga.row_mut(r).copy_from_slice(g.data());
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = y.row(r).iter().zip(g.row(r)).map(|(p, q)| p * q).sum();
                        for c in 0..y.cols() {
                            ga.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let gsum: f64 = g.row(r).iter().sum();
                        for c in 0..y.cols() {
                            ga.set(r, c, g.get(r, c) - y.get(r, c).exp() * gsum);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LogSumExp(a) => {
                    let lse = node.value.get(0, 0);
                    let av = self.value(*a);
                    let gs = g.get(0, 0);
                    let data = av.data().iter().map(|&x| gs * (x - lse).exp()).collect();
                    acc(&mut grads, *a, Tensor::from_vec(av.rows(), av.cols(), data)?);
                }
                Op::SumAll(a) => {
                    let av = self.value(*a);
                    acc(&mut grads, *a, Tensor::filled(av.rows(), av.cols(), g.get(0, 0)));
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Gradients of every parameter of `params`, zero for parameters that
    /// were never placed on this tape or are off the loss path.
    pub fn param_grads(&self, grads: &Gradients, params: &ModelParameters) -> ModelParameters {
        let mut out = params.zeros_like();
        for (id, slot) in self.params.iter().enumerate() {
            if let Some(v) = slot {
                if let Some(g) = grads.wrt(*v) {
                    *out.tensor_mut(ParamId(id)) = g.clone();
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_without_forward() {
        let tape = Tape::new();
        assert!(matches!(tape.backward(Var(0)), Err(Error::NoForward)));
    }

    #[test]
    fn sum_of_params_has_unit_gradients() {
        let mut params = ModelParameters::default();
        let a = params.add("a", Tensor::from_rows(&[vec![1.0, -2.0]]).unwrap());
        let b = params.add("b", Tensor::from_rows(&[vec![0.5], vec![4.0]]).unwrap());
        let unused = params.add("unused", Tensor::scalar(3.0));
        let mut tape = Tape::new();
        let va = tape.param(&params, a);
        let vb = tape.param(&params, b);
        let sa = tape.sum_all(va);
        let sb = tape.sum_all(vb);
        let loss = tape.add(sa, sb).unwrap();
        let g = tape.backward(loss).unwrap();
        let pg = tape.param_grads(&g, &params);
        assert_eq!(pg.tensor(a).data(), &[1.0, 1.0]);
        assert_eq!(pg.tensor(b).data(), &[1.0, 1.0]);
        assert_eq!(pg.tensor(unused).data(), &[0.0]);
    }

    #[test]
    fn segment_max_ties_route_to_lowest_row() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 3.0]]).unwrap());
        let m = tape.max_rows(x).unwrap();
        assert_eq!(tape.value(m).data(), &[1.0, 3.0]);
        let loss = tape.sum_all(m);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let t = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![1000.0, 0.0, -1000.0]]).unwrap();
        let s = softmax(&t);
        for r in 0..2 {
            assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let ls = log_softmax(&t);
        assert!((ls.get(1, 0)).abs() < 1e-12);
    }
}
