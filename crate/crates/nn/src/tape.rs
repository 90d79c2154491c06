//! Reverse-mode gradient tape over [`Matrix`] values.
//!
//! Every traced operation appends a node holding its inputs (by index) and the
//! computed value. [`Tape::backward`] walks the nodes in reverse order and
//! accumulates adjoints; [`Tape::replay`] re-runs the forward computation from
//! the leaves using the same kernels, so replayed values match bit for bit.

use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::error::{NnError, Result};
use crate::matrix::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A user-supplied differentiable operation.
///
/// `backward` returns one gradient per input, each shaped like that input.
pub trait CustomOp {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Matrix]) -> Matrix;
    fn backward(&self, inputs: &[&Matrix], output: &Matrix, grad_output: &Matrix) -> Vec<Matrix>;
}

#[derive(Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    SoftmaxRows(usize),
    Transpose(usize),
    SliceCols { src: usize, start: usize, len: usize },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    GatherRows { table: usize, ids: Vec<usize> },
    Reshape { src: usize, rows: usize, cols: usize },
    CumsumRows(usize),
    Sum(usize),
    Custom { inputs: Vec<usize>, op: Rc<dyn CustomOp> },
}

impl fmt::Debug for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Custom { inputs, op } => write!(f, "Custom({}, {inputs:?})", op.name()),
            Op::Leaf => write!(f, "Leaf"),
            Op::MatMul(a, b) => write!(f, "MatMul({a}, {b})"),
            Op::Add(a, b) => write!(f, "Add({a}, {b})"),
            Op::AddRow(a, b) => write!(f, "AddRow({a}, {b})"),
            Op::Sub(a, b) => write!(f, "Sub({a}, {b})"),
            Op::Mul(a, b) => write!(f, "Mul({a}, {b})"),
            Op::Scale(a, s) => write!(f, "Scale({a}, {s})"),
            Op::Relu(a) => write!(f, "Relu({a})"),
            Op::SoftmaxRows(a) => write!(f, "SoftmaxRows({a})"),
            Op::Transpose(a) => write!(f, "Transpose({a})"),
            Op::SliceCols { src, start, len } => write!(f, "SliceCols({src}, {start}..+{len})"),
            Op::ConcatCols(v) => write!(f, "ConcatCols({v:?})"),
            Op::ConcatRows(v) => write!(f, "ConcatRows({v:?})"),
            Op::GatherRows { table, ids } => write!(f, "GatherRows({table}, {} ids)", ids.len()),
            Op::Reshape { src, rows, cols } => write!(f, "Reshape({src}, {rows}x{cols})"),
            Op::CumsumRows(a) => write!(f, "CumsumRows({a})"),
            Op::Sum(a) => write!(f, "Sum({a})"),
        }
    }
}

struct Node {
    op: Op,
    value: Matrix,
}

/// Ordered record of traced operations. Confined to one thread.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Matrix {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

fn eval(op: &Op, nodes: &[Node]) -> Matrix {
    let val = |i: usize| &nodes[i].value;
    match op {
        Op::Leaf => unreachable!("leaves are not evaluated"),
        Op::MatMul(a, b) => val(*a).matmul(val(*b)).expect("checked at record time"),
        Op::Add(a, b) => val(*a).add(val(*b)).expect("checked at record time"),
        Op::AddRow(a, b) => val(*a).add_row(val(*b)).expect("checked at record time"),
        Op::Sub(a, b) => val(*a).sub(val(*b)).expect("checked at record time"),
        Op::Mul(a, b) => val(*a).hadamard(val(*b)).expect("checked at record time"),
        Op::Scale(a, s) => val(*a).scale(*s),
        Op::Relu(a) => val(*a).map(|v| v.max(0.0)),
        Op::SoftmaxRows(a) => val(*a).softmax_rows(),
        Op::Transpose(a) => val(*a).transpose(),
        Op::SliceCols { src, start, len } => {
            let m = val(*src);
            let mut data = Vec::with_capacity(m.rows() * len);
            for r in 0..m.rows() {
                data.extend_from_slice(&m.row(r)[*start..start + len]);
            }
            Matrix::from_raw(m.rows(), *len, data)
        }
        Op::ConcatCols(parts) => {
            let rows = val(parts[0]).rows();
            let cols: usize = parts.iter().map(|&p| val(p).cols()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for &p in parts {
                    data.extend_from_slice(val(p).row(r));
                }
            }
            Matrix::from_raw(rows, cols, data)
        }
        Op::ConcatRows(parts) => {
            let cols = val(parts[0]).cols();
            let mut data = Vec::new();
            let mut rows = 0;
            for &p in parts {
                data.extend_from_slice(val(p).data());
                rows += val(p).rows();
            }
            Matrix::from_raw(rows, cols, data)
        }
        Op::GatherRows { table, ids } => val(*table).select_rows(ids),
        Op::Reshape { src, rows, cols } => Matrix::from_raw(*rows, *cols, val(*src).data().to_vec()),
        Op::CumsumRows(a) => {
            let m = val(*a);
            let mut out = m.clone();
            for r in 1..m.rows() {
                for c in 0..m.cols() {
                    let prev = out.get(r - 1, c);
                    out.set(r, c, prev + m.get(r, c));
                }
            }
            out
        }
        Op::Sum(a) => Matrix::scalar(val(*a).sum()),
        Op::Custom { inputs, op } => {
            let ins: Vec<&Matrix> = inputs.iter().map(|&i| val(i)).collect();
            op.forward(&ins)
        }
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => acc.axpy(1.0, &g).expect("adjoint shapes agree"),
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers an input (parameter or constant) on the tape.
    pub fn leaf(&self, value: Matrix) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op: Op::Leaf, value });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Matrix> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.shape()
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.value(v).to_scalar()
    }

    fn push(&self, op: Op) -> Var {
        let value = eval(&op, &self.nodes.borrow());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value });
        Var(nodes.len() - 1)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(NnError::shape("matmul", sa, sb));
        }
        Ok(self.push(Op::MatMul(a.0, b.0)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(NnError::shape(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.push(Op::Add(a.0, b.0)))
    }

    /// `a + row` with the 1×cols `row` broadcast down the rows of `a`.
    pub fn add_row(&self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr.0 != 1 || sr.1 != sa.1 {
            return Err(NnError::shape("add_row", sa, sr));
        }
        Ok(self.push(Op::AddRow(a.0, row.0)))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.push(Op::Sub(a.0, b.0)))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.push(Op::Mul(a.0, b.0)))
    }

    pub fn scale(&self, a: Var, factor: f64) -> Var {
        self.push(Op::Scale(a.0, factor))
    }

    pub fn relu(&self, a: Var) -> Var {
        self.push(Op::Relu(a.0))
    }

    pub fn softmax_rows(&self, a: Var) -> Var {
        self.push(Op::SoftmaxRows(a.0))
    }

    pub fn transpose(&self, a: Var) -> Var {
        self.push(Op::Transpose(a.0))
    }

    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if start + len > s.1 {
            return Err(NnError::shape("slice_cols", s, (s.0, start + len)));
        }
        Ok(self.push(Op::SliceCols { src: a.0, start, len }))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| NnError::Contract("concat_cols of nothing".into()))?;
        let s0 = self.shape(*first);
        for p in &parts[1..] {
            let s = self.shape(*p);
            if s.0 != s0.0 {
                return Err(NnError::shape("concat_cols", s0, s));
            }
        }
        Ok(self.push(Op::ConcatCols(parts.iter().map(|p| p.0).collect())))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| NnError::Contract("concat_rows of nothing".into()))?;
        let s0 = self.shape(*first);
        for p in &parts[1..] {
            let s = self.shape(*p);
            if s.1 != s0.1 {
                return Err(NnError::shape("concat_rows", s0, s));
            }
        }
        Ok(self.push(Op::ConcatRows(parts.iter().map(|p| p.0).collect())))
    }

    /// Rows `ids` of `table`, in order. Backward scatters into the table.
    pub fn gather_rows(&self, table: Var, ids: &[usize]) -> Result<Var> {
        let rows = self.shape(table).0;
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(NnError::Contract(format!(
                "row index {bad} out of range for a table with {rows} rows"
            )));
        }
        Ok(self.push(Op::GatherRows {
            table: table.0,
            ids: ids.to_vec(),
        }))
    }

    pub fn reshape(&self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.0 * s.1 != rows * cols {
            return Err(NnError::shape("reshape", s, (rows, cols)));
        }
        Ok(self.push(Op::Reshape { src: a.0, rows, cols }))
    }

    /// Running sum down the rows: output row i is the sum of input rows 0..=i.
    pub fn cumsum_rows(&self, a: Var) -> Var {
        self.push(Op::CumsumRows(a.0))
    }

    pub fn sum(&self, a: Var) -> Var {
        self.push(Op::Sum(a.0))
    }

    pub fn custom(&self, op: Rc<dyn CustomOp>, inputs: &[Var]) -> Var {
        self.push(Op::Custom {
            inputs: inputs.iter().map(|v| v.0).collect(),
            op,
        })
    }

    /// Reverse-mode accumulation from the 1×1 node `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out_shape = nodes[output.0].value.shape();
        if out_shape != (1, 1) {
            return Err(NnError::Contract(format!(
                "backward needs a scalar output, got {}x{}",
                out_shape.0, out_shape.1
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            let val = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&val(*b).transpose())?;
                    let gb = val(*a).transpose().matmul(&g)?;
                    accumulate(&mut grads[*a], ga);
                    accumulate(&mut grads[*b], gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[*a], g.clone());
                    accumulate(&mut grads[*b], g.clone());
                }
                Op::AddRow(a, b) => {
                    accumulate(&mut grads[*b], g.column_sums());
                    accumulate(&mut grads[*a], g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[*b], g.scale(-1.0));
                    accumulate(&mut grads[*a], g.clone());
                }
                Op::Mul(a, b) => {
                    let ga = g.hadamard(val(*b))?;
                    let gb = g.hadamard(val(*a))?;
                    accumulate(&mut grads[*a], ga);
                    accumulate(&mut grads[*b], gb);
                }
                Op::Scale(a, s) => accumulate(&mut grads[*a], g.scale(*s)),
                Op::Relu(a) => {
                    let x = val(*a);
                    let data = x
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[*a], Matrix::from_raw(x.rows(), x.cols(), data));
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut gx = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot = y.row(r).iter().zip(g.row(r)).fold(0.0, |acc, (yv, gv)| acc + yv * gv);
                        for ((o, &yv), &gv) in gx.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                            *o = yv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads[*a], gx);
                }
                Op::Transpose(a) => accumulate(&mut grads[*a], g.transpose()),
                Op::SliceCols { src, start, len } => {
                    let s = val(*src).shape();
                    let mut gx = Matrix::zeros(s.0, s.1);
                    for r in 0..s.0 {
                        gx.row_mut(r)[*start..start + len].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads[*src], gx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let s = val(p).shape();
                        let mut gp = Matrix::zeros(s.0, s.1);
                        for r in 0..s.0 {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + s.1]);
                        }
                        offset += s.1;
                        accumulate(&mut grads[p], gp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let s = val(p).shape();
                        let n = s.0 * s.1;
                        let gp = Matrix::from_raw(s.0, s.1, g.data()[offset..offset + n].to_vec());
                        offset += n;
                        accumulate(&mut grads[p], gp);
                    }
                }
                Op::GatherRows { table, ids } => {
                    let s = val(*table).shape();
                    let mut gt = Matrix::zeros(s.0, s.1);
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, &gv) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *o += gv;
                        }
                    }
                    accumulate(&mut grads[*table], gt);
                }
                Op::Reshape { src, .. } => {
                    let s = val(*src).shape();
                    accumulate(&mut grads[*src], Matrix::from_raw(s.0, s.1, g.into_vec()));
                }
                Op::CumsumRows(a) => {
                    let mut gx = g.clone();
                    for r in (0..gx.rows().saturating_sub(1)).rev() {
                        for c in 0..gx.cols() {
                            let next = gx.get(r + 1, c);
                            gx.set(r, c, gx.get(r, c) + next);
                        }
                    }
                    accumulate(&mut grads[*a], gx);
                }
                Op::Sum(a) => {
                    let s = val(*a).shape();
                    accumulate(&mut grads[*a], Matrix::filled(s.0, s.1, g.data()[0]));
                }
                Op::Custom { inputs, op } => {
                    let ins: Vec<&Matrix> = inputs.iter().map(|&i| val(i)).collect();
                    let gs = op.backward(&ins, &node.value, &g);
                    if gs.len() != inputs.len() {
                        return Err(NnError::Contract(format!(
                            "custom op {} returned {} gradients for {} inputs",
                            op.name(),
                            gs.len(),
                            inputs.len()
                        )));
                    }
                    for (&i, gi) in inputs.iter().zip(gs) {
                        if gi.shape() != val(i).shape() {
                            return Err(NnError::shape(op.name(), val(i).shape(), gi.shape()));
                        }
                        accumulate(&mut grads[i], gi);
                    }
                }
            }
        }

        let shapes = nodes.iter().map(|n| n.value.shape()).collect();
        grads.resize(nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }

    /// Recomputes every non-leaf node from the recorded leaves.
    pub fn replay(&self) -> Vec<Matrix> {
        let recorded = self.nodes.borrow();
        let mut fresh: Vec<Node> = Vec::with_capacity(recorded.len());
        for node in recorded.iter() {
            let value = match node.op {
                Op::Leaf => node.value.clone(),
                _ => eval(&node.op, &fresh),
            };
            fresh.push(Node {
                op: node.op.clone(),
                value,
            });
        }
        fresh.into_iter().map(|n| n.value).collect()
    }

    /// Values as recorded during tracing, in node order.
    pub fn recorded_values(&self) -> Vec<Matrix> {
        self.nodes.borrow().iter().map(|n| n.value.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Matrix::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(tape.scalar(y).unwrap(), 9.0);
        assert_eq!(g.wrt(x).to_scalar().unwrap(), 6.0);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = tape.leaf(Matrix::zeros(2, 2));
        assert!(matches!(tape.backward(x), Err(NnError::Contract(_))));
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Matrix::scalar(2.0));
        let unused = tape.leaf(Matrix::zeros(2, 3));
        let y = tape.sum(x);
        let g = tape.backward(y).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(unused), Matrix::zeros(2, 3));
    }

    #[test]
    fn cumsum_forward_and_backward() {
        let tape = Tape::new();
        let x = tape.leaf(m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]));
        let c = tape.cumsum_rows(x);
        assert_eq!(*tape.value(c), m(&[&[1.0, 2.0], &[4.0, 6.0], &[9.0, 12.0]]));
        let s = tape.sum(c);
        let g = tape.backward(s).unwrap();
        // row i contributes to rows i..n of the cumsum
        assert_eq!(g.wrt(x), m(&[&[3.0, 3.0], &[2.0, 2.0], &[1.0, 1.0]]));
    }

    #[test]
    fn gather_scatters_repeated_rows() {
        let tape = Tape::new();
        let table = tape.leaf(m(&[&[1.0], &[2.0], &[3.0]]));
        let rows = tape.gather_rows(table, &[2, 0, 2]).unwrap();
        assert_eq!(*tape.value(rows), m(&[&[3.0], &[1.0], &[3.0]]));
        let s = tape.sum(rows);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(table), m(&[&[1.0], &[0.0], &[2.0]]));
        assert!(tape.gather_rows(table, &[3]).is_err());
    }

    #[test]
    fn replay_reproduces_recorded_values() {
        let tape = Tape::new();
        let a = tape.leaf(m(&[&[0.1, -0.7, 1.3], &[2.0, 0.5, -0.2]]));
        let b = tape.leaf(m(&[&[0.3, 0.9], &[-1.1, 0.4], &[0.6, 0.2]]));
        let h = tape.matmul(a, b).unwrap();
        let s = tape.softmax_rows(h);
        let r = tape.relu(tape.scale(s, -2.0));
        let t = tape.transpose(r);
        let c = tape.concat_cols(&[h, t]).unwrap_or(h);
        let _ = tape.sum(c);
        assert_eq!(tape.replay(), tape.recorded_values());
    }
}
