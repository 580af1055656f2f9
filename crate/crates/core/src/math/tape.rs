use super::loss;
use super::{MathError, Matrix};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    /// Broadcast a 1 x c row over the batch rows of the first operand.
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    /// Gather rows of a table; backward scatter-adds into the table.
    Rows(Var, Vec<u32>),
    SliceCols(Var, usize, usize),
    Sum(Var),
    /// Scalar loss node; the pre-scaled input gradient is cached at forward time.
    SoftmaxXent { logits: Var, grad: Matrix },
    Mse { pred: Var, grad: Matrix },
}

struct Node {
    op: Op,
    value: Matrix,
    grad: Option<Matrix>,
}

/// Wengert tape: operations are recorded in forward order and replayed in
/// reverse, visiting each node exactly once. One tape per training step.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.nodes.push(Node { op, value, grad: None });
        Var(self.nodes.len() - 1)
    }

    /// Registers an input or parameter value. The tape owns a copy.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated for `v` by the last `backward` call.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, MathError> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::Matmul(a, b), value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, MathError> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, MathError> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, MathError> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(Op::Hadamard(a, b), value))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, MathError> {
        let value = self.value(a).add_row(self.value(row))?;
        Ok(self.push(Op::AddRow(a, row), value))
    }

    /// `x * w + b` with the bias row broadcast over batch rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, MathError> {
        let prod = self.matmul(x, w)?;
        self.add_row(prod, b)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let value = self.value(x).scale(k);
        self.push(Op::Scale(x, k), value)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(Op::Relu(x), value)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(Op::Sigmoid(x), value)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        self.push(Op::Tanh(x), value)
    }

    /// Gathers `indices` rows of `table` into a new matrix.
    pub fn rows(&mut self, table: Var, indices: &[u32]) -> Result<Var, MathError> {
        let t = self.value(table);
        let cols = t.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i as usize >= t.rows() {
                return Err(MathError::TargetOutOfRange { index: i as usize, cols: t.rows() });
            }
            data.extend_from_slice(t.row(i as usize));
        }
        let value = Matrix::from_raw(indices.len(), cols, data);
        Ok(self.push(Op::Rows(table, indices.to_vec()), value))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, MathError> {
        let v = self.value(x);
        if start + len > v.cols() {
            return Err(MathError::Shape(format!(
                "slice_cols {}..{} of {} columns",
                start,
                start + len,
                v.cols()
            )));
        }
        let mut data = Vec::with_capacity(v.rows() * len);
        for i in 0..v.rows() {
            data.extend_from_slice(&v.row(i)[start..start + len]);
        }
        let value = Matrix::from_raw(v.rows(), len, data);
        Ok(self.push(Op::SliceCols(x, start, len), value))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::from_raw(1, 1, vec![self.value(x).sum()]);
        self.push(Op::Sum(x), value)
    }

    /// Scalar mean-per-token cross-entropy of `targets` under `logits`.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[u32]) -> Result<Var, MathError> {
        let (l, grad) = loss::softmax_cross_entropy(self.value(logits), targets)?;
        let value = Matrix::from_raw(1, 1, vec![l]);
        Ok(self.push(Op::SoftmaxXent { logits, grad }, value))
    }

    /// Scalar mean-squared-error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &Matrix) -> Result<Var, MathError> {
        let (l, grad) = loss::mse_loss(self.value(pred), target)?;
        let value = Matrix::from_raw(1, 1, vec![l]);
        Ok(self.push(Op::Mse { pred, grad }, value))
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.value(v).shape(), (1, 1));
        self.value(v).at(0, 0)
    }

    fn add_grad(&mut self, v: Var, g: Matrix) {
        match &mut self.nodes[v.0].grad {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse pass from a scalar node, seeding its gradient with 1.
    /// Visits nodes in reverse recording order, which is a reverse
    /// topological order because ops only reference earlier nodes.
    pub fn backward(&mut self, root: Var) -> Result<(), MathError> {
        if self.value(root).shape() != (1, 1) {
            return Err(MathError::Shape("backward root must be 1x1".into()));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[root.0].grad = Some(Matrix::from_raw(1, 1, vec![1.0]));

        for i in (0..=root.0).rev() {
            let Some(g) = self.nodes[i].grad.clone() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = g.matmul_nt(self.value(b))?;
                    let db = self.value(a).matmul_tn(&g)?;
                    self.add_grad(a, da);
                    self.add_grad(b, db);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    self.add_grad(a, g.clone());
                    self.add_grad(b, g);
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    self.add_grad(a, g.clone());
                    self.add_grad(b, g.scale(-1.0));
                }
                Op::Hadamard(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = g.hadamard(self.value(b))?;
                    let db = g.hadamard(self.value(a))?;
                    self.add_grad(a, da);
                    self.add_grad(b, db);
                }
                Op::AddRow(a, row) => {
                    let (a, row) = (*a, *row);
                    self.add_grad(a, g.clone());
                    self.add_grad(row, g.sum_rows());
                }
                Op::Scale(x, k) => {
                    let (x, k) = (*x, *k);
                    self.add_grad(x, g.scale(k));
                }
                Op::Relu(x) => {
                    let x = *x;
                    let mask = self.value(x).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    self.add_grad(x, g.hadamard(&mask)?);
                }
                Op::Sigmoid(x) => {
                    let x = *x;
                    let y = &self.nodes[i].value;
                    let dy = y.map(|v| v * (1.0 - v));
                    self.add_grad(x, g.hadamard(&dy)?);
                }
                Op::Tanh(x) => {
                    let x = *x;
                    let y = &self.nodes[i].value;
                    let dy = y.map(|v| 1.0 - v * v);
                    self.add_grad(x, g.hadamard(&dy)?);
                }
                Op::Rows(table, indices) => {
                    let table = *table;
                    let indices = indices.clone();
                    let t = self.value(table);
                    let mut dt = Matrix::zeros(t.rows(), t.cols());
                    let cols = t.cols();
                    for (r, &idx) in indices.iter().enumerate() {
                        let dst = idx as usize * cols;
                        for (o, &v) in dt.data_mut()[dst..dst + cols].iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    self.add_grad(table, dt);
                }
                Op::SliceCols(x, start, len) => {
                    let (x, start, len) = (*x, *start, *len);
                    let v = self.value(x);
                    let (rows, cols) = v.shape();
                    let mut dx = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        let dst = r * cols + start;
                        dx.data_mut()[dst..dst + len].copy_from_slice(g.row(r));
                    }
                    self.add_grad(x, dx);
                }
                Op::Sum(x) => {
                    let x = *x;
                    let (rows, cols) = self.value(x).shape();
                    self.add_grad(x, Matrix::filled(rows, cols, g.at(0, 0)));
                }
                Op::SoftmaxXent { logits, grad } => {
                    let logits = *logits;
                    let dl = grad.scale(g.at(0, 0));
                    self.add_grad(logits, dl);
                }
                Op::Mse { pred, grad } => {
                    let pred = *pred;
                    let dp = grad.scale(g.at(0, 0));
                    self.add_grad(pred, dp);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_backward_hand_checked() {
        let mut tape = Tape::new();
        let a = tape.leaf(Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap());
        let b = tape.leaf(Matrix::from_vec(2, 1, vec![3.0, 4.0]).unwrap());
        let y = tape.matmul(a, b).unwrap();
        assert_eq!(tape.scalar(y), 11.0);
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[3.0, 4.0]);
        assert_eq!(tape.grad(b).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn gradient_accumulates_across_consumers() {
        // y = sum(2x) + sum(3x) => dy/dx = 5
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::from_vec(1, 1, vec![1.0]).unwrap());
        let a = tape.scale(x, 2.0);
        let b = tape.scale(x, 3.0);
        let y = tape.add(a, b).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[5.0]);
    }

    #[test]
    fn rows_backward_scatter_adds() {
        let mut tape = Tape::new();
        let table = tape.leaf(Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let gathered = tape.rows(table, &[2, 0, 2]).unwrap();
        assert_eq!(tape.value(gathered).row(0), &[5.0, 6.0]);
        let s = tape.sum(gathered);
        tape.backward(s).unwrap();
        let g = tape.grad(table).unwrap();
        assert_eq!(g.data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn slice_cols_backward_pads() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::from_vec(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let s = tape.slice_cols(x, 1, 2).unwrap();
        assert_eq!(tape.value(s).data(), &[2.0, 3.0]);
        let y = tape.sum(s);
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::zeros(2, 2));
        assert!(tape.backward(x).is_err());
    }
}
