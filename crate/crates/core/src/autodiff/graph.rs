//! Tape of matrix operations with reverse-mode differentiation.

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Square(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Records values as they are computed; [`Graph::backward`] replays the
/// tape in reverse.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    first_non_finite: Option<usize>,
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Shape(format!("{op}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        if self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some(self.nodes.len());
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Index of the first node whose value was NaN or infinite.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.first_non_finite
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", sa, sb));
        }
        let v = self.value(a).matmul(self.value(b));
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// Adds the `1×m` row `b` to every row of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.0 != 1 || sb.1 != sa.1 {
            return Err(shape_err("add_bias", sa, sb));
        }
        let bias = &self.value(b).data;
        let mut v = self.value(a).clone();
        for row in v.data.chunks_mut(sa.1.max(1)) {
            row.iter_mut().zip(bias).for_each(|(x, b)| *x += b);
        }
        Ok(self.push(v, Op::AddBias(a, b)))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(logistic);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Joins columns of equal-height operands.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.shape(p).0);
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p).0 != rows) {
            return Err(shape_err("concat", (rows, 0), self.shape(bad)));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut v = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut at = r * cols;
            for &p in parts {
                let src = self.value(p).row(r);
                v.data[at..at + src.len()].copy_from_slice(src);
                at += src.len();
            }
        }
        Ok(self.push(v, Op::Concat(parts.to_vec())))
    }

    /// Columns `start..start+len` of `a`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if start + len > cols {
            return Err(Error::Shape(format!("slice {start}..{} of width {cols}", start + len)));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src.row(r)[start..start + len]);
        }
        let v = Matrix { rows, cols: len, data };
        Ok(self.push(v, Op::Slice(a, start)))
    }

    /// Sum of all entries as a `1×1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Matrix::filled(1, 1, s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).data.len().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Gradients of the scalar `loss` with respect to every node; entries
    /// are `None` for nodes the loss does not depend on.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Shape("backward needs a 1x1 loss".into()));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(x) => x.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, g.matmul_t(self.value(*b)));
                    acc(&mut grads, *b, self.value(*a).t_matmul(&g));
                }
                Op::AddBias(a, b) => {
                    let mut gb = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        gb.data.iter_mut().zip(g.row(r)).for_each(|(x, y)| *x += y);
                    }
                    acc(&mut grads, *b, gb);
                    acc(&mut grads, *a, g.clone());
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|x| -x));
                    acc(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                    acc(&mut grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|x| x * s)),
                Op::Sigmoid(a) => acc(&mut grads, *a, g.zip_map(&node.value, |x, y| x * y * (1.0 - y))),
                Op::Tanh(a) => acc(&mut grads, *a, g.zip_map(&node.value, |x, y| x * (1.0 - y * y))),
                Op::Relu(a) => acc(&mut grads, *a, g.zip_map(self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 })),
                Op::Square(a) => acc(&mut grads, *a, g.zip_map(self.value(*a), |x, y| 2.0 * x * y)),
                Op::Concat(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        let mut gp = Matrix::zeros(g.rows, w);
                        for r in 0..g.rows {
                            gp.data[r * w..(r + 1) * w].copy_from_slice(&g.row(r)[at..at + w]);
                        }
                        acc(&mut grads, p, gp);
                        at += w;
                    }
                }
                Op::Slice(a, start) => {
                    let (rows, cols) = self.shape(*a);
                    let mut ga = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        ga.data[r * cols + start..r * cols + start + g.cols].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let (rows, cols) = self.shape(*a);
                    acc(&mut grads, *a, Matrix::filled(rows, cols, g.scalar()));
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients(grads))
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients(Vec<Option<Matrix>>);

impl Gradients {
    /// Gradient of `v`, zero-filled when the loss does not depend on it.
    pub fn of(&self, graph: &Graph, v: Var) -> Matrix {
        match self.0.get(v.0) {
            Some(Some(g)) => g.clone(),
            _ => {
                let (r, c) = graph.shape(v);
                Matrix::zeros(r, c)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let w = g.leaf(Matrix::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap());
        let sq = g.square(w);
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.of(&g, w).data, vec![2.0, -4.0, 1.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut g = Graph::new();
        let w = g.leaf(Matrix::filled(2, 2, 3.0));
        let c = g.leaf(Matrix::filled(1, 1, 7.0));
        let _ = g.square(w);
        let grads = g.backward(c).unwrap();
        assert!(grads.of(&g, w).data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn concat_shapes() {
        let mut g = Graph::new();
        let a = g.leaf(Matrix::zeros(1, 4));
        let b = g.leaf(Matrix::zeros(1, 3));
        let c = g.concat(&[a, b]).unwrap();
        assert_eq!(g.shape(c), (1, 7));
        let d = g.leaf(Matrix::zeros(2, 3));
        assert!(g.concat(&[a, d]).is_err());
        assert!(g.matmul(a, b).is_err());
    }

    #[test]
    fn non_finite_is_flagged() {
        let mut g = Graph::new();
        let a = g.leaf(Matrix::filled(1, 1, 1e200));
        assert_eq!(g.first_non_finite(), None);
        let _ = g.square(a);
        assert_eq!(g.first_non_finite(), Some(1));
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let x0 = Matrix::from_vec(2, 3, vec![0.3, -0.7, 1.1, -0.2, 0.5, 0.9]).unwrap();
        let y0 = Matrix::from_vec(2, 3, vec![0.4, 0.1, -0.6, 0.8, -1.2, 0.2]).unwrap();
        let b0 = Matrix::from_vec(1, 3, vec![0.1, -0.3, 0.2]).unwrap();
        let f = |x: &Matrix| -> (Graph, Var, Var) {
            let mut g = Graph::new();
            let xv = g.leaf(x.clone());
            let yv = g.leaf(y0.clone());
            let bv = g.leaf(b0.clone());
            let a = g.add_bias(xv, bv).unwrap();
            let s = g.sigmoid(a);
            let t = g.tanh(yv);
            let m = g.mul(s, t).unwrap();
            let r = g.relu(xv);
            let d = g.sub(m, r).unwrap();
            let sl = g.slice(d, 1, 2).unwrap();
            let c = g.concat(&[sl, xv]).unwrap();
            let q = g.square(c);
            let q = g.scale(q, 0.7);
            let loss = g.mean(q);
            (g, xv, loss)
        };
        let (g, xv, loss) = f(&x0);
        let analytic = g.backward(loss).unwrap().of(&g, xv);
        let h = 1e-6;
        for k in 0..x0.data.len() {
            let mut xp = x0.clone();
            xp.data[k] += h;
            let mut xm = x0.clone();
            xm.data[k] -= h;
            let (gp, _, lp) = f(&xp);
            let (gm, _, lm) = f(&xm);
            let num = (gp.value(lp).scalar() - gm.value(lm).scalar()) / (2.0 * h);
            assert!((num - analytic.data[k]).abs() < 1e-7, "entry {k}: {num} vs {}", analytic.data[k]);
        }
    }
}
