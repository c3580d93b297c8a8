//! Named parameter sets and the dense and LSTM layers built on them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Gradients, Graph, Var};
use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    #[serde(flatten)]
    pub value: Matrix,
}

/// Ordered, named parameter arrays of one network.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamSet {
    arrays: Vec<NamedArray>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.arrays.push(NamedArray {
            name: name.into(),
            value,
        });
        ParamId(self.arrays.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.arrays[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.arrays[id.0].value
    }

    pub fn name(&self, k: usize) -> &str {
        &self.arrays[k].name
    }

    pub fn values(&self) -> impl Iterator<Item = &Matrix> {
        self.arrays.iter().map(|a| &a.value)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.arrays.iter_mut().map(|a| &mut a.value)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.arrays.iter().map(|a| a.value.data.len()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.values().map(Matrix::norm_sq).sum::<f64>().sqrt()
    }

    /// Checks that `other` has the same names and shapes.
    pub fn check_layout(&self, other: &ParamSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!("{} arrays vs {}", self.len(), other.len())));
        }
        for (a, b) in self.arrays.iter().zip(&other.arrays) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::Shape(format!(
                    "array {} {:?} vs {} {:?}",
                    a.name,
                    a.value.shape(),
                    b.name,
                    b.value.shape()
                )));
            }
        }
        Ok(())
    }

    /// Places every array on `graph` as a leaf.
    pub fn bind(&self, graph: &mut Graph) -> Bound {
        Bound {
            vars: self.arrays.iter().map(|a| graph.leaf(a.value.clone())).collect(),
        }
    }
}

/// A [`ParamSet`] placed on a graph.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Per-array gradients, in parameter order.
    pub fn gradients(&self, graph: &Graph, grads: &Gradients) -> Vec<Matrix> {
        self.vars.iter().map(|&v| grads.of(graph, v)).collect()
    }
}

fn uniform_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Matrix { rows, cols, data }
}

/// Affine layer `x·W + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    /// Weights and bias uniform in `±1/√input`.
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let w = params.add(format!("{name}.w"), uniform_matrix(rng, input, output, bound));
        let b = params.add(format!("{name}.b"), uniform_matrix(rng, 1, output, bound));
        Dense { w, b, input, output }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = g.matmul(x, p.var(self.w))?;
        g.add_bias(h, p.var(self.b))
    }
}

/// Hidden and cell state of an LSTM layer for a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// Single LSTM layer with gate order input, forget, candidate, output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    /// Weights uniform in `±1/√hidden`; biases zero except the forget gate
    /// at +1.
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden.max(1) as f64).sqrt();
        let wx = params.add(format!("{name}.wx"), uniform_matrix(rng, input, 4 * hidden, bound));
        let wh = params.add(format!("{name}.wh"), uniform_matrix(rng, hidden, 4 * hidden, bound));
        let mut bias = Matrix::zeros(1, 4 * hidden);
        bias.data[hidden..2 * hidden].fill(1.0);
        let b = params.add(format!("{name}.b"), bias);
        Lstm {
            wx,
            wh,
            b,
            input,
            hidden,
        }
    }

    pub fn zero_state(&self, g: &mut Graph, batch: usize) -> LstmState {
        LstmState {
            h: g.leaf(Matrix::zeros(batch, self.hidden)),
            c: g.leaf(Matrix::zeros(batch, self.hidden)),
        }
    }

    pub fn step(&self, g: &mut Graph, p: &Bound, x: Var, s: LstmState) -> Result<LstmState> {
        let n = self.hidden;
        let zx = g.matmul(x, p.var(self.wx))?;
        let zh = g.matmul(s.h, p.var(self.wh))?;
        let z = g.add(zx, zh)?;
        let z = g.add_bias(z, p.var(self.b))?;
        let i = g.slice(z, 0, n)?;
        let i = g.sigmoid(i);
        let f = g.slice(z, n, n)?;
        let f = g.sigmoid(f);
        let cand = g.slice(z, 2 * n, n)?;
        let cand = g.tanh(cand);
        let o = g.slice(z, 3 * n, n)?;
        let o = g.sigmoid(o);
        let keep = g.mul(f, s.c)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_dense_passes_input() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Dense::new(&mut ps, "d", 3, 3, &mut rng);
        *ps.get_mut(d.w) = Matrix::identity(3);
        *ps.get_mut(d.b) = Matrix::zeros(1, 3);
        let mut g = Graph::new();
        let p = ps.bind(&mut g);
        let x = g.leaf(Matrix::from_vec(1, 3, vec![0.5, -1.0, 2.0]).unwrap());
        let y = d.forward(&mut g, &p, x).unwrap();
        assert_eq!(g.value(y).data, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn zero_lstm_outputs_zero() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = Lstm::new(&mut ps, "l", 2, 4, &mut rng);
        ps.values_mut().for_each(|m| m.data.fill(0.0));
        let mut g = Graph::new();
        let p = ps.bind(&mut g);
        let x = g.leaf(Matrix::from_vec(1, 2, vec![3.0, -1.0]).unwrap());
        let s = l.zero_state(&mut g, 1);
        let s = l.step(&mut g, &p, x, s).unwrap();
        assert!(g.value(s.h).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_bounds_and_forget_bias() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Dense::new(&mut ps, "d", 16, 8, &mut rng);
        assert!(ps.get(d.w).data.iter().all(|x| x.abs() <= 0.25));
        let l = Lstm::new(&mut ps, "l", 3, 5, &mut rng);
        assert_eq!(&ps.get(l.b).data[5..10], &[1.0; 5]);
        assert_eq!(ps.num_scalars(), 16 * 8 + 8 + 3 * 20 + 5 * 20 + 20);
    }
}
