//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Tape`] is created per training step, records every operation, and is
//! discarded after the backward pass. Gradients are returned for every node;
//! callers keep the [`Var`] ids of their parameter leaves.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![x],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Row-major matrix of shape [rows, cols].
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MatMul(usize, usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Relu(usize),
    Neg(usize),
    Scale(usize, f64),
    Sum(usize),
    Mean(usize),
    SumLastAxis(usize),
    Concat(usize, usize),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// How two shapes line up for an elementwise op: equal, or one side is a
/// scalar / trailing-suffix of the other and cycles over it.
fn broadcast_ok(big: &[usize], small: &[usize]) -> bool {
    if big == small {
        return true;
    }
    if small == [1] {
        return true;
    }
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
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

    /// Inserts a value as a leaf node (parameter or constant input).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (big, small, swapped) = if ta.len() >= tb.len() {
            (ta, tb, false)
        } else {
            (tb, ta, true)
        };
        if !broadcast_ok(&big.shape, &small.shape) {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: ta.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let m = small.len();
        let data: Vec<f64> = big
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = small.data[i % m];
                if swapped {
                    f(y, x)
                } else {
                    f(x, y)
                }
            })
            .collect();
        let shape = big.shape.clone();
        Ok(self.push(Tensor::new(shape, data), op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    /// [m,k] x [k,n] -> [m,n]. Rank-1 left operands are treated as [1,k].
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        let (m, k) = match ta.shape[..] {
            [m, k] => (m, k),
            [k] => (1, k),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    lhs: ta.shape.clone(),
                    rhs: tb.shape.clone(),
                })
            }
        };
        let (k2, n) = match tb.shape[..] {
            [k2, n] => (k2, n),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    lhs: ta.shape.clone(),
                    rhs: tb.shape.clone(),
                })
            }
        };
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        dgemm(m, k, n, &ta.data, false, &tb.data, false, &mut out);
        let shape = if ta.rank() == 1 {
            vec![n]
        } else {
            vec![m, n]
        };
        Ok(self.push(Tensor::new(shape, out), Op::MatMul(a.0, b.0)))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = &self.nodes[a.0].value;
        let out = Tensor::new(t.shape.clone(), t.data.iter().map(|&x| f(x)).collect());
        self.push(out, op)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a.0))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.nodes[a.0].value.data.iter().find(|&&x| x <= 0.0) {
            return Err(Error::LogNonPositive { value: bad });
        }
        Ok(self.unary(a, f64::ln, Op::Log(a.0)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a.0))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a.0, c))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].value.data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let s: f64 = t.data.iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a.0))
    }

    /// Sums over the last axis: [b, n] -> [b]; [n] -> [1].
    pub fn sum_last_axis(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let n = *t.shape.last().expect("sum_last_axis on empty shape");
        let rows = t.len() / n;
        let data: Vec<f64> = (0..rows)
            .map(|r| t.data[r * n..(r + 1) * n].iter().sum())
            .collect();
        let shape = if t.rank() <= 1 {
            vec![1]
        } else {
            t.shape[..t.rank() - 1].to_vec()
        };
        self.push(Tensor::new(shape, data), Op::SumLastAxis(a.0))
    }

    /// Concatenates along the last axis; leading dims must match.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        let ok = ta.rank() == tb.rank()
            && !ta.shape.is_empty()
            && ta.shape[..ta.rank() - 1] == tb.shape[..tb.rank() - 1];
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: ta.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let na = *ta.shape.last().unwrap();
        let nb = *tb.shape.last().unwrap();
        let rows = ta.len() / na;
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        for r in 0..rows {
            data.extend_from_slice(&ta.data[r * na..(r + 1) * na]);
            data.extend_from_slice(&tb.data[r * nb..(r + 1) * nb]);
        }
        let mut shape = ta.shape.clone();
        *shape.last_mut().unwrap() = na + nb;
        Ok(self.push(Tensor::new(shape, data), Op::Concat(a.0, b.0)))
    }

    /// Reverse pass from a scalar loss. Returns one gradient tensor per node.
    pub fn backward(&self, loss: Var) -> Result<Vec<Tensor>> {
        let lt = &self.nodes[loss.0].value;
        if lt.len() != 1 {
            return Err(Error::NonScalarLoss(lt.shape.clone()));
        }
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.shape.clone()))
            .collect();
        grads[loss.0].data[0] = 1.0;

        for id in (0..=loss.0).rev() {
            let g = grads[id].clone();
            if g.data.iter().all(|&x| x == 0.0) {
                continue;
            }
            match self.nodes[id].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate_broadcast(&mut grads[a], &g.data, 1.0);
                    accumulate_broadcast(&mut grads[b], &g.data, 1.0);
                }
                Op::Sub(a, b) => {
                    accumulate_broadcast(&mut grads[a], &g.data, 1.0);
                    accumulate_broadcast(&mut grads[b], &g.data, -1.0);
                }
                Op::Mul(a, b) => {
                    let (da, db) = {
                        let ta = &self.nodes[a].value;
                        let tb = &self.nodes[b].value;
                        let n = g.data.len();
                        let mut da = vec![0.0; n];
                        let mut db = vec![0.0; n];
                        for i in 0..n {
                            let xa = ta.data[i % ta.len()];
                            let xb = tb.data[i % tb.len()];
                            da[i] = g.data[i] * xb;
                            db[i] = g.data[i] * xa;
                        }
                        (da, db)
                    };
                    accumulate_broadcast(&mut grads[a], &da, 1.0);
                    accumulate_broadcast(&mut grads[b], &db, 1.0);
                }
                Op::MatMul(a, b) => {
                    let ta = &self.nodes[a].value;
                    let tb = &self.nodes[b].value;
                    let k = *ta.shape.last().unwrap();
                    let m = ta.len() / k;
                    let n = tb.shape[1];
                    // dA = dC B^T ; dB = A^T dC
                    let mut da = vec![0.0; m * k];
                    dgemm(m, n, k, &g.data, false, &tb.data, true, &mut da);
                    let mut db = vec![0.0; k * n];
                    dgemm(k, m, n, &ta.data, true, &g.data, false, &mut db);
                    add_into(&mut grads[a].data, &da);
                    add_into(&mut grads[b].data, &db);
                }
                Op::Exp(a) => {
                    let out = &self.nodes[id].value;
                    for i in 0..g.data.len() {
                        grads[a].data[i] += g.data[i] * out.data[i];
                    }
                }
                Op::Log(a) => {
                    let inp = &self.nodes[a].value;
                    for i in 0..g.data.len() {
                        grads[a].data[i] += g.data[i] / inp.data[i];
                    }
                }
                Op::Tanh(a) => {
                    let out = &self.nodes[id].value;
                    for i in 0..g.data.len() {
                        grads[a].data[i] += g.data[i] * (1.0 - out.data[i] * out.data[i]);
                    }
                }
                Op::Relu(a) => {
                    let inp = &self.nodes[a].value;
                    for i in 0..g.data.len() {
                        if inp.data[i] > 0.0 {
                            grads[a].data[i] += g.data[i];
                        }
                    }
                }
                Op::Neg(a) => {
                    for i in 0..g.data.len() {
                        grads[a].data[i] -= g.data[i];
                    }
                }
                Op::Scale(a, c) => {
                    for i in 0..g.data.len() {
                        grads[a].data[i] += c * g.data[i];
                    }
                }
                Op::Sum(a) => {
                    let gv = g.data[0];
                    for x in grads[a].data.iter_mut() {
                        *x += gv;
                    }
                }
                Op::Mean(a) => {
                    let n = grads[a].len() as f64;
                    let gv = g.data[0] / n;
                    for x in grads[a].data.iter_mut() {
                        *x += gv;
                    }
                }
                Op::SumLastAxis(a) => {
                    let n = *self.nodes[a].value.shape.last().unwrap();
                    for (r, &gv) in g.data.iter().enumerate() {
                        for i in 0..n {
                            grads[a].data[r * n + i] += gv;
                        }
                    }
                }
                Op::Concat(a, b) => {
                    let na = *self.nodes[a].value.shape.last().unwrap();
                    let nb = *self.nodes[b].value.shape.last().unwrap();
                    let rows = self.nodes[a].value.len() / na;
                    for r in 0..rows {
                        for i in 0..na {
                            grads[a].data[r * na + i] += g.data[r * (na + nb) + i];
                        }
                        for i in 0..nb {
                            grads[b].data[r * nb + i] += g.data[r * (na + nb) + na + i];
                        }
                    }
                }
            }
        }
        Ok(grads)
    }
}

/// Adds `src * sign` into a gradient that may have been broadcast (cyclic
/// indexing over the smaller tensor during the forward pass).
fn accumulate_broadcast(dst: &mut Tensor, src: &[f64], sign: f64) {
    let m = dst.len();
    if m == src.len() {
        for i in 0..m {
            dst.data[i] += sign * src[i];
        }
    } else {
        for (i, &s) in src.iter().enumerate() {
            dst.data[i % m] += sign * s;
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// C += A(m x k) * B(k x n), optionally transposing either input in place
/// via stride swaps. Inputs are row-major flat slices.
pub fn dgemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64]) {
    let (rsa, csa) = if ta {
        (1isize, m as isize)
    } else {
        (k as isize, 1isize)
    };
    let (rsb, csb) = if tb {
        (1isize, k as isize)
    } else {
        (n as isize, 1isize)
    };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_componentwise() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let b = t.leaf(Tensor::vector(vec![3.0, 4.0]));
        let c = t.add(a, b).unwrap();
        assert_eq!(t.value(c).data, vec![4.0, 6.0]);
    }

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let eye = t.leaf(Tensor::matrix(
            3,
            3,
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        ));
        let m_data: Vec<f64> = (0..9).map(|i| i as f64 * 1.5 - 3.0).collect();
        let m = t.leaf(Tensor::matrix(3, 3, m_data.clone()));
        let out = t.matmul(eye, m).unwrap();
        assert_eq!(t.value(out).data, m_data);
    }

    #[test]
    fn grad_of_square_sum() {
        // d/dx sum(x*x) at x=[3] is [6]
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![3.0]));
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum(sq);
        let grads = t.backward(loss).unwrap();
        assert_eq!(grads[x.0].data, vec![6.0]);
    }

    #[test]
    fn constant_loss_zero_grads() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let c = t.leaf(Tensor::scalar(5.0));
        let grads = t.backward(c).unwrap();
        assert!(grads[x.0].data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn linear_loss_grad_is_input() {
        // loss = sum(w .* x) -> grad w = x
        let mut t = Tape::new();
        let w = t.leaf(Tensor::vector(vec![0.5, -1.0, 2.0]));
        let x = t.leaf(Tensor::vector(vec![3.0, 4.0, 5.0]));
        let p = t.mul(w, x).unwrap();
        let loss = t.sum(p);
        let grads = t.backward(loss).unwrap();
        assert_eq!(grads[w.0].data, vec![3.0, 4.0, 5.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let b = t.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let err = t.add(a, b).unwrap_err().to_string();
        assert!(err.contains("[2]") && err.contains("[3]"), "{err}");
    }

    #[test]
    fn log_nonpositive_errors() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::vector(vec![1.0, -0.5]));
        assert!(t.log(a).is_err());
    }

    #[test]
    fn non_scalar_loss_errors() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(a), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn broadcast_bias_add_grad_sums_rows() {
        // [2,3] + [3]: bias gradient is the column sum of upstream grads.
        let mut t = Tape::new();
        let x = t.leaf(Tensor::matrix(2, 3, vec![1.0; 6]));
        let b = t.leaf(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let y = t.add(x, b).unwrap();
        let loss = t.sum(y);
        let grads = t.backward(loss).unwrap();
        assert_eq!(grads[b.0].data, vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn concat_rows() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let b = t.leaf(Tensor::matrix(2, 1, vec![9.0, 8.0]));
        let c = t.concat(a, b).unwrap();
        assert_eq!(t.value(c).shape, vec![2, 3]);
        assert_eq!(t.value(c).data, vec![1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
    }

    #[test]
    fn sum_last_axis_rows() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let s = t.sum_last_axis(a);
        assert_eq!(t.value(s).shape, vec![2]);
        assert_eq!(t.value(s).data, vec![6.0, 15.0]);
    }

    #[test]
    fn tanh_bounded() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::vector(vec![-50.0, -1.0, 0.0, 1.0, 50.0]));
        let y = t.tanh(a);
        assert!(t.value(y).data.iter().all(|&v| v > -1.0 && v < 1.0 || v.abs() == 1.0));
        assert!(t.value(y).data.iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }
}
