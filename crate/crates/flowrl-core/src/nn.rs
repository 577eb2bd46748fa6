//! Fully-connected networks on top of the tape.
//!
//! Hidden layers use ReLU and uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
//! initialization; the final layer is linear and may be zero-initialized
//! (flow scale/translation networks start at the identity map).

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{dgemm, Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct Linear {
    /// [in, out], row-major.
    pub weight: Tensor,
    /// [out].
    pub bias: Tensor,
}

impl Linear {
    fn init(fan_in: usize, fan_out: usize, rng: &mut Rng, zero: bool) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = if zero {
            Tensor::zeros(vec![fan_in, fan_out])
        } else {
            Tensor::matrix(
                fan_in,
                fan_out,
                (0..fan_in * fan_out)
                    .map(|_| rng.uniform_in(-bound, bound))
                    .collect(),
            )
        };
        Linear {
            weight,
            bias: Tensor::zeros(vec![fan_out]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Tape-side handles to one network's parameters, in [`Mlp::params`] order.
pub struct MlpVars(pub Vec<Var>);

impl Mlp {
    /// `sizes` lists [in, hidden..., out]. `zero_final` zero-initializes the
    /// output layer's weights.
    pub fn new(sizes: &[usize], rng: &mut Rng, zero_final: bool) -> Self {
        assert!(sizes.len() >= 2);
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let last = i == sizes.len() - 2;
                Linear::init(w[0], w[1], rng, zero_final && last)
            })
            .collect();
        Mlp {
            layers,
            in_dim: sizes[0],
            out_dim: *sizes.last().unwrap(),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("{prefix}.{i}.weight"), format!("{prefix}.{i}.bias")])
            .collect()
    }

    /// Registers all parameters as tape leaves.
    pub fn insert_params(&self, tape: &mut Tape) -> MlpVars {
        MlpVars(
            self.params()
                .into_iter()
                .map(|p| tape.leaf(p.clone()))
                .collect(),
        )
    }

    /// Tape forward for a [batch, in] (or [in]) input.
    pub fn forward(&self, tape: &mut Tape, input: Var, vars: &MlpVars) -> Result<Var> {
        let mut x = input;
        let n = self.layers.len();
        for i in 0..n {
            let w = vars.0[2 * i];
            let b = vars.0[2 * i + 1];
            let wx = tape.matmul(x, w)?;
            x = tape.add(wx, b)?;
            if i + 1 < n {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    /// Value-only forward on a flat [batch, in] buffer; no tape recording.
    pub fn eval_batch(&self, input: &[f64], batch: usize) -> Vec<f64> {
        debug_assert_eq!(input.len(), batch * self.in_dim);
        let mut x = input.to_vec();
        let mut cols = self.in_dim;
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            let out_dim = layer.bias.len();
            let mut y = vec![0.0; batch * out_dim];
            if batch == 1 {
                // Plain matvec. dgemm's transient packing buffers fragment
                // the heap badly when single-row evals interleave with
                // long-lived replay allocations.
                for (k, &xk) in x.iter().enumerate() {
                    let row = &layer.weight.data[k * out_dim..(k + 1) * out_dim];
                    for c in 0..out_dim {
                        y[c] += xk * row[c];
                    }
                }
            } else {
                dgemm(batch, cols, out_dim, &x, false, &layer.weight.data, false, &mut y);
            }
            for r in 0..batch {
                for c in 0..out_dim {
                    let v = &mut y[r * out_dim + c];
                    *v += layer.bias.data[c];
                    if i + 1 < n && *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            x = y;
            cols = out_dim;
        }
        x
    }

    pub fn eval(&self, input: &[f64]) -> Vec<f64> {
        self.eval_batch(input, 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_matches_tape_forward() {
        let mut rng = Rng::new(11);
        let mlp = Mlp::new(&[3, 5, 2], &mut rng, false);
        let input = vec![0.3, -1.2, 0.7];
        let fast = mlp.eval(&input);
        let mut tape = Tape::new();
        let vars = mlp.insert_params(&mut tape);
        let x = tape.leaf(Tensor::matrix(1, 3, input));
        let y = mlp.forward(&mut tape, x, &vars).unwrap();
        for (a, b) in fast.iter().zip(&tape.value(y).data) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_final_outputs_zero() {
        let mut rng = Rng::new(5);
        let mlp = Mlp::new(&[4, 4, 4], &mut rng, true);
        let out = mlp.eval(&[1.0, -2.0, 0.5, 3.0]);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_within_fan_in_bound() {
        let mut rng = Rng::new(9);
        let mlp = Mlp::new(&[16, 8], &mut rng, false);
        let bound = 1.0 / 4.0;
        assert!(mlp.layers[0].weight.data.iter().all(|w| w.abs() <= bound));
    }
}
