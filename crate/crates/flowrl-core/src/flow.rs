//! Observation-conditioned bijective policy.
//!
//! Actions are produced by pushing a spherical-Gaussian latent through a
//! stack of coupling layers whose scale/translation networks are conditioned
//! on an observation embedding. The latent-to-action path is invertible, so
//! exact densities come from the change-of-variables formula:
//! `log pi(a|s) = log p(h) - log|det df/dh|` at `h = f^{-1}(a; s)`.

use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpVars};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

/// Scale-network outputs pass through tanh and are multiplied by this bound
/// before exponentiation, keeping every coupling layer invertible with a
/// bounded log-determinant.
pub const SCALE_BOUND: f64 = 5.0;

const LN_2PI: f64 = 1.8378770664093453;

/// Spherical unit Gaussian over the latent space.
#[derive(Debug, Clone)]
pub struct LatentPrior {
    pub dim: usize,
}

impl LatentPrior {
    pub fn log_density(&self, h: &[f64]) -> f64 {
        let sq: f64 = h.iter().map(|x| x * x).sum();
        -0.5 * self.dim as f64 * LN_2PI - 0.5 * sq
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        rng.normal_vec(self.dim)
    }

    /// Differential entropy, (dim/2)(1 + ln 2 pi).
    pub fn entropy(&self) -> f64 {
        0.5 * self.dim as f64 * (1.0 + LN_2PI)
    }
}

/// One affine coupling transform. `mask[i] == 1` marks pass-through
/// coordinates; the rest are scaled and shifted by networks that see only
/// the masked part and the observation embedding.
#[derive(Debug, Clone)]
pub struct CouplingLayer {
    pub mask: Vec<f64>,
    pub scale_net: Mlp,
    pub translation_net: Mlp,
}

impl CouplingLayer {
    fn new(dim: usize, embed_dim: usize, mask: Vec<f64>, rng: &mut Rng) -> Self {
        let sizes = [dim + embed_dim, dim, dim];
        CouplingLayer {
            mask,
            scale_net: Mlp::new(&sizes, rng, true),
            translation_net: Mlp::new(&sizes, rng, true),
        }
    }

    /// Masked scale and translation at a single point. Returns (s, t) with
    /// pass-through coordinates already zeroed in both.
    fn coefficients(&self, masked_input: &[f64], emb: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let dim = self.mask.len();
        let mut net_in = Vec::with_capacity(dim + emb.len());
        net_in.extend(masked_input.iter().zip(&self.mask).map(|(x, m)| x * m));
        net_in.extend_from_slice(emb);
        let s_raw = self.scale_net.eval(&net_in);
        let t_raw = self.translation_net.eval(&net_in);
        let s: Vec<f64> = s_raw
            .iter()
            .zip(&self.mask)
            .map(|(x, m)| x.tanh() * SCALE_BOUND * (1.0 - m))
            .collect();
        let t: Vec<f64> = t_raw
            .iter()
            .zip(&self.mask)
            .map(|(x, m)| x * (1.0 - m))
            .collect();
        (s, t)
    }
}

/// Policy metadata persisted with checkpoints.
#[derive(Debug, Clone)]
pub struct FlowPolicy {
    pub action_dim: usize,
    pub obs_dim: usize,
    pub embedder: Mlp,
    pub layers: Vec<CouplingLayer>,
    pub prior: LatentPrior,
}

/// Tape-side parameter handles in the same order as [`FlowPolicy::params`].
pub struct FlowVars {
    pub embedder: MlpVars,
    pub layers: Vec<(MlpVars, MlpVars)>,
}

impl FlowPolicy {
    /// Default architecture: two coupling layers with complementary masks
    /// (even indices pass through in layer 0), one shared observation
    /// embedder with two hidden layers of `embed_hidden` ReLU units and
    /// output size `2 * action_dim`.
    pub fn new(obs_dim: usize, action_dim: usize, rng: &mut Rng) -> Self {
        Self::with_layers(obs_dim, action_dim, 2, 128, rng)
    }

    pub fn with_layers(
        obs_dim: usize,
        action_dim: usize,
        n_layers: usize,
        embed_hidden: usize,
        rng: &mut Rng,
    ) -> Self {
        assert!(action_dim >= 1 && n_layers >= 1);
        let embed_dim = 2 * action_dim;
        let embedder = Mlp::new(&[obs_dim, embed_hidden, embed_hidden, embed_dim], rng, false);
        let layers = (0..n_layers)
            .map(|i| {
                // A single coordinate cannot be split, so dim 1 uses a
                // conditional affine driven purely by the embedding.
                let mask: Vec<f64> = if action_dim == 1 {
                    vec![0.0]
                } else {
                    (0..action_dim)
                        .map(|j| if (j + i) % 2 == 0 { 1.0 } else { 0.0 })
                        .collect()
                };
                CouplingLayer::new(action_dim, embed_dim, mask, rng)
            })
            .collect();
        FlowPolicy {
            action_dim,
            obs_dim,
            embedder,
            layers,
            prior: LatentPrior { dim: action_dim },
        }
    }

    fn check_dims(&self, h: &[f64], obs: &[f64], context: &'static str) -> Result<()> {
        if h.len() != self.action_dim {
            return Err(Error::DimMismatch {
                context,
                expected: self.action_dim,
                got: h.len(),
            });
        }
        if obs.len() != self.obs_dim {
            return Err(Error::DimMismatch {
                context,
                expected: self.obs_dim,
                got: obs.len(),
            });
        }
        if !h.iter().chain(obs).all(|x| x.is_finite()) {
            return Err(Error::NonFinite(context));
        }
        Ok(())
    }

    /// a = f(h; obs) and the forward log-determinant.
    pub fn forward_eval(&self, h: &[f64], obs: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_dims(h, obs, "flow forward")?;
        let emb = self.embedder.eval(obs);
        let mut x = h.to_vec();
        let mut log_det = 0.0;
        for layer in &self.layers {
            let (s, t) = layer.coefficients(&x, &emb);
            for i in 0..x.len() {
                x[i] = x[i] * s[i].exp() + t[i];
                log_det += s[i];
            }
        }
        Ok((x, log_det))
    }

    /// h = f^{-1}(a; obs) and the inverse log-determinant (the negation of
    /// the forward one at the matching point).
    pub fn inverse_eval(&self, a: &[f64], obs: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_dims(a, obs, "flow inverse")?;
        let emb = self.embedder.eval(obs);
        let mut x = a.to_vec();
        let mut log_det = 0.0;
        for layer in self.layers.iter().rev() {
            // Pass-through coordinates of the output equal those of the
            // input, so the coefficients can be recomputed from the output.
            let (s, t) = layer.coefficients(&x, &emb);
            for i in 0..x.len() {
                x[i] = (x[i] - t[i]) * (-s[i]).exp();
                log_det -= s[i];
            }
        }
        Ok((x, log_det))
    }

    pub fn log_prob_eval(&self, a: &[f64], obs: &[f64]) -> Result<f64> {
        let (h, inv_log_det) = self.inverse_eval(a, obs)?;
        Ok(self.prior.log_density(&h) + inv_log_det)
    }

    /// Reparameterized sample: h from the prior, a = f(h; obs).
    pub fn sample_eval(&self, obs: &[f64], rng: &mut Rng) -> Result<(Vec<f64>, f64, Vec<f64>)> {
        let h = self.prior.sample(rng);
        let (a, log_det) = self.forward_eval(&h, obs)?;
        let log_prob = self.prior.log_density(&h) - log_det;
        Ok((a, log_prob, h))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = self.embedder.params();
        for layer in &self.layers {
            out.extend(layer.scale_net.params());
            out.extend(layer.translation_net.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.embedder.params_mut();
        for layer in &mut self.layers {
            out.extend(layer.scale_net.params_mut());
            out.extend(layer.translation_net.params_mut());
        }
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = self.embedder.param_names("embedder");
        for (i, layer) in self.layers.iter().enumerate() {
            out.extend(layer.scale_net.param_names(&format!("coupling.{i}.scale")));
            out.extend(
                layer
                    .translation_net
                    .param_names(&format!("coupling.{i}.translation")),
            );
        }
        out
    }

    pub fn insert_params(&self, tape: &mut Tape) -> FlowVars {
        FlowVars {
            embedder: self.embedder.insert_params(tape),
            layers: self
                .layers
                .iter()
                .map(|l| {
                    (
                        l.scale_net.insert_params(tape),
                        l.translation_net.insert_params(tape),
                    )
                })
                .collect(),
        }
    }

    /// Batched tape forward: h and obs are [batch, dim] leaves. Returns the
    /// action batch and per-row forward log-determinant, both differentiable
    /// with respect to all policy parameters.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        h: Var,
        obs: Var,
        vars: &FlowVars,
    ) -> Result<(Var, Var)> {
        let batch = tape.value(h).shape[0];
        let emb = self.embedder.forward(tape, obs, &vars.embedder)?;
        let mut x = h;
        let mut log_det: Option<Var> = None;
        for (layer, (scale_vars, trans_vars)) in self.layers.iter().zip(&vars.layers) {
            let mask = tape.leaf(Tensor::vector(layer.mask.clone()));
            let active = tape.leaf(Tensor::vector(
                layer.mask.iter().map(|m| 1.0 - m).collect(),
            ));
            let masked = tape.mul(x, mask)?;
            let net_in = tape.concat(masked, emb)?;
            let s_raw = layer.scale_net.forward(tape, net_in, scale_vars)?;
            let s_tanh = tape.tanh(s_raw);
            let s_bounded = tape.scale(s_tanh, SCALE_BOUND);
            let s = tape.mul(s_bounded, active)?;
            let t_raw = layer.translation_net.forward(tape, net_in, trans_vars)?;
            let t = tape.mul(t_raw, active)?;
            let es = tape.exp(s);
            let scaled = tape.mul(x, es)?;
            x = tape.add(scaled, t)?;
            let ld = tape.sum_last_axis(s);
            log_det = Some(match log_det {
                None => ld,
                Some(acc) => tape.add(acc, ld)?,
            });
        }
        let log_det = log_det.unwrap_or_else(|| tape.leaf(Tensor::vector(vec![0.0; batch])));
        Ok((x, log_det))
    }
}
