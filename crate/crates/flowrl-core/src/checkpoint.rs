//! Text checkpoints: named parameter arrays plus enough topology metadata to
//! rebuild a policy bit-for-bit. JSON floats round-trip exactly (shortest
//! decimal form), so save/load is lossless.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow::FlowPolicy;
use crate::hierarchy::{LayerStack, TrainedLayer};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::trainer::{ActionPrior, LatentMode};

/// SHA-256 over shapes and raw float bits, hex-encoded. Used to prove frozen
/// layers stay untouched.
pub fn param_hash(params: &[&Tensor]) -> String {
    let mut hasher = Sha256::new();
    for t in params {
        for &d in &t.shape {
            hasher.update((d as u64).to_le_bytes());
        }
        for &x in &t.data {
            hasher.update(x.to_bits().to_le_bytes());
        }
    }
    hex(&hasher.finalize())
}

/// SHA-256 of a value's canonical JSON encoding, hex-encoded; used to stamp
/// checkpoints and output directories with the config that produced them.
pub fn value_hash<T: Serialize>(v: &T) -> Result<String> {
    let bytes = serde_json::to_vec(v)
        .map_err(|e| Error::Checkpoint(format!("config hashing failed: {e}")))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex(&hasher.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyCheckpoint {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub coupling_layers: usize,
    pub embed_hidden: usize,
    pub params: BTreeMap<String, ParamArray>,
}

impl PolicyCheckpoint {
    pub fn from_policy(policy: &FlowPolicy) -> Self {
        let embed_hidden = policy.embedder.params()[0].shape[1];
        let params = policy
            .param_names()
            .into_iter()
            .zip(policy.params())
            .map(|(name, t)| {
                (
                    name,
                    ParamArray {
                        shape: t.shape.clone(),
                        data: t.data.clone(),
                    },
                )
            })
            .collect();
        PolicyCheckpoint {
            obs_dim: policy.obs_dim,
            action_dim: policy.action_dim,
            coupling_layers: policy.layers.len(),
            embed_hidden,
            params,
        }
    }

    pub fn to_policy(&self) -> Result<FlowPolicy> {
        let mut rng = Rng::new(0);
        let mut policy = FlowPolicy::with_layers(
            self.obs_dim,
            self.action_dim,
            self.coupling_layers,
            self.embed_hidden,
            &mut rng,
        );
        let names = policy.param_names();
        if self.params.len() != names.len() {
            let known: std::collections::BTreeSet<_> = names.iter().cloned().collect();
            if let Some(extra) = self.params.keys().find(|k| !known.contains(*k)) {
                return Err(Error::Checkpoint(format!("unknown parameter '{extra}'")));
            }
        }
        for (name, tensor) in names.iter().zip(policy.params_mut()) {
            let arr = self
                .params
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter '{name}'")))?;
            if arr.shape != tensor.shape {
                return Err(Error::Checkpoint(format!(
                    "parameter '{name}' has shape {:?}, expected {:?}",
                    arr.shape, tensor.shape
                )));
            }
            if arr.data.len() != tensor.data.len() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{name}' has {} values, expected {}",
                    arr.data.len(),
                    tensor.data.len()
                )));
            }
            tensor.data = arr.data.clone();
        }
        Ok(policy)
    }

    pub fn check_dims(&self, obs_dim: usize, action_dim: usize) -> Result<()> {
        if self.obs_dim != obs_dim {
            return Err(Error::DimMismatch {
                context: "checkpoint obs_dim",
                expected: obs_dim,
                got: self.obs_dim,
            });
        }
        if self.action_dim != action_dim {
            return Err(Error::DimMismatch {
                context: "checkpoint action_dim",
                expected: action_dim,
                got: self.action_dim,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerCheckpoint {
    pub reward_channel: String,
    pub action_prior: ActionPrior,
    pub latent_mode: LatentMode,
    pub hold_n: usize,
    pub policy: PolicyCheckpoint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackCheckpoint {
    /// Hash of the experiment config that produced this stack.
    pub config_hash: String,
    pub layers: Vec<LayerCheckpoint>,
}

impl StackCheckpoint {
    pub fn from_stack(stack: &LayerStack, config_hash: String) -> Self {
        StackCheckpoint {
            config_hash,
            layers: stack
                .layers
                .iter()
                .map(|l| LayerCheckpoint {
                    reward_channel: l.reward_channel.clone(),
                    action_prior: l.action_prior,
                    latent_mode: l.latent_mode,
                    hold_n: l.hold_n,
                    policy: PolicyCheckpoint::from_policy(&l.policy),
                })
                .collect(),
        }
    }

    pub fn to_stack(&self) -> Result<LayerStack> {
        let mut stack = LayerStack::new();
        for layer in &self.layers {
            stack.push(TrainedLayer {
                policy: std::sync::Arc::new(layer.policy.to_policy()?),
                reward_channel: layer.reward_channel.clone(),
                action_prior: layer.action_prior,
                latent_mode: layer.latent_mode,
                hold_n: layer.hold_n,
            })?;
        }
        Ok(stack)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Checkpoint(format!("serialization failed: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| {
            Error::Checkpoint(format!("failed to parse {}: {e}", path.display()))
        })
    }
}
