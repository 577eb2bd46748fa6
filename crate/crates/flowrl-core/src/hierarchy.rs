//! Layerwise hierarchy construction.
//!
//! Layers are trained bottom-up. After training, a layer is frozen and folded
//! into the environment: the new dynamics are p(s'|s, f(h; s)) and the
//! layer's latent h becomes the exposed action. The finished stack composes
//! into a single bijective policy f_0 . f_1 . ... . f_{K-1}.

use std::sync::Arc;

use crate::envs::{Environment, EnvSpec, StepOutcome};
use crate::error::{Error, Result};
use crate::flow::FlowPolicy;
use crate::metrics::MetricRow;
use crate::rng::Rng;
use crate::trainer::{ActionPrior, LatentMode, StochasticPolicy, Trainer, TrainerConfig};

/// Environment with one frozen policy layer folded into its dynamics. Nest
/// these to embed a whole stack.
pub struct EmbeddedEnvironment {
    base: Box<dyn Environment>,
    policy: Arc<FlowPolicy>,
    spec: EnvSpec,
    last_obs: Vec<f64>,
}

pub fn embed_layer(
    base: Box<dyn Environment>,
    policy: Arc<FlowPolicy>,
) -> Result<EmbeddedEnvironment> {
    let base_spec = base.spec();
    if policy.obs_dim != base_spec.observation_dim {
        return Err(Error::DimMismatch {
            context: "embed_layer observation",
            expected: base_spec.observation_dim,
            got: policy.obs_dim,
        });
    }
    if policy.action_dim != base_spec.action_dim {
        return Err(Error::DimMismatch {
            context: "embed_layer action",
            expected: base_spec.action_dim,
            got: policy.action_dim,
        });
    }
    let spec = EnvSpec {
        observation_dim: base_spec.observation_dim,
        // The latent of a bijective layer has the dimension of its action.
        action_dim: policy.action_dim,
        max_episode_steps: base_spec.max_episode_steps,
        reward_channels: base_spec.reward_channels.clone(),
        action_bounds: None,
    };
    Ok(EmbeddedEnvironment {
        base,
        policy,
        spec,
        last_obs: Vec::new(),
    })
}

impl Environment for EmbeddedEnvironment {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        self.last_obs = self.base.reset(rng);
        self.last_obs.clone()
    }

    fn step(&mut self, latent: &[f64]) -> Result<StepOutcome> {
        if self.last_obs.is_empty() {
            return Err(Error::Invalid(
                "embedded environment stepped before reset".into(),
            ));
        }
        let (action, _) = self.policy.forward_eval(latent, &self.last_obs)?;
        let out = self.base.step(&action)?;
        self.last_obs = out.obs.clone();
        Ok(out)
    }

    fn clone_env(&self) -> Box<dyn Environment> {
        Box::new(EmbeddedEnvironment {
            base: self.base.clone_env(),
            policy: Arc::clone(&self.policy),
            spec: self.spec.clone(),
            last_obs: self.last_obs.clone(),
        })
    }
}

/// Per-layer training request: which reward channel to optimize and with
/// what trainer settings. `pretrain_env`, if set, replaces the task
/// environment while this layer trains (e.g. a wall-free maze variant for
/// skill pretraining); lower frozen layers are still embedded into it.
pub struct LayerSpec {
    pub reward_channel: String,
    pub config: TrainerConfig,
    pub pretrain_env: Option<Box<dyn Environment>>,
}

impl LayerSpec {
    pub fn new(reward_channel: impl Into<String>, config: TrainerConfig) -> Self {
        LayerSpec {
            reward_channel: reward_channel.into(),
            config,
            pretrain_env: None,
        }
    }
}

/// A frozen trained layer plus the settings it was trained with.
pub struct TrainedLayer {
    pub policy: Arc<FlowPolicy>,
    pub reward_channel: String,
    pub action_prior: ActionPrior,
    pub latent_mode: LatentMode,
    pub hold_n: usize,
}

/// Bottom-up sequence of frozen layers; index 0 acts on the raw environment.
pub struct LayerStack {
    pub layers: Vec<TrainedLayer>,
}

impl LayerStack {
    pub fn new() -> Self {
        LayerStack { layers: Vec::new() }
    }

    pub fn push(&mut self, layer: TrainedLayer) -> Result<()> {
        if let Some(top) = self.layers.last() {
            if layer.policy.action_dim != top.policy.action_dim {
                return Err(Error::DimMismatch {
                    context: "layer stack latent chain",
                    expected: top.policy.action_dim,
                    got: layer.policy.action_dim,
                });
            }
        }
        self.layers.push(layer);
        Ok(())
    }

    /// Environment seen by the next layer to train: every frozen layer
    /// embedded over `base`, lowest first.
    pub fn embedded_env(&self, base: &dyn Environment) -> Result<Box<dyn Environment>> {
        let mut env = base.clone_env();
        for layer in &self.layers {
            env = Box::new(embed_layer(env, Arc::clone(&layer.policy))?);
        }
        Ok(env)
    }
}

impl Default for LayerStack {
    fn default() -> Self {
        Self::new()
    }
}

/// The stack collapsed to one bijection in the top latent. Forward applies
/// the top layer first and the bottom layer last, so the output lives in the
/// raw action space.
pub struct ComposedPolicy {
    pub layers: Vec<Arc<FlowPolicy>>,
}

impl ComposedPolicy {
    pub fn forward_eval(&self, h: &[f64], obs: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut x = h.to_vec();
        let mut log_det = 0.0;
        for layer in self.layers.iter().rev() {
            let (y, d) = layer.forward_eval(&x, obs)?;
            x = y;
            log_det += d;
        }
        Ok((x, log_det))
    }

    pub fn inverse_eval(&self, a: &[f64], obs: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut x = a.to_vec();
        let mut log_det = 0.0;
        for layer in &self.layers {
            let (y, d) = layer.inverse_eval(&x, obs)?;
            x = y;
            log_det += d;
        }
        Ok((x, log_det))
    }

    pub fn log_prob_eval(&self, a: &[f64], obs: &[f64]) -> Result<f64> {
        let (h, inv_log_det) = self.inverse_eval(a, obs)?;
        let prior = &self.layers.last().unwrap().prior;
        Ok(prior.log_density(&h) + inv_log_det)
    }
}

impl StochasticPolicy for ComposedPolicy {
    fn action_dim(&self) -> usize {
        self.layers[0].action_dim
    }

    fn latent_dim(&self) -> usize {
        self.layers.last().unwrap().action_dim
    }

    fn sample_latent(&self, rng: &mut Rng) -> Vec<f64> {
        self.layers.last().unwrap().prior.sample(rng)
    }

    fn act(&self, latent: &[f64], obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_eval(latent, obs)?.0)
    }
}

pub fn compose(stack: &LayerStack) -> Result<ComposedPolicy> {
    if stack.layers.is_empty() {
        return Err(Error::Invalid("cannot compose an empty layer stack".into()));
    }
    for pair in stack.layers.windows(2) {
        if pair[0].policy.action_dim != pair[1].policy.action_dim {
            return Err(Error::DimMismatch {
                context: "compose latent chain",
                expected: pair[0].policy.action_dim,
                got: pair[1].policy.action_dim,
            });
        }
    }
    Ok(ComposedPolicy {
        layers: stack.layers.iter().map(|l| Arc::clone(&l.policy)).collect(),
    })
}

fn with_layer_context(i: usize, e: Error) -> Error {
    match e {
        Error::TrainingDiverged { step, diagnostic } => Error::TrainingDiverged {
            step,
            diagnostic: format!("layer {i}: {diagnostic}"),
        },
        Error::Config(msg) => Error::Config(format!("layer {i}: {msg}")),
        Error::Invalid(msg) => Error::Invalid(format!("layer {i}: {msg}")),
        other => other,
    }
}

/// Trains the layers bottom-up, freezing and embedding each before the next
/// starts. Layers above the first are forced to the Gaussian action prior.
/// Returns the stack and per-layer metric logs.
pub fn train_layerwise(
    base_env: &dyn Environment,
    specs: Vec<LayerSpec>,
) -> Result<(LayerStack, Vec<Vec<MetricRow>>)> {
    train_layerwise_from(base_env, LayerStack::new(), specs)
}

/// Continues an existing frozen stack with additional layers; layer indices
/// (for priors and error messages) count from the bottom of the whole stack.
pub fn train_layerwise_from(
    base_env: &dyn Environment,
    mut stack: LayerStack,
    specs: Vec<LayerSpec>,
) -> Result<(LayerStack, Vec<Vec<MetricRow>>)> {
    if stack.layers.is_empty() && specs.is_empty() {
        return Err(Error::Config("at least one layer is required".into()));
    }
    let offset = stack.layers.len();
    let mut logs = Vec::with_capacity(specs.len());
    for (i, spec) in specs.into_iter().enumerate() {
        let i = offset + i;
        let mut config = spec.config;
        if i >= 1 {
            config.action_prior = ActionPrior::Gaussian;
        }
        let layer_base: Box<dyn Environment> = match &spec.pretrain_env {
            Some(env) => env.clone_env(),
            None => base_env.clone_env(),
        };
        let env = stack
            .embedded_env(layer_base.as_ref())
            .map_err(|e| with_layer_context(i, e))?;
        let mut trainer = Trainer::new(env, spec.reward_channel.clone(), config.clone())
            .map_err(|e| with_layer_context(i, e))?;
        let rows = trainer.train().map_err(|e| with_layer_context(i, e))?;
        logs.push(rows);
        stack.push(TrainedLayer {
            policy: Arc::new(trainer.policy),
            reward_channel: spec.reward_channel,
            action_prior: config.action_prior,
            latent_mode: config.latent_mode,
            hold_n: config.hold_n,
        })?;
    }
    Ok((stack, logs))
}

/// Which rollout steps draw a fresh latent under a given schedule.
pub fn draws_fresh_latent(mode: LatentMode, hold_n: usize, step: usize) -> Result<bool> {
    match mode {
        LatentMode::PerStep => Ok(true),
        LatentMode::PerRollout => Ok(step == 0),
        LatentMode::HoldN => {
            if hold_n == 0 {
                return Err(Error::Config("hold_n must be >= 1".into()));
            }
            Ok(step % hold_n == 0)
        }
    }
}
