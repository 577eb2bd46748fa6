//! Experiment configuration files.
//!
//! TOML with strict keys: anything unknown is a parse error, so typos fail
//! loudly instead of silently falling back to defaults.

use serde::{Deserialize, Serialize};

use crate::envs::{build_env, Environment, EnvParams};
use crate::error::{Error, Result};
use crate::hierarchy::LayerSpec;
use crate::trainer::TrainerConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub name: String,
    #[serde(default)]
    pub params: EnvParams,
}

impl EnvConfig {
    pub fn build(&self) -> Result<Box<dyn Environment>> {
        build_env(&self.name, &self.params)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub reward_channel: String,
    #[serde(default)]
    pub trainer: TrainerConfig,
    /// Replacement environment while this layer trains (e.g. the wall-free
    /// maze variant for skill pretraining). Frozen lower layers are still
    /// embedded into it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain_env: Option<EnvConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    /// Base seed; layer i trains with seed + i. Overridable from the CLI.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    /// When set, overrides eval_rollouts in every layer's trainer config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_rollouts: Option<usize>,
    #[serde(rename = "layer")]
    pub layers: Vec<LayerConfig>,
}

fn default_out_dir() -> String {
    "runs".to_string()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("at least one [[layer]] is required".into()));
        }
        self.env.build()?;
        for (i, layer) in self.layers.iter().enumerate() {
            layer
                .trainer
                .validate()
                .map_err(|e| Error::Config(format!("layer {i}: {e}")))?;
            if let Some(env) = &layer.pretrain_env {
                env.build()
                    .map_err(|e| Error::Config(format!("layer {i} pretrain_env: {e}")))?;
            }
        }
        Ok(())
    }

    /// Materializes per-layer trainer specs with the derived seeds and the
    /// experiment-wide eval rollout override applied.
    pub fn layer_specs(&self) -> Result<Vec<LayerSpec>> {
        let mut specs = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut trainer = layer.trainer.clone();
            trainer.seed = self.seed.wrapping_add(i as u64);
            if let Some(n) = self.eval_rollouts {
                trainer.eval_rollouts = n;
            }
            let mut spec = LayerSpec::new(layer.reward_channel.clone(), trainer);
            if let Some(env) = &layer.pretrain_env {
                spec.pretrain_env = Some(env.build()?);
            }
            specs.push(spec);
        }
        Ok(specs)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("config serialization: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAZE_CONFIG: &str = r#"
seed = 7
out_dir = "runs"

[env]
name = "point_maze"
params = { goal = 1, max_episode_steps = 100 }

[[layer]]
reward_channel = "velocity_norm"
pretrain_env = { name = "point_mass", params = { max_episode_steps = 100 } }

[layer.trainer]
total_epochs = 2
reward_scale = 10.0

[[layer]]
reward_channel = "sparse_goal"

[layer.trainer]
latent_mode = "hold_n"
hold_n = 3
action_prior = "gaussian"
"#;

    #[test]
    fn maze_config_parses() {
        let c = ExperimentConfig::parse(MAZE_CONFIG).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.layers.len(), 2);
        assert_eq!(c.layers[0].reward_channel, "velocity_norm");
        assert_eq!(c.layers[0].trainer.reward_scale, 10.0);
        assert!(c.layers[0].pretrain_env.is_some());
        assert_eq!(c.layers[1].trainer.hold_n, 3);
        let specs = c.layer_specs().unwrap();
        assert_eq!(specs[0].config.seed, 7);
        assert_eq!(specs[1].config.seed, 8);
    }

    #[test]
    fn unknown_key_rejected_with_name() {
        let bad = MAZE_CONFIG.replace("out_dir", "out_dirr");
        let err = ExperimentConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("out_dirr"), "{err}");
    }

    #[test]
    fn unknown_trainer_key_rejected() {
        let bad = MAZE_CONFIG.replace("reward_scale", "reward_scalee");
        assert!(ExperimentConfig::parse(&bad).is_err());
    }

    #[test]
    fn missing_layers_rejected() {
        let err = ExperimentConfig::parse("[env]\nname = \"point_mass\"\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("layer"), "{err}");
    }

    #[test]
    fn unknown_env_rejected() {
        let bad = MAZE_CONFIG.replace("point_maze", "humanoid");
        assert!(ExperimentConfig::parse(&bad).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = ExperimentConfig::parse(MAZE_CONFIG).unwrap();
        let again = ExperimentConfig::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(again.seed, c.seed);
        assert_eq!(again.layers.len(), c.layers.len());
        assert_eq!(
            again.layers[1].trainer.hold_n,
            c.layers[1].trainer.hold_n
        );
    }
}
