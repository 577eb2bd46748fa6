//! Run orchestration: configured layerwise training with metrics, config
//! snapshot and checkpoints written to a per-run output directory.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::checkpoint::{value_hash, LayerCheckpoint, PolicyCheckpoint, StackCheckpoint};
use crate::config::ExperimentConfig;
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::hierarchy::{compose, draws_fresh_latent, train_layerwise_from, LayerStack};
use crate::metrics::{write_metrics, MetricRow};
use crate::rng::Rng;
use crate::trainer::{LatentMode, StochasticPolicy};

pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub stack: LayerStack,
    pub metrics: Vec<Vec<MetricRow>>,
}

/// Trains every configured layer and writes metrics.csv, config.toml, one
/// layer_i.json per layer and the combined stack.json into a fresh directory
/// named by timestamp and config hash. A mid-run failure leaves an error.txt
/// manifest next to whatever was already written.
pub fn run(config: &ExperimentConfig) -> Result<RunArtifacts> {
    resume(config, LayerStack::new(), None)
}

/// Like [`run`] but starts from an already-trained frozen stack, training
/// only the configured layers above it. `max_layers`, when set, caps the
/// total stack depth.
pub fn resume(
    config: &ExperimentConfig,
    initial: LayerStack,
    max_layers: Option<usize>,
) -> Result<RunArtifacts> {
    config.validate()?;
    let config_hash = value_hash(config)?;
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    let out_dir = Path::new(&config.out_dir).join(format!("{stamp}_{}", &config_hash[..12]));
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("config.toml"), config.to_toml()?)?;

    let result = run_in_dir(config, initial, max_layers, &out_dir, &config_hash);
    if let Err(e) = &result {
        let mut f = std::fs::File::create(out_dir.join("error.txt"))?;
        writeln!(f, "{e}")?;
    }
    result
}

fn run_in_dir(
    config: &ExperimentConfig,
    initial: LayerStack,
    max_layers: Option<usize>,
    out_dir: &Path,
    config_hash: &str,
) -> Result<RunArtifacts> {
    let base_env = config.env.build()?;
    let mut specs = config.layer_specs()?;
    let done = initial.layers.len();
    if done > specs.len() {
        return Err(Error::Config(format!(
            "checkpoint has {done} layers but the config defines only {}",
            specs.len()
        )));
    }
    let total = max_layers.unwrap_or(specs.len()).min(specs.len());
    if total < done {
        return Err(Error::Config(format!(
            "--layers {total} is below the {done} layers already trained"
        )));
    }
    specs.truncate(total);
    let new_specs = specs.split_off(done);
    let (stack, metrics) = train_layerwise_from(base_env.as_ref(), initial, new_specs)?;

    let mut all_rows = Vec::new();
    for rows in &metrics {
        all_rows.extend(rows.iter().cloned());
    }
    write_metrics(&out_dir.join("metrics.csv"), &all_rows)?;

    for (i, layer) in stack.layers.iter().enumerate() {
        let ck = LayerCheckpoint {
            reward_channel: layer.reward_channel.clone(),
            action_prior: layer.action_prior,
            latent_mode: layer.latent_mode,
            hold_n: layer.hold_n,
            policy: PolicyCheckpoint::from_policy(&layer.policy),
        };
        let text = serde_json::to_string_pretty(&ck)
            .map_err(|e| Error::Checkpoint(format!("layer serialization: {e}")))?;
        std::fs::write(out_dir.join(format!("layer_{i}.json")), text)?;
    }
    StackCheckpoint::from_stack(&stack, config_hash.to_string())
        .save(&out_dir.join("stack.json"))?;

    Ok(RunArtifacts {
        out_dir: out_dir.to_path_buf(),
        config_hash: config_hash.to_string(),
        stack,
        metrics,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub terminated: bool,
}

/// One seeded rollout recording every (state, action, reward) triple.
pub fn rollout_trajectory(
    env: &dyn Environment,
    policy: &dyn StochasticPolicy,
    channel: &str,
    max_steps: usize,
    latent_mode: LatentMode,
    hold_n: usize,
    seed: u64,
) -> Result<Trajectory> {
    let mut env = env.clone_env();
    let mut rng = Rng::new(seed);
    let mut obs = env.reset(&mut rng);
    let mut traj = Trajectory {
        states: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
        terminated: false,
    };
    let mut latent = Vec::new();
    let mut action = Vec::new();
    for step in 0..max_steps {
        if draws_fresh_latent(latent_mode, hold_n, step)? {
            latent = policy.sample_latent(&mut rng);
            action = policy.act(&latent, &obs)?;
        } else if latent_mode == LatentMode::PerRollout {
            action = policy.act(&latent, &obs)?;
        }
        let out = env.step(&action)?;
        traj.states.push(obs);
        traj.actions.push(action.clone());
        traj.rewards.push(out.rewards.get(channel).copied().unwrap_or(0.0));
        obs = out.obs;
        if out.terminal {
            traj.terminated = true;
            break;
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub returns: Vec<f64>,
    pub mean_return: f64,
    pub std_return: f64,
    /// Fraction of rollouts that ended in a terminal state (goal reached).
    pub success_rate: f64,
}

/// Deterministic-seed evaluation of a trained stack on `env`: rollout i uses
/// seed + i. When `dump` is set, all trajectories go there as JSON.
pub fn evaluate_stack(
    stack: &LayerStack,
    env: &dyn Environment,
    channel: &str,
    n_rollouts: usize,
    seed: u64,
    dump: Option<&Path>,
) -> Result<EvalReport> {
    let top = stack
        .layers
        .last()
        .ok_or_else(|| Error::Invalid("cannot evaluate an empty stack".into()))?;
    let policy = compose(stack)?;
    let spec = env.spec();
    if policy.action_dim() != spec.action_dim {
        return Err(Error::DimMismatch {
            context: "evaluation action",
            expected: spec.action_dim,
            got: policy.action_dim(),
        });
    }
    if stack.layers[0].policy.obs_dim != spec.observation_dim {
        return Err(Error::DimMismatch {
            context: "evaluation observation",
            expected: spec.observation_dim,
            got: stack.layers[0].policy.obs_dim,
        });
    }
    let mut returns = Vec::with_capacity(n_rollouts);
    let mut successes = 0usize;
    let mut trajectories = Vec::new();
    for r in 0..n_rollouts {
        let traj = rollout_trajectory(
            env,
            &policy,
            channel,
            spec.max_episode_steps,
            top.latent_mode,
            top.hold_n,
            seed.wrapping_add(r as u64),
        )?;
        returns.push(traj.rewards.iter().sum());
        if traj.terminated {
            successes += 1;
        }
        if dump.is_some() {
            trajectories.push(traj);
        }
    }
    if let Some(path) = dump {
        let text = serde_json::to_string(&trajectories)
            .map_err(|e| Error::Checkpoint(format!("trajectory dump: {e}")))?;
        std::fs::write(path, text)?;
    }
    let mean = returns.iter().sum::<f64>() / n_rollouts.max(1) as f64;
    let std = (returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
        / n_rollouts.max(1) as f64)
        .sqrt();
    Ok(EvalReport {
        returns,
        mean_return: mean,
        std_return: std,
        success_rate: successes as f64 / n_rollouts.max(1) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::METRICS_HEADER;

    fn bandit_config(out: &Path) -> ExperimentConfig {
        ExperimentConfig::parse(&format!(
            r#"
seed = 5
out_dir = "{}"

[env]
name = "quadratic_bandit"
params = {{ k = 0.5, mu = [0.5, -0.5] }}

[[layer]]
reward_channel = "task"

[layer.trainer]
total_epochs = 2
steps_per_epoch = 150
min_pool_size = 64
batch_size = 16
hidden_units = 16
max_path_length = 1
eval_rollouts = 3
"#,
            out.display()
        ))
        .unwrap()
    }

    #[test]
    fn run_writes_all_artifacts() {
        let tmp = std::env::temp_dir().join("flowrl_run_test");
        let _ = std::fs::remove_dir_all(&tmp);
        let config = bandit_config(&tmp);
        let arts = run(&config).unwrap();
        let metrics = std::fs::read_to_string(arts.out_dir.join("metrics.csv")).unwrap();
        assert!(metrics.starts_with(METRICS_HEADER));
        assert_eq!(metrics.lines().count(), 3);
        assert!(arts.out_dir.join("config.toml").exists());
        assert!(arts.out_dir.join("layer_0.json").exists());
        assert!(arts.out_dir.join("stack.json").exists());
        assert!(!arts.out_dir.join("error.txt").exists());
    }

    #[test]
    fn identical_runs_match_except_wall_clock() {
        let tmp = std::env::temp_dir().join("flowrl_det_test");
        let _ = std::fs::remove_dir_all(&tmp);
        let config = bandit_config(&tmp);
        let a = run(&config).unwrap();
        let b = run(&config).unwrap();
        let strip = |dir: &Path| {
            std::fs::read_to_string(dir.join("metrics.csv"))
                .unwrap()
                .lines()
                .map(|l| l.rsplit_once(',').unwrap().0.to_string())
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a.out_dir), strip(&b.out_dir));
        assert_eq!(
            std::fs::read_to_string(a.out_dir.join("stack.json")).unwrap(),
            std::fs::read_to_string(b.out_dir.join("stack.json")).unwrap()
        );
    }

    #[test]
    fn evaluation_reproduces_after_reload() {
        let tmp = std::env::temp_dir().join("flowrl_eval_test");
        let _ = std::fs::remove_dir_all(&tmp);
        let config = bandit_config(&tmp);
        let arts = run(&config).unwrap();
        let env = config.env.build().unwrap();
        let before =
            evaluate_stack(&arts.stack, env.as_ref(), "task", 5, 99, None).unwrap();
        assert_eq!(before.returns.len(), 5);
        let reloaded = StackCheckpoint::load(&arts.out_dir.join("stack.json"))
            .unwrap()
            .to_stack()
            .unwrap();
        let after = evaluate_stack(&reloaded, env.as_ref(), "task", 5, 99, None).unwrap();
        assert_eq!(before.returns, after.returns);
    }

    #[test]
    fn evaluation_rejects_mismatched_env() {
        let tmp = std::env::temp_dir().join("flowrl_eval_dim_test");
        let _ = std::fs::remove_dir_all(&tmp);
        let config = bandit_config(&tmp);
        let arts = run(&config).unwrap();
        let maze = crate::envs::PointMaze::new(0, 50).unwrap();
        assert!(evaluate_stack(&arts.stack, &maze, "sparse_goal", 2, 1, None).is_err());
    }
}
