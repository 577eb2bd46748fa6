use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flowrl_core::checkpoint::StackCheckpoint;
use flowrl_core::config::ExperimentConfig;
use flowrl_core::envs::TabularMdp;
use flowrl_core::error::Error;
use flowrl_core::experiment::{evaluate_stack, resume, run};
use flowrl_core::oracle::{
    bandit_posterior, enumerate_posterior, risky_branch_mdp, soft_value_iteration,
    tabular_objective,
};
use flowrl_core::Rng;

#[derive(Parser)]
#[command(name = "flowrl", version, about = "Max-entropy RL with flow policies and layered hierarchies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every layer in a config from scratch.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Load a saved stack and train the remaining configured layers on top.
    Stack {
        #[arg(long)]
        config: PathBuf,
        /// stack.json written by a previous run.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Cap on total stack depth after this invocation.
        #[arg(long)]
        layers: Option<usize>,
    },
    /// Seeded evaluation rollouts of a saved stack on the configured env.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Config providing the environment (its layer sections are unused).
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        rollouts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional JSON trajectory dump path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-checks the exact-inference oracles against each other.
    OracleCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::TrainingDiverged { .. } => 2,
        Error::Io(_) | Error::Checkpoint(_) => 3,
        _ => 1,
    }
}

fn load_config(
    path: &PathBuf,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(o) = out {
        config.out_dir = o.display().to_string();
    }
    Ok(config)
}

fn print_run_summary(arts: &flowrl_core::experiment::RunArtifacts) {
    println!("out_dir: {}", arts.out_dir.display());
    println!("config_hash: {}", arts.config_hash);
    for (i, rows) in arts.metrics.iter().enumerate() {
        if let Some(last) = rows.last() {
            println!(
                "layer {i}: {} epochs, final mean_return {:.4}",
                rows.len(),
                last.mean_return
            );
        }
    }
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Train { config, seed, out } => {
            let config = load_config(&config, seed, out)?;
            let arts = run(&config)?;
            print_run_summary(&arts);
            Ok(())
        }
        Command::Stack {
            config,
            checkpoint,
            seed,
            out,
            layers,
        } => {
            let config = load_config(&config, seed, out)?;
            let initial = StackCheckpoint::load(&checkpoint)?.to_stack()?;
            println!("resuming from {} trained layers", initial.layers.len());
            let arts = resume(&config, initial, layers)?;
            print_run_summary(&arts);
            Ok(())
        }
        Command::Evaluate {
            checkpoint,
            config,
            rollouts,
            seed,
            out,
        } => {
            let config = load_config(&config, None, None)?;
            let stack = StackCheckpoint::load(&checkpoint)?.to_stack()?;
            let env = config.env.build()?;
            let channel = stack
                .layers
                .last()
                .map(|l| l.reward_channel.clone())
                .ok_or_else(|| Error::Checkpoint("stack has no layers".into()))?;
            let report = evaluate_stack(
                &stack,
                env.as_ref(),
                &channel,
                rollouts,
                seed,
                out.as_deref(),
            )?;
            println!("channel: {channel}");
            println!("returns: {:?}", report.returns);
            println!(
                "mean {:.4}  std {:.4}  success_rate {:.2}",
                report.mean_return, report.std_return, report.success_rate
            );
            Ok(())
        }
        Command::OracleCheck { seed } => oracle_check(seed),
    }
}

/// Compares brute-force trajectory enumeration with soft value iteration on
/// random deterministic MDPs, then demonstrates the optimism gap between the
/// two on a stochastic risky-branch MDP.
fn oracle_check(seed: u64) -> Result<(), Error> {
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    let n_cases = 50;
    for i in 0..n_cases {
        let n_states = 2 + rng.index(3);
        let n_actions = 2 + rng.index(2);
        let horizon = 1 + rng.index(3);
        let mdp = TabularMdp::random(&mut rng, n_states, n_actions, horizon, true);
        let post = enumerate_posterior(&mdp, horizon)?;
        let soft = soft_value_iteration(&mdp, horizon);
        for t in 0..=horizon {
            for s in 0..n_states {
                for a in 0..n_actions {
                    worst =
                        worst.max((post.conditionals[t][s][a] - soft.policy[t][s][a]).abs());
                }
            }
        }
        if worst > 1e-9 {
            return Err(Error::Invalid(format!(
                "oracle disagreement {worst:.3e} on deterministic case {i}"
            )));
        }
    }
    println!("deterministic suite: {n_cases} cases, max policy gap {worst:.3e}");

    let mdp = risky_branch_mdp();
    let horizon = mdp.horizon;
    let post = enumerate_posterior(&mdp, horizon)?;
    let soft = soft_value_iteration(&mdp, horizon);
    let risky_enum = post.conditionals[0][0][1];
    let risky_soft = soft.policy[0][0][1];
    let obj_enum = tabular_objective(&mdp, &post.conditionals, horizon);
    let obj_soft = tabular_objective(&mdp, &soft.policy, horizon);
    println!(
        "risky branch: enumeration picks risk with p={risky_enum:.4}, variational with p={risky_soft:.4}"
    );
    println!("objective: enumeration {obj_enum:.6}, variational {obj_soft:.6}");
    if risky_enum <= risky_soft {
        return Err(Error::Invalid(
            "enumeration posterior is not more optimistic than the variational policy".into(),
        ));
    }
    if obj_soft < obj_enum {
        return Err(Error::Invalid(
            "variational policy does not score a higher objective".into(),
        ));
    }

    let g = bandit_posterior(0.5, 1.0, vec![1.0, -1.0])?;
    println!(
        "bandit posterior: mean {:?}, variance {:.4}",
        g.mean, g.variance
    );
    println!("oracle check passed");
    Ok(())
}
