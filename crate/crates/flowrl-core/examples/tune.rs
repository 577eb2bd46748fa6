// Scratch harness for tuning acceptance hyperparameters. Not shipped.

use std::time::Instant;

use flowrl_core::envs::{self, QuadraticBandit};
use flowrl_core::oracle::{bandit_posterior, mc_kl_vs_gaussian};
use flowrl_core::trainer::{Trainer, TrainerConfig};
use flowrl_core::Rng;

fn bandit() {
    let t0 = Instant::now();
    let env = Box::new(QuadraticBandit::new(0.5, vec![1.0, -1.0]));
    let config = TrainerConfig {
        seed: 0,
        total_epochs: 30,
        max_path_length: 1,
        ..TrainerConfig::default()
    };
    let mut trainer = Trainer::new(env, envs::TASK, config).unwrap();
    let target = bandit_posterior(0.5, 1.0, vec![1.0, -1.0]).unwrap();
    for epoch in 0..30 {
        trainer.config.total_epochs = 1;
        let rows = trainer.train().unwrap();
        let kl = mc_kl_vs_gaussian(
            &trainer.policy,
            &[0.0],
            &target,
            100_000,
            &mut Rng::new(777),
        )
        .unwrap();
        println!(
            "epoch {epoch:2}  return {:8.4}  kl {kl:8.4}  elapsed {:.1}s",
            rows[0].mean_return,
            t0.elapsed().as_secs_f64()
        );
        if kl < 0.05 {
            println!("converged at epoch {epoch}");
            break;
        }
    }
}

fn maze() {
    use std::sync::Arc;

    use flowrl_core::envs::{Environment, PointMass2D, PointMaze};
    use flowrl_core::hierarchy::embed_layer;
    use flowrl_core::trainer::{ActionPrior, LatentMode, StochasticPolicy};

    let t0 = Instant::now();
    let max_path = 500;

    // Stage 1: velocity pretraining in the wall-free variant.
    let pretrain_env = Box::new(PointMass2D::new(max_path));
    let low_config = TrainerConfig {
        seed: 100,
        total_epochs: 10,
        max_path_length: max_path,
        reward_scale: 1.0,
        action_prior: ActionPrior::Gaussian,
        eval_rollouts: 5,
        ..TrainerConfig::default()
    };
    let mut low = Trainer::new(pretrain_env, envs::VELOCITY_NORM, low_config).unwrap();
    for row in low.train().unwrap() {
        println!(
            "low epoch {:2}  return {:8.3}  elapsed {:.0}s",
            row.epoch,
            row.mean_return,
            t0.elapsed().as_secs_f64()
        );
    }
    let f0 = Arc::new(low.policy.clone());

    // Stage 2: high-level training on one goal with the frozen skill embedded.
    for goal in [0usize] {
        let maze = PointMaze::new(goal, max_path).unwrap();
        let emb = embed_layer(maze.clone_env(), Arc::clone(&f0)).unwrap();
        let high_config = TrainerConfig {
            seed: 200 + goal as u64,
            total_epochs: 1,
            max_path_length: max_path,
            steps_per_epoch: 3000,
            reward_scale: 1.0,
            action_prior: ActionPrior::Gaussian,
            latent_mode: LatentMode::HoldN,
            hold_n: 3,
            eval_rollouts: 1,
            ..TrainerConfig::default()
        };
        let mut high = Trainer::new(Box::new(emb), envs::SPARSE_GOAL, high_config).unwrap();
        let mut best = 0.0f64;
        for epoch in 0..30 {
            let rows = high.train().unwrap();
            // success = terminal reached = positive sparse return
            let succ = {
                let mut hits = 0;
                for r in 0..5 {
                    let ret = flowrl_core::trainer::rollout_return(
                        high.env.as_ref(),
                        &high.policy,
                        envs::SPARSE_GOAL,
                        max_path,
                        LatentMode::HoldN,
                        3,
                        9000 + r,
                    )
                    .unwrap();
                    if ret > 0.0 {
                        hits += 1;
                    }
                }
                hits as f64 / 5.0
            };
            best = best.max(succ);
            println!(
                "goal {goal} epoch {epoch:2}  return {:8.2}  success {succ:.2}  elapsed {:.0}s",
                rows[0].mean_return,
                t0.elapsed().as_secs_f64()
            );
            if succ >= 0.8 {
                break;
            }
        }
        println!("goal {goal}: best success {best:.2}");
        if best >= 0.8 {
            break;
        }
    }
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "bandit".into());
    match which.as_str() {
        "bandit" => bandit(),
        "maze" => maze(),
        other => panic!("unknown target {other}"),
    }
}
