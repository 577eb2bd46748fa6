use flowrl_core::envs::{self, Environment, PointMass2D, PointMaze};
use flowrl_core::hierarchy::embed_layer;
use flowrl_core::trainer::{Trainer, TrainerConfig};
use flowrl_core::Rng;
use std::sync::Arc;

fn main() {
    let max_path = 500;
    let rs: f64 = std::env::args().nth(1).unwrap().parse().unwrap();
    let epochs: usize = std::env::args().nth(2).unwrap().parse().unwrap();
    let config = TrainerConfig {
        seed: 100,
        total_epochs: epochs,
        max_path_length: max_path,
        reward_scale: rs,
        eval_rollouts: 5,
        action_prior: flowrl_core::trainer::ActionPrior::Gaussian,
        ..TrainerConfig::default()
    };
    let mut low = Trainer::new(Box::new(PointMass2D::new(max_path)), envs::VELOCITY_NORM, config).unwrap();
    let rows = low.train().unwrap();
    for r in &rows {
        println!("low epoch {} return {:.1}", r.epoch, r.mean_return);
    }
    let f0 = Arc::new(low.policy.clone());

    let probe_obs = PointMass2D::new(max_path).reset(&mut Rng::new(42));
    println!("probe obs {probe_obs:.3?}");
    let mut prng = Rng::new(9);
    for _ in 0..8 {
        let h = prng.normal_vec(2);
        let (a, ld) = f0.forward_eval(&h, &probe_obs).unwrap();
        println!(
            "  h ({:+.2},{:+.2}) -> a ({:+.3},{:+.3}) log_det {:+.3}",
            h[0], h[1], a[0], a[1], ld
        );
    }

    let mut rng = Rng::new(5);
    for mode in ["held", "hold3"] {
        let mut reached = [false; 3];
        let mut minx: f64 = 9.0;
        let mut maxx: f64 = -9.0;
        let mut miny: f64 = 9.0;
        let mut maxy: f64 = -9.0;
        let n_roll = if mode == "hold3" { 100 } else { 20 };
        let mut hits = [0usize; 3];
        for i in 0..n_roll {
            let mut touched = [false; 3];
            let maze = PointMaze::new(0, max_path).unwrap();
            let mut env = embed_layer(maze.clone_env(), Arc::clone(&f0)).unwrap();
            let mut obs = env.reset(&mut Rng::new(1000 + i));
            let mut h = rng.normal_vec(2);
            for step in 0..max_path {
                if mode == "hold3" && step % 3 == 0 {
                    h = rng.normal_vec(2);
                }
                let out = env.step(&h).unwrap();
                obs = out.obs;
                minx = minx.min(obs[0]);
                maxx = maxx.max(obs[0]);
                miny = miny.min(obs[1]);
                maxy = maxy.max(obs[1]);
                for (g, goal) in envs::MAZE_GOALS.iter().enumerate() {
                    let d = ((obs[0] - goal[0]).powi(2) + (obs[1] - goal[1]).powi(2)).sqrt();
                    if d <= 0.25 {
                        reached[g] = true;
                        touched[g] = true;
                    }
                }
                if out.terminal {
                    break;
                }
            }
            if i < 6 && mode == "held" {
                println!("  rollout {i}: final pos ({:.2}, {:.2})", obs[0], obs[1]);
            }
            for g in 0..3 {
                if touched[g] {
                    hits[g] += 1;
                }
            }
        }
        println!(
            "{mode}: x range [{minx:.2},{maxx:.2}] y range [{miny:.2},{maxy:.2}] goals touched {reached:?} hit counts {hits:?}/{n_roll}"
        );
    }
}
