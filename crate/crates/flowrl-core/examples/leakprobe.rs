use flowrl_core::envs::{self, PointMass2D};
use flowrl_core::trainer::{ActionPrior, Trainer, TrainerConfig};

fn rss_mb() -> f64 {
    let s = std::fs::read_to_string("/proc/self/statm").unwrap();
    let pages: f64 = s.split_whitespace().nth(1).unwrap().parse().unwrap();
    pages * 4096.0 / 1e6
}

fn main() {
    let mode = std::env::args().nth(1).unwrap();
    let config = TrainerConfig {
        seed: 7,
        total_epochs: 1,
        max_path_length: 500,
        reward_scale: 1.0,
        action_prior: ActionPrior::Gaussian,
        ..TrainerConfig::default()
    };
    let mut t = Trainer::new(Box::new(PointMass2D::new(500)), envs::VELOCITY_NORM, config).unwrap();
    println!("start rss {:.0} MB", rss_mb());
    match mode.as_str() {
        "collect" => {
            for i in 0..20000 {
                t.collect_step().unwrap();
                if i % 2000 == 1999 {
                    println!("collect {}: rss {:.0} MB", i + 1, rss_mb());
                }
            }
        }
        "update" => {
            for _ in 0..2000 {
                t.collect_step().unwrap();
            }
            println!("after prefill: rss {:.0} MB", rss_mb());
            for i in 0..6000 {
                t.update_step().unwrap();
                if i % 500 == 499 {
                    println!("update {}: rss {:.0} MB", i + 1, rss_mb());
                }
            }
        }
        "train" => {
            for i in 0..8000 {
                t.collect_step().unwrap();
                if t.pool.len() >= 1000 {
                    t.update_step().unwrap();
                }
                if i % 500 == 499 {
                    println!("step {}: rss {:.0} MB", i + 1, rss_mb());
                }
            }
        }
        "sample" => {
            let mut rng = flowrl_core::Rng::new(3);
            let obs = vec![0.1, -0.2, 0.0, 0.3, 0.0, 0.0];
            for i in 0..20000 {
                let _ = t.policy.sample_eval(&obs, &mut rng).unwrap();
                if i % 4000 == 3999 {
                    println!("sample {}: rss {:.0} MB", i + 1, rss_mb());
                }
            }
        }
        "envstep" => {
            let mut env = PointMass2D::new(500);
            use flowrl_core::envs::Environment;
            let mut rng = flowrl_core::Rng::new(3);
            env.reset(&mut rng);
            for i in 0..20000 {
                if i % 500 == 499 {
                    env.reset(&mut rng);
                }
                let _ = env.step(&[0.1, 0.2]).unwrap();
                if i % 4000 == 3999 {
                    println!("envstep {}: rss {:.0} MB", i + 1, rss_mb());
                }
            }
        }
        "push" => {
            let mut pool = flowrl_core::replay::ReplayPool::new(1_000_000);
            for i in 0..20000 {
                pool.push(flowrl_core::replay::Transition {
                    state: vec![0.0; 6],
                    action: vec![0.0; 2],
                    reward: 0.5,
                    next_state: vec![0.0; 6],
                    terminal: false,
                });
                if i % 4000 == 3999 {
                    println!("push {}: rss {:.0} MB", i + 1, rss_mb());
                }
            }
        }
        other => panic!("unknown mode {other}"),
    }
    println!("end rss {:.0} MB", rss_mb());
}
