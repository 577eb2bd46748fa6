//! Independent reference computations used to validate the learned
//! components: brute-force trajectory-posterior enumeration and soft value
//! iteration on tabular MDPs, numeric Jacobians, grid integration of policy
//! densities, and the closed-form bandit optimum.
//!
//! Nothing here shares code with the implementations it checks.

use crate::envs::TabularMdp;
use crate::error::{Error, Result};
use crate::flow::FlowPolicy;
use crate::rng::Rng;

const ENUMERATION_GUARD: u128 = 10_000_000;

/// Exact conditionals p(a_t | s_t, optimality from t to the horizon),
/// indexed `[t][state][action]`.
#[derive(Debug, Clone)]
pub struct TrajectoryPosterior {
    pub conditionals: Vec<Vec<Vec<f64>>>,
    pub horizon: usize,
}

/// Finite-horizon soft values and the corresponding variational-optimal
/// policy, indexed `[t][state]` / `[t][state][action]`.
#[derive(Debug, Clone)]
pub struct SoftValues {
    pub q: Vec<Vec<Vec<f64>>>,
    pub v: Vec<Vec<f64>>,
    pub policy: Vec<Vec<Vec<f64>>>,
    pub horizon: usize,
}

/// Sum of exp(total reward) x probability weights over every trajectory
/// continuation from (state, t). Deliberately exponential: this is the
/// brute-force side of the cross-oracle pair.
fn continuation_weight(mdp: &TabularMdp, t: usize, horizon: usize, state: usize) -> f64 {
    if t > horizon {
        return 1.0;
    }
    let prior = mdp.action_prior();
    let mut total = 0.0;
    for a in 0..mdp.n_actions {
        let local = prior * mdp.reward[state][a].exp();
        let mut next_sum = 0.0;
        for (s2, &p) in mdp.transition[state][a].iter().enumerate() {
            if p > 0.0 {
                next_sum += p * continuation_weight(mdp, t + 1, horizon, s2);
            }
        }
        total += local * next_sum;
    }
    total
}

/// Enumerates the optimal-trajectory distribution exactly and returns the
/// per-(state, step) action conditionals.
pub fn enumerate_posterior(mdp: &TabularMdp, horizon: usize) -> Result<TrajectoryPosterior> {
    let branching = (mdp.n_actions as u128) * (mdp.n_states as u128);
    let trajectories = branching.pow(horizon as u32 + 1);
    if trajectories > ENUMERATION_GUARD {
        return Err(Error::EnumerationTooLarge {
            trajectories,
            guard: ENUMERATION_GUARD,
        });
    }
    let prior = mdp.action_prior();
    let mut conditionals = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        let mut per_state = Vec::with_capacity(mdp.n_states);
        for s in 0..mdp.n_states {
            let mut weights = vec![0.0; mdp.n_actions];
            for a in 0..mdp.n_actions {
                let local = prior * mdp.reward[s][a].exp();
                let mut next_sum = 0.0;
                for (s2, &p) in mdp.transition[s][a].iter().enumerate() {
                    if p > 0.0 {
                        next_sum += p * continuation_weight(mdp, t + 1, horizon, s2);
                    }
                }
                weights[a] = local * next_sum;
            }
            let z: f64 = weights.iter().sum();
            per_state.push(weights.iter().map(|w| w / z).collect());
        }
        conditionals.push(per_state);
    }
    Ok(TrajectoryPosterior {
        conditionals,
        horizon,
    })
}

/// Backward recursion V = log sum_a p(a) exp(Q), Q = r + E[V'], with the
/// policy pi(a|s,t) = p(a) exp(Q - V).
pub fn soft_value_iteration(mdp: &TabularMdp, horizon: usize) -> SoftValues {
    let prior = mdp.action_prior();
    let mut v = vec![vec![0.0; mdp.n_states]; horizon + 2];
    let mut q = vec![vec![vec![0.0; mdp.n_actions]; mdp.n_states]; horizon + 1];
    let mut policy = vec![vec![vec![0.0; mdp.n_actions]; mdp.n_states]; horizon + 1];
    for t in (0..=horizon).rev() {
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let future: f64 = mdp.transition[s][a]
                    .iter()
                    .enumerate()
                    .map(|(s2, &p)| p * v[t + 1][s2])
                    .sum();
                q[t][s][a] = mdp.reward[s][a] + future;
            }
            // log-sum-exp with max subtraction
            let qmax = q[t][s].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = q[t][s].iter().map(|&x| prior * (x - qmax).exp()).sum();
            v[t][s] = qmax + z.ln();
            for a in 0..mdp.n_actions {
                policy[t][s][a] = prior * (q[t][s][a] - v[t][s]).exp();
            }
        }
    }
    SoftValues {
        q,
        v,
        policy,
        horizon,
    }
}

/// Exact value of the KL-regularized objective sum_t E[r] - KL(pi || prior)
/// for a tabular policy `[t][s][a]`, from the fixed initial state, under the
/// true dynamics.
pub fn tabular_objective(mdp: &TabularMdp, policy: &[Vec<Vec<f64>>], horizon: usize) -> f64 {
    let prior = mdp.action_prior();
    let mut dist = vec![0.0; mdp.n_states];
    dist[mdp.initial_state()] = 1.0;
    let mut objective = 0.0;
    for step in policy.iter().take(horizon + 1) {
        let mut next = vec![0.0; mdp.n_states];
        for s in 0..mdp.n_states {
            if dist[s] == 0.0 {
                continue;
            }
            for a in 0..mdp.n_actions {
                let pa = step[s][a];
                if pa == 0.0 {
                    continue;
                }
                objective += dist[s] * pa * (mdp.reward[s][a] - (pa / prior).ln());
                for (s2, &p) in mdp.transition[s][a].iter().enumerate() {
                    next[s2] += dist[s] * pa * p;
                }
            }
        }
        dist = next;
    }
    objective
}

/// Central-difference Jacobian of an R^n -> R^m map.
pub fn numeric_jacobian<F>(map: F, point: &[f64], step: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = point.len();
    let base = map(point)?;
    let m = base.len();
    let mut jac = vec![vec![0.0; n]; m];
    for j in 0..n {
        let mut plus = point.to_vec();
        let mut minus = point.to_vec();
        plus[j] += step;
        minus[j] -= step;
        let fp = map(&plus)?;
        let fm = map(&minus)?;
        for i in 0..m {
            let d = (fp[i] - fm[i]) / (2.0 * step);
            if !d.is_finite() {
                return Err(Error::NonFinite("numeric_jacobian"));
            }
            jac[i][j] = d;
        }
    }
    Ok(jac)
}

/// Central-difference gradient of a scalar function.
pub fn numeric_gradient<F>(mut f: F, point: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = vec![0.0; point.len()];
    for j in 0..point.len() {
        let mut plus = point.to_vec();
        let mut minus = point.to_vec();
        plus[j] += step;
        minus[j] -= step;
        grad[j] = (f(&plus) - f(&minus)) / (2.0 * step);
    }
    grad
}

/// log|det M| by Gaussian elimination with partial pivoting.
pub fn log_abs_det(matrix: &[Vec<f64>]) -> f64 {
    let n = matrix.len();
    let mut m: Vec<Vec<f64>> = matrix.to_vec();
    let mut acc = 0.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
            .unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        acc += p.abs().ln();
        for row in col + 1..n {
            let factor = m[row][col] / p;
            for k in col..n {
                m[row][k] -= factor * m[col][k];
            }
        }
    }
    acc
}

/// Riemann midpoint sum of exp(log_prob) over a square grid; action_dim <= 2.
pub fn grid_integrate_density(
    policy: &FlowPolicy,
    obs: &[f64],
    bounds: (f64, f64),
    resolution: usize,
) -> Result<f64> {
    if policy.action_dim > 2 {
        return Err(Error::Invalid(format!(
            "grid integration supports action_dim <= 2, got {}",
            policy.action_dim
        )));
    }
    let (lo, hi) = bounds;
    let cell = (hi - lo) / resolution as f64;
    let mut total = 0.0;
    if policy.action_dim == 1 {
        for i in 0..resolution {
            let a = lo + (i as f64 + 0.5) * cell;
            total += policy.log_prob_eval(&[a], obs)?.exp() * cell;
        }
    } else {
        for i in 0..resolution {
            let x = lo + (i as f64 + 0.5) * cell;
            for j in 0..resolution {
                let y = lo + (j as f64 + 0.5) * cell;
                total += policy.log_prob_eval(&[x, y], obs)?.exp() * cell * cell;
            }
        }
    }
    Ok(total)
}

/// Closed-form maximum-entropy optimum of the quadratic bandit with uniform
/// action prior: an isotropic Gaussian at the reward peak.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mean: Vec<f64>,
    pub variance: f64,
}

impl GaussianPosterior {
    pub fn log_density(&self, a: &[f64]) -> f64 {
        let d = self.mean.len() as f64;
        let sq: f64 = a
            .iter()
            .zip(&self.mean)
            .map(|(x, m)| (x - m) * (x - m))
            .sum();
        -0.5 * d * (2.0 * std::f64::consts::PI * self.variance).ln() - 0.5 * sq / self.variance
    }
}

pub fn bandit_posterior(k: f64, reward_scale: f64, mean: Vec<f64>) -> Result<GaussianPosterior> {
    if k <= 0.0 {
        return Err(Error::Invalid(format!("bandit k must be positive, got {k}")));
    }
    Ok(GaussianPosterior {
        variance: 1.0 / (2.0 * k * reward_scale),
        mean,
    })
}

/// Monte-Carlo estimate of KL(policy || gaussian) at a fixed observation.
pub fn mc_kl_vs_gaussian(
    policy: &FlowPolicy,
    obs: &[f64],
    target: &GaussianPosterior,
    samples: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let mut acc = 0.0;
    for _ in 0..samples {
        let (a, log_prob, _) = policy.sample_eval(obs, rng)?;
        acc += log_prob - target.log_density(&a);
    }
    Ok(acc / samples as f64)
}

/// Stochastic MDP where exp-weighted enumeration over-values a risky branch
/// that the dynamics-constrained optimum avoids.
pub fn risky_branch_mdp() -> TabularMdp {
    // States: 0 start, 1 safe landing, 2 lucky landing, 3 unlucky landing.
    // Action 0 is safe (always to state 1), action 1 is risky (states 2/3
    // with equal probability). Landing rewards: safe -1, lucky -0.1,
    // unlucky -5.
    let n = 4;
    let mut transition = vec![vec![vec![0.0; n]; 2]; n];
    transition[0][0][1] = 1.0;
    transition[0][1][2] = 0.5;
    transition[0][1][3] = 0.5;
    for s in 1..n {
        for a in 0..2 {
            transition[s][a][s] = 1.0;
        }
    }
    let reward = vec![
        vec![-0.5, -0.5],
        vec![-1.0, -1.0],
        vec![-0.1, -0.1],
        vec![-5.0, -5.0],
    ];
    TabularMdp::new(transition, reward, 1).expect("risky MDP")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_reward_mdp_posterior_is_uniform() {
        // Equal rewards everywhere: every trajectory weight is equal, so the
        // posterior collapses to the uniform action prior.
        let mdp = TabularMdp::new(
            vec![vec![vec![0.5, 0.5], vec![0.5, 0.5]]; 2],
            vec![vec![-1.0, -1.0]; 2],
            2,
        )
        .unwrap();
        let post = enumerate_posterior(&mdp, 2).unwrap();
        for per_state in &post.conditionals {
            for dist in per_state {
                for &p in dist {
                    assert!((p - 0.5).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn two_state_hand_enumeration() {
        // Deterministic 2-state 2-action MDP, horizon 1 (4 action paths from
        // the start): posterior(a|s0) is the softmax of continuation returns.
        // Action 0: stay in s0 (r -1), action 1: go to s1 (r -2).
        let transition = vec![
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.0, 1.0], vec![0.0, 1.0]],
        ];
        let reward = vec![vec![-1.0, -2.0], vec![-1.5, -1.5]];
        let mdp = TabularMdp::new(transition, reward, 1).unwrap();
        let post = enumerate_posterior(&mdp, 1).unwrap();
        // Continuation value of s0 at t=1: ln(0.5 e^-1 + 0.5 e^-2) ;
        // of s1: ln(0.5 e^-1.5 + 0.5 e^-1.5) = -1.5 + ln 1.
        let v0 = (0.5 * (-1.0f64).exp() + 0.5 * (-2.0f64).exp()).ln();
        let v1 = -1.5f64;
        let w0 = 0.5 * (-1.0f64).exp() * v0.exp();
        let w1 = 0.5 * (-2.0f64).exp() * v1.exp();
        let expected = w0 / (w0 + w1);
        assert!((post.conditionals[0][0][0] - expected).abs() < 1e-12);
    }

    #[test]
    fn terminal_step_policy_is_reward_softmax() {
        let mdp = TabularMdp::new(
            vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]; 2],
            vec![vec![-1.0, -3.0], vec![-2.0, -2.0]],
            0,
        )
        .unwrap();
        let sv = soft_value_iteration(&mdp, 0);
        let z = (-1.0f64).exp() + (-3.0f64).exp();
        assert!((sv.policy[0][0][0] - (-1.0f64).exp() / z).abs() < 1e-12);
        assert!((sv.policy[0][0][1] - (-3.0f64).exp() / z).abs() < 1e-12);
    }

    #[test]
    fn cross_oracle_agreement_on_deterministic_mdps() {
        let mut rng = Rng::new(2024);
        for trial in 0..50 {
            let n_states = 2 + rng.index(4); // 2..=5
            let n_actions = 2 + rng.index(2); // 2..=3
            let horizon = 1 + rng.index(4); // 1..=4
            let mdp = TabularMdp::random(&mut rng, n_states, n_actions, horizon, true);
            let post = enumerate_posterior(&mdp, horizon).unwrap();
            let sv = soft_value_iteration(&mdp, horizon);
            for t in 0..=horizon {
                for s in 0..n_states {
                    for a in 0..n_actions {
                        let diff = (post.conditionals[t][s][a] - sv.policy[t][s][a]).abs();
                        assert!(diff < 1e-9, "trial {trial} t={t} s={s} a={a}: {diff}");
                    }
                }
            }
        }
    }

    #[test]
    fn soft_policy_rows_sum_to_one() {
        let mut rng = Rng::new(5);
        let mdp = TabularMdp::random(&mut rng, 4, 3, 3, false);
        let sv = soft_value_iteration(&mdp, 3);
        for step in &sv.policy {
            for dist in step {
                let sum: f64 = dist.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn soft_policy_beats_random_policies() {
        let mut rng = Rng::new(17);
        let mdp = TabularMdp::random(&mut rng, 4, 2, 3, false);
        let sv = soft_value_iteration(&mdp, 3);
        let best = tabular_objective(&mdp, &sv.policy, 3);
        for _ in 0..1000 {
            let random_policy: Vec<Vec<Vec<f64>>> = (0..4)
                .map(|_| {
                    (0..4)
                        .map(|_| {
                            let raw: Vec<f64> = (0..2).map(|_| rng.uniform() + 1e-6).collect();
                            let z: f64 = raw.iter().sum();
                            raw.iter().map(|x| x / z).collect()
                        })
                        .collect()
                })
                .collect();
            let val = tabular_objective(&mdp, &random_policy, 3);
            assert!(best >= val - 1e-10, "soft policy beaten: {best} < {val}");
        }
    }

    #[test]
    fn risky_branch_optimism_gap() {
        let mdp = risky_branch_mdp();
        let post = enumerate_posterior(&mdp, 1).unwrap();
        let sv = soft_value_iteration(&mdp, 1);
        let risky_enum = post.conditionals[0][0][1];
        let risky_soft = sv.policy[0][0][1];
        assert!(
            risky_enum > risky_soft + 1e-6,
            "enumeration should prefer the risky branch more: {risky_enum} vs {risky_soft}"
        );
        let j_soft = tabular_objective(&mdp, &sv.policy, 1);
        let j_enum = tabular_objective(&mdp, &post.conditionals, 1);
        assert!(
            j_soft > j_enum,
            "variational policy should score higher under true dynamics: {j_soft} vs {j_enum}"
        );
    }

    #[test]
    fn enumeration_guard_triggers() {
        let mut rng = Rng::new(1);
        let mdp = TabularMdp::random(&mut rng, 5, 3, 10, true);
        assert!(matches!(
            enumerate_posterior(&mdp, 10),
            Err(Error::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn jacobian_of_identity_and_linear_maps() {
        let id = |x: &[f64]| Ok(x.to_vec());
        let jac = numeric_jacobian(id, &[0.3, -0.7], 1e-5).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((jac[i][j] - expect).abs() < 1e-9);
            }
        }
        let a = [[2.0, -1.0], [0.5, 3.0]];
        let lin = |x: &[f64]| {
            Ok(vec![
                a[0][0] * x[0] + a[0][1] * x[1],
                a[1][0] * x[0] + a[1][1] * x[1],
            ])
        };
        let jac = numeric_jacobian(lin, &[1.0, 2.0], 1e-5).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((jac[i][j] - a[i][j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn log_abs_det_of_known_matrices() {
        // diag(2, 3): ln 6 ; exp map jacobian diag(e^x)
        let m = vec![vec![2.0, 0.0], vec![0.0, 3.0]];
        assert!((log_abs_det(&m) - 6.0f64.ln()).abs() < 1e-12);
        let point = [0.4, -1.2];
        let jac = numeric_jacobian(
            |x: &[f64]| Ok(x.iter().map(|v| v.exp()).collect()),
            &point,
            1e-5,
        )
        .unwrap();
        let expect = point[0] + point[1];
        assert!((log_abs_det(&jac) - expect).abs() < 1e-8);
    }

    #[test]
    fn flow_log_det_matches_numeric_jacobian() {
        use crate::flow::FlowPolicy;
        let mut rng = Rng::new(33);
        for &dim in &[2usize, 3, 4] {
            let mut policy = FlowPolicy::with_layers(3, dim, 2, 16, &mut rng);
            for p in policy.params_mut() {
                for x in p.data.iter_mut() {
                    *x += rng.uniform_in(-0.3, 0.3);
                }
            }
            for _ in 0..20 {
                let h = rng.normal_vec(dim);
                let obs = rng.normal_vec(3);
                let (_, analytic) = policy.forward_eval(&h, &obs).unwrap();
                let jac = numeric_jacobian(
                    |x: &[f64]| policy.forward_eval(x, &obs).map(|(a, _)| a),
                    &h,
                    1e-5,
                )
                .unwrap();
                let numeric = log_abs_det(&jac);
                let rel = (analytic - numeric).abs() / analytic.abs().max(1.0);
                assert!(rel < 1e-4, "dim {dim}: analytic {analytic} numeric {numeric}");
            }
        }
    }

    #[test]
    fn identity_policy_density_integrates_to_one() {
        let mut rng = Rng::new(3);
        let policy = FlowPolicy::with_layers(2, 2, 2, 16, &mut rng);
        let mass = grid_integrate_density(&policy, &[0.0, 0.0], (-6.0, 6.0), 200).unwrap();
        assert!((mass - 1.0).abs() < 0.005, "{mass}");
    }

    #[test]
    fn grid_integration_rejects_high_dims() {
        let mut rng = Rng::new(3);
        let policy = FlowPolicy::with_layers(2, 3, 2, 16, &mut rng);
        assert!(grid_integrate_density(&policy, &[0.0, 0.0], (-6.0, 6.0), 50).is_err());
    }

    #[test]
    fn bandit_posterior_closed_form() {
        let g = bandit_posterior(0.5, 1.0, vec![1.0, -1.0]).unwrap();
        assert_eq!(g.variance, 1.0);
        let tight = bandit_posterior(0.5, 100.0, vec![0.0]).unwrap();
        assert!(tight.variance < 0.011);
        let shifted = bandit_posterior(0.5, 1.0, vec![5.0, 5.0]).unwrap();
        assert_eq!(shifted.variance, 1.0);
        assert!(bandit_posterior(-1.0, 1.0, vec![0.0]).is_err());
    }

    #[test]
    fn kl_of_matching_gaussian_is_zero() {
        // Identity flow policy == unit Gaussian; KL against a unit Gaussian
        // target should vanish up to Monte-Carlo noise.
        let mut rng = Rng::new(8);
        let policy = FlowPolicy::with_layers(1, 2, 2, 16, &mut rng);
        let target = GaussianPosterior {
            mean: vec![0.0, 0.0],
            variance: 1.0,
        };
        let kl = mc_kl_vs_gaussian(&policy, &[0.0], &target, 20_000, &mut Rng::new(9)).unwrap();
        assert!(kl.abs() < 0.02, "{kl}");
    }
}
