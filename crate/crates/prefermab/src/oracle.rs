//! Exact small-instance solvers used as ground truth: value iteration on
//! λ-penalized single-arm chains and search for the λ that minimizes the
//! relaxed objective λB/(1−β) + Σ_i max_a Q_i(s_i, a; λ).
//!
//! Deliberately restricted to tiny instances (≤ 4 arms, ≤ 8 states) so
//! exhaustive cross-checks stay sub-second; these solvers exist to validate
//! the learned networks, not to scale.

use crate::core::{ActionCosts, RmabInstance};
use crate::envs::{ArmDynamics, RewardKind, TabularDynamics};
use crate::{Error, Result};

pub const MAX_ORACLE_ARMS: usize = 4;
pub const MAX_ORACLE_STATES: usize = 8;

/// When the per-step reward is charged. The Bellman operator
/// `Q(s,a) = ρ(s,a) − λ·c_a + β·E[max_a′ Q(s′,a′)]` uses ρ(s,a) = R(s) for
/// `OnState`, or ρ(s,a) = E[R(s′) | s,a] for `OnArrival`. The latter matches
/// what a learner sees when simulators emit the reward together with s′.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardTiming {
    OnState,
    OnArrival,
}

/// Per-state rewards for a discrete reward convention.
pub fn reward_vector(kind: RewardKind, n_states: usize) -> Vec<f64> {
    (0..n_states)
        .map(|s| match kind {
            RewardKind::Engagement => {
                if s == 0 {
                    1.0
                } else {
                    0.0
                }
            }
            _ => s as f64,
        })
        .collect()
}

/// Q-table fixed point of the λ-penalized Bellman operator, to within `tol`
/// in sup-norm.
pub fn value_iteration(
    dynamics: &TabularDynamics,
    rewards: &[f64],
    costs: &ActionCosts,
    lambda: f64,
    beta: f64,
    tol: f64,
    timing: RewardTiming,
) -> Vec<Vec<f64>> {
    let (ns, na) = (dynamics.n_states, dynamics.n_actions);
    assert_eq!(rewards.len(), ns, "one reward per state");
    assert!(lambda >= 0.0, "λ must be non-negative");
    assert!((0.0..1.0).contains(&beta), "β must lie in [0, 1)");

    // Expected immediate reward per (s, a).
    let mut rho = vec![vec![0.0; na]; ns];
    for s in 0..ns {
        for a in 0..na {
            rho[s][a] = match timing {
                RewardTiming::OnState => rewards[s],
                RewardTiming::OnArrival => dynamics
                    .row(s, a)
                    .iter()
                    .zip(rewards)
                    .map(|(p, r)| p * r)
                    .sum(),
            };
        }
    }

    let mut q = vec![vec![0.0; na]; ns];
    let max_iters = 1_000_000;
    for _ in 0..max_iters {
        let values: Vec<f64> = q
            .iter()
            .map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let mut next = vec![vec![0.0; na]; ns];
        let mut delta = 0.0f64;
        for s in 0..ns {
            for a in 0..na {
                let future: f64 = dynamics
                    .row(s, a)
                    .iter()
                    .zip(&values)
                    .map(|(p, v)| p * v)
                    .sum();
                next[s][a] = rho[s][a] - lambda * costs.cost(a) + beta * future;
                delta = delta.max((next[s][a] - q[s][a]).abs());
            }
        }
        q = next;
        if delta <= tol {
            break;
        }
    }
    q
}

fn small_tabular(dynamics: &ArmDynamics) -> Result<TabularDynamics> {
    let tab = match dynamics {
        ArmDynamics::Tabular(t) => t.clone(),
        ArmDynamics::Synthetic(p) => p.to_tabular(),
        ArmDynamics::Armman(p) => p.to_tabular(),
        _ => {
            return Err(Error::InvalidArgument(
                "oracle requires explicit small transition tensors".into(),
            ))
        }
    };
    if tab.n_states > MAX_ORACLE_STATES {
        return Err(Error::InvalidArgument(format!(
            "oracle handles at most {MAX_ORACLE_STATES} states, got {}",
            tab.n_states
        )));
    }
    Ok(tab)
}

/// The relaxed objective λB/(1−β) + Σ_i max_a Q_i(s_i, a; λ), with each
/// arm's Q from value iteration at its current state.
pub fn lagrangian_objective(
    instance: &RmabInstance,
    lambda: f64,
    timing: RewardTiming,
) -> Result<f64> {
    if instance.arms.len() > MAX_ORACLE_ARMS {
        return Err(Error::InvalidArgument(format!(
            "oracle handles at most {MAX_ORACLE_ARMS} arms, got {}",
            instance.arms.len()
        )));
    }
    let beta = instance.discount;
    let mut total = lambda * instance.budget / (1.0 - beta);
    for arm in &instance.arms {
        let tab = small_tabular(&arm.dynamics)?;
        let rewards = reward_vector(arm.reward, tab.n_states);
        let q = value_iteration(&tab, &rewards, &instance.costs, lambda, beta, 1e-9, timing);
        let s = arm.state as usize;
        total += q[s].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    }
    Ok(total)
}

/// Q-tables for every arm of a small instance at a fixed λ.
pub fn instance_q_tables(
    instance: &RmabInstance,
    lambda: f64,
    timing: RewardTiming,
) -> Result<Vec<Vec<Vec<f64>>>> {
    instance
        .arms
        .iter()
        .map(|arm| {
            let tab = small_tabular(&arm.dynamics)?;
            let rewards = reward_vector(arm.reward, tab.n_states);
            Ok(value_iteration(
                &tab,
                &rewards,
                &instance.costs,
                lambda,
                instance.discount,
                1e-9,
                timing,
            ))
        })
        .collect()
}

/// Curve of (λ, objective) samples over a uniform grid.
pub fn objective_curve(
    instance: &RmabInstance,
    lambda_max: f64,
    grid_steps: usize,
    timing: RewardTiming,
) -> Result<Vec<(f64, f64)>> {
    let steps = grid_steps.max(1);
    (0..=steps)
        .map(|i| {
            let lambda = lambda_max * i as f64 / steps as f64;
            Ok((lambda, lagrangian_objective(instance, lambda, timing)?))
        })
        .collect()
}

/// The λ ≥ 0 minimizing the relaxed objective: coarse grid argmin refined by
/// ternary search (valid because the objective is convex in λ).
pub fn lambda_star(
    instance: &RmabInstance,
    lambda_max: f64,
    grid_steps: usize,
    timing: RewardTiming,
) -> Result<f64> {
    if lambda_max <= 0.0 || !lambda_max.is_finite() {
        return Err(Error::InvalidArgument("λ_max must be positive".into()));
    }
    let curve = objective_curve(instance, lambda_max, grid_steps, timing)?;
    let best = curve
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).expect("finite objective"))
        .map(|(i, _)| i)
        .expect("non-empty grid");

    let mut lo = curve[best.saturating_sub(1)].0;
    let mut hi = curve[(best + 1).min(curve.len() - 1)].0;
    for _ in 0..200 {
        if hi - lo < 1e-12 {
            break;
        }
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if lagrangian_objective(instance, m1, timing)?
            <= lagrangian_objective(instance, m2, timing)?
        {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    Ok(0.5 * (lo + hi))
}
