//! The learning agents: a single feature-conditioned actor/critic pair
//! shared by every arm, and the λ-network that prices actions against the
//! budget.
//!
//! The actor and critic both take (s̄, λ, z) — shaped state, action charge,
//! and arm features — so one network serves arms it has never seen. The
//! λ-network maps the whole system snapshot (all shaped states, features,
//! and opt-in flags) to a non-negative charge through a softplus head, and
//! is trained by regressing its output toward a stepped target derived from
//! the realized discounted action costs.

use serde::{Deserialize, Serialize};

use crate::core::{discounted_cost_sum, ActionCosts, EpochWindow, OptInVector};
use crate::nn::{log_softmax_at, sigmoid, softmax, softplus, AdamState, Gradients, Mlp};
use crate::{Error, Result};

/// PPO and λ-schedule hyperparameters. Field names follow the run-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_ratio: f64,
    pub start_entropy_coeff: f64,
    pub end_entropy_coeff: f64,
    pub actor_learning_rate: f64,
    pub critic_learning_rate: f64,
    pub lambda_initial_learning_rate: f64,
    pub lambda_scheduler_discount_rate: f64,
    pub lambda_freeze_epochs: usize,
    pub trains_per_epoch: usize,
    pub n_subepochs: usize,
    /// Optimizer settings for fitting the λ-network to its stepped targets.
    pub lambda_fit_learning_rate: f64,
    pub lambda_fit_steps: usize,
    /// Clamp on λ targets, keeping the softplus regression well-conditioned.
    pub lambda_max: f64,
    /// Use the alternative sign variant that subtracts the cost sum as well.
    pub lambda_alt_sign: bool,
    /// Entropy multiplier for the sub-epoch right after a λ update.
    pub explore_boost: f64,
    /// Uniform mixing weight on the training-time sampling distribution.
    /// Keeps every action visited so the policy cannot starve itself of
    /// data; inference is untouched.
    pub exploration_floor: f64,
    /// Standardize advantages per update batch before the surrogate.
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_ratio: 2.0,
            start_entropy_coeff: 0.5,
            end_entropy_coeff: 0.0,
            actor_learning_rate: 2e-3,
            critic_learning_rate: 2e-3,
            lambda_initial_learning_rate: 2e-3,
            lambda_scheduler_discount_rate: 0.99,
            lambda_freeze_epochs: 20,
            trains_per_epoch: 20,
            n_subepochs: 4,
            lambda_fit_learning_rate: 0.05,
            lambda_fit_steps: 50,
            lambda_max: 20.0,
            lambda_alt_sign: false,
            explore_boost: 2.0,
            exploration_floor: 0.02,
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clip_ratio <= 1.0 {
            return Err(Error::config("clip_ratio", "must exceed 1"));
        }
        for (key, v) in [
            ("start_entropy_coeff", self.start_entropy_coeff),
            ("actor_learning_rate", self.actor_learning_rate),
            ("critic_learning_rate", self.critic_learning_rate),
            (
                "lambda_initial_learning_rate",
                self.lambda_initial_learning_rate,
            ),
            ("lambda_fit_learning_rate", self.lambda_fit_learning_rate),
            ("lambda_max", self.lambda_max),
            ("explore_boost", self.explore_boost),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::config(key, "must be finite and non-negative"));
            }
        }
        if self.end_entropy_coeff > self.start_entropy_coeff {
            return Err(Error::config(
                "end_entropy_coeff",
                "must not exceed start_entropy_coeff",
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda_scheduler_discount_rate) {
            return Err(Error::config(
                "lambda_scheduler_discount_rate",
                "must lie in [0, 1]",
            ));
        }
        if !(0.0..=1.0).contains(&self.exploration_floor) {
            return Err(Error::config("exploration_floor", "must lie in [0, 1]"));
        }
        if self.trains_per_epoch == 0 || self.lambda_fit_steps == 0 || self.n_subepochs == 0 {
            return Err(Error::config(
                "trains_per_epoch",
                "iteration counts must be positive",
            ));
        }
        Ok(())
    }

    /// Linearly interpolated entropy coefficient for `epoch` of `n_epochs`.
    pub fn entropy_coefficient(&self, epoch: usize, n_epochs: usize) -> f64 {
        if n_epochs <= 1 {
            return self.start_entropy_coeff;
        }
        let frac = epoch as f64 / (n_epochs - 1) as f64;
        self.start_entropy_coeff + (self.end_entropy_coeff - self.start_entropy_coeff) * frac
    }
}

fn ensure_finite_logits(logits: &[f64]) -> Result<()> {
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::divergence(format!(
            "non-finite policy logits: {logits:?}"
        )));
    }
    Ok(())
}

/// Sample from softmax(logits), returning the action and its log-probability.
pub fn sample_from_logits(logits: &[f64], rng: &mut impl rand::Rng) -> Result<(usize, f64)> {
    ensure_finite_logits(logits)?;
    let probs = softmax(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut action = probs.len() - 1;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            action = i;
            break;
        }
    }
    Ok((action, log_softmax_at(logits, action)))
}

/// Policy network: (s̄, λ, z) → action logits. Parameters θ.
#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub net: Mlp,
    pub feature_dim: usize,
    pub n_actions: usize,
}

impl Actor {
    pub fn new(feature_dim: usize, n_actions: usize, rng: &mut impl rand::Rng) -> Self {
        Actor {
            net: Mlp::new(2 + feature_dim, n_actions, rng),
            feature_dim,
            n_actions,
        }
    }

    pub fn input(&self, shaped_state: f64, lambda: f64, feature: &[f64]) -> Vec<f64> {
        debug_assert_eq!(feature.len(), self.feature_dim);
        let mut x = Vec::with_capacity(2 + feature.len());
        x.push(shaped_state);
        x.push(lambda);
        x.extend_from_slice(feature);
        x
    }

    pub fn logits(&self, shaped_state: f64, lambda: f64, feature: &[f64]) -> Result<Vec<f64>> {
        let y = self.net.infer(&self.input(shaped_state, lambda, feature))?;
        ensure_finite_logits(&y)?;
        Ok(y)
    }

    pub fn probs(&self, shaped_state: f64, lambda: f64, feature: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(shaped_state, lambda, feature)?))
    }

    /// Draw an action from the policy; also returns its log-probability.
    pub fn sample(
        &self,
        shaped_state: f64,
        lambda: f64,
        feature: &[f64],
        rng: &mut impl rand::Rng,
    ) -> Result<(usize, f64)> {
        sample_from_logits(&self.logits(shaped_state, lambda, feature)?, rng)
    }

    /// Training-time sampling: draw from (1−floor)·π + floor·uniform. The
    /// floor keeps every action visited even when π saturates; the returned
    /// log-probability is the policy's own (the floor is a property of the
    /// behavior distribution, not of π).
    pub fn sample_with_floor(
        &self,
        shaped_state: f64,
        lambda: f64,
        feature: &[f64],
        floor: f64,
        rng: &mut impl rand::Rng,
    ) -> Result<(usize, f64)> {
        let logits = self.logits(shaped_state, lambda, feature)?;
        if floor > 0.0 && rng.random::<f64>() < floor {
            let action = rng.random_range(0..self.n_actions);
            return Ok((action, log_softmax_at(&logits, action)));
        }
        sample_from_logits(&logits, rng)
    }
}

/// Critic network: (s̄, λ, z) → one Q estimate per action. Parameters φ.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub net: Mlp,
    pub feature_dim: usize,
    pub n_actions: usize,
}

impl Critic {
    pub fn new(feature_dim: usize, n_actions: usize, rng: &mut impl rand::Rng) -> Self {
        Critic {
            net: Mlp::new(2 + feature_dim, n_actions, rng),
            feature_dim,
            n_actions,
        }
    }

    pub fn input(&self, shaped_state: f64, lambda: f64, feature: &[f64]) -> Vec<f64> {
        debug_assert_eq!(feature.len(), self.feature_dim);
        let mut x = Vec::with_capacity(2 + feature.len());
        x.push(shaped_state);
        x.push(lambda);
        x.extend_from_slice(feature);
        x
    }

    pub fn q_values(&self, shaped_state: f64, lambda: f64, feature: &[f64]) -> Result<Vec<f64>> {
        let q = self.net.infer(&self.input(shaped_state, lambda, feature))?;
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::divergence("non-finite critic output"));
        }
        Ok(q)
    }
}

/// The λ-network: flattened (s̄₁..s̄_N, z₁..z_N, ξ₁..ξ_N) → one raw output,
/// mapped through softplus so the emitted charge is never negative.
/// Carries its own scheduled step size for the target-construction rule.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaNet {
    pub net: Mlp,
    pub capacity: usize,
    pub feature_dim: usize,
    /// Current step size α for target construction (decays per update).
    pub learning_rate: f64,
    pub updates: u64,
}

impl LambdaNet {
    pub fn new(
        capacity: usize,
        feature_dim: usize,
        initial_lr: f64,
        rng: &mut impl rand::Rng,
    ) -> Self {
        LambdaNet {
            net: Mlp::new(capacity * (feature_dim + 2), 1, rng),
            capacity,
            feature_dim,
            learning_rate: initial_lr,
            updates: 0,
        }
    }

    pub fn input_len(&self) -> usize {
        self.capacity * (self.feature_dim + 2)
    }

    /// Assemble the fixed-size input. `slots[i]` is `Some((s̄, z))` for an
    /// occupied slot; dummy slots contribute zero padding, and every ξ=0
    /// slot is zeroed regardless of content.
    pub fn build_input(&self, slots: &[Option<(f64, &[f64])>], opt_in: &OptInVector) -> Vec<f64> {
        assert_eq!(slots.len(), self.capacity, "one slot entry per capacity");
        assert_eq!(opt_in.len(), self.capacity);
        let m = self.feature_dim;
        let mut x = vec![0.0; self.input_len()];
        for (i, slot) in slots.iter().enumerate() {
            if !opt_in.get(i) {
                continue;
            }
            if let Some((shaped, feature)) = slot {
                debug_assert_eq!(feature.len(), m);
                x[i] = *shaped;
                x[self.capacity + i * m..self.capacity + (i + 1) * m].copy_from_slice(feature);
                x[self.capacity * (1 + m) + i] = 1.0;
            }
        }
        x
    }

    /// Emit λ ≥ 0 for an assembled input.
    pub fn forward(&self, input: &[f64]) -> Result<f64> {
        let raw = self.net.infer(input)?[0];
        if !raw.is_finite() {
            return Err(Error::divergence("non-finite λ-network output"));
        }
        Ok(softplus(raw))
    }
}

/// Bootstrap Q targets for every record across the windows, in window order:
/// target = (r − λ·c_a) + β · max_a′ Q_φ(s̄′, a′, z, λ). Only ξ=1 records
/// exist in the buffer, so the opt-in factor is implicit.
pub fn critic_targets(
    critic: &Critic,
    windows: &[EpochWindow],
    beta: f64,
    costs: &ActionCosts,
) -> Result<Vec<f64>> {
    let mut targets = Vec::new();
    for w in windows {
        for rec in &w.records {
            let next_q = critic.q_values(rec.shaped_next, w.lambda, &rec.feature)?;
            let best = next_q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            targets.push(rec.reward - w.lambda * costs.cost(rec.action) + beta * best);
        }
    }
    Ok(targets)
}

/// Clipped-surrogate value for one record and whether gradient flows through
/// the ratio (it does when the unclipped branch attains the minimum).
pub fn surrogate(ratio: f64, advantage: f64, clip_ratio: f64) -> (f64, bool) {
    let clipped_ratio = ratio.clamp(1.0 / clip_ratio, clip_ratio);
    let unclipped = ratio * advantage;
    let clipped = clipped_ratio * advantage;
    if unclipped <= clipped {
        (unclipped, true)
    } else {
        (clipped, false)
    }
}

/// Loss diagnostics from one PPO update call.
#[derive(Debug, Clone, Default)]
pub struct PpoDiagnostics {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub mean_entropy: f64,
    pub clip_fraction: f64,
    pub records: usize,
}

/// One PPO update over everything currently in the buffer:
/// `trains_per_epoch` full-batch gradient steps on both networks.
///
/// Advantages use the expected-Q baseline adv(s̄,a) = Q(s̄,a) − Σ_a′
/// π(a′)·Q(s̄,a′) computed once at entry; the critic regresses onto
/// bootstrap targets also computed at entry.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update(
    actor: &mut Actor,
    critic: &mut Critic,
    windows: &[EpochWindow],
    beta: f64,
    costs: &ActionCosts,
    entropy_coeff: f64,
    cfg: &PpoConfig,
    actor_adam: &mut AdamState,
    critic_adam: &mut AdamState,
) -> Result<PpoDiagnostics> {
    let n_records: usize = windows.iter().map(|w| w.records.len()).sum();
    if n_records == 0 {
        return Err(Error::InvalidArgument(
            "PPO update on an empty buffer".into(),
        ));
    }
    let n = n_records as f64;

    struct Item<'a> {
        rec: &'a crate::core::Record,
        lambda: f64,
    }
    let items: Vec<Item> = windows
        .iter()
        .flat_map(|w| {
            w.records.iter().map(move |rec| Item {
                rec,
                lambda: w.lambda,
            })
        })
        .collect();

    let targets = critic_targets(critic, windows, beta, costs)?;

    // Old policy log-probs and advantages, frozen for this update.
    let mut old_logprobs = Vec::with_capacity(items.len());
    let mut advantages = Vec::with_capacity(items.len());
    for item in &items {
        let logits = actor.logits(item.rec.shaped, item.lambda, &item.rec.feature)?;
        let probs = softmax(&logits);
        old_logprobs.push(log_softmax_at(&logits, item.rec.action));
        let q = critic.q_values(item.rec.shaped, item.lambda, &item.rec.feature)?;
        let baseline: f64 = probs.iter().zip(&q).map(|(p, v)| p * v).sum();
        advantages.push(q[item.rec.action] - baseline);
    }
    if cfg.normalize_advantages && advantages.len() > 1 {
        let m = advantages.iter().sum::<f64>() / n;
        let var = advantages.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n;
        let sd = var.sqrt().max(1e-8);
        for a in &mut advantages {
            *a = (*a - m) / sd;
        }
    }

    let mut diag = PpoDiagnostics {
        records: n_records,
        ..Default::default()
    };

    for _ in 0..cfg.trains_per_epoch {
        // Actor step.
        let mut actor_grads = Gradients::zeros_like(&actor.net);
        let mut loss_acc = 0.0;
        let mut entropy_acc = 0.0;
        let mut clipped_count = 0usize;
        for (j, item) in items.iter().enumerate() {
            let x = actor.input(item.rec.shaped, item.lambda, &item.rec.feature);
            let (logits, cache) = actor.net.forward(&x)?;
            ensure_finite_logits(&logits)?;
            let probs = softmax(&logits);
            let lp_new = log_softmax_at(&logits, item.rec.action);
            let ratio = (lp_new - old_logprobs[j]).exp();
            if !ratio.is_finite() {
                return Err(Error::divergence(format!(
                    "non-finite PPO ratio at record {j}"
                )));
            }
            let (surr, flows) = surrogate(ratio, advantages[j], cfg.clip_ratio);
            if !flows {
                clipped_count += 1;
            }
            let entropy: f64 = probs
                .iter()
                .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
                .sum();
            loss_acc += -surr - entropy_coeff * entropy;
            entropy_acc += entropy;

            // dL/dlogit_k for loss = −surr − coef·H, averaged over records.
            let mut upstream = vec![0.0; actor.n_actions];
            if flows {
                let scale = -ratio * advantages[j] / n;
                for (k, up) in upstream.iter_mut().enumerate() {
                    let indicator = if k == item.rec.action { 1.0 } else { 0.0 };
                    *up += scale * (indicator - probs[k]);
                }
            }
            if entropy_coeff != 0.0 {
                for (k, up) in upstream.iter_mut().enumerate() {
                    let dh = -probs[k] * (probs[k].max(f64::MIN_POSITIVE).ln() + entropy);
                    *up += -entropy_coeff * dh / n;
                }
            }
            actor_grads.add_assign(&actor.net.backward(&cache, &upstream));
        }
        actor
            .net
            .adam_update(&actor_grads, actor_adam, cfg.actor_learning_rate);
        diag.actor_loss = loss_acc / n;
        diag.mean_entropy = entropy_acc / n;
        diag.clip_fraction = clipped_count as f64 / n;

        // Critic step.
        let mut critic_grads = Gradients::zeros_like(&critic.net);
        let mut critic_loss = 0.0;
        for (j, item) in items.iter().enumerate() {
            let x = critic.input(item.rec.shaped, item.lambda, &item.rec.feature);
            let (q, cache) = critic.net.forward(&x)?;
            let err = q[item.rec.action] - targets[j];
            critic_loss += err * err;
            let mut upstream = vec![0.0; critic.n_actions];
            upstream[item.rec.action] = 2.0 * err / n;
            critic_grads.add_assign(&critic.net.backward(&cache, &upstream));
        }
        critic
            .net
            .adam_update(&critic_grads, critic_adam, cfg.critic_learning_rate);
        diag.critic_loss = critic_loss / n;
    }

    Ok(diag)
}

/// Outcome of one λ-network update.
#[derive(Debug, Clone, Default)]
pub struct LambdaUpdateReport {
    /// One stepped target per consumed (non-empty) epoch window.
    pub targets: Vec<f64>,
    /// Windows skipped because they held no records.
    pub skipped_windows: usize,
    pub new_learning_rate: f64,
}

/// Update the λ-network from the buffered epoch windows.
///
/// For each window with recorded charge λ_old, the stepped target is
/// λ* = clamp(λ_old − α · (B/(1−β) − Σ_i Σ_t β^t c_{a_{i,t}}), 0, λ_max):
/// the charge falls when the realized discounted spend is below the budget
/// line and rises when it exceeds it. The network output at the window's
/// own input is then regressed toward λ*, and α decays once per call.
pub fn lambda_update(
    lnet: &mut LambdaNet,
    windows: &[EpochWindow],
    budget: f64,
    beta: f64,
    costs: &ActionCosts,
    cfg: &PpoConfig,
    adam: &mut AdamState,
) -> Result<LambdaUpdateReport> {
    let mut report = LambdaUpdateReport::default();
    let mut fit_set: Vec<(&EpochWindow, f64)> = Vec::new();
    for w in windows {
        if w.records.is_empty() {
            report.skipped_windows += 1;
            continue;
        }
        let total_cost: f64 = discounted_cost_sum(&w.records, costs, beta)
            .values()
            .sum();
        let budget_line = budget / (1.0 - beta);
        let step = if cfg.lambda_alt_sign {
            budget_line + total_cost
        } else {
            budget_line - total_cost
        };
        let target = (w.lambda - lnet.learning_rate * step).clamp(0.0, cfg.lambda_max);
        report.targets.push(target);
        fit_set.push((w, target));
    }

    if !fit_set.is_empty() {
        let n = fit_set.len() as f64;
        for _ in 0..cfg.lambda_fit_steps {
            let mut grads = Gradients::zeros_like(&lnet.net);
            for (w, target) in &fit_set {
                let (raw, cache) = lnet.net.forward(&w.lambda_input)?;
                if !raw[0].is_finite() {
                    return Err(Error::divergence("non-finite λ-network output"));
                }
                let pred = softplus(raw[0]);
                let upstream = vec![2.0 * (pred - target) * sigmoid(raw[0]) / n];
                grads.add_assign(&lnet.net.backward(&cache, &upstream));
            }
            lnet.net
                .adam_update(&grads, adam, cfg.lambda_fit_learning_rate);
        }
    }

    lnet.learning_rate *= cfg.lambda_scheduler_discount_rate;
    lnet.updates += 1;
    report.new_learning_rate = lnet.learning_rate;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::Record;
    use crate::seeds;
    use proptest::prelude::*;
    use rand::Rng;

    fn record(action: usize, reward: f64, feature_dim: usize) -> Record {
        Record {
            arm_id: 0,
            t: 0,
            state: 0.0,
            shaped: 0.0,
            action,
            reward,
            shaped_next: 0.0,
            feature: vec![0.1; feature_dim],
        }
    }

    fn window(lambda: f64, records: Vec<Record>, capacity: usize, m: usize) -> EpochWindow {
        EpochWindow {
            lambda,
            opt_in: OptInVector::ones(capacity),
            lambda_input: vec![0.0; capacity * (m + 2)],
            records,
        }
    }

    #[test]
    fn uniform_logits_sample_uniformly() {
        let mut rng = seeds::stream(40, &[0]);
        let logits = [0.0, 0.0, 0.0];
        let mut counts = [0usize; 3];
        for _ in 0..10_000 {
            let (a, _) = sample_from_logits(&logits, &mut rng).unwrap();
            counts[a] += 1;
        }
        for c in counts {
            let freq = c as f64 / 10_000.0;
            assert!((freq - 1.0 / 3.0).abs() < 0.02, "frequency {freq}");
        }
    }

    #[test]
    fn saturated_logit_dominates() {
        let mut rng = seeds::stream(41, &[0]);
        let logits = [-50.0, 50.0, -50.0];
        let picked = (0..10_000)
            .filter(|_| sample_from_logits(&logits, &mut rng).unwrap().0 == 1)
            .count();
        assert!(picked as f64 / 10_000.0 > 0.999);
    }

    #[test]
    fn logprob_matches_recomputed_softmax() {
        let mut rng = seeds::stream(42, &[0]);
        for _ in 0..100 {
            let logits: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (a, lp) = sample_from_logits(&logits, &mut rng).unwrap();
            let direct = softmax(&logits)[a].ln();
            assert!((lp - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_logits_are_divergence() {
        let mut rng = seeds::stream(43, &[0]);
        let err = sample_from_logits(&[f64::NAN, 0.0], &mut rng).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn critic_target_hand_arithmetic() {
        let mut rng = seeds::stream(44, &[1]);
        let critic = Critic::new(2, 2, &mut rng);
        let costs = ActionCosts::new(vec![0.0, 2.0]).unwrap();

        // λ=0, β=0, passive: target = r.
        let w = window(0.0, vec![record(0, 0.7, 2)], 1, 2);
        let t = critic_targets(&critic, &[w], 0.0, &costs).unwrap();
        assert!((t[0] - 0.7).abs() < 1e-12);

        // r=1, λ=0.5, c=2, β=0: target = 1 − 0.5·2 = 0.
        let w = window(0.5, vec![record(1, 1.0, 2)], 1, 2);
        let t = critic_targets(&critic, &[w], 0.0, &costs).unwrap();
        assert!(t[0].abs() < 1e-12);
    }

    #[test]
    fn advantage_baseline_sums_to_zero() {
        let mut rng = seeds::stream(45, &[0]);
        let actor = Actor::new(3, 4, &mut rng);
        let critic = Critic::new(3, 4, &mut rng);
        let z = [0.3, -0.2, 0.8];
        let probs = actor.probs(0.4, 0.7, &z).unwrap();
        let q = critic.q_values(0.4, 0.7, &z).unwrap();
        let baseline: f64 = probs.iter().zip(&q).map(|(p, v)| p * v).sum();
        let total: f64 = probs.iter().zip(&q).map(|(p, v)| p * (v - baseline)).sum();
        assert!(total.abs() < 1e-10, "sum of weighted advantages = {total}");
    }

    #[test]
    fn surrogate_clip_semantics() {
        // New policy == old policy: ratio 1, clipping inactive.
        let (v, flows) = surrogate(1.0, 0.5, 2.0);
        assert_eq!(v, 0.5);
        assert!(flows);
        // Positive advantage beyond the bound: clipped branch, no gradient.
        let (v, flows) = surrogate(3.0, 0.5, 2.0);
        assert_eq!(v, 1.0);
        assert!(!flows);
        // Negative advantage with the ratio already below the lower bound:
        // the min is the (more pessimistic) clipped value and gradient stops.
        let (v, flows) = surrogate(0.1, -1.0, 2.0);
        assert!((v - -0.5).abs() < 1e-15);
        assert!(!flows);
        // Inside the trust region the branches agree and gradient flows.
        let (v, flows) = surrogate(0.8, -1.0, 2.0);
        assert!((v - -0.8).abs() < 1e-15);
        assert!(flows);
    }

    #[test]
    fn entropy_schedule_is_monotone() {
        let cfg = PpoConfig::default();
        let n = 80;
        let mut prev = f64::INFINITY;
        for epoch in 0..n {
            let c = cfg.entropy_coefficient(epoch, n);
            assert!(c <= prev + 1e-15);
            assert!(c >= 0.0);
            prev = c;
        }
        assert!((cfg.entropy_coefficient(0, n) - 0.5).abs() < 1e-12);
        assert!(cfg.entropy_coefficient(n - 1, n).abs() < 1e-12);
    }

    #[test]
    fn zero_initialized_lambda_net_emits_softplus_zero() {
        let mut rng = seeds::stream(46, &[0]);
        let mut lnet = LambdaNet::new(3, 2, 2e-3, &mut rng);
        lnet.net = Mlp::zeros(lnet.net.sizes());
        let input = vec![0.0; lnet.input_len()];
        let lambda = lnet.forward(&input).unwrap();
        assert!((lambda - 2f64.ln()).abs() < 1e-12, "softplus(0) = ln 2");
    }

    #[test]
    fn lambda_is_non_negative_on_random_inputs() {
        let mut rng = seeds::stream(47, &[0]);
        let lnet = LambdaNet::new(4, 3, 2e-3, &mut rng);
        for _ in 0..10_000 {
            let input: Vec<f64> = (0..lnet.input_len())
                .map(|_| rng.random_range(-5.0..5.0))
                .collect();
            assert!(lnet.forward(&input).unwrap() >= 0.0);
        }
    }

    #[test]
    fn masked_first_layer_ignores_dummy_slots() {
        // Zero the first-layer weight columns that touch slot 2's inputs and
        // verify the output is invariant to that slot's content.
        let mut rng = seeds::stream(48, &[0]);
        let capacity = 3;
        let m = 2;
        let mut lnet = LambdaNet::new(capacity, m, 2e-3, &mut rng);
        let dummy = 2usize;
        let in_dim = lnet.input_len();
        let mut cols: Vec<usize> = vec![dummy];
        for j in 0..m {
            cols.push(capacity + dummy * m + j);
        }
        cols.push(capacity * (1 + m) + dummy);
        let mut flat = lnet.net.params_flat();
        // First-layer weights occupy the leading HIDDEN×in_dim entries.
        for o in 0..crate::nn::HIDDEN {
            for &c in &cols {
                flat[o * in_dim + c] = 0.0;
            }
        }
        lnet.net.set_params_flat(&flat).unwrap();

        let z_live = vec![0.5, -0.3];
        let z_a = vec![9.0, -9.0];
        let z_b = vec![1.0, 2.0];
        let xi = OptInVector::ones(capacity);
        let base: Vec<Option<(f64, &[f64])>> = vec![
            Some((0.2, &z_live[..])),
            Some((0.8, &z_live[..])),
            Some((5.0, &z_a[..])),
        ];
        let alt: Vec<Option<(f64, &[f64])>> = vec![
            Some((0.2, &z_live[..])),
            Some((0.8, &z_live[..])),
            Some((-5.0, &z_b[..])),
        ];
        let a = lnet.forward(&lnet.build_input(&base, &xi)).unwrap();
        let b = lnet.forward(&lnet.build_input(&alt, &xi)).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn build_input_zeroes_opted_out_slots() {
        let mut rng = seeds::stream(49, &[0]);
        let lnet = LambdaNet::new(2, 1, 2e-3, &mut rng);
        let z = vec![0.7];
        let mut xi = OptInVector::ones(2);
        xi.set(1, false);
        let input = lnet.build_input(&[Some((0.4, &z[..])), Some((0.9, &z[..]))], &xi);
        assert_eq!(input, vec![0.4, 0.0, 0.7, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn lambda_lr_decays_exactly() {
        let mut rng = seeds::stream(50, &[0]);
        let mut lnet = LambdaNet::new(1, 1, 2e-3, &mut rng);
        let cfg = PpoConfig::default();
        let mut adam = AdamState::for_net(&lnet.net);
        let w = window(0.5, vec![record(0, 0.1, 1)], 1, 1);
        for u in 1..=10u32 {
            lambda_update(
                &mut lnet,
                &[w.clone()],
                1.0,
                0.9,
                &ActionCosts::binary(),
                &cfg,
                &mut adam,
            )
            .unwrap();
            let want = 2e-3 * 0.99f64.powi(u as i32);
            assert!((lnet.learning_rate - want).abs() < 1e-18);
        }
    }

    #[test]
    fn lambda_target_falls_when_budget_is_slack() {
        let mut rng = seeds::stream(51, &[0]);
        let mut lnet = LambdaNet::new(1, 1, 2e-3, &mut rng);
        let cfg = PpoConfig::default();
        let mut adam = AdamState::for_net(&lnet.net);
        // All-passive trajectories: Σ costs = 0, B > 0 ⇒ target < λ_old.
        let w = window(0.8, vec![record(0, 0.5, 1), record(0, 0.5, 1)], 1, 1);
        let report = lambda_update(
            &mut lnet,
            &[w],
            1.0,
            0.9,
            &ActionCosts::binary(),
            &cfg,
            &mut adam,
        )
        .unwrap();
        assert_eq!(report.targets.len(), 1);
        assert!(report.targets[0] < 0.8);
    }

    #[test]
    fn lambda_target_rises_when_budget_is_violated() {
        let mut rng = seeds::stream(52, &[0]);
        let mut lnet = LambdaNet::new(1, 1, 2e-3, &mut rng);
        // A visible α makes the sign test direct.
        lnet.learning_rate = 0.1;
        let cfg = PpoConfig::default();
        let mut adam = AdamState::for_net(&lnet.net);
        // Heavy spending against a tiny budget: Σ β^t c > B/(1−β).
        let mut records = Vec::new();
        for t in 0..20 {
            let mut r = record(1, 0.5, 1);
            r.t = t;
            records.push(r);
        }
        let w = window(0.2, records, 1, 1);
        let report = lambda_update(
            &mut lnet,
            &[w],
            0.05,
            0.9,
            &ActionCosts::binary(),
            &cfg,
            &mut adam,
        )
        .unwrap();
        assert!(report.targets[0] > 0.2, "target {}", report.targets[0]);
    }

    #[test]
    fn lambda_update_skips_empty_windows() {
        let mut rng = seeds::stream(53, &[0]);
        let mut lnet = LambdaNet::new(1, 1, 2e-3, &mut rng);
        let cfg = PpoConfig::default();
        let mut adam = AdamState::for_net(&lnet.net);
        let w = window(0.5, vec![], 1, 1);
        let report = lambda_update(
            &mut lnet,
            &[w],
            1.0,
            0.9,
            &ActionCosts::binary(),
            &cfg,
            &mut adam,
        )
        .unwrap();
        assert_eq!(report.skipped_windows, 1);
        assert!(report.targets.is_empty());
    }

    #[test]
    fn lambda_regression_tracks_target() {
        // With a single window the fit should pull the emitted λ close to
        // the stepped target within one update call.
        let mut rng = seeds::stream(54, &[0]);
        let mut lnet = LambdaNet::new(2, 1, 0.05, &mut rng);
        let cfg = PpoConfig {
            lambda_fit_steps: 300,
            ..PpoConfig::default()
        };
        let mut adam = AdamState::for_net(&lnet.net);
        let mut records = Vec::new();
        for t in 0..10 {
            let mut r = record(1, 0.5, 1);
            r.t = t;
            records.push(r);
        }
        let w = EpochWindow {
            lambda: 0.7,
            opt_in: OptInVector::ones(2),
            lambda_input: vec![0.3; 2 * 3],
            records,
        };
        let report = lambda_update(
            &mut lnet,
            &[w.clone()],
            0.1,
            0.9,
            &ActionCosts::binary(),
            &cfg,
            &mut adam,
        )
        .unwrap();
        let emitted = lnet.forward(&w.lambda_input).unwrap();
        assert!(
            (emitted - report.targets[0]).abs() < 0.05,
            "emitted {emitted} vs target {}",
            report.targets[0]
        );
    }

    #[test]
    fn ppo_update_improves_preferred_action() {
        // Acting earns reward 1, passivity 0, β = 0: after a few updates the
        // actor should put more mass on the acting action.
        let mut rng = seeds::stream(55, &[0]);
        let mut actor = Actor::new(1, 2, &mut rng);
        let mut critic = Critic::new(1, 2, &mut rng);
        let cfg = PpoConfig {
            start_entropy_coeff: 0.0,
            end_entropy_coeff: 0.0,
            ..PpoConfig::default()
        };
        let mut actor_adam = AdamState::for_net(&actor.net);
        let mut critic_adam = AdamState::for_net(&critic.net);
        let costs = ActionCosts::binary();

        let before = actor.probs(0.0, 0.0, &[0.5]).unwrap()[1];
        for _ in 0..30 {
            let mut records = Vec::new();
            for t in 0..10 {
                let a = usize::from(t % 2 == 0);
                let mut r = record(a, if a == 1 { 1.0 } else { 0.0 }, 1);
                r.feature = vec![0.5];
                r.t = t;
                records.push(r);
            }
            let w = window(0.0, records, 1, 1);
            ppo_update(
                &mut actor,
                &mut critic,
                &[w],
                0.0,
                &costs,
                0.0,
                &cfg,
                &mut actor_adam,
                &mut critic_adam,
            )
            .unwrap();
        }
        let after = actor.probs(0.0, 0.0, &[0.5]).unwrap()[1];
        assert!(
            after > before && after > 0.6,
            "P(act) went {before} -> {after}"
        );
    }

    proptest! {
        #[test]
        fn surrogate_never_exceeds_unclipped_for_positive_advantage(
            ratio in 0.01f64..10.0,
            adv in 0.0f64..5.0,
        ) {
            let (v, _) = surrogate(ratio, adv, 2.0);
            prop_assert!(v <= ratio * adv + 1e-12);
        }
    }
}
