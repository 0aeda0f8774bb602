//! The training loop, strict-budget inference, the evaluation protocol, and
//! fine-tuning.
//!
//! Pretraining runs the streaming loop: every epoch, live arms renew their
//! slots with the configured opt-in probability, previously empty slots
//! admit fresh arms with the same probability (so the opt-in pattern is
//! Binomial(N, rate)), a single λ is computed for the epoch, opt-in arms
//! roll out `n_steps` transitions into the buffer, and the actor/critic
//! pair takes a PPO update. Every K epochs after the freeze window the
//! λ-network and the shaping estimator are refit and the buffer is cleared.
//!
//! A slot whose arm opts out stays reserved (dummy) for that round;
//! newcomers claim vacated capacity at the next epoch boundary.
//!
//! Budgets are deliberately *not* enforced during training rollouts — the
//! cost estimator feeding the λ update must see the policy's unconstrained
//! behavior. Inference strictly enforces the budget by greedy selection.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{
    lambda_update, ppo_update, Actor, Critic, LambdaNet, PpoConfig, PpoDiagnostics,
};
use crate::core::{
    admit_requests, sample_opt_ins, ActionCosts, ArmModel, OptInVector, Record, TransitionBuffer,
};
use crate::envs::{make_features, ArmDynamics, EnvKind, EnvSpec, FeatureMap, FeatureMapKind};
use crate::nn::AdamState;
use crate::report::{EvalReport, ReportMetadata};
use crate::seeds::{self, purpose};
use crate::shaping::{EstimatorKind, ShapingModel};
use crate::{Error, Result};

/// Everything a training run needs. Serialized verbatim into checkpoints
/// and `run.json` files so resolved defaults are always explicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_epochs: usize,
    /// Rollout steps per epoch; also the discounted-cost horizon H.
    pub n_steps: usize,
    /// λ-update frequency K (epochs between λ-network updates).
    pub lambda_update_freq: usize,
    /// System capacity N.
    pub capacity: usize,
    pub budget: f64,
    pub discount: f64,
    pub opt_in_rate: f64,
    /// Size of the unique-arm pool newcomers are drawn from; `None` samples
    /// fresh dynamics for every newcomer.
    pub unique_arms: Option<usize>,
    pub seed: u64,
    pub env: EnvSpec,
    pub feature_map: FeatureMapKind,
    /// Output dimension for non-identity maps (defaults to the parameter
    /// count).
    pub feature_dim: Option<usize>,
    /// Feature entries zeroed at train and test time.
    pub masked_features: Vec<usize>,
    /// Reward estimator for state shaping. Ignored (passthrough) on
    /// discrete-state environments.
    pub shaping: Option<EstimatorKind>,
    pub eval_trials: usize,
    pub eval_rounds: usize,
    pub ppo: PpoConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_epochs: 100,
            n_steps: 20,
            lambda_update_freq: 4,
            capacity: 21,
            budget: 7.0,
            discount: 0.9,
            opt_in_rate: 0.8,
            unique_arms: None,
            seed: 0,
            env: EnvSpec::default(),
            feature_map: FeatureMapKind::Identity,
            feature_dim: None,
            masked_features: Vec::new(),
            shaping: None,
            eval_trials: 50,
            eval_rounds: 10,
            ppo: PpoConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        if self.capacity == 0 {
            return Err(Error::config("capacity", "must be positive"));
        }
        if self.n_steps == 0 {
            return Err(Error::config("n_steps", "must be positive"));
        }
        if self.lambda_update_freq == 0 {
            return Err(Error::config("lambda_update_freq", "must be ≥ 1"));
        }
        if self.n_epochs < self.ppo.lambda_freeze_epochs {
            return Err(Error::config(
                "n_epochs",
                "must be at least lambda_freeze_epochs",
            ));
        }
        if !(0.0..=1.0).contains(&self.opt_in_rate) {
            return Err(Error::config("opt_in_rate", "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::config("discount", "must lie in [0, 1)"));
        }
        let costs = self.env.default_costs();
        let cap = self.capacity as f64 * costs.max_cost();
        if self.budget < 0.0 || self.budget > cap {
            return Err(Error::config(
                "budget",
                format!("must lie in [0, N·max cost] = [0, {cap}]"),
            ));
        }
        if let Some(u) = self.unique_arms {
            if u < self.capacity {
                return Err(Error::config("unique_arms", "must be ≥ capacity"));
            }
        }
        let m = self.feature_dim();
        if let Some(&bad) = self.masked_features.iter().find(|&&i| i >= m) {
            return Err(Error::config(
                "masked_features",
                format!("index {bad} out of range for {m} features"),
            ));
        }
        if self.eval_trials == 0 || self.eval_rounds == 0 {
            return Err(Error::config("eval_trials", "trials and rounds must be ≥ 1"));
        }
        Ok(())
    }

    /// Dimension of the feature vectors fed to the networks.
    pub fn feature_dim(&self) -> usize {
        match self.feature_map {
            FeatureMapKind::Identity => self.env.param_dim(),
            _ => self.feature_dim.unwrap_or_else(|| self.env.param_dim()),
        }
    }

    fn build_feature_map(&self) -> FeatureMap {
        let mut rng = seeds::stream(self.seed, &[purpose::FEATURE_MAP]);
        FeatureMap::build(
            self.feature_map,
            self.env.param_dim(),
            self.feature_dim(),
            &mut rng,
        )
    }

    fn shaping_model(&self) -> ShapingModel {
        match (self.env.kind, self.shaping) {
            (EnvKind::ContSynthetic | EnvKind::ContSis, Some(kind)) => ShapingModel::new(kind),
            _ => ShapingModel::disabled(),
        }
    }
}

/// A trained (or freshly initialized) model bundle.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub actor: Actor,
    pub critic: Critic,
    pub lambda_net: LambdaNet,
    pub shaping: ShapingModel,
    pub feature_map: FeatureMap,
    pub config: TrainConfig,
}

impl Checkpoint {
    /// Features for an arm as this model expects them: projected from the
    /// ground-truth dynamics parameters with the training-time map and mask.
    pub fn features_for(&self, dynamics: &ArmDynamics) -> Vec<f64> {
        make_features(
            &dynamics.flat_params(),
            &self.feature_map,
            &self.config.masked_features,
        )
    }
}

/// Per-epoch training diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLogEntry {
    pub epoch: usize,
    pub lambda: f64,
    pub opt_in_count: usize,
    pub entropy_coeff: f64,
    pub records_in_buffer: usize,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub mean_entropy: f64,
    pub clip_fraction: f64,
    pub lambda_updated: bool,
    pub lambda_target: Option<f64>,
    pub lambda_learning_rate: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLogEntry>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,lambda,opt_in_count,entropy_coeff,records,actor_loss,critic_loss,\
             mean_entropy,clip_fraction,lambda_updated,lambda_target,lambda_lr\n",
        );
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                e.epoch,
                e.lambda,
                e.opt_in_count,
                e.entropy_coeff,
                e.records_in_buffer,
                e.actor_loss,
                e.critic_loss,
                e.mean_entropy,
                e.clip_fraction,
                e.lambda_updated,
                e.lambda_target.map_or(String::new(), |t| t.to_string()),
                e.lambda_learning_rate,
            ));
        }
        out
    }
}

/// Uniform initial state over an arm's own state space.
pub fn uniform_initial_state(dynamics: &ArmDynamics, rng: &mut impl Rng) -> f64 {
    match dynamics {
        ArmDynamics::Synthetic(_) => f64::from(rng.random::<bool>()),
        ArmDynamics::Sis(p) => rng.random_range(0..=p.population) as f64,
        ArmDynamics::Armman(_) => rng.random_range(0..3u8) as f64,
        ArmDynamics::ContinuousSynthetic(_) | ArmDynamics::ContinuousSis(_) => rng.random::<f64>(),
        ArmDynamics::Tabular(t) => rng.random_range(0..t.n_states) as f64,
    }
}

enum ChurnMode {
    /// Streaming admission with newcomer sampling (pretraining).
    Streaming,
    /// Fixed population; opt-in only masks arms (fine-tuning).
    FixedPopulation,
}

struct Trainer {
    cfg: TrainConfig,
    actor: Actor,
    critic: Critic,
    lambda_net: LambdaNet,
    actor_adam: AdamState,
    critic_adam: AdamState,
    lambda_adam: AdamState,
    shaping: ShapingModel,
    feature_map: FeatureMap,
    costs: ActionCosts,
    buffer: TransitionBuffer,
    shaping_data: Vec<(f64, f64)>,
    slots: Vec<Option<ArmModel>>,
    pool: Option<Vec<ArmModel>>,
    pool_slot: Vec<Option<usize>>,
    shaped: Vec<f64>,
    opt_in: OptInVector,
    boost_next: bool,
    records_collected: usize,
    log: TrainLog,
}

impl Trainer {
    fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let m = cfg.feature_dim();
        let n_actions = cfg.env.n_actions();
        let costs = cfg.env.default_costs();
        let feature_map = cfg.build_feature_map();
        let actor = Actor::new(
            m,
            n_actions,
            &mut seeds::stream(cfg.seed, &[purpose::INIT_ACTOR]),
        );
        let critic = Critic::new(
            m,
            n_actions,
            &mut seeds::stream(cfg.seed, &[purpose::INIT_CRITIC]),
        );
        let lambda_net = LambdaNet::new(
            cfg.capacity,
            m,
            cfg.ppo.lambda_initial_learning_rate,
            &mut seeds::stream(cfg.seed, &[purpose::INIT_LAMBDA]),
        );
        let pool = cfg.unique_arms.map(|u| {
            let mut rng = seeds::stream(cfg.seed, &[purpose::POPULATION]);
            cfg.env
                .sample_population(u, &feature_map, &cfg.masked_features, &mut rng)
        });
        let shaping = cfg.shaping_model();
        Ok(Trainer {
            actor_adam: AdamState::for_net(&actor.net),
            critic_adam: AdamState::for_net(&critic.net),
            lambda_adam: AdamState::for_net(&lambda_net.net),
            buffer: TransitionBuffer::new(n_actions),
            shaping_data: Vec::new(),
            slots: vec![None; cfg.capacity],
            pool,
            pool_slot: vec![None; cfg.capacity],
            shaped: vec![0.0; cfg.capacity],
            opt_in: OptInVector::zeros(cfg.capacity),
            boost_next: false,
            records_collected: 0,
            log: TrainLog::default(),
            actor,
            critic,
            lambda_net,
            shaping,
            feature_map,
            costs,
            cfg,
        })
    }

    fn from_checkpoint(ckpt: &Checkpoint, cfg: TrainConfig) -> Result<Self> {
        let mut trainer = Trainer::new(cfg)?;
        trainer.actor = ckpt.actor.clone();
        trainer.critic = ckpt.critic.clone();
        trainer.lambda_net = ckpt.lambda_net.clone();
        trainer.shaping = ckpt.shaping.clone();
        trainer.feature_map = ckpt.feature_map.clone();
        trainer.actor_adam = AdamState::for_net(&trainer.actor.net);
        trainer.critic_adam = AdamState::for_net(&trainer.critic.net);
        trainer.lambda_adam = AdamState::for_net(&trainer.lambda_net.net);
        Ok(trainer)
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            actor: self.actor.clone(),
            critic: self.critic.clone(),
            lambda_net: self.lambda_net.clone(),
            shaping: self.shaping.clone(),
            feature_map: self.feature_map.clone(),
            config: self.cfg.clone(),
        }
    }

    /// Streaming admission: one opt-in coin per slot. Live arms renew with
    /// probability `rate`; slots that were empty admit a newcomer with the
    /// same probability, so the opt-in count is Binomial(N, rate). Slots
    /// vacated this epoch stay reserved (dummy) until the next boundary.
    fn admission(&mut self, epoch: usize) -> Result<()> {
        let n = self.cfg.capacity;
        let mut rng = seeds::stream(self.cfg.seed, &[purpose::OPT_IN, epoch as u64]);
        let live: Vec<usize> = (0..n).filter(|&i| self.opt_in.get(i)).collect();
        let renewals = sample_opt_ins(&live, self.cfg.opt_in_rate, &mut rng)?;
        let empty_before = n - live.len();
        let n_newcomers = (0..empty_before)
            .filter(|_| rng.random::<f64>() < self.cfg.opt_in_rate)
            .count();

        let mut newcomer_rng = seeds::stream(self.cfg.seed, &[purpose::NEWCOMER, epoch as u64]);
        let (newcomers, newcomer_pool_ids) = self.draw_newcomers(n_newcomers, &renewals, &mut newcomer_rng);

        // Slots drop non-renewing arms; admit_requests fills holes in order.
        let current = self.opt_in.clone();
        let slots = std::mem::take(&mut self.slots);
        let (opt_in, slots) = admit_requests(&current, &renewals, newcomers, slots, n);

        // Track which pool member sits where (only used with a pool).
        let mut renewal_iter = renewals.iter();
        let mut kept = vec![false; n];
        for i in 0..n {
            if current.get(i) {
                kept[i] = *renewal_iter.next().expect("one renewal per live arm");
            }
        }
        let mut arrivals = newcomer_pool_ids.into_iter();
        for i in 0..n {
            if kept[i] {
                continue;
            }
            self.pool_slot[i] = if slots[i].is_some() {
                arrivals.next().unwrap_or(None)
            } else {
                None
            };
        }

        self.opt_in = opt_in;
        self.slots = slots;
        Ok(())
    }

    fn draw_newcomers(
        &self,
        count: usize,
        renewals: &[bool],
        rng: &mut ChaCha8Rng,
    ) -> (Vec<ArmModel>, Vec<Option<usize>>) {
        match &self.pool {
            None => {
                let arms = self
                    .cfg
                    .env
                    .sample_population(count, &self.feature_map, &self.cfg.masked_features, rng);
                let ids = vec![None; count];
                (arms, ids)
            }
            Some(pool) => {
                // Pool members currently renewing stay unavailable.
                let mut staying = vec![false; pool.len()];
                let mut renewal_iter = renewals.iter();
                for i in 0..self.cfg.capacity {
                    if self.opt_in.get(i) {
                        let renews = *renewal_iter.next().expect("length checked");
                        if renews {
                            if let Some(idx) = self.pool_slot[i] {
                                staying[idx] = true;
                            }
                        }
                    }
                }
                let mut available: Vec<usize> =
                    (0..pool.len()).filter(|&i| !staying[i]).collect();
                let mut arms = Vec::new();
                let mut ids = Vec::new();
                for _ in 0..count.min(available.len()) {
                    let pick = rng.random_range(0..available.len());
                    let idx = available.swap_remove(pick);
                    let mut arm = pool[idx].clone();
                    arm.state = uniform_initial_state(&arm.dynamics, rng);
                    arms.push(arm);
                    ids.push(Some(idx));
                }
                (arms, ids)
            }
        }
    }

    /// Fixed-population opt-in mask: every occupied slot flips one coin;
    /// opted-out arms keep their slot and a frozen state.
    fn mask(&mut self, epoch: usize) -> Result<()> {
        let mut rng = seeds::stream(self.cfg.seed, &[purpose::OPT_IN, epoch as u64]);
        let occupied: Vec<usize> = (0..self.cfg.capacity)
            .filter(|&i| self.slots[i].is_some())
            .collect();
        let draws = sample_opt_ins(&occupied, self.cfg.opt_in_rate, &mut rng)?;
        let mut opt_in = OptInVector::zeros(self.cfg.capacity);
        for (&slot, &active) in occupied.iter().zip(&draws) {
            opt_in.set(slot, active);
        }
        self.opt_in = opt_in;
        Ok(())
    }

    fn refresh_shaped_states(&mut self) {
        for i in 0..self.cfg.capacity {
            self.shaped[i] = match &self.slots[i] {
                Some(arm) => self.shaping.shape(arm.state),
                None => 0.0,
            };
        }
    }

    fn lambda_input(&self) -> Vec<f64> {
        let entries: Vec<Option<(f64, &[f64])>> = self
            .slots
            .iter()
            .enumerate()
            .map(|(i, slot)| {
                slot.as_ref()
                    .map(|arm| (self.shaped[i], arm.feature.as_slice()))
            })
            .collect();
        self.lambda_net.build_input(&entries, &self.opt_in)
    }

    fn run_epoch(&mut self, epoch: usize, mode: &ChurnMode) -> Result<()> {
        match mode {
            ChurnMode::Streaming => self.admission(epoch)?,
            ChurnMode::FixedPopulation => self.mask(epoch)?,
        }
        self.refresh_shaped_states();

        let lambda_input = self.lambda_input();
        let lambda = self
            .lambda_net
            .forward(&lambda_input)
            .map_err(|e| e.at(epoch, 0))?;
        self.buffer
            .begin_epoch(lambda, self.opt_in.clone(), lambda_input);

        // Rollouts: opt-in arms only; the budget is not enforced here.
        for t in 0..self.cfg.n_steps {
            for i in 0..self.cfg.capacity {
                if !self.opt_in.get(i) {
                    continue;
                }
                let mut rng = seeds::stream(
                    self.cfg.seed,
                    &[purpose::ROLLOUT, epoch as u64, i as u64, t as u64],
                );
                let arm = self.slots[i].as_mut().expect("opt-in slots are occupied");
                let (action, _) = self
                    .actor
                    .sample_with_floor(
                        self.shaped[i],
                        lambda,
                        &arm.feature,
                        self.cfg.ppo.exploration_floor,
                        &mut rng,
                    )
                    .map_err(|e| e.at(epoch, t))?;
                let (next, reward) = arm
                    .dynamics
                    .step(arm.state, action, arm.reward, &mut rng)
                    .map_err(|e| e.at(epoch, t))?;
                let shaped_next = self.shaping.shape(next);
                self.buffer.push(Record {
                    arm_id: i,
                    t,
                    state: arm.state,
                    shaped: self.shaped[i],
                    action,
                    reward,
                    shaped_next,
                    feature: arm.feature.clone(),
                });
                if self.shaping.enabled {
                    self.shaping_data.push((next, reward));
                }
                arm.state = next;
                self.shaped[i] = shaped_next;
                self.records_collected += 1;
            }
        }

        let mut entropy_coeff = self.cfg.ppo.entropy_coefficient(epoch, self.cfg.n_epochs);
        if self.boost_next {
            entropy_coeff *= self.cfg.ppo.explore_boost;
            self.boost_next = false;
        }

        let diag = if self.buffer.record_count() > 0 {
            ppo_update(
                &mut self.actor,
                &mut self.critic,
                self.buffer.windows(),
                self.cfg.discount,
                &self.costs,
                entropy_coeff,
                &self.cfg.ppo,
                &mut self.actor_adam,
                &mut self.critic_adam,
            )
            .map_err(|e| e.at(epoch, 0))?
        } else {
            PpoDiagnostics::default()
        };

        let mut lambda_updated = false;
        let mut lambda_target = None;
        if epoch >= self.cfg.ppo.lambda_freeze_epochs && epoch % self.cfg.lambda_update_freq == 0 {
            let report = lambda_update(
                &mut self.lambda_net,
                self.buffer.windows(),
                self.cfg.budget,
                self.cfg.discount,
                &self.costs,
                &self.cfg.ppo,
                &mut self.lambda_adam,
            )
            .map_err(|e| e.at(epoch, 0))?;
            lambda_target = report.targets.last().copied();
            if self.shaping.enabled {
                self.shaping.fit(&self.shaping_data);
                self.refresh_shaped_states();
            }
            self.buffer.clear();
            self.boost_next = true;
            lambda_updated = true;
        }

        self.log.epochs.push(EpochLogEntry {
            epoch,
            lambda,
            opt_in_count: self.opt_in.count_ones(),
            entropy_coeff,
            records_in_buffer: diag.records,
            actor_loss: diag.actor_loss,
            critic_loss: diag.critic_loss,
            mean_entropy: diag.mean_entropy,
            clip_fraction: diag.clip_fraction,
            lambda_updated,
            lambda_target,
            lambda_learning_rate: self.lambda_net.learning_rate,
        });
        Ok(())
    }
}

/// Run the full pretraining loop and return the trained bundle plus the
/// per-epoch log.
pub fn pretrain(cfg: &TrainConfig) -> Result<(Checkpoint, TrainLog)> {
    let mut trainer = Trainer::new(cfg.clone())?;
    for epoch in 0..cfg.n_epochs {
        trainer.run_epoch(epoch, &ChurnMode::Streaming)?;
    }
    let log = std::mem::take(&mut trainer.log);
    Ok((trainer.checkpoint(), log))
}

/// A freshly initialized bundle with no training: the starting point for
/// scratch baselines.
pub fn scratch_checkpoint(cfg: &TrainConfig) -> Result<Checkpoint> {
    Ok(Trainer::new(cfg.clone())?.checkpoint())
}

/// Evaluation settings for one report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSettings {
    pub opt_in_rate: f64,
    pub trials: usize,
    pub rounds: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            opt_in_rate: 1.0,
            trials: 50,
            rounds: 10,
            seed: 0,
        }
    }
}

/// Which decision rule drives an evaluation rollout.
pub enum PolicyKind<'a> {
    /// The pretrained model: λ-network + actor + greedy budgeted selection.
    Pretrained(&'a Checkpoint),
    /// All arms passive every round.
    NoAction,
    /// Uniform random actions repaired to feasibility.
    Random { budget: f64 },
}

impl PolicyKind<'_> {
    fn name(&self) -> &'static str {
        match self {
            PolicyKind::Pretrained(_) => "prefermab",
            PolicyKind::NoAction => "no_action",
            PolicyKind::Random { .. } => "random",
        }
    }
}

/// Greedy budgeted action selection: all opt-in arms start passive, then
/// (arm, non-passive action) pairs are visited in descending probability
/// (ties break toward the lower arm index, then the lower action index) and
/// assigned when the arm is still passive and the cost fits the remaining
/// budget. Opted-out arms get no action.
pub fn greedy_proba(
    probs: &[Vec<f64>],
    costs: &ActionCosts,
    budget: f64,
    opt_in: &OptInVector,
) -> Vec<Option<usize>> {
    assert_eq!(probs.len(), opt_in.len(), "one probability row per arm");
    let mut order: Vec<(usize, usize, f64)> = Vec::new();
    for (i, row) in probs.iter().enumerate() {
        if !opt_in.get(i) {
            continue;
        }
        debug_assert_eq!(row.len(), costs.n_actions());
        for (a, &p) in row.iter().enumerate().skip(1) {
            order.push((i, a, p));
        }
    }
    order.sort_by(|x, y| {
        y.2.total_cmp(&x.2)
            .then(x.0.cmp(&y.0))
            .then(x.1.cmp(&y.1))
    });

    let mut assignment: Vec<Option<usize>> = (0..probs.len())
        .map(|i| if opt_in.get(i) { Some(0) } else { None })
        .collect();
    let mut remaining = budget;
    for (arm, action, _) in order {
        if assignment[arm] == Some(0) && costs.cost(action) <= remaining {
            assignment[arm] = Some(action);
            remaining -= costs.cost(action);
        }
    }
    assignment
}

fn random_feasible_actions(
    n_arms: usize,
    opt_in: &OptInVector,
    costs: &ActionCosts,
    budget: f64,
    rng: &mut impl Rng,
) -> Vec<Option<usize>> {
    let mut actions: Vec<Option<usize>> = (0..n_arms)
        .map(|i| {
            if opt_in.get(i) {
                Some(rng.random_range(0..costs.n_actions()))
            } else {
                None
            }
        })
        .collect();
    // Repair: downgrade random acting arms to passive until within budget.
    loop {
        let total: f64 = actions
            .iter()
            .flatten()
            .map(|&a| costs.cost(a))
            .sum();
        if total <= budget {
            break;
        }
        let acting: Vec<usize> = (0..n_arms)
            .filter(|&i| matches!(actions[i], Some(a) if a > 0))
            .collect();
        let victim = acting[rng.random_range(0..acting.len())];
        actions[victim] = Some(0);
    }
    actions
}

/// Run `trials` independent evaluation trials of a policy on a population
/// and return the per-trial rewards (sum over rounds of the mean reward
/// across active arms).
pub fn run_policy_trials(
    policy: &PolicyKind<'_>,
    population: &[ArmModel],
    costs: &ActionCosts,
    settings: &EvalSettings,
) -> Result<Vec<f64>> {
    if population.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation population".into()));
    }
    if let PolicyKind::Pretrained(ckpt) = policy {
        if population.len() > ckpt.config.capacity {
            return Err(Error::InvalidArgument(format!(
                "population of {} exceeds model capacity {}",
                population.len(),
                ckpt.config.capacity
            )));
        }
    }

    // Features as the model expects them (recomputed from dynamics).
    let features: Vec<Vec<f64>> = match policy {
        PolicyKind::Pretrained(ckpt) => population
            .iter()
            .map(|arm| ckpt.features_for(&arm.dynamics))
            .collect(),
        _ => population.iter().map(|arm| arm.feature.clone()).collect(),
    };

    let n = population.len();
    let mut per_trial = Vec::with_capacity(settings.trials);
    for trial in 0..settings.trials as u64 {
        let mut optin_rng = seeds::stream(settings.seed, &[purpose::EVAL_TRIAL, trial, 1]);
        let ids: Vec<usize> = (0..n).collect();
        let active_draws = sample_opt_ins(&ids, settings.opt_in_rate, &mut optin_rng)?;
        let mut opt_in = OptInVector::zeros(n);
        for (i, &a) in active_draws.iter().enumerate() {
            opt_in.set(i, a);
        }
        if opt_in.count_ones() == 0 {
            // Nobody present this trial: it contributes zero reward.
            per_trial.push(0.0);
            continue;
        }

        let mut states: Vec<f64> = (0..n)
            .map(|i| {
                let mut rng =
                    seeds::stream(settings.seed, &[purpose::INIT_STATE, trial, i as u64]);
                uniform_initial_state(&population[i].dynamics, &mut rng)
            })
            .collect();
        let mut env_rngs: Vec<ChaCha8Rng> = (0..n)
            .map(|i| seeds::stream(settings.seed, &[purpose::ROLLOUT, trial, i as u64]))
            .collect();
        let mut action_rng = seeds::stream(settings.seed, &[purpose::BASELINE, trial]);

        let n_active = opt_in.count_ones() as f64;
        let mut total = 0.0;
        for _round in 0..settings.rounds {
            let actions = match policy {
                PolicyKind::NoAction => (0..n)
                    .map(|i| if opt_in.get(i) { Some(0) } else { None })
                    .collect(),
                PolicyKind::Random { budget } => {
                    random_feasible_actions(n, &opt_in, costs, *budget, &mut action_rng)
                }
                PolicyKind::Pretrained(ckpt) => {
                    let shaped: Vec<f64> =
                        states.iter().map(|&s| ckpt.shaping.shape(s)).collect();
                    let mut padded: Vec<Option<(f64, &[f64])>> = (0..ckpt.config.capacity)
                        .map(|i| {
                            if i < n {
                                Some((shaped[i], features[i].as_slice()))
                            } else {
                                None
                            }
                        })
                        .collect();
                    let mut padded_opt_in = OptInVector::zeros(ckpt.config.capacity);
                    for i in 0..n {
                        padded_opt_in.set(i, opt_in.get(i));
                    }
                    // No arm beyond the population: dummy slots stay zero.
                    padded.truncate(ckpt.config.capacity);
                    let input = ckpt.lambda_net.build_input(&padded, &padded_opt_in);
                    let lambda = ckpt.lambda_net.forward(&input)?;
                    let probs: Vec<Vec<f64>> = (0..n)
                        .map(|i| {
                            if opt_in.get(i) {
                                ckpt.actor.probs(shaped[i], lambda, &features[i])
                            } else {
                                Ok(vec![0.0; costs.n_actions()])
                            }
                        })
                        .collect::<Result<_>>()?;
                    greedy_proba(&probs, costs, ckpt.config.budget, &opt_in)
                }
            };

            let mut round_sum = 0.0;
            for i in 0..n {
                let Some(action) = actions[i] else { continue };
                let (next, reward) = population[i].dynamics.step(
                    states[i],
                    action,
                    population[i].reward,
                    &mut env_rngs[i],
                )?;
                states[i] = next;
                round_sum += reward;
            }
            total += round_sum / n_active;
        }
        per_trial.push(total);
    }
    Ok(per_trial)
}

/// Evaluate a checkpoint on a population: per trial, sample opt-ins, run the
/// inference loop (λ from the λ-network, shaped states, greedy budgeted
/// actions), and report undiscounted per-round means summed over rounds.
pub fn evaluate(
    ckpt: &Checkpoint,
    population: &[ArmModel],
    settings: &EvalSettings,
) -> Result<EvalReport> {
    let costs = ckpt.config.env.default_costs();
    let per_trial = run_policy_trials(
        &PolicyKind::Pretrained(ckpt),
        population,
        &costs,
        settings,
    )?;
    Ok(EvalReport::from_trials(
        per_trial,
        settings.rounds,
        settings.seed,
        ReportMetadata {
            policy: PolicyKind::Pretrained(ckpt).name().into(),
            opt_in_rate: settings.opt_in_rate,
            ..Default::default()
        },
    ))
}

/// One point of a fine-tuning curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinetunePoint {
    pub epoch: usize,
    /// Cumulative transitions collected per arm up to this point.
    pub samples_per_arm: f64,
    pub reward: f64,
}

/// Continue training a checkpoint on a fixed population (no newcomer
/// resampling), recording the evaluation reward against cumulative samples
/// per arm at every epoch. The first point is the zero-shot reward.
pub fn finetune(
    ckpt: &Checkpoint,
    population: &[ArmModel],
    cfg: &TrainConfig,
    eval: &EvalSettings,
) -> Result<(Checkpoint, Vec<FinetunePoint>, TrainLog)> {
    if population.is_empty() || population.len() > cfg.capacity {
        return Err(Error::InvalidArgument(format!(
            "fine-tuning population must have 1..={} arms",
            cfg.capacity
        )));
    }
    let mut trainer = Trainer::from_checkpoint(ckpt, cfg.clone())?;
    let n = population.len();

    // Install the fixed arm set with model-consistent features and fresh
    // uniform initial states.
    for (i, arm) in population.iter().enumerate() {
        let mut arm = arm.clone();
        arm.feature = ckpt.features_for(&arm.dynamics);
        let mut rng = seeds::stream(cfg.seed, &[purpose::INIT_STATE, i as u64]);
        arm.state = uniform_initial_state(&arm.dynamics, &mut rng);
        trainer.slots[i] = Some(arm);
    }

    let mut curve = Vec::with_capacity(cfg.n_epochs + 1);
    let zero_shot = evaluate(ckpt, population, eval)?;
    curve.push(FinetunePoint {
        epoch: 0,
        samples_per_arm: 0.0,
        reward: zero_shot.mean_reward_per_arm,
    });

    for epoch in 0..cfg.n_epochs {
        trainer.run_epoch(epoch, &ChurnMode::FixedPopulation)?;
        let snapshot = trainer.checkpoint();
        let report = evaluate(&snapshot, population, eval)?;
        curve.push(FinetunePoint {
            epoch: epoch + 1,
            samples_per_arm: trainer.records_collected as f64 / n as f64,
            reward: report.mean_reward_per_arm,
        });
    }
    let log = std::mem::take(&mut trainer.log);
    Ok((trainer.checkpoint(), curve, log))
}
