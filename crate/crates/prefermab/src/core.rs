//! Domain model for RMAB instances: capacities, budgets, action costs,
//! streaming opt-in admission, and trajectory storage.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{ArmDynamics, RewardKind};
use crate::{Error, Result};

/// Per-action costs, indexed by action. Action 0 is the passive action and
/// is always free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ActionCosts {
    costs: Vec<f64>,
}

impl ActionCosts {
    pub fn new(costs: Vec<f64>) -> Result<Self> {
        if costs.len() < 2 {
            return Err(Error::InvalidArgument(
                "need at least a passive and one acting action".into(),
            ));
        }
        if costs[0] != 0.0 {
            return Err(Error::InvalidArgument(
                "passive action (index 0) must have zero cost".into(),
            ));
        }
        if costs.iter().any(|&c| !c.is_finite() || c < 0.0) {
            return Err(Error::InvalidArgument(
                "action costs must be finite and non-negative".into(),
            ));
        }
        Ok(ActionCosts { costs })
    }

    /// The binary-action cost vector (0, 1).
    pub fn binary() -> Self {
        ActionCosts {
            costs: vec![0.0, 1.0],
        }
    }

    pub fn n_actions(&self) -> usize {
        self.costs.len()
    }

    pub fn cost(&self, action: usize) -> f64 {
        self.costs[action]
    }

    pub fn max_cost(&self) -> f64 {
        self.costs.iter().cloned().fold(0.0, f64::max)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.costs
    }
}

impl TryFrom<Vec<f64>> for ActionCosts {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ActionCosts::new(v)
    }
}

impl From<ActionCosts> for Vec<f64> {
    fn from(c: ActionCosts) -> Vec<f64> {
        c.costs
    }
}

/// One arm of the bandit: its (hidden) dynamics, reward convention, feature
/// vector, and current state. Discrete states are stored as integer-valued
/// `f64`s; continuous states live in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub dynamics: ArmDynamics,
    pub reward: RewardKind,
    pub feature: Vec<f64>,
    pub state: f64,
}

impl ArmModel {
    /// Validate the arm against its own dynamics.
    pub fn validate(&self) -> Result<()> {
        self.dynamics.validate()?;
        if !self.dynamics.contains_state(self.state) {
            return Err(Error::InvalidArgument(format!(
                "state {} lies outside the environment's state space",
                self.state
            )));
        }
        if self.feature.iter().any(|f| !f.is_finite()) {
            return Err(Error::InvalidArgument("non-finite feature entry".into()));
        }
        Ok(())
    }
}

/// Opt-in flags for the N capacity slots. `true` means the slot holds an
/// active arm this epoch; dummy-padded slots are always `false`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptInVector {
    flags: Vec<bool>,
}

impl OptInVector {
    pub fn new(flags: Vec<bool>) -> Self {
        OptInVector { flags }
    }

    pub fn zeros(n: usize) -> Self {
        OptInVector {
            flags: vec![false; n],
        }
    }

    pub fn ones(n: usize) -> Self {
        OptInVector {
            flags: vec![true; n],
        }
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.flags[i]
    }

    pub fn set(&mut self, i: usize, v: bool) {
        self.flags[i] = v;
    }

    pub fn count_ones(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.flags.iter().copied()
    }
}

/// A full problem instance: system capacity, budget, discount, costs, and
/// the current arm population (at most `capacity` arms).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RmabInstance {
    pub capacity: usize,
    pub budget: f64,
    pub discount: f64,
    pub costs: ActionCosts,
    pub horizon: usize,
    pub arms: Vec<ArmModel>,
}

impl RmabInstance {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::config("capacity", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::config("discount", "must lie in [0, 1)"));
        }
        if self.budget < 0.0 || !self.budget.is_finite() {
            return Err(Error::config("budget", "must be finite and non-negative"));
        }
        let cap = self.capacity as f64 * self.costs.max_cost();
        if self.budget > cap {
            return Err(Error::config(
                "budget",
                format!("exceeds N * max cost = {cap}"),
            ));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be positive"));
        }
        if self.arms.len() > self.capacity {
            return Err(Error::config("arms", "more arms than capacity"));
        }
        for arm in &self.arms {
            arm.validate()?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let inst: RmabInstance = serde_json::from_str(json)?;
        inst.validate()?;
        Ok(inst)
    }
}

/// Serialized arm-population wrapper: `{"arms": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PopulationFile {
    arms: Vec<ArmModel>,
}

/// Parse a population from JSON. Accepts a bare arm array, an
/// `{"arms": [...]}` wrapper, or a full instance document.
pub fn population_from_json(json: &str) -> Result<Vec<ArmModel>> {
    let arms = if let Ok(arms) = serde_json::from_str::<Vec<ArmModel>>(json) {
        arms
    } else if let Ok(file) = serde_json::from_str::<PopulationFile>(json) {
        file.arms
    } else {
        serde_json::from_str::<RmabInstance>(json)?.arms
    };
    for arm in &arms {
        arm.validate()?;
    }
    Ok(arms)
}

pub fn population_to_json(arms: &[ArmModel]) -> Result<String> {
    Ok(serde_json::to_string_pretty(&PopulationFile {
        arms: arms.to_vec(),
    })?)
}

/// Sample which live arms renew their slots: each arm independently opts in
/// with probability `rate`.
pub fn sample_opt_ins(live: &[usize], rate: f64, rng: &mut impl Rng) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "opt-in rate {rate} must lie in [0, 1]"
        )));
    }
    Ok(live.iter().map(|_| rng.random::<f64>() < rate).collect())
}

/// Epoch-boundary admission. Renewing arms keep their slots; newcomers fill
/// vacated and empty slots in arrival order until capacity is reached
/// (overflow newcomers are silently rejected); remaining slots are left
/// empty (dummy: opt-in flag 0, zero features and state when fed to the
/// λ-network).
///
/// `renewals` is indexed over the currently live arms in slot order and must
/// have exactly one entry per live slot.
pub fn admit_requests(
    current: &OptInVector,
    renewals: &[bool],
    newcomers: Vec<ArmModel>,
    slots: Vec<Option<ArmModel>>,
    capacity: usize,
) -> (OptInVector, Vec<Option<ArmModel>>) {
    assert_eq!(slots.len(), capacity, "slot list must have capacity entries");
    assert_eq!(current.len(), capacity, "opt-in vector must have capacity entries");
    let live_count = (0..capacity).filter(|&i| current.get(i)).count();
    assert_eq!(
        renewals.len(),
        live_count,
        "one renewal decision per live arm"
    );

    let mut out_flags = OptInVector::zeros(capacity);
    let mut out_slots: Vec<Option<ArmModel>> = vec![None; capacity];
    let mut renewal_iter = renewals.iter();
    for i in 0..capacity {
        if current.get(i) {
            let renews = *renewal_iter.next().expect("length checked above");
            if renews {
                out_slots[i] = slots[i].clone();
                out_flags.set(i, true);
            }
        }
    }
    let mut arrivals = newcomers.into_iter();
    for i in 0..capacity {
        if out_slots[i].is_none() {
            match arrivals.next() {
                Some(arm) => {
                    out_slots[i] = Some(arm);
                    out_flags.set(i, true);
                }
                None => break,
            }
        }
    }
    (out_flags, out_slots)
}

/// One rollout transition. `t` is the timestep within the epoch window,
/// starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub arm_id: usize,
    pub t: usize,
    pub state: f64,
    pub shaped: f64,
    pub action: usize,
    pub reward: f64,
    pub shaped_next: f64,
    pub feature: Vec<f64>,
}

/// All transitions collected during one epoch, together with the λ and
/// opt-in pattern that produced them.
#[derive(Debug, Clone)]
pub struct EpochWindow {
    pub lambda: f64,
    pub opt_in: OptInVector,
    /// The exact λ-network input that emitted `lambda`; kept so the
    /// λ-update can regress the network at the same point.
    pub lambda_input: Vec<f64>,
    pub records: Vec<Record>,
}

/// Rollout storage. Unbounded within one λ-update window; cleared after the
/// λ-network update consumes it.
#[derive(Debug, Clone)]
pub struct TransitionBuffer {
    n_actions: usize,
    windows: Vec<EpochWindow>,
}

impl TransitionBuffer {
    pub fn new(n_actions: usize) -> Self {
        TransitionBuffer {
            n_actions,
            windows: Vec::new(),
        }
    }

    /// Open a new epoch window tagged with (λ, ξ).
    pub fn begin_epoch(&mut self, lambda: f64, opt_in: OptInVector, lambda_input: Vec<f64>) {
        self.windows.push(EpochWindow {
            lambda,
            opt_in,
            lambda_input,
            records: Vec::new(),
        });
    }

    /// Append a transition to the current epoch window. Records may only
    /// originate from opt-in arms; pushing for a ξ=0 arm is a logic error.
    pub fn push(&mut self, record: Record) {
        let window = self
            .windows
            .last_mut()
            .expect("begin_epoch before pushing records");
        assert!(
            window.opt_in.get(record.arm_id),
            "buffer records must come from opt-in arms (arm {})",
            record.arm_id
        );
        assert!(record.reward.is_finite(), "reward must be finite");
        assert!(
            record.action < self.n_actions,
            "action {} out of range (|A| = {})",
            record.action,
            self.n_actions
        );
        window.records.push(record);
    }

    pub fn windows(&self) -> &[EpochWindow] {
        &self.windows
    }

    pub fn record_count(&self) -> usize {
        self.windows.iter().map(|w| w.records.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.record_count() == 0
    }

    pub fn clear(&mut self) {
        self.windows.clear();
    }

    /// CSV export, one row per record.
    pub fn export_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "arm_id,t,s,s_bar,a,r,s_bar_next,lambda,xi")?;
        for w in &self.windows {
            for r in &w.records {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    r.arm_id,
                    r.t,
                    r.state,
                    r.shaped,
                    r.action,
                    r.reward,
                    r.shaped_next,
                    w.lambda,
                    u8::from(w.opt_in.get(r.arm_id)),
                )?;
            }
        }
        Ok(())
    }
}

/// Per-arm discounted action-cost sums over one epoch window:
/// Σ_t β^t · c_{a_t}, using each record's own timestep. Opt-out rounds have
/// no records and therefore contribute the passive cost of zero.
pub fn discounted_cost_sum(
    records: &[Record],
    costs: &ActionCosts,
    beta: f64,
) -> BTreeMap<usize, f64> {
    let mut sums = BTreeMap::new();
    for r in records {
        *sums.entry(r.arm_id).or_insert(0.0) += beta.powi(r.t as i32) * costs.cost(r.action);
    }
    sums
}
