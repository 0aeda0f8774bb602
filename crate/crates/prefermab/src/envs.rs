//! Generative environments, feature mappings, and distribution-shift
//! construction.
//!
//! Five families are provided: a two-state synthetic chain, a discrete SIS
//! epidemic model, a three-state engagement chain (ARMMAN-style), and
//! continuous-state variants of the synthetic and SIS models. Every family
//! samples per-arm dynamics parameters from fixed ranges; arm features are
//! projections of those parameters through a per-experiment [`FeatureMap`].

use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::core::{ActionCosts, ArmModel};
use crate::{Error, Result};

/// How a scalar reward is read off the post-transition state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// r = s′ (binary chains: state 1 is the good state).
    NextState,
    /// r = 1 when s′ is the engaged state (index 0), else 0.
    Engagement,
    /// r = scale · s′ / S, the (scaled) uninfected fraction.
    UninfectedFraction,
    /// r(s) = s.
    Linear,
    /// r(s) = min(2s, 1).
    ScaledLinear,
    /// r(s) = min(e^s − 1, 1).
    SaturatingExp,
}

/// Reward curves for continuous states.
pub fn continuous_reward(kind: RewardKind, s: f64) -> f64 {
    match kind {
        RewardKind::Linear | RewardKind::NextState | RewardKind::UninfectedFraction => s,
        RewardKind::ScaledLinear => (2.0 * s).min(1.0),
        RewardKind::SaturatingExp => (s.exp() - 1.0).min(1.0),
        RewardKind::Engagement => {
            if s == 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Draw an index from a probability row.
fn sample_categorical(row: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    row.len() - 1
}

/// An explicit transition tensor T[s][a][s′] for small discrete chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularDynamics {
    pub n_states: usize,
    pub n_actions: usize,
    /// Flattened row-major: `probs[(s * n_actions + a) * n_states + s2]`.
    pub probs: Vec<f64>,
}

impl TabularDynamics {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        let t = TabularDynamics {
            n_states,
            n_actions,
            probs,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.probs[base..base + self.n_states]
    }

    pub fn validate(&self) -> Result<()> {
        if self.probs.len() != self.n_states * self.n_actions * self.n_states {
            return Err(Error::InvalidArgument("transition tensor size mismatch".into()));
        }
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let sum: f64 = self.row(s, a).iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "transition row ({s},{a}) sums to {sum}, expected 1"
                    )));
                }
                if self.row(s, a).iter().any(|&p| p < 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "negative probability in row ({s},{a})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn step(&self, s: usize, a: usize, rng: &mut impl Rng) -> usize {
        sample_categorical(self.row(s, a), rng)
    }
}

/// Two-state, binary-action synthetic chain. `p_jk` is the probability of
/// transitioning from state j to state 0 under action k.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub p00: f64,
    pub p01: f64,
    pub p10: f64,
    pub p11: f64,
}

impl SyntheticParams {
    /// Sampling ranges: p00, p01 ∈ [0.4, 0.6]; p10 ∈ [0.8, 1]; p11 ∈ [0, 1].
    pub fn sample(rng: &mut impl Rng) -> Self {
        SyntheticParams {
            p00: rng.random_range(0.4..=0.6),
            p01: rng.random_range(0.4..=0.6),
            p10: rng.random_range(0.8..=1.0),
            p11: rng.random_range(0.0..=1.0),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        vec![self.p00, self.p01, self.p10, self.p11]
    }

    fn to_zero(&self, s: usize, a: usize) -> f64 {
        match (s, a) {
            (0, 0) => self.p00,
            (0, 1) => self.p01,
            (1, 0) => self.p10,
            (1, 1) => self.p11,
            _ => unreachable!("binary states and actions"),
        }
    }

    pub fn to_tabular(&self) -> TabularDynamics {
        let mut probs = Vec::with_capacity(8);
        for s in 0..2 {
            for a in 0..2 {
                let p0 = self.to_zero(s, a);
                probs.push(p0);
                probs.push(1.0 - p0);
            }
        }
        TabularDynamics {
            n_states: 2,
            n_actions: 2,
            probs,
        }
    }
}

/// One synthetic transition: s′ = 0 with probability p_{sa}; r = s′.
pub fn synthetic_step(params: &SyntheticParams, s: usize, a: usize, rng: &mut impl Rng) -> (usize, f64) {
    debug_assert!(s < 2 && a < 2);
    let p_zero = params.to_zero(s, a);
    let next = usize::from(rng.random::<f64>() >= p_zero);
    (next, next as f64)
}

/// SIS epidemic parameters for one arm (a geographic subpopulation).
/// The state is the number of uninfected people, 0 ..= population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SisParams {
    /// Mean contacts per round, κ ∈ [1, 10].
    pub kappa: f64,
    /// Infection probability per contact, ∈ [0.5, 0.99].
    pub r_infect: f64,
    /// Effectiveness divisor of the distancing action, ∈ [1, 10].
    pub a1_eff: f64,
    /// Effectiveness divisor of the mask action, ∈ [1, 10].
    pub a2_eff: f64,
    /// Population size S (states are 0..=S uninfected counts).
    pub population: usize,
    /// Per-individual recovery probability per round.
    #[serde(default = "default_recovery")]
    pub recovery: f64,
    /// Reporting scale on the uninfected fraction.
    #[serde(default = "default_reward_scale")]
    pub reward_scale: f64,
}

fn default_recovery() -> f64 {
    0.5
}

fn default_reward_scale() -> f64 {
    1.0
}

impl SisParams {
    pub fn sample(
        population: usize,
        a1_eff_range: (f64, f64),
        a2_eff_range: (f64, f64),
        recovery: f64,
        reward_scale: f64,
        rng: &mut impl Rng,
    ) -> Self {
        SisParams {
            kappa: rng.random_range(1.0..=10.0),
            r_infect: rng.random_range(0.5..=0.99),
            a1_eff: rng.random_range(a1_eff_range.0..=a1_eff_range.1),
            a2_eff: rng.random_range(a2_eff_range.0..=a2_eff_range.1),
            population,
            recovery,
            reward_scale,
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        vec![self.kappa, self.r_infect, self.a1_eff, self.a2_eff]
    }
}

/// Per-person infection probability q = 1 − exp(−κ′ · infected_fraction · r′),
/// with κ′ = κ/a1_eff under the distancing action and r′ = r_infect/a2_eff
/// under the mask action.
pub fn sis_infection_probability(params: &SisParams, s: usize, a: usize) -> f64 {
    let s_max = params.population as f64;
    let kappa = if a == 1 {
        params.kappa / params.a1_eff
    } else {
        params.kappa
    };
    let r = if a == 2 {
        params.r_infect / params.a2_eff
    } else {
        params.r_infect
    };
    let infected_fraction = (s_max - s as f64) / s_max;
    1.0 - (-kappa * infected_fraction * r).exp()
}

/// One SIS transition. Newly infected ~ Binomial(s, q) among the s
/// uninfected; each of the S−s infected recovers independently with the
/// configured recovery probability.
pub fn sis_step(
    params: &SisParams,
    s: usize,
    a: usize,
    rng: &mut impl Rng,
) -> Result<(usize, f64)> {
    let cap = params.population;
    if s > cap {
        return Err(Error::InvalidArgument(format!(
            "SIS state {s} outside [0, {cap}]"
        )));
    }
    let q = sis_infection_probability(params, s, a);
    let newly_infected = Binomial::new(s as u64, q)
        .expect("q lies in [0, 1]")
        .sample(rng) as usize;
    let recoveries = Binomial::new((cap - s) as u64, params.recovery)
        .expect("recovery lies in [0, 1]")
        .sample(rng) as usize;
    let next = s - newly_infected + recoveries;
    let r = params.reward_scale * next as f64 / cap as f64;
    Ok((next, r))
}

/// Continuous SIS: normal approximation to the binomial survivor count,
/// operating on the uninfected fraction s ∈ [0, 1].
pub fn cont_sis_step(params: &SisParams, s: f64, a: usize, rng: &mut impl Rng) -> (f64, f64) {
    let cap = params.population as f64;
    let kappa = if a == 1 {
        params.kappa / params.a1_eff
    } else {
        params.kappa
    };
    let r_inf = if a == 2 {
        params.r_infect / params.a2_eff
    } else {
        params.r_infect
    };
    let q = 1.0 - (-kappa * (1.0 - s) * r_inf).exp();
    let n = s * cap;
    let mean = n * (1.0 - q) + params.recovery * (cap - n);
    let var = n * q * (1.0 - q);
    let next_count = if var > 0.0 {
        let normal = Normal::new(mean, var.sqrt()).expect("finite moments");
        normal.sample(rng)
    } else {
        mean
    };
    let next = (next_count.clamp(0.0, cap)) / cap;
    let r = params.reward_scale * next;
    (next, r)
}

/// Which engagement archetype an ARMMAN-style arm was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    Motivated,
    Persuadable,
    LostCause,
}

impl Archetype {
    /// Centers of the six per-(state, action) improvement probabilities.
    fn centers(self) -> [[f64; 2]; 3] {
        match self {
            Archetype::Motivated => [[0.90, 0.95], [0.60, 0.70], [0.30, 0.40]],
            Archetype::Persuadable => [[0.50, 0.80], [0.30, 0.85], [0.20, 0.50]],
            Archetype::LostCause => [[0.40, 0.50], [0.20, 0.30], [0.05, 0.10]],
        }
    }
}

/// Three-state (engaged / persuadable / lost cause), binary-action chain.
/// `improve[s][a]` is the probability of moving one state toward engagement
/// (or staying engaged at state 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmmanParams {
    pub improve: [[f64; 2]; 3],
    pub archetype: Archetype,
}

impl ArmmanParams {
    /// Sample each parameter uniformly from an interval of width 0.5 around
    /// its archetype center, intersected with [0, 1].
    pub fn sample(archetype: Archetype, rng: &mut impl Rng) -> Self {
        let centers = archetype.centers();
        let mut improve = [[0.0; 2]; 3];
        for s in 0..3 {
            for a in 0..2 {
                let lo = (centers[s][a] - 0.25).max(0.0);
                let hi = (centers[s][a] + 0.25).min(1.0);
                improve[s][a] = rng.random_range(lo..=hi);
            }
        }
        ArmmanParams { improve, archetype }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.improve.iter().flatten().copied().collect()
    }

    pub fn row(&self, s: usize, a: usize) -> [f64; 3] {
        let u = self.improve[s][a];
        match s {
            0 => [u, 1.0 - u, 0.0],
            1 => [u, 0.0, 1.0 - u],
            2 => [0.0, u, 1.0 - u],
            _ => unreachable!("three states"),
        }
    }

    pub fn to_tabular(&self) -> TabularDynamics {
        let mut probs = Vec::with_capacity(18);
        for s in 0..3 {
            for a in 0..2 {
                probs.extend_from_slice(&self.row(s, a));
            }
        }
        TabularDynamics {
            n_states: 3,
            n_actions: 2,
            probs,
        }
    }
}

/// One engagement-chain transition; reward is the engagement indicator of s′.
pub fn armman_step(params: &ArmmanParams, s: usize, a: usize, rng: &mut impl Rng) -> (usize, f64) {
    debug_assert!(s < 3 && a < 2);
    let next = sample_categorical(&params.row(s, a), rng);
    (next, if next == 0 { 1.0 } else { 0.0 })
}

/// Continuous synthetic dynamics: s′ = clip(s + N(μ_a, σ), 0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContSynthParams {
    pub mu0: f64,
    pub mu1: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

fn default_sigma() -> f64 {
    0.2
}

impl ContSynthParams {
    /// μ0 ∈ [−0.5, −0.1], μ1 ∈ [0.1, 0.5], σ fixed at 0.2.
    pub fn sample(rng: &mut impl Rng) -> Self {
        ContSynthParams {
            mu0: rng.random_range(-0.5..=-0.1),
            mu1: rng.random_range(0.1..=0.5),
            sigma: 0.2,
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        vec![self.mu0, self.mu1]
    }
}

/// One continuous-synthetic transition under the given reward curve.
pub fn cont_synth_step(
    params: &ContSynthParams,
    s: f64,
    a: usize,
    reward: RewardKind,
    rng: &mut impl Rng,
) -> (f64, f64) {
    let mu = if a == 0 { params.mu0 } else { params.mu1 };
    let noise = if params.sigma > 0.0 {
        Normal::new(mu, params.sigma).expect("finite moments").sample(rng)
    } else {
        mu
    };
    let next = (s + noise).clamp(0.0, 1.0);
    (next, continuous_reward(reward, next))
}

/// An arm's transition dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArmDynamics {
    Synthetic(SyntheticParams),
    Sis(SisParams),
    Armman(ArmmanParams),
    ContinuousSynthetic(ContSynthParams),
    ContinuousSis(SisParams),
    /// Explicit transition tensor, for fixtures and exact solvers.
    Tabular(TabularDynamics),
}

impl ArmDynamics {
    pub fn n_actions(&self) -> usize {
        match self {
            ArmDynamics::Synthetic(_) => 2,
            ArmDynamics::Sis(_) | ArmDynamics::ContinuousSis(_) => 3,
            ArmDynamics::Armman(_) => 2,
            ArmDynamics::ContinuousSynthetic(_) => 2,
            ArmDynamics::Tabular(t) => t.n_actions,
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(
            self,
            ArmDynamics::ContinuousSynthetic(_) | ArmDynamics::ContinuousSis(_)
        )
    }

    pub fn contains_state(&self, s: f64) -> bool {
        match self {
            ArmDynamics::Synthetic(_) => s == 0.0 || s == 1.0,
            ArmDynamics::Sis(p) => s.fract() == 0.0 && (0.0..=p.population as f64).contains(&s),
            ArmDynamics::Armman(_) => s == 0.0 || s == 1.0 || s == 2.0,
            ArmDynamics::ContinuousSynthetic(_) | ArmDynamics::ContinuousSis(_) => {
                (0.0..=1.0).contains(&s)
            }
            ArmDynamics::Tabular(t) => s.fract() == 0.0 && (s as usize) < t.n_states,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ArmDynamics::Synthetic(p) => {
                for v in p.flat() {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::InvalidArgument(format!(
                            "synthetic probability {v} outside [0, 1]"
                        )));
                    }
                }
                Ok(())
            }
            ArmDynamics::Sis(p) | ArmDynamics::ContinuousSis(p) => {
                if p.population < 2 {
                    return Err(Error::InvalidArgument("SIS population must be ≥ 2".into()));
                }
                if !(0.0..=1.0).contains(&p.r_infect) || !(0.0..=1.0).contains(&p.recovery) {
                    return Err(Error::InvalidArgument(
                        "SIS probabilities must lie in [0, 1]".into(),
                    ));
                }
                if p.kappa < 0.0 || p.a1_eff < 1.0 || p.a2_eff < 1.0 {
                    return Err(Error::InvalidArgument(
                        "SIS contact/effectiveness parameters out of range".into(),
                    ));
                }
                Ok(())
            }
            ArmDynamics::Armman(p) => {
                for v in p.flat() {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::InvalidArgument(format!(
                            "engagement probability {v} outside [0, 1]"
                        )));
                    }
                }
                Ok(())
            }
            ArmDynamics::ContinuousSynthetic(p) => {
                if p.sigma < 0.0 {
                    return Err(Error::InvalidArgument("negative σ".into()));
                }
                Ok(())
            }
            ArmDynamics::Tabular(t) => t.validate(),
        }
    }

    /// The ground-truth parameters that features are projected from.
    pub fn flat_params(&self) -> Vec<f64> {
        match self {
            ArmDynamics::Synthetic(p) => p.flat(),
            ArmDynamics::Sis(p) | ArmDynamics::ContinuousSis(p) => p.flat(),
            ArmDynamics::Armman(p) => p.flat(),
            ArmDynamics::ContinuousSynthetic(p) => p.flat(),
            ArmDynamics::Tabular(t) => t.probs.clone(),
        }
    }

    /// Advance the state by one transition, returning (s′, r).
    pub fn step(
        &self,
        state: f64,
        action: usize,
        reward: RewardKind,
        rng: &mut impl Rng,
    ) -> Result<(f64, f64)> {
        match self {
            ArmDynamics::Synthetic(p) => {
                let (next, r) = synthetic_step(p, state as usize, action, rng);
                Ok((next as f64, r))
            }
            ArmDynamics::Sis(p) => {
                let (next, r) = sis_step(p, state as usize, action, rng)?;
                Ok((next as f64, r))
            }
            ArmDynamics::Armman(p) => {
                let (next, r) = armman_step(p, state as usize, action, rng);
                Ok((next as f64, r))
            }
            ArmDynamics::ContinuousSynthetic(p) => {
                Ok(cont_synth_step(p, state, action, reward, rng))
            }
            ArmDynamics::ContinuousSis(p) => Ok(cont_sis_step(p, state, action, rng)),
            ArmDynamics::Tabular(t) => {
                let next = t.step(state as usize, action, rng);
                let r = match reward {
                    RewardKind::Engagement => {
                        if next == 0 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    _ => next as f64,
                };
                Ok((next as f64, r))
            }
        }
    }
}

/// Feature mapping kinds. The projection matrix, when present, is sampled
/// once per experiment from a seeded standard normal and shared by all arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMapKind {
    Identity,
    Linear,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub kind: FeatureMapKind,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major out_dim × in_dim, absent for the identity map.
    pub matrix: Option<Vec<f64>>,
}

impl FeatureMap {
    pub fn identity(dim: usize) -> Self {
        FeatureMap {
            kind: FeatureMapKind::Identity,
            in_dim: dim,
            out_dim: dim,
            matrix: None,
        }
    }

    pub fn build(kind: FeatureMapKind, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let matrix = match kind {
            FeatureMapKind::Identity => None,
            FeatureMapKind::Linear | FeatureMapKind::Sigmoid => Some(
                (0..in_dim * out_dim)
                    .map(|_| StandardNormal.sample(rng))
                    .collect(),
            ),
        };
        FeatureMap {
            kind,
            in_dim,
            out_dim: match kind {
                FeatureMapKind::Identity => in_dim,
                _ => out_dim,
            },
            matrix,
        }
    }

    /// Map ground-truth parameters to the feature vector handed to the nets.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.in_dim, "parameter vector length mismatch");
        match self.kind {
            FeatureMapKind::Identity => x.to_vec(),
            FeatureMapKind::Linear | FeatureMapKind::Sigmoid => {
                let a = self.matrix.as_ref().expect("non-identity maps carry a matrix");
                let mut y = vec![0.0; self.out_dim];
                for o in 0..self.out_dim {
                    let row = &a[o * self.in_dim..(o + 1) * self.in_dim];
                    y[o] = row.iter().zip(x).map(|(w, v)| w * v).sum();
                }
                if self.kind == FeatureMapKind::Sigmoid {
                    for v in &mut y {
                        *v = 1.0 / (1.0 + (-*v).exp());
                    }
                }
                y
            }
        }
    }
}

/// Compute features for raw parameters, then zero the masked entries.
pub fn make_features(params: &[f64], map: &FeatureMap, masked: &[usize]) -> Vec<f64> {
    let mut z = map.apply(params);
    for &i in masked {
        if i < z.len() {
            z[i] = 0.0;
        }
    }
    z
}

/// Shift every Bernoulli transition parameter of a synthetic arm by +δ
/// (clamped to [0, 1]). The 1-Wasserstein distance between each original and
/// shifted per-parameter Bernoulli equals δ before clamping.
pub fn apply_wasserstein_shift(params: &SyntheticParams, delta: f64) -> Result<SyntheticParams> {
    if delta < 0.0 || !delta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "shift δ must be non-negative, got {delta}"
        )));
    }
    Ok(SyntheticParams {
        p00: (params.p00 + delta).clamp(0.0, 1.0),
        p01: (params.p01 + delta).clamp(0.0, 1.0),
        p10: (params.p10 + delta).clamp(0.0, 1.0),
        p11: (params.p11 + delta).clamp(0.0, 1.0),
    })
}

/// Mean per-parameter Wasserstein distance actually achieved after clamping.
pub fn achieved_wasserstein(before: &SyntheticParams, after: &SyntheticParams) -> f64 {
    let b = before.flat();
    let a = after.flat();
    b.iter().zip(&a).map(|(x, y)| (y - x).abs()).sum::<f64>() / b.len() as f64
}

/// Which environment family an experiment draws arms from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Synthetic,
    Sis,
    Armman,
    ContSynthetic,
    ContSis,
}

/// Environment selection plus the sampling knobs that vary across
/// experiments. Defaults reproduce the standard setups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSpec {
    pub kind: EnvKind,
    /// SIS population / state count S.
    pub sis_states: usize,
    /// SIS per-individual recovery probability per round.
    pub sis_recovery: f64,
    /// Reporting scale on the uninfected fraction.
    pub reward_scale: f64,
    /// Reward curve for continuous-synthetic arms.
    pub reward: RewardKind,
    pub a1_eff_range: (f64, f64),
    pub a2_eff_range: (f64, f64),
    /// Proportions of motivated / persuadable / lost-cause archetypes.
    pub armman_mix: (f64, f64, f64),
}

impl Default for EnvSpec {
    fn default() -> Self {
        EnvSpec {
            kind: EnvKind::Synthetic,
            sis_states: 50,
            sis_recovery: 0.5,
            reward_scale: 1.0,
            reward: RewardKind::Linear,
            a1_eff_range: (1.0, 10.0),
            a2_eff_range: (1.0, 10.0),
            armman_mix: (0.2, 0.2, 0.6),
        }
    }
}

impl EnvSpec {
    pub fn synthetic() -> Self {
        EnvSpec::default()
    }

    /// Number of ground-truth dynamics parameters, which is also the
    /// identity-map feature dimension.
    pub fn param_dim(&self) -> usize {
        match self.kind {
            EnvKind::Synthetic => 4,
            EnvKind::Sis | EnvKind::ContSis => 4,
            EnvKind::Armman => 6,
            EnvKind::ContSynthetic => 2,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self.kind {
            EnvKind::Sis | EnvKind::ContSis => 3,
            _ => 2,
        }
    }

    /// Default action costs: {0, 1} for binary-action families,
    /// {0, 1, 2} for the three-action SIS families.
    pub fn default_costs(&self) -> ActionCosts {
        match self.kind {
            EnvKind::Sis | EnvKind::ContSis => {
                ActionCosts::new(vec![0.0, 1.0, 2.0]).expect("static cost vector")
            }
            _ => ActionCosts::binary(),
        }
    }

    fn default_reward(&self) -> RewardKind {
        match self.kind {
            EnvKind::Synthetic => RewardKind::NextState,
            EnvKind::Armman => RewardKind::Engagement,
            EnvKind::Sis | EnvKind::ContSis => RewardKind::UninfectedFraction,
            EnvKind::ContSynthetic => self.reward,
        }
    }

    pub fn sample_dynamics(&self, rng: &mut impl Rng) -> ArmDynamics {
        match self.kind {
            EnvKind::Synthetic => ArmDynamics::Synthetic(SyntheticParams::sample(rng)),
            EnvKind::Sis => ArmDynamics::Sis(SisParams::sample(
                self.sis_states,
                self.a1_eff_range,
                self.a2_eff_range,
                self.sis_recovery,
                self.reward_scale,
                rng,
            )),
            EnvKind::ContSis => ArmDynamics::ContinuousSis(SisParams::sample(
                self.sis_states,
                self.a1_eff_range,
                self.a2_eff_range,
                self.sis_recovery,
                self.reward_scale,
                rng,
            )),
            EnvKind::Armman => {
                let (m, p, _) = self.armman_mix;
                let u: f64 = rng.random();
                let archetype = if u < m {
                    Archetype::Motivated
                } else if u < m + p {
                    Archetype::Persuadable
                } else {
                    Archetype::LostCause
                };
                ArmDynamics::Armman(ArmmanParams::sample(archetype, rng))
            }
            EnvKind::ContSynthetic => {
                ArmDynamics::ContinuousSynthetic(ContSynthParams::sample(rng))
            }
        }
    }

    /// Uniformly sampled initial state for the family's state space.
    pub fn sample_initial_state(&self, rng: &mut impl Rng) -> f64 {
        match self.kind {
            EnvKind::Synthetic => f64::from(rng.random::<bool>()),
            EnvKind::Sis => rng.random_range(0..=self.sis_states) as f64,
            EnvKind::Armman => rng.random_range(0..3u8) as f64,
            EnvKind::ContSynthetic | EnvKind::ContSis => rng.random::<f64>(),
        }
    }

    /// Sample one arm: fresh dynamics, uniform initial state, and features
    /// projected from the ground-truth parameters (masked entries zeroed).
    pub fn sample_arm(&self, map: &FeatureMap, masked: &[usize], rng: &mut impl Rng) -> ArmModel {
        let dynamics = self.sample_dynamics(rng);
        let feature = make_features(&dynamics.flat_params(), map, masked);
        let state = self.sample_initial_state(rng);
        ArmModel {
            dynamics,
            reward: self.default_reward(),
            feature,
            state,
        }
    }

    pub fn sample_population(
        &self,
        n: usize,
        map: &FeatureMap,
        masked: &[usize],
        rng: &mut impl Rng,
    ) -> Vec<ArmModel> {
        (0..n).map(|_| self.sample_arm(map, masked, rng)).collect()
    }
}

/// Shift an entire synthetic population by +δ, rebuilding features from the
/// shifted parameters. Returns the shifted arms and the achieved mean
/// Wasserstein distance (which is below δ only when clamping occurred).
pub fn shift_population(
    arms: &[ArmModel],
    delta: f64,
    map: &FeatureMap,
    masked: &[usize],
) -> Result<(Vec<ArmModel>, f64)> {
    let mut shifted = Vec::with_capacity(arms.len());
    let mut achieved = 0.0;
    for arm in arms {
        let ArmDynamics::Synthetic(params) = &arm.dynamics else {
            return Err(Error::InvalidArgument(
                "distribution shift is defined for synthetic arms".into(),
            ));
        };
        let moved = apply_wasserstein_shift(params, delta)?;
        achieved += achieved_wasserstein(params, &moved);
        let mut out = arm.clone();
        out.feature = make_features(&moved.flat(), map, masked);
        out.dynamics = ArmDynamics::Synthetic(moved);
        shifted.push(out);
    }
    let n = arms.len().max(1);
    Ok((shifted, achieved / n as f64))
}
