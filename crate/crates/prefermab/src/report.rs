//! Evaluation reports and cross-seed aggregation.

use serde::{Deserialize, Serialize};

use crate::Result;

/// Provenance and context attached to every evaluation report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    /// Which policy produced the actions ("prefermab", "random", "no_action").
    pub policy: String,
    pub opt_in_rate: f64,
    /// Nominal distribution-shift δ applied to the test arms, if any.
    pub shift_delta: Option<f64>,
    /// Mean per-parameter Wasserstein distance actually achieved.
    pub achieved_wasserstein: Option<f64>,
    pub config_hash: Option<String>,
    pub checkpoint_hash: Option<String>,
}

/// Rewards from one evaluation run: `trials` independent trials of `rounds`
/// rounds each. A trial's reward is the sum over rounds of the mean reward
/// across active arms, so table-style "reward per arm" numbers come out
/// directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_reward_per_arm: f64,
    pub std_error: f64,
    pub per_trial: Vec<f64>,
    pub trials: usize,
    pub rounds: usize,
    pub seed: u64,
    pub metadata: ReportMetadata,
}

impl EvalReport {
    pub fn from_trials(
        per_trial: Vec<f64>,
        rounds: usize,
        seed: u64,
        metadata: ReportMetadata,
    ) -> Self {
        let trials = per_trial.len();
        EvalReport {
            mean_reward_per_arm: mean(&per_trial),
            std_error: std_error(&per_trial),
            trials,
            rounds,
            seed,
            per_trial,
            metadata,
        }
    }

    /// One row per trial.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,reward_per_arm\n");
        for (i, r) in self.per_trial.iter().enumerate() {
            out.push_str(&format!("{i},{r}\n"));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean (sample standard deviation / √n).
pub fn std_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Interquartile mean with fractional trimming: the middle half of the
/// sorted sample, where boundary observations contribute fractional weight.
pub fn iqm(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite rewards"));
    let n = sorted.len() as f64;
    let (lo, hi) = (n / 4.0, 3.0 * n / 4.0);
    let mut weighted = 0.0;
    let mut weight = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let a = i as f64;
        let b = a + 1.0;
        let overlap = (b.min(hi) - a.max(lo)).max(0.0);
        weighted += overlap * x;
        weight += overlap;
    }
    weighted / weight
}
