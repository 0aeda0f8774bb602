//! Run-file parsing: one TOML document with a section per module. Every
//! hyperparameter has an explicit default matching the standard setup, so a
//! minimal file only names what it overrides.
//!
//! ```toml
//! [train]
//! n_epochs = 100
//! capacity = 21
//! budget = 7.0
//!
//! [env]
//! kind = "synthetic"
//!
//! [agent]
//! lambda_freeze_epochs = 20
//! ```

use serde::{Deserialize, Serialize};

use crate::agent::PpoConfig;
use crate::engine::{EvalSettings, TrainConfig};
use crate::envs::{EnvSpec, FeatureMapKind, RewardKind};
use crate::shaping::{EstimatorKind, DEFAULT_KNN_K};
use crate::{Error, Result};

/// Engine-level knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub n_epochs: usize,
    pub n_steps: usize,
    pub lambda_update_freq: usize,
    pub capacity: usize,
    pub budget: f64,
    pub discount: f64,
    pub opt_in_rate: f64,
    /// 0 means unlimited (fresh dynamics for every newcomer).
    pub unique_arms: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            n_epochs: d.n_epochs,
            n_steps: d.n_steps,
            lambda_update_freq: d.lambda_update_freq,
            capacity: d.capacity,
            budget: d.budget,
            discount: d.discount,
            opt_in_rate: d.opt_in_rate,
            unique_arms: 0,
            seed: d.seed,
        }
    }
}

/// Feature-map selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub map: FeatureMapKind,
    pub output_dim: Option<usize>,
    pub masked: Vec<usize>,
}

impl Default for FeatureSection {
    fn default() -> Self {
        FeatureSection {
            map: FeatureMapKind::Identity,
            output_dim: None,
            masked: Vec::new(),
        }
    }
}

/// Shaping estimator selection: "isotonic", "knn", or "off".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapingSection {
    pub estimator: String,
    pub knn_k: usize,
}

impl Default for ShapingSection {
    fn default() -> Self {
        ShapingSection {
            estimator: "off".into(),
            knn_k: DEFAULT_KNN_K,
        }
    }
}

impl ShapingSection {
    pub fn estimator_kind(&self) -> Result<Option<EstimatorKind>> {
        match self.estimator.as_str() {
            "off" => Ok(None),
            "isotonic" => Ok(Some(EstimatorKind::Isotonic)),
            "knn" => Ok(Some(EstimatorKind::Knn { k: self.knn_k })),
            other => Err(Error::config(
                "shaping.estimator",
                format!("unknown estimator `{other}` (expected isotonic, knn, or off)"),
            )),
        }
    }
}

/// Evaluation protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub trials: usize,
    pub rounds: usize,
    pub opt_in_rate: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            trials: 50,
            rounds: 10,
            opt_in_rate: 1.0,
        }
    }
}

/// Experiment-suite grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub seeds: usize,
    pub deltas: Vec<f64>,
    pub opt_in_rates: Vec<f64>,
    pub unique_arm_counts: Vec<usize>,
    pub masked_feature_counts: Vec<usize>,
    pub shaping_rewards: Vec<RewardKind>,
    pub finetune_epochs: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            seeds: 3,
            deltas: vec![0.05, 0.10, 0.15, 0.20, 0.25],
            opt_in_rates: vec![0.8, 0.9, 1.0],
            unique_arm_counts: vec![21, 33, 45],
            masked_feature_counts: vec![0],
            shaping_rewards: vec![RewardKind::ScaledLinear, RewardKind::SaturatingExp],
            finetune_epochs: 60,
        }
    }
}

/// A complete run file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainSection,
    pub env: EnvSpec,
    pub features: FeatureSection,
    pub shaping: ShapingSection,
    pub agent: PpoConfig,
    pub eval: EvalSection,
    pub bench: BenchSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| Error::config("config", e.to_string().trim().to_string()))?;
        cfg.train_config()?.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Assemble the resolved engine configuration.
    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            n_epochs: self.train.n_epochs,
            n_steps: self.train.n_steps,
            lambda_update_freq: self.train.lambda_update_freq,
            capacity: self.train.capacity,
            budget: self.train.budget,
            discount: self.train.discount,
            opt_in_rate: self.train.opt_in_rate,
            unique_arms: match self.train.unique_arms {
                0 => None,
                u => Some(u),
            },
            seed: self.train.seed,
            env: self.env.clone(),
            feature_map: self.features.map,
            feature_dim: self.features.output_dim,
            masked_features: self.features.masked.clone(),
            shaping: self.shaping.estimator_kind()?,
            eval_trials: self.eval.trials,
            eval_rounds: self.eval.rounds,
            ppo: self.agent.clone(),
        })
    }

    pub fn eval_settings(&self, seed: u64) -> EvalSettings {
        EvalSettings {
            opt_in_rate: self.eval.opt_in_rate,
            trials: self.eval.trials,
            rounds: self.eval.rounds,
            seed,
        }
    }
}
