//! On-disk model bundles: a `model.json` manifest plus flat little-endian
//! 64-bit float parameter blobs, one per network. Round trips are bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{Actor, Critic, LambdaNet};
use crate::engine::{Checkpoint, TrainConfig};
use crate::envs::FeatureMap;
use crate::nn::Mlp;
use crate::shaping::ShapingModel;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "model.json";
const ACTOR_BLOB: &str = "actor.bin";
const CRITIC_BLOB: &str = "critic.bin";
const LAMBDA_BLOB: &str = "lambda.bin";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetManifest {
    sizes: Vec<usize>,
    activation: String,
    blob: String,
    params: usize,
}

impl NetManifest {
    fn for_net(net: &Mlp, blob: &str) -> Self {
        NetManifest {
            sizes: net.sizes().to_vec(),
            activation: "tanh_hidden_identity_output".into(),
            blob: blob.into(),
            params: net.param_count(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    crate_version: String,
    config: TrainConfig,
    config_hash: String,
    seed: u64,
    actor: NetManifest,
    critic: NetManifest,
    lambda: NetManifest,
    lambda_learning_rate: f64,
    lambda_updates: u64,
    shaping: ShapingModel,
    feature_map: FeatureMap,
}

fn write_blob(path: &Path, params: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(params.len() * 8);
    for p in params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_blob(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() != expected * 8 {
        return Err(Error::Serialization(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            expected * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Stable hash of a resolved training configuration.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    hex(&hasher.finalize())
}

/// Content hash over everything in a saved checkpoint directory.
pub fn content_hash(dir: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    for file in [MANIFEST_FILE, ACTOR_BLOB, CRITIC_BLOB, LAMBDA_BLOB] {
        hasher.update(file.as_bytes());
        hasher.update(fs::read(dir.join(file))?);
    }
    Ok(hex(&hasher.finalize()))
}

/// Write a checkpoint bundle into `dir` (created if missing).
pub fn save(ckpt: &Checkpoint, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        format_version: 1,
        crate_version: env!("CARGO_PKG_VERSION").into(),
        config: ckpt.config.clone(),
        config_hash: config_hash(&ckpt.config),
        seed: ckpt.config.seed,
        actor: NetManifest::for_net(&ckpt.actor.net, ACTOR_BLOB),
        critic: NetManifest::for_net(&ckpt.critic.net, CRITIC_BLOB),
        lambda: NetManifest::for_net(&ckpt.lambda_net.net, LAMBDA_BLOB),
        lambda_learning_rate: ckpt.lambda_net.learning_rate,
        lambda_updates: ckpt.lambda_net.updates,
        shaping: ckpt.shaping.clone(),
        feature_map: ckpt.feature_map.clone(),
    };
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    write_blob(&dir.join(ACTOR_BLOB), &ckpt.actor.net.params_flat())?;
    write_blob(&dir.join(CRITIC_BLOB), &ckpt.critic.net.params_flat())?;
    write_blob(&dir.join(LAMBDA_BLOB), &ckpt.lambda_net.net.params_flat())?;
    Ok(())
}

fn load_net(dir: &Path, manifest: &NetManifest) -> Result<Mlp> {
    let mut net = Mlp::zeros(&manifest.sizes);
    let params = read_blob(&dir.join(&manifest.blob), manifest.params)?;
    net.set_params_flat(&params)?;
    Ok(net)
}

/// Load a checkpoint bundle from `dir`.
pub fn load(dir: &Path) -> Result<Checkpoint> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| {
        Error::Serialization(format!("cannot read {}: {e}", manifest_path.display()))
    })?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let cfg = manifest.config.clone();
    let feature_dim = cfg.feature_dim();
    let n_actions = cfg.env.n_actions();

    let actor = Actor {
        net: load_net(dir, &manifest.actor)?,
        feature_dim,
        n_actions,
    };
    let critic = Critic {
        net: load_net(dir, &manifest.critic)?,
        feature_dim,
        n_actions,
    };
    let lambda_net = LambdaNet {
        net: load_net(dir, &manifest.lambda)?,
        capacity: cfg.capacity,
        feature_dim,
        learning_rate: manifest.lambda_learning_rate,
        updates: manifest.lambda_updates,
    };
    Ok(Checkpoint {
        actor,
        critic,
        lambda_net,
        shaping: manifest.shaping,
        feature_map: manifest.feature_map,
        config: cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{pretrain, scratch_checkpoint};

    fn small_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            n_epochs: 6,
            n_steps: 4,
            capacity: 3,
            budget: 1.0,
            seed,
            ppo: crate::agent::PpoConfig {
                lambda_freeze_epochs: 3,
                trains_per_epoch: 2,
                lambda_fit_steps: 5,
                ..Default::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (ckpt, _) = pretrain(&small_cfg(3)).unwrap();
        save(&ckpt, dir.path()).unwrap();
        let back = load(dir.path()).unwrap();
        assert_eq!(back.actor.net, ckpt.actor.net);
        assert_eq!(back.critic.net, ckpt.critic.net);
        assert_eq!(back.lambda_net.net, ckpt.lambda_net.net);
        assert_eq!(back.lambda_net.learning_rate, ckpt.lambda_net.learning_rate);
        assert_eq!(back.lambda_net.updates, ckpt.lambda_net.updates);
        assert_eq!(back.shaping, ckpt.shaping);
        assert_eq!(back.feature_map, ckpt.feature_map);
        assert_eq!(back.config, ckpt.config);
    }

    #[test]
    fn same_seed_same_content_hash() {
        let (a, _) = pretrain(&small_cfg(9)).unwrap();
        let (b, _) = pretrain(&small_cfg(9)).unwrap();
        let da = tempfile::tempdir().unwrap();
        let db = tempfile::tempdir().unwrap();
        save(&a, da.path()).unwrap();
        save(&b, db.path()).unwrap();
        assert_eq!(
            content_hash(da.path()).unwrap(),
            content_hash(db.path()).unwrap()
        );
    }

    #[test]
    fn different_seed_different_hash() {
        let a = scratch_checkpoint(&small_cfg(1)).unwrap();
        let b = scratch_checkpoint(&small_cfg(2)).unwrap();
        let da = tempfile::tempdir().unwrap();
        let db = tempfile::tempdir().unwrap();
        save(&a, da.path()).unwrap();
        save(&b, db.path()).unwrap();
        assert_ne!(
            content_hash(da.path()).unwrap(),
            content_hash(db.path()).unwrap()
        );
        assert_ne!(config_hash(&a.config), config_hash(&b.config));
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = scratch_checkpoint(&small_cfg(4)).unwrap();
        save(&ckpt, dir.path()).unwrap();
        let blob = dir.path().join("actor.bin");
        let bytes = std::fs::read(&blob).unwrap();
        std::fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load(dir.path()).is_err());
    }
}
