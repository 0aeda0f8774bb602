//! Pretrained, feature-conditioned policies for restless multi-armed bandits
//! (RMABs) with streaming opt-in and opt-out.
//!
//! The crate trains a single actor/critic pair shared by every arm, together
//! with a λ-network that prices actions against a global budget, so that one
//! pretrained model can be deployed zero-shot on arm populations it has never
//! seen and fine-tuned cheaply on fixed populations. Continuous-state
//! problems with nonlinear rewards are handled by a state-shaping stage that
//! remaps raw observations so reward is linear in the abstract state.
//!
//! Module map:
//!
//! - [`core`]: RMAB instances, opt-in admission, costs and trajectory storage
//! - [`envs`]: generative environments, feature maps, distribution shifts
//! - [`nn`]: the dense-network kernel (forward / exact backward / Adam)
//! - [`agent`]: actor, critic, λ-network and their update rules
//! - [`shaping`]: reward-curve estimation and state abstraction
//! - [`engine`]: the training loop, budgeted inference, evaluation, fine-tuning
//! - [`oracle`]: exact small-instance solvers used as ground truth
//! - [`bench`]: baselines and experiment suites
//! - [`config`]: TOML run configuration
//! - [`checkpoint`]: on-disk model bundles
//!
//! The `prefermab` binary (in the companion CLI crate) drives all of this;
//! the mdbook under `book/` walks through the concepts chapter by chapter.

pub mod agent;
pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod core;
pub mod engine;
pub mod envs;
mod error;
pub mod nn;
pub mod oracle;
pub mod report;
pub mod seeds;
pub mod shaping;

pub use error::{Error, Result};
