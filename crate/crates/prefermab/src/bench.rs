//! Baselines and the experiment suites, emitting per-cell CSV reports and a
//! suite-level JSON summary with IQM aggregation across seeds.
//!
//! Output layout under the suite directory:
//!
//! ```text
//! <out>/<cell>/report.csv      one row per evaluation trial
//! <out>/<cell>/summary.json    the full EvalReport (or curve for fine-tuning)
//! <out>/checkpoints/seed-<k>/  the pretrained bundle each cell used
//! <out>/summary.json           cells, provenance, IQM aggregates
//! ```
//!
//! A failed cell is recorded with its error message and the suite continues.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::core::{ActionCosts, ArmModel};
use crate::engine::{
    evaluate, finetune, pretrain, run_policy_trials, scratch_checkpoint, Checkpoint, EvalSettings,
    FinetunePoint, PolicyKind, TrainConfig,
};
use crate::envs::{shift_population, EnvKind, RewardKind};
use crate::report::{iqm, mean, std_error, EvalReport, ReportMetadata};
use crate::seeds::{self, purpose};
use crate::{Error, Result};

/// All arms passive every round.
pub fn baseline_no_action(
    population: &[ArmModel],
    costs: &ActionCosts,
    settings: &EvalSettings,
) -> Result<EvalReport> {
    let per_trial = run_policy_trials(&PolicyKind::NoAction, population, costs, settings)?;
    Ok(EvalReport::from_trials(
        per_trial,
        settings.rounds,
        settings.seed,
        ReportMetadata {
            policy: "no_action".into(),
            opt_in_rate: settings.opt_in_rate,
            ..Default::default()
        },
    ))
}

/// Uniformly random actions, repaired to feasibility by downgrading random
/// acting arms to passive until the round's cost fits the budget.
pub fn baseline_random(
    population: &[ArmModel],
    costs: &ActionCosts,
    budget: f64,
    settings: &EvalSettings,
) -> Result<EvalReport> {
    let per_trial =
        run_policy_trials(&PolicyKind::Random { budget }, population, costs, settings)?;
    Ok(EvalReport::from_trials(
        per_trial,
        settings.rounds,
        settings.seed,
        ReportMetadata {
            policy: "random".into(),
            opt_in_rate: settings.opt_in_rate,
            ..Default::default()
        },
    ))
}

/// The experiment suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    ZeroShotShift,
    OptInSweep,
    UniqueArms,
    ShapingAblation,
    FinetuneCurve,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::ZeroShotShift,
        Suite::OptInSweep,
        Suite::UniqueArms,
        Suite::ShapingAblation,
        Suite::FinetuneCurve,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::ZeroShotShift => "zero_shot_shift",
            Suite::OptInSweep => "opt_in_sweep",
            Suite::UniqueArms => "unique_arms",
            Suite::ShapingAblation => "shaping_ablation",
            Suite::FinetuneCurve => "finetune_curve",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .iter()
            .find(|suite| suite.name() == s)
            .copied()
            .ok_or_else(|| {
                Error::config(
                    "suite",
                    format!(
                        "unknown suite `{s}` (expected one of: {})",
                        Suite::ALL.map(|s| s.name()).join(", ")
                    ),
                )
            })
    }
}

/// One completed (or failed) cell of a suite grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResult {
    pub name: String,
    /// Grid coordinates, e.g. {"delta": "0.05", "policy": "random"}.
    pub grid: BTreeMap<String, String>,
    pub seed: u64,
    pub status: String,
    pub mean: Option<f64>,
    pub std_error: Option<f64>,
    pub config_hash: String,
    pub checkpoint_hash: Option<String>,
}

/// IQM across seeds for one (policy, grid column) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateRow {
    pub policy: String,
    pub column: String,
    pub iqm: f64,
    pub mean: f64,
    pub std_error: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub suite: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellResult>,
    pub aggregates: Vec<AggregateRow>,
}

struct CellOutput {
    result: CellResult,
    report: Option<EvalReport>,
    curve: Option<Vec<FinetunePoint>>,
}

fn cell_name(grid: &BTreeMap<String, String>, seed_idx: usize) -> String {
    let mut parts: Vec<String> = grid
        .iter()
        .filter(|(k, _)| k.as_str() != "policy")
        .map(|(k, v)| format!("{k}-{v}"))
        .collect();
    parts.push(format!("seed-{seed_idx}"));
    if let Some(policy) = grid.get("policy") {
        parts.push(policy.clone());
    }
    parts.join("_")
}

fn write_cell(out_dir: &Path, cell: &CellOutput) -> Result<()> {
    let dir = out_dir.join(&cell.result.name);
    fs::create_dir_all(&dir)?;
    if let Some(report) = &cell.report {
        fs::write(dir.join("report.csv"), report.to_csv())?;
        fs::write(dir.join("summary.json"), report.to_json()?)?;
    }
    if let Some(curve) = &cell.curve {
        let mut csv = String::from("epoch,samples_per_arm,reward\n");
        for p in curve {
            csv.push_str(&format!("{},{},{}\n", p.epoch, p.samples_per_arm, p.reward));
        }
        fs::write(dir.join("curve.csv"), csv)?;
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(curve)?)?;
    }
    fs::write(
        dir.join("cell.json"),
        serde_json::to_string_pretty(&cell.result)?,
    )?;
    Ok(())
}

/// Context shared by the evaluation-style suites for one seed.
struct SeedRun {
    seed_idx: usize,
    train_cfg: TrainConfig,
    ckpt: Checkpoint,
    ckpt_hash: String,
}

fn pretrain_for_seed(
    base: &TrainConfig,
    seed_idx: usize,
    out_dir: &Path,
) -> Result<SeedRun> {
    let mut tc = base.clone();
    tc.seed = base.seed.wrapping_add(seed_idx as u64);
    let (ckpt, log) = pretrain(&tc)?;
    let dir = out_dir.join("checkpoints").join(format!("seed-{seed_idx}"));
    checkpoint::save(&ckpt, &dir)?;
    fs::write(dir.join("train_log.csv"), log.to_csv())?;
    let ckpt_hash = checkpoint::content_hash(&dir)?;
    Ok(SeedRun {
        seed_idx,
        train_cfg: tc,
        ckpt,
        ckpt_hash,
    })
}

fn sample_test_population(run: &SeedRun, n: usize) -> Vec<ArmModel> {
    let mut rng = seeds::stream(run.train_cfg.seed, &[purpose::TEST_POPULATION]);
    run.train_cfg.ckpt_population(&run.ckpt, n, &mut rng)
}

impl TrainConfig {
    /// Sample unseen arms with features computed the way `ckpt` expects.
    fn ckpt_population(
        &self,
        ckpt: &Checkpoint,
        n: usize,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Vec<ArmModel> {
        let mut arms = self
            .env
            .sample_population(n, &ckpt.feature_map, &self.masked_features, rng);
        for arm in &mut arms {
            arm.feature = ckpt.features_for(&arm.dynamics);
        }
        arms
    }
}

fn eval_cell(
    grid: BTreeMap<String, String>,
    run: &SeedRun,
    outcome: Result<EvalReport>,
) -> CellOutput {
    let name = cell_name(&grid, run.seed_idx);
    match outcome {
        Ok(mut report) => {
            report.metadata.config_hash = Some(checkpoint::config_hash(&run.train_cfg));
            if grid.get("policy").map(String::as_str) == Some("prefermab") {
                report.metadata.checkpoint_hash = Some(run.ckpt_hash.clone());
            }
            CellOutput {
                result: CellResult {
                    name,
                    grid,
                    seed: run.train_cfg.seed,
                    status: "ok".into(),
                    mean: Some(report.mean_reward_per_arm),
                    std_error: Some(report.std_error),
                    config_hash: checkpoint::config_hash(&run.train_cfg),
                    checkpoint_hash: Some(run.ckpt_hash.clone()),
                },
                report: Some(report),
                curve: None,
            }
        }
        Err(e) => CellOutput {
            result: CellResult {
                name,
                grid,
                seed: run.train_cfg.seed,
                status: format!("failed: {e}"),
                mean: None,
                std_error: None,
                config_hash: checkpoint::config_hash(&run.train_cfg),
                checkpoint_hash: Some(run.ckpt_hash.clone()),
            },
            report: None,
            curve: None,
        },
    }
}

/// The grid column a cell contributes to (everything except seed/policy).
fn column_key(grid: &BTreeMap<String, String>) -> String {
    let parts: Vec<String> = grid
        .iter()
        .filter(|(k, _)| k.as_str() != "policy")
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    if parts.is_empty() {
        "-".into()
    } else {
        parts.join(",")
    }
}

fn aggregate(cells: &[CellResult]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for cell in cells {
        let Some(m) = cell.mean else { continue };
        let policy = cell
            .grid
            .get("policy")
            .cloned()
            .unwrap_or_else(|| "-".into());
        groups
            .entry((policy, column_key(&cell.grid)))
            .or_default()
            .push(m);
    }
    groups
        .into_iter()
        .map(|((policy, column), means)| AggregateRow {
            policy,
            column,
            iqm: iqm(&means),
            mean: mean(&means),
            std_error: std_error(&means),
            n_seeds: means.len(),
        })
        .collect()
}

fn policy_grid(mut grid: BTreeMap<String, String>, policy: &str) -> BTreeMap<String, String> {
    grid.insert("policy".into(), policy.into());
    grid
}

/// Evaluate the model plus both baselines on one population, yielding three
/// cells.
fn eval_three_policies(
    run: &SeedRun,
    population: &[ArmModel],
    settings: &EvalSettings,
    grid: BTreeMap<String, String>,
    extra_metadata: impl Fn(&mut EvalReport),
) -> Vec<CellOutput> {
    let costs = run.train_cfg.env.default_costs();
    let mut out = Vec::new();

    let model = evaluate(&run.ckpt, population, settings).map(|mut r| {
        extra_metadata(&mut r);
        r
    });
    out.push(eval_cell(policy_grid(grid.clone(), "prefermab"), run, model));

    let random =
        baseline_random(population, &costs, run.train_cfg.budget, settings).map(|mut r| {
            extra_metadata(&mut r);
            r
        });
    out.push(eval_cell(policy_grid(grid.clone(), "random"), run, random));

    let none = baseline_no_action(population, &costs, settings).map(|mut r| {
        extra_metadata(&mut r);
        r
    });
    out.push(eval_cell(policy_grid(grid, "no_action"), run, none));
    out
}

fn zero_shot_shift_cells(cfg: &RunConfig, run: &SeedRun) -> Vec<CellOutput> {
    let population = sample_test_population(run, run.train_cfg.capacity);
    let settings = EvalSettings {
        opt_in_rate: cfg.eval.opt_in_rate,
        trials: cfg.eval.trials,
        rounds: cfg.eval.rounds,
        seed: run.train_cfg.seed,
    };
    let mut deltas = cfg.bench.deltas.clone();
    if !deltas.contains(&0.0) {
        deltas.insert(0, 0.0);
    }
    let mut cells = Vec::new();
    for &delta in &deltas {
        let shifted = if delta == 0.0 {
            Ok((population.clone(), 0.0))
        } else {
            shift_population(
                &population,
                delta,
                &run.ckpt.feature_map,
                &run.train_cfg.masked_features,
            )
        };
        let mut grid = BTreeMap::new();
        grid.insert("delta".into(), format!("{delta}"));
        match shifted {
            Ok((pop, achieved)) => {
                cells.extend(eval_three_policies(run, &pop, &settings, grid, |r| {
                    r.metadata.shift_delta = Some(delta);
                    r.metadata.achieved_wasserstein = Some(achieved);
                }));
            }
            Err(e) => cells.push(eval_cell(grid, run, Err(e))),
        }
    }
    cells
}

fn opt_in_sweep_cells(cfg: &RunConfig, run: &SeedRun) -> Vec<CellOutput> {
    let population = sample_test_population(run, run.train_cfg.capacity);
    let mut cells = Vec::new();
    for &rate in &cfg.bench.opt_in_rates {
        let settings = EvalSettings {
            opt_in_rate: rate,
            trials: cfg.eval.trials,
            rounds: cfg.eval.rounds,
            seed: run.train_cfg.seed,
        };
        let mut grid = BTreeMap::new();
        grid.insert("rate".into(), format!("{rate}"));
        cells.extend(eval_three_policies(run, &population, &settings, grid, |_| {}));
    }
    cells
}

fn unique_arms_cells(cfg: &RunConfig, base: &TrainConfig, seed_idx: usize, out_dir: &Path) -> Vec<CellOutput> {
    // Shared, slightly shifted test distribution per seed; each cell
    // pretrains its own model with a restricted unique-arm pool.
    let mut cells = Vec::new();
    for &unique in &cfg.bench.unique_arm_counts {
        for &masked in &cfg.bench.masked_feature_counts {
            let mut tc = base.clone();
            tc.unique_arms = Some(unique);
            tc.masked_features = (0..masked.min(tc.feature_dim())).collect();
            let mut grid = BTreeMap::new();
            grid.insert("unique".into(), format!("{unique}"));
            grid.insert("masked".into(), format!("{masked}"));
            let cell_dir = out_dir.join("checkpoints").join(format!(
                "seed-{seed_idx}_unique-{unique}_masked-{masked}"
            ));
            let outcome = (|| -> Result<(SeedRun, Vec<ArmModel>)> {
                let mut tc_seeded = tc.clone();
                tc_seeded.seed = tc.seed.wrapping_add(seed_idx as u64);
                let (ckpt, _) = pretrain(&tc_seeded)?;
                checkpoint::save(&ckpt, &cell_dir)?;
                let ckpt_hash = checkpoint::content_hash(&cell_dir)?;
                let run = SeedRun {
                    seed_idx,
                    train_cfg: tc_seeded,
                    ckpt,
                    ckpt_hash,
                };
                let population = sample_test_population(&run, run.train_cfg.capacity);
                let (shifted, _) = shift_population(
                    &population,
                    0.05,
                    &run.ckpt.feature_map,
                    &run.train_cfg.masked_features,
                )?;
                Ok((run, shifted))
            })();
            match outcome {
                Ok((run, population)) => {
                    let settings = EvalSettings {
                        opt_in_rate: cfg.eval.opt_in_rate,
                        trials: cfg.eval.trials,
                        rounds: cfg.eval.rounds,
                        seed: run.train_cfg.seed,
                    };
                    cells.extend(eval_three_policies(&run, &population, &settings, grid, |_| {}));
                }
                Err(e) => {
                    let mut tc_seeded = tc.clone();
                    tc_seeded.seed = tc.seed.wrapping_add(seed_idx as u64);
                    let name = cell_name(&grid, seed_idx);
                    cells.push(CellOutput {
                        result: CellResult {
                            name,
                            grid,
                            seed: tc_seeded.seed,
                            status: format!("failed: {e}"),
                            mean: None,
                            std_error: None,
                            config_hash: checkpoint::config_hash(&tc_seeded),
                            checkpoint_hash: None,
                        },
                        report: None,
                        curve: None,
                    });
                }
            }
        }
    }
    cells
}

fn shaping_ablation_cells(
    cfg: &RunConfig,
    base: &TrainConfig,
    seed_idx: usize,
    out_dir: &Path,
) -> Vec<CellOutput> {
    let mut cells = Vec::new();
    for &reward in &cfg.bench.shaping_rewards {
        for shaped in [true, false] {
            let mut tc = base.clone();
            tc.env.kind = EnvKind::ContSynthetic;
            tc.env.reward = reward;
            tc.shaping = if shaped {
                Some(crate::shaping::EstimatorKind::Isotonic)
            } else {
                None
            };
            tc.seed = base.seed.wrapping_add(seed_idx as u64);
            let mut grid = BTreeMap::new();
            grid.insert("reward".into(), reward_tag(reward).into());
            grid.insert("shaped".into(), if shaped { "on" } else { "off" }.into());
            let cell_dir = out_dir.join("checkpoints").join(format!(
                "seed-{seed_idx}_reward-{}_shaped-{}",
                reward_tag(reward),
                if shaped { "on" } else { "off" }
            ));
            let outcome = (|| -> Result<(SeedRun, Vec<ArmModel>)> {
                let (ckpt, _) = pretrain(&tc)?;
                checkpoint::save(&ckpt, &cell_dir)?;
                let ckpt_hash = checkpoint::content_hash(&cell_dir)?;
                let run = SeedRun {
                    seed_idx,
                    train_cfg: tc.clone(),
                    ckpt,
                    ckpt_hash,
                };
                let population = sample_test_population(&run, run.train_cfg.capacity);
                Ok((run, population))
            })();
            match outcome {
                Ok((run, population)) => {
                    let settings = EvalSettings {
                        opt_in_rate: cfg.eval.opt_in_rate,
                        trials: cfg.eval.trials,
                        rounds: cfg.eval.rounds,
                        seed: run.train_cfg.seed,
                    };
                    cells.extend(eval_three_policies(&run, &population, &settings, grid, |_| {}));
                }
                Err(e) => {
                    let name = cell_name(&grid, seed_idx);
                    cells.push(CellOutput {
                        result: CellResult {
                            name,
                            grid,
                            seed: tc.seed,
                            status: format!("failed: {e}"),
                            mean: None,
                            std_error: None,
                            config_hash: checkpoint::config_hash(&tc),
                            checkpoint_hash: None,
                        },
                        report: None,
                        curve: None,
                    });
                }
            }
        }
    }
    cells
}

fn reward_tag(kind: RewardKind) -> &'static str {
    match kind {
        RewardKind::NextState => "next_state",
        RewardKind::Engagement => "engagement",
        RewardKind::UninfectedFraction => "uninfected_fraction",
        RewardKind::Linear => "linear",
        RewardKind::ScaledLinear => "scaled_linear",
        RewardKind::SaturatingExp => "saturating_exp",
    }
}

/// First curve point (cumulative samples per arm) at which the reward
/// reaches `threshold`.
pub fn samples_to_reach(curve: &[FinetunePoint], threshold: f64) -> Option<f64> {
    curve
        .iter()
        .find(|p| p.reward >= threshold)
        .map(|p| p.samples_per_arm)
}

/// The curve point with the best reward.
pub fn best_point(curve: &[FinetunePoint]) -> Option<&FinetunePoint> {
    curve.iter().max_by(|a, b| a.reward.total_cmp(&b.reward))
}

fn finetune_curve_cells(cfg: &RunConfig, run: &SeedRun, out_dir: &Path) -> Vec<CellOutput> {
    let mut cells = Vec::new();
    let mut rng = seeds::stream(run.train_cfg.seed, &[purpose::FIXED_POPULATION]);
    let population = run
        .train_cfg
        .ckpt_population(&run.ckpt, run.train_cfg.capacity, &mut rng);

    let mut ft_cfg = run.train_cfg.clone();
    ft_cfg.n_epochs = cfg.bench.finetune_epochs;
    ft_cfg.opt_in_rate = 1.0;
    let eval = EvalSettings {
        opt_in_rate: 1.0,
        trials: cfg.eval.trials,
        rounds: cfg.eval.rounds,
        seed: run.train_cfg.seed,
    };

    for (label, start) in [
        ("finetuned", Ok(run.ckpt.clone())),
        ("scratch", scratch_checkpoint(&ft_cfg)),
    ] {
        let mut grid = BTreeMap::new();
        grid.insert("policy".into(), label.to_string());
        let name = cell_name(&grid, run.seed_idx);
        let outcome = start.and_then(|ckpt| finetune(&ckpt, &population, &ft_cfg, &eval));
        match outcome {
            Ok((final_ckpt, curve, _log)) => {
                let dir = out_dir
                    .join("checkpoints")
                    .join(format!("seed-{}_{label}", run.seed_idx));
                let saved = checkpoint::save(&final_ckpt, &dir)
                    .and_then(|_| checkpoint::content_hash(&dir));
                let best = best_point(&curve).map(|p| p.reward);
                cells.push(CellOutput {
                    result: CellResult {
                        name,
                        grid,
                        seed: run.train_cfg.seed,
                        status: "ok".into(),
                        mean: best,
                        std_error: None,
                        config_hash: checkpoint::config_hash(&ft_cfg),
                        checkpoint_hash: saved.ok(),
                    },
                    report: None,
                    curve: Some(curve),
                });
            }
            Err(e) => cells.push(CellOutput {
                result: CellResult {
                    name,
                    grid,
                    seed: run.train_cfg.seed,
                    status: format!("failed: {e}"),
                    mean: None,
                    std_error: None,
                    config_hash: checkpoint::config_hash(&ft_cfg),
                    checkpoint_hash: None,
                },
                report: None,
                curve: None,
            }),
        }
    }
    cells
}

/// Extra aggregate rows for the fine-tuning suite: per-seed sample counts to
/// reach the scratch baseline's best reward, IQM'd across seeds.
fn finetune_aggregates(outputs: &[CellOutput]) -> Vec<AggregateRow> {
    let mut per_seed: BTreeMap<u64, (Option<&Vec<FinetunePoint>>, Option<&Vec<FinetunePoint>>)> =
        BTreeMap::new();
    for cell in outputs {
        let Some(curve) = &cell.curve else { continue };
        let entry = per_seed.entry(cell.result.seed).or_default();
        match cell.result.grid.get("policy").map(String::as_str) {
            Some("finetuned") => entry.0 = Some(curve),
            Some("scratch") => entry.1 = Some(curve),
            _ => {}
        }
    }
    let mut ft_samples = Vec::new();
    let mut scratch_samples = Vec::new();
    for (ft, scratch) in per_seed.values() {
        let (Some(ft), Some(scratch)) = (ft, scratch) else {
            continue;
        };
        let Some(best) = best_point(scratch) else {
            continue;
        };
        scratch_samples.push(best.samples_per_arm);
        if let Some(s) = samples_to_reach(ft, best.reward) {
            ft_samples.push(s);
        }
    }
    let mut rows = Vec::new();
    if !ft_samples.is_empty() {
        rows.push(AggregateRow {
            policy: "finetuned".into(),
            column: "samples_to_reach_scratch_best".into(),
            iqm: iqm(&ft_samples),
            mean: mean(&ft_samples),
            std_error: std_error(&ft_samples),
            n_seeds: ft_samples.len(),
        });
    }
    if !scratch_samples.is_empty() {
        rows.push(AggregateRow {
            policy: "scratch".into(),
            column: "samples_at_best".into(),
            iqm: iqm(&scratch_samples),
            mean: mean(&scratch_samples),
            std_error: std_error(&scratch_samples),
            n_seeds: scratch_samples.len(),
        });
    }
    rows
}

/// Run one suite, writing per-cell artifacts and the suite summary under
/// `out_dir`. Seeds run in parallel; any failed cell is recorded and the
/// suite continues.
pub fn run_experiment(suite: Suite, cfg: &RunConfig, out_dir: &Path) -> Result<SuiteSummary> {
    let base = cfg.train_config()?;
    if matches!(suite, Suite::ZeroShotShift | Suite::UniqueArms)
        && base.env.kind != EnvKind::Synthetic
    {
        return Err(Error::config(
            "env.kind",
            format!("suite `{suite}` requires the synthetic environment"),
        ));
    }
    fs::create_dir_all(out_dir)?;

    let seed_indices: Vec<usize> = (0..cfg.bench.seeds).collect();
    let per_seed: Vec<Vec<CellOutput>> = seed_indices
        .par_iter()
        .map(|&seed_idx| match suite {
            Suite::ZeroShotShift | Suite::OptInSweep | Suite::FinetuneCurve => {
                match pretrain_for_seed(&base, seed_idx, out_dir) {
                    Ok(run) => match suite {
                        Suite::ZeroShotShift => zero_shot_shift_cells(cfg, &run),
                        Suite::OptInSweep => opt_in_sweep_cells(cfg, &run),
                        Suite::FinetuneCurve => finetune_curve_cells(cfg, &run, out_dir),
                        _ => unreachable!(),
                    },
                    Err(e) => {
                        let mut grid = BTreeMap::new();
                        grid.insert("stage".into(), "pretrain".into());
                        vec![CellOutput {
                            result: CellResult {
                                name: cell_name(&grid, seed_idx),
                                grid,
                                seed: base.seed.wrapping_add(seed_idx as u64),
                                status: format!("failed: {e}"),
                                mean: None,
                                std_error: None,
                                config_hash: checkpoint::config_hash(&base),
                                checkpoint_hash: None,
                            },
                            report: None,
                            curve: None,
                        }]
                    }
                }
            }
            Suite::UniqueArms => unique_arms_cells(cfg, &base, seed_idx, out_dir),
            Suite::ShapingAblation => shaping_ablation_cells(cfg, &base, seed_idx, out_dir),
        })
        .collect();

    let outputs: Vec<CellOutput> = per_seed.into_iter().flatten().collect();
    for cell in &outputs {
        write_cell(out_dir, cell)?;
    }

    let cells: Vec<CellResult> = outputs.iter().map(|c| c.result.clone()).collect();
    let mut aggregates = aggregate(&cells);
    if suite == Suite::FinetuneCurve {
        aggregates.extend(finetune_aggregates(&outputs));
    }
    let summary = SuiteSummary {
        suite: suite.name().into(),
        config_hash: checkpoint::config_hash(&base),
        seeds: seed_indices
            .iter()
            .map(|&i| base.seed.wrapping_add(i as u64))
            .collect(),
        cells,
        aggregates,
    };
    fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

/// Render aligned plain-text tables for every `summary.json` found directly
/// in `results_dir` or one level below it.
pub fn render_summary(results_dir: &Path) -> Result<String> {
    let mut summaries: Vec<(PathBuf, SuiteSummary)> = Vec::new();
    let mut candidates = vec![results_dir.join("summary.json")];
    if results_dir.is_dir() {
        for entry in fs::read_dir(results_dir)? {
            let path = entry?.path();
            if path.is_dir() {
                candidates.push(path.join("summary.json"));
            }
        }
    }
    candidates.sort();
    for path in candidates {
        if path.is_file() {
            let text = fs::read_to_string(&path)?;
            match serde_json::from_str::<SuiteSummary>(&text) {
                Ok(summary) => summaries.push((path, summary)),
                Err(_) => continue,
            }
        }
    }
    if summaries.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no suite summary.json found under {}",
            results_dir.display()
        )));
    }

    let mut out = String::new();
    for (path, summary) in summaries {
        out.push_str(&format!(
            "suite: {}  ({} cells, seeds {:?})\n",
            summary.suite,
            summary.cells.len(),
            summary.seeds
        ));
        out.push_str(&format!("source: {}\n", path.display()));

        let mut columns: Vec<String> = summary
            .aggregates
            .iter()
            .map(|a| a.column.clone())
            .collect();
        columns.sort();
        columns.dedup();
        let mut policies: Vec<String> =
            summary.aggregates.iter().map(|a| a.policy.clone()).collect();
        policies.sort();
        policies.dedup();

        let policy_width = policies
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(6)
            .max("policy".len());
        let col_width = columns.iter().map(String::len).max().unwrap_or(8).max(9);

        out.push_str(&format!("{:policy_width$}", "policy"));
        for c in &columns {
            out.push_str(&format!("  {c:>col_width$}"));
        }
        out.push('\n');
        for p in &policies {
            out.push_str(&format!("{p:policy_width$}"));
            for c in &columns {
                let cell = summary
                    .aggregates
                    .iter()
                    .find(|a| &a.policy == p && &a.column == c)
                    .map(|a| format!("{:.3}", a.iqm))
                    .unwrap_or_else(|| "-".into());
                out.push_str(&format!("  {cell:>col_width$}"));
            }
            out.push('\n');
        }
        let failed: Vec<&CellResult> = summary
            .cells
            .iter()
            .filter(|c| c.status != "ok")
            .collect();
        if !failed.is_empty() {
            out.push_str(&format!("missing cells: {}\n", failed.len()));
            for f in failed {
                out.push_str(&format!("  {}: {}\n", f.name, f.status));
            }
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::PpoConfig;
    use crate::envs::{EnvSpec, FeatureMap};

    fn tiny_run_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.train.n_epochs = 6;
        cfg.train.n_steps = 4;
        cfg.train.capacity = 3;
        cfg.train.budget = 1.0;
        cfg.train.seed = 5;
        cfg.agent = PpoConfig {
            lambda_freeze_epochs: 3,
            trains_per_epoch: 2,
            lambda_fit_steps: 5,
            ..PpoConfig::default()
        };
        cfg.eval.trials = 4;
        cfg.bench.seeds = 2;
        cfg.bench.deltas = vec![0.05];
        cfg.bench.opt_in_rates = vec![0.8, 1.0];
        cfg.bench.unique_arm_counts = vec![3];
        cfg.bench.masked_feature_counts = vec![0, 1];
        cfg.bench.finetune_epochs = 3;
        cfg
    }

    #[test]
    fn baselines_are_policy_independent() {
        let spec = EnvSpec::default();
        let map = FeatureMap::identity(4);
        let mut rng = seeds::stream(3, &[1]);
        let pop = spec.sample_population(4, &map, &[], &mut rng);
        let costs = spec.default_costs();
        let settings = EvalSettings {
            opt_in_rate: 1.0,
            trials: 6,
            rounds: 10,
            seed: 9,
        };
        let a = baseline_random(&pop, &costs, 2.0, &settings).unwrap();
        let b = baseline_random(&pop, &costs, 2.0, &settings).unwrap();
        assert_eq!(a.per_trial, b.per_trial);
        let na = baseline_no_action(&pop, &costs, &settings).unwrap();
        let zero_budget = baseline_random(&pop, &costs, 0.0, &settings).unwrap();
        assert_eq!(na.per_trial, zero_budget.per_trial);
    }

    #[test]
    fn suite_names_parse() {
        for suite in Suite::ALL {
            assert_eq!(suite.name().parse::<Suite>().unwrap(), suite);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn zero_shot_suite_produces_cells_and_summary() {
        let cfg = tiny_run_config();
        let dir = tempfile::tempdir().unwrap();
        let summary = run_experiment(Suite::ZeroShotShift, &cfg, dir.path()).unwrap();
        // 2 seeds × 2 deltas (0 prepended) × 3 policies.
        assert_eq!(summary.cells.len(), 12);
        assert!(summary.cells.iter().all(|c| c.status == "ok"));
        assert!(dir.path().join("summary.json").is_file());
        let first = &summary.cells[0];
        assert!(dir.path().join(&first.name).join("report.csv").is_file());
        assert!(!summary.aggregates.is_empty());
        let rendered = render_summary(dir.path()).unwrap();
        assert!(rendered.contains("zero_shot_shift"));
        assert!(rendered.contains("prefermab"));
    }

    #[test]
    fn finetune_suite_emits_curves() {
        let cfg = tiny_run_config();
        let dir = tempfile::tempdir().unwrap();
        let summary = run_experiment(Suite::FinetuneCurve, &cfg, dir.path()).unwrap();
        assert_eq!(summary.cells.len(), 4); // 2 seeds × {finetuned, scratch}
        for cell in &summary.cells {
            assert_eq!(cell.status, "ok");
            assert!(dir.path().join(&cell.name).join("curve.csv").is_file());
        }
        assert!(summary
            .aggregates
            .iter()
            .any(|a| a.column == "samples_at_best"));
    }
}
