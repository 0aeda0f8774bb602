//! Command-line driver: pretrain, evaluate, finetune, bench, oracle, summary.
//!
//! Exit codes: 0 on success, 1 on configuration or argument errors, 2 when
//! training diverges.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use prefermab::checkpoint;
use prefermab::config::RunConfig;
use prefermab::core::{population_from_json, RmabInstance};
use prefermab::engine::{self, EvalSettings, TrainConfig};
use prefermab::oracle::{self, RewardTiming};
use prefermab::{bench, Error};

/// Environment variable that overrides `--seed` when set.
const SEED_ENV: &str = "PREFERMAB_SEED";

#[derive(Parser)]
#[command(
    name = "prefermab",
    version,
    about = "Pretrained feature-conditioned policies for budgeted restless bandits"
)]
struct Cli {
    /// Worker threads for suite parallelism (0 = library default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain a model from a run file and write the checkpoint bundle.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the run file's seed (PREFERMAB_SEED beats both).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a population of arms.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// Population JSON (bare array, {"arms": []}, or an instance file).
        #[arg(long)]
        population: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        opt_in_rate: f64,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 10)]
        rounds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for report.csv / summary.json / run.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Continue training a checkpoint on a fixed population.
    Finetune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        population: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment suite.
    Bench {
        /// zero_shot_shift | opt_in_sweep | unique_arms | shaping_ablation |
        /// finetune_curve
        #[arg(long)]
        suite: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Overrides the run file's seed count.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Exact small-instance solver: λ*, Q tables, objective curve.
    Oracle {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = 20.0)]
        lambda_max: f64,
        #[arg(long, default_value_t = 200)]
        grid_steps: usize,
        /// Charge rewards at the current state or on arrival at the next.
        #[arg(long, default_value = "state")]
        reward_timing: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render plain-text tables from suite results.
    Summary {
        #[arg(long)]
        results: PathBuf,
    },
}

fn resolve_seed(flag: Option<u64>, fallback: u64) -> Result<u64, Error> {
    if let Ok(text) = std::env::var(SEED_ENV) {
        return text.trim().parse().map_err(|_| {
            Error::config(
                SEED_ENV,
                format!("`{text}` is not a valid unsigned integer seed"),
            )
        });
    }
    Ok(flag.unwrap_or(fallback))
}

fn write_run_json(out: &Path, command: &str, cfg: &TrainConfig, seed: u64) -> Result<(), Error> {
    let run = serde_json::json!({
        "command": command,
        "seed": seed,
        "config_hash": checkpoint::config_hash(cfg),
        "resolved_config": cfg,
        "versions": {
            "prefermab": env!("CARGO_PKG_VERSION"),
        },
    });
    fs::create_dir_all(out)?;
    fs::write(out.join("run.json"), serde_json::to_string_pretty(&run)?)?;
    Ok(())
}

fn cmd_pretrain(config: &Path, seed: Option<u64>, out: &Path) -> Result<(), Error> {
    let run_cfg = RunConfig::from_file(config)?;
    let mut tc = run_cfg.train_config()?;
    tc.seed = resolve_seed(seed, tc.seed)?;
    tc.validate()?;
    write_run_json(out, "pretrain", &tc, tc.seed)?;
    let (ckpt, log) = engine::pretrain(&tc)?;
    checkpoint::save(&ckpt, out)?;
    fs::write(out.join("train_log.csv"), log.to_csv())?;
    let hash = checkpoint::content_hash(out)?;
    println!("pretrained {} epochs (seed {})", tc.n_epochs, tc.seed);
    println!("checkpoint: {}", out.display());
    println!("content hash: {hash}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    model: &Path,
    population: &Path,
    opt_in_rate: f64,
    trials: usize,
    rounds: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), Error> {
    if trials == 0 {
        return Err(Error::config("trials", "trials must be ≥ 1"));
    }
    if rounds == 0 {
        return Err(Error::config("rounds", "rounds must be ≥ 1"));
    }
    if !(0.0..=1.0).contains(&opt_in_rate) {
        return Err(Error::config("opt_in_rate", "must lie in [0, 1]"));
    }
    let seed = resolve_seed(Some(seed), seed)?;
    let ckpt = checkpoint::load(model)?;
    let arms = population_from_json(&fs::read_to_string(population)?)?;
    let settings = EvalSettings {
        opt_in_rate,
        trials,
        rounds,
        seed,
    };
    let mut report = engine::evaluate(&ckpt, &arms, &settings)?;
    report.metadata.config_hash = Some(checkpoint::config_hash(&ckpt.config));
    report.metadata.checkpoint_hash = checkpoint::content_hash(model).ok();
    println!(
        "reward/arm over {} rounds: {:.4} ± {:.4}  ({} trials, opt-in {})",
        rounds, report.mean_reward_per_arm, report.std_error, trials, opt_in_rate
    );
    if let Some(out) = out {
        write_run_json(out, "evaluate", &ckpt.config, seed)?;
        fs::write(out.join("report.csv"), report.to_csv())?;
        fs::write(out.join("summary.json"), report.to_json()?)?;
        println!("wrote {}", out.join("summary.json").display());
    }
    Ok(())
}

fn cmd_finetune(
    model: &Path,
    population: &Path,
    config: &Path,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), Error> {
    let run_cfg = RunConfig::from_file(config)?;
    let ckpt = checkpoint::load(model)?;
    let mut tc = run_cfg.train_config()?;
    tc.seed = resolve_seed(seed, tc.seed)?;
    tc.validate()?;
    let arms = population_from_json(&fs::read_to_string(population)?)?;
    let eval = run_cfg.eval_settings(tc.seed);
    write_run_json(out, "finetune", &tc, tc.seed)?;
    let (tuned, curve, log) = engine::finetune(&ckpt, &arms, &tc, &eval)?;
    checkpoint::save(&tuned, &out.join("model"))?;
    fs::write(out.join("train_log.csv"), log.to_csv())?;
    let mut csv = String::from("epoch,samples_per_arm,reward\n");
    for p in &curve {
        csv.push_str(&format!("{},{},{}\n", p.epoch, p.samples_per_arm, p.reward));
    }
    fs::write(out.join("curve.csv"), csv)?;
    let last = curve.last().expect("curve always has the zero-shot point");
    println!(
        "fine-tuned {} epochs: reward {:.4} (zero-shot {:.4})",
        tc.n_epochs, last.reward, curve[0].reward
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_bench(
    suite: &str,
    config: &Path,
    out: &Path,
    seeds: Option<usize>,
) -> Result<(), Error> {
    let suite: bench::Suite = suite.parse()?;
    let mut run_cfg = RunConfig::from_file(config)?;
    if let Some(s) = seeds {
        if s == 0 {
            return Err(Error::config("seeds", "must be ≥ 1"));
        }
        run_cfg.bench.seeds = s;
    }
    let suite_dir = out.join(suite.name());
    let tc = run_cfg.train_config()?;
    write_run_json(&suite_dir, "bench", &tc, tc.seed)?;
    let summary = bench::run_experiment(suite, &run_cfg, &suite_dir)?;
    let ok = summary.cells.iter().filter(|c| c.status == "ok").count();
    println!(
        "suite {} finished: {}/{} cells ok",
        suite.name(),
        ok,
        summary.cells.len()
    );
    print!("{}", bench::render_summary(&suite_dir)?);
    Ok(())
}

fn cmd_oracle(
    instance: &Path,
    lambda_max: f64,
    grid_steps: usize,
    reward_timing: &str,
    out: Option<&Path>,
) -> Result<(), Error> {
    let timing = match reward_timing {
        "state" => RewardTiming::OnState,
        "arrival" => RewardTiming::OnArrival,
        other => {
            return Err(Error::config(
                "reward_timing",
                format!("unknown timing `{other}` (expected state or arrival)"),
            ))
        }
    };
    if grid_steps == 0 {
        return Err(Error::config("grid_steps", "must be ≥ 1"));
    }
    let inst = RmabInstance::from_json(&fs::read_to_string(instance)?)?;
    let star = oracle::lambda_star(&inst, lambda_max, grid_steps, timing)?;
    let objective = oracle::lagrangian_objective(&inst, star, timing)?;
    println!("lambda_star: {star:.6}");
    println!("objective at lambda_star: {objective:.6}");
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        let curve = oracle::objective_curve(&inst, lambda_max, grid_steps, timing)?;
        let mut curve_csv = String::from("lambda,objective\n");
        for (l, f) in &curve {
            curve_csv.push_str(&format!("{l},{f}\n"));
        }
        fs::write(out.join("objective.csv"), curve_csv)?;
        let tables = oracle::instance_q_tables(&inst, star, timing)?;
        let mut q_csv = String::from("arm,state,action,q\n");
        for (arm, table) in tables.iter().enumerate() {
            for (s, row) in table.iter().enumerate() {
                for (a, q) in row.iter().enumerate() {
                    q_csv.push_str(&format!("{arm},{s},{a},{q}\n"));
                }
            }
        }
        fs::write(out.join("q_tables.csv"), q_csv)?;
        fs::write(
            out.join("lambda_star.json"),
            serde_json::to_string_pretty(&serde_json::json!({
                "lambda_star": star,
                "objective": objective,
                "lambda_max": lambda_max,
                "grid_steps": grid_steps,
                "reward_timing": reward_timing,
            }))?,
        )?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    if cli.threads > 0 {
        // Best effort: a second configuration attempt in one process fails,
        // which is fine for a CLI entry point.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match &cli.command {
        Command::Pretrain { config, seed, out } => cmd_pretrain(config, *seed, out),
        Command::Evaluate {
            model,
            population,
            opt_in_rate,
            trials,
            rounds,
            seed,
            out,
        } => cmd_evaluate(
            model,
            population,
            *opt_in_rate,
            *trials,
            *rounds,
            *seed,
            out.as_deref(),
        ),
        Command::Finetune {
            model,
            population,
            config,
            seed,
            out,
        } => cmd_finetune(model, population, config, *seed, out),
        Command::Bench {
            suite,
            config,
            out,
            seeds,
        } => cmd_bench(suite, config, out, *seeds),
        Command::Oracle {
            instance,
            lambda_max,
            grid_steps,
            reward_timing,
            out,
        } => cmd_oracle(instance, *lambda_max, *grid_steps, reward_timing, out.as_deref()),
        Command::Summary { results } => {
            print!("{}", bench::render_summary(results)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; anything else is a
            // usage error (exit 1).
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Divergence { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
