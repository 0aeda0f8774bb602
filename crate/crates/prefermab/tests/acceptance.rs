//! Acceptance suite: one test per release criterion, each printing a
//! pass/fail line with its measured numbers. Quantitative training criteria
//! use interquartile means over three seeds; exact property checks use
//! seeded fuzzing. Run with `cargo test --test acceptance -- --nocapture`
//! to see the per-criterion lines.

use std::sync::OnceLock;
use std::time::Instant;

use rayon::prelude::*;

use prefermab::agent::{Actor, Critic, LambdaNet, PpoConfig};
use prefermab::core::{ActionCosts, ArmModel, OptInVector, RmabInstance};
use prefermab::engine::{
    evaluate, finetune, greedy_proba, pretrain, run_policy_trials, scratch_checkpoint, Checkpoint,
    EvalSettings, PolicyKind, TrainConfig,
};
use prefermab::envs::{
    cont_sis_step, shift_population, sis_infection_probability, sis_step, synthetic_step,
    ArmDynamics, EnvKind, EnvSpec, RewardKind, SisParams, SyntheticParams,
};
use prefermab::nn::{finite_difference_gradients, Mlp};
use prefermab::oracle::{lambda_star, reward_vector, value_iteration, RewardTiming};
use prefermab::report::iqm;
use prefermab::seeds;
use prefermab::shaping::EstimatorKind;
use rand::Rng;

const PAPER_MODEL: f64 = 4.56;
const PAPER_RANDOM: f64 = 3.58;
const PAPER_NO_ACTION: f64 = 3.22;

fn synthetic_config(seed: u64) -> TrainConfig {
    TrainConfig {
        n_epochs: 150,
        n_steps: 20,
        capacity: 21,
        budget: 7.0,
        discount: 0.9,
        opt_in_rate: 0.8,
        seed,
        ..TrainConfig::default()
    }
}

struct SeedRun {
    cfg: TrainConfig,
    ckpt: Checkpoint,
    test_pop: Vec<ArmModel>,
    eval_seed: u64,
}

fn build_run(seed: u64) -> SeedRun {
    let cfg = synthetic_config(seed);
    let (ckpt, _) = pretrain(&cfg).expect("pretraining succeeds");
    let mut rng = seeds::stream(seed, &[9001]);
    let test_pop = cfg
        .env
        .sample_population(cfg.capacity, &ckpt.feature_map, &[], &mut rng);
    SeedRun {
        cfg,
        ckpt,
        test_pop,
        eval_seed: 1000 + seed,
    }
}

/// Pretrained Synthetic N=21 B=7 models, shared by criteria 4, 5, 6, and 8.
fn pretrained_runs() -> &'static [SeedRun] {
    static RUNS: OnceLock<Vec<SeedRun>> = OnceLock::new();
    RUNS.get_or_init(|| [100u64, 101, 102].par_iter().map(|&s| build_run(s)).collect())
}

fn settings(run: &SeedRun, opt_in_rate: f64) -> EvalSettings {
    EvalSettings {
        opt_in_rate,
        trials: 50,
        rounds: 10,
        seed: run.eval_seed,
    }
}

fn mean_of(trials: &[f64]) -> f64 {
    trials.iter().sum::<f64>() / trials.len() as f64
}

fn eval_policies(run: &SeedRun, population: &[ArmModel], rate: f64) -> (f64, f64, f64) {
    let costs = run.cfg.env.default_costs();
    let s = settings(run, rate);
    let model = evaluate(&run.ckpt, population, &s)
        .unwrap()
        .mean_reward_per_arm;
    let random = mean_of(
        &run_policy_trials(
            &PolicyKind::Random {
                budget: run.cfg.budget,
            },
            population,
            &costs,
            &s,
        )
        .unwrap(),
    );
    let none = mean_of(&run_policy_trials(&PolicyKind::NoAction, population, &costs, &s).unwrap());
    (model, random, none)
}

#[test]
fn criterion_1_gradient_correctness() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut rng = seeds::stream(41, &[1]);
    // The three shapes the agents use: actor and critic on (s̄, λ, z) with
    // |A| outputs, and the λ-network on the full system snapshot.
    let shapes: [(usize, usize); 3] = [(6, 2), (6, 2), (21 * 6, 1)];
    for (input, output) in shapes {
        for _ in 0..100 {
            let net = Mlp::new(input, output, &mut rng);
            let x: Vec<f64> = (0..input).map(|_| rng.random_range(-1.0..1.0)).collect();
            let upstream: Vec<f64> = (0..output).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, cache) = net.forward(&x).unwrap();
            let analytic = net.backward(&cache, &upstream).to_flat();
            let numeric = finite_difference_gradients(&net, &x, &upstream, 1e-5);
            for (a, n) in analytic.iter().zip(&numeric) {
                let rel = (a - n).abs() / (a.abs() + n.abs()).max(1e-3);
                worst = worst.max(rel);
                assert!(
                    rel < 1e-4,
                    "gradient mismatch: analytic {a}, numeric {n}, rel {rel}"
                );
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!(
        "[acceptance] criterion 1 (gradient correctness): PASS \
         (300 nets, worst rel err {worst:.2e}, {elapsed:.2?})"
    );
}

#[test]
fn criterion_2_budget_safety() {
    let start = Instant::now();
    let mut rng = seeds::stream(42, &[2]);
    for trial in 0..10_000u64 {
        let n = rng.random_range(1..=30usize);
        let n_actions = rng.random_range(2..=5usize);
        let costs_vec: Vec<f64> = std::iter::once(0.0)
            .chain((1..n_actions).map(|_| rng.random_range(0.0..3.0)))
            .collect();
        let costs = ActionCosts::new(costs_vec).unwrap();
        let budget = rng.random_range(0.0..1.2) * n as f64 * costs.max_cost();
        let mut opt_in = OptInVector::zeros(n);
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                opt_in.set(i, rng.random::<f64>() < 0.8);
                let raw: Vec<f64> = (0..n_actions).map(|_| rng.random::<f64>() + 1e-9).collect();
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(|p| p / sum).collect()
            })
            .collect();
        let assignment = greedy_proba(&probs, &costs, budget, &opt_in);
        let total: f64 = assignment.iter().flatten().map(|&a| costs.cost(a)).sum();
        assert!(
            total <= budget + 1e-12,
            "trial {trial}: spent {total} over budget {budget}"
        );
        for i in 0..n {
            assert_eq!(
                assignment[i].is_some(),
                opt_in.get(i),
                "trial {trial}: arm {i} assignment does not match opt-in"
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    println!(
        "[acceptance] criterion 2 (budget safety): PASS \
         (10000 fuzzed assignments, {elapsed:.2?})"
    );
}

#[test]
fn criterion_3_lambda_oracle_agreement() {
    let start = Instant::now();
    let instance_states = [1.0, 0.0];
    let results: Vec<(f64, f64, f64)> = (0..5u64)
        .into_par_iter()
        .map(|seed| {
            let cfg = TrainConfig {
                n_epochs: 320,
                n_steps: 100,
                capacity: 2,
                budget: 0.5,
                discount: 0.75,
                opt_in_rate: 1.0,
                seed: 7000 + seed,
                ppo: PpoConfig {
                    lambda_initial_learning_rate: 0.02,
                    lambda_scheduler_discount_rate: 0.995,
                    lambda_fit_steps: 80,
                    ..PpoConfig::default()
                },
                ..TrainConfig::default()
            };

            // A fixed two-arm instance drawn from the synthetic ranges.
            let mut rng = seeds::stream(3000 + seed, &[3]);
            let arms: Vec<ArmModel> = (0..2)
                .map(|i| {
                    let params = SyntheticParams::sample(&mut rng);
                    ArmModel {
                        feature: params.flat(),
                        dynamics: ArmDynamics::Synthetic(params),
                        reward: RewardKind::NextState,
                        state: instance_states[i],
                    }
                })
                .collect();

            let scratch = scratch_checkpoint(&cfg).unwrap();
            let eval = EvalSettings {
                opt_in_rate: 1.0,
                trials: 2,
                rounds: 10,
                seed: cfg.seed,
            };
            let (trained, _, _) = finetune(&scratch, &arms, &cfg, &eval).unwrap();

            // Emitted λ at the instance's state vector (passthrough shaping).
            let entries: Vec<Option<(f64, &[f64])>> = arms
                .iter()
                .enumerate()
                .map(|(i, arm)| Some((instance_states[i], arm.feature.as_slice())))
                .collect();
            let input = trained
                .lambda_net
                .build_input(&entries, &OptInVector::ones(2));
            let emitted = trained.lambda_net.forward(&input).unwrap();

            let instance = RmabInstance {
                capacity: 2,
                budget: cfg.budget,
                discount: cfg.discount,
                costs: ActionCosts::binary(),
                horizon: cfg.n_steps,
                arms: arms.clone(),
            };
            let star = lambda_star(&instance, 10.0, 400, RewardTiming::OnArrival).unwrap();

            // Learned greedy values vs value iteration at the emitted λ.
            let mut worst_value_gap = 0.0f64;
            for arm in &arms {
                let ArmDynamics::Synthetic(params) = &arm.dynamics else {
                    unreachable!()
                };
                let tab = params.to_tabular();
                let rewards = reward_vector(arm.reward, 2);
                let q_vi = value_iteration(
                    &tab,
                    &rewards,
                    &instance.costs,
                    emitted,
                    cfg.discount,
                    1e-9,
                    RewardTiming::OnArrival,
                );
                for s in 0..2 {
                    let v_vi = q_vi[s][0].max(q_vi[s][1]);
                    let q_learned = trained
                        .critic
                        .q_values(s as f64, emitted, &arm.feature)
                        .unwrap();
                    let v_learned = q_learned.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    worst_value_gap = worst_value_gap.max((v_learned - v_vi).abs());
                }
            }
            (emitted, star, worst_value_gap)
        })
        .collect();

    let mut worst_lambda_gap = 0.0f64;
    let mut worst_value_gap = 0.0f64;
    for (i, (emitted, star, value_gap)) in results.iter().enumerate() {
        let gap = (emitted - star).abs();
        worst_lambda_gap = worst_lambda_gap.max(gap);
        worst_value_gap = worst_value_gap.max(*value_gap);
        assert!(
            gap <= 0.1,
            "instance {i}: emitted λ {emitted:.4} vs oracle λ* {star:.4} (gap {gap:.4})"
        );
        assert!(
            *value_gap <= 0.05,
            "instance {i}: learned value deviates from value iteration by {value_gap:.4}"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 600.0, "took {elapsed:?}");
    println!(
        "[acceptance] criterion 3 (λ-oracle agreement): PASS \
         (5 instances, worst λ gap {worst_lambda_gap:.4}, worst value gap {worst_value_gap:.4}, {elapsed:.2?})"
    );
}

#[test]
fn criterion_4_zero_shot_ordering() {
    let start = Instant::now();
    let runs = pretrained_runs();
    let mut model = Vec::new();
    let mut random = Vec::new();
    let mut none = Vec::new();
    for run in runs {
        let (m, r, n) = eval_policies(run, &run.test_pop, 1.0);
        model.push(m);
        random.push(r);
        none.push(n);
    }
    let (m, r, n) = (iqm(&model), iqm(&random), iqm(&none));
    assert!(m >= r + 0.3, "model {m:.3} must beat random {r:.3} by ≥ 0.3");
    assert!(r >= n + 0.2, "random {r:.3} must beat no-action {n:.3} by ≥ 0.2");
    assert!(
        (m - PAPER_MODEL).abs() <= 0.5,
        "model {m:.3} vs reference {PAPER_MODEL}"
    );
    assert!(
        (r - PAPER_RANDOM).abs() <= 0.5,
        "random {r:.3} vs reference {PAPER_RANDOM}"
    );
    assert!(
        (n - PAPER_NO_ACTION).abs() <= 0.5,
        "no-action {n:.3} vs reference {PAPER_NO_ACTION}"
    );
    let elapsed = start.elapsed();
    println!(
        "[acceptance] criterion 4 (zero-shot ordering): PASS \
         (IQM model {m:.3} / random {r:.3} / no-action {n:.3}; reference 4.56 / 3.58 / 3.22; {elapsed:.2?})"
    );
}

#[test]
fn criterion_5_distribution_shift() {
    let start = Instant::now();
    let runs = pretrained_runs();
    let mut summary = String::new();
    for &delta in &[0.05, 0.25] {
        let mut model = Vec::new();
        let mut random = Vec::new();
        for run in runs {
            let (shifted, achieved) =
                shift_population(&run.test_pop, delta, &run.ckpt.feature_map, &[]).unwrap();
            assert!(achieved <= delta + 1e-12);

            // Per-parameter Wasserstein distance is exactly δ when the
            // shifted parameter did not clamp.
            for (orig, moved) in run.test_pop.iter().zip(&shifted) {
                let before = orig.dynamics.flat_params();
                let after = moved.dynamics.flat_params();
                for (b, a) in before.iter().zip(&after) {
                    if b + delta <= 1.0 {
                        assert!(
                            ((a - b) - delta).abs() < 1e-12,
                            "unclamped parameter moved by {} ≠ δ {delta}",
                            a - b
                        );
                    } else {
                        assert!((a - 1.0).abs() < 1e-12, "clamped parameter must hit 1");
                    }
                }
            }

            let (m, r, _) = eval_policies(run, &shifted, 1.0);
            model.push(m);
            random.push(r);
        }
        let (m, r) = (iqm(&model), iqm(&random));
        assert!(
            m > r,
            "δ={delta}: model {m:.3} must beat random {r:.3} under shift"
        );
        summary.push_str(&format!("δ={delta}: {m:.3} vs {r:.3}; "));
    }
    let elapsed = start.elapsed();
    println!(
        "[acceptance] criterion 5 (distribution shift): PASS ({summary}{elapsed:.2?})"
    );
}

#[test]
fn criterion_6_opt_in_generalization() {
    let start = Instant::now();
    let runs = pretrained_runs();
    let mut summary = String::new();
    for &rate in &[0.8, 0.9, 1.0] {
        let mut model = Vec::new();
        let mut random = Vec::new();
        for run in runs {
            let (m, r, _) = eval_policies(run, &run.test_pop, rate);
            model.push(m);
            random.push(r);
        }
        let (m, r) = (iqm(&model), iqm(&random));
        assert!(
            m > r,
            "opt-in {rate}: model {m:.3} must beat random {r:.3} without retraining"
        );
        summary.push_str(&format!("rate {rate}: {m:.3} vs {r:.3}; "));
    }
    let elapsed = start.elapsed();
    println!(
        "[acceptance] criterion 6 (opt-in generalization): PASS ({summary}{elapsed:.2?})"
    );
}

#[test]
fn criterion_7_state_shaping_ablation() {
    let start = Instant::now();
    let outcomes: Vec<(f64, f64)> = [300u64, 301, 302]
        .par_iter()
        .map(|&seed| {
            let base = TrainConfig {
                n_epochs: 120,
                n_steps: 20,
                capacity: 21,
                budget: 7.0,
                discount: 0.9,
                opt_in_rate: 0.8,
                seed,
                env: EnvSpec {
                    kind: EnvKind::ContSynthetic,
                    reward: RewardKind::SaturatingExp,
                    ..EnvSpec::default()
                },
                ppo: PpoConfig {
                    // The continuous-synthetic setup uses a faster λ decay.
                    lambda_scheduler_discount_rate: 0.95,
                    ..PpoConfig::default()
                },
                ..TrainConfig::default()
            };
            let shaped_cfg = TrainConfig {
                shaping: Some(EstimatorKind::Isotonic),
                ..base.clone()
            };
            let (shaped_ckpt, _) = pretrain(&shaped_cfg).unwrap();
            let (raw_ckpt, _) = pretrain(&base).unwrap();

            let mut rng = seeds::stream(seed, &[9002]);
            let test_pop =
                base.env
                    .sample_population(base.capacity, &shaped_ckpt.feature_map, &[], &mut rng);
            let eval = EvalSettings {
                opt_in_rate: 1.0,
                trials: 50,
                rounds: 10,
                seed: 1500 + seed,
            };
            let shaped = evaluate(&shaped_ckpt, &test_pop, &eval)
                .unwrap()
                .mean_reward_per_arm;
            let raw = evaluate(&raw_ckpt, &test_pop, &eval)
                .unwrap()
                .mean_reward_per_arm;
            (shaped, raw)
        })
        .collect();

    let shaped: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
    let raw: Vec<f64> = outcomes.iter().map(|o| o.1).collect();
    let (s, r) = (iqm(&shaped), iqm(&raw));
    assert!(
        s >= r + 0.2,
        "shaped IQM {s:.3} must beat unshaped {r:.3} by ≥ 0.2 on the saturating reward"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 45.0 * 60.0, "took {elapsed:?}");
    println!(
        "[acceptance] criterion 7 (state-shaping ablation): PASS \
         (shaped IQM {s:.3} vs unshaped {r:.3}; reference 4.38 vs 3.80; {elapsed:.2?})"
    );
}

#[test]
fn criterion_8_finetune_efficiency() {
    let start = Instant::now();
    let runs = pretrained_runs();
    let outcomes: Vec<(f64, f64)> = runs
        .par_iter()
        .map(|run| {
            let mut ft_cfg = run.cfg.clone();
            ft_cfg.n_epochs = 40;
            ft_cfg.opt_in_rate = 1.0;
            let mut rng = seeds::stream(run.cfg.seed, &[9003]);
            let fixed_pop = run.cfg.env.sample_population(
                run.cfg.capacity,
                &run.ckpt.feature_map,
                &[],
                &mut rng,
            );
            let eval = EvalSettings {
                opt_in_rate: 1.0,
                trials: 50,
                rounds: 10,
                seed: 2500 + run.cfg.seed,
            };
            let (_, ft_curve, _) = finetune(&run.ckpt, &fixed_pop, &ft_cfg, &eval).unwrap();
            let scratch = scratch_checkpoint(&ft_cfg).unwrap();
            let (_, scratch_curve, _) = finetune(&scratch, &fixed_pop, &ft_cfg, &eval).unwrap();

            let best = scratch_curve
                .iter()
                .max_by(|a, b| a.reward.total_cmp(&b.reward))
                .unwrap();
            let reached = ft_curve
                .iter()
                .find(|p| p.reward >= best.reward)
                .map(|p| p.samples_per_arm);
            let reached = reached.unwrap_or_else(|| {
                panic!(
                    "fine-tuning never reached the scratch best {:.3} (max {:.3})",
                    best.reward,
                    ft_curve
                        .iter()
                        .map(|p| p.reward)
                        .fold(f64::NEG_INFINITY, f64::max)
                )
            });
            (reached, best.samples_per_arm)
        })
        .collect();

    let ft: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
    let scratch: Vec<f64> = outcomes.iter().map(|o| o.1).collect();
    let (f, s) = (iqm(&ft), iqm(&scratch));
    assert!(
        f <= 0.5 * s,
        "fine-tuning used {f:.1} samples/arm vs scratch {s:.1}; need ≤ 50%"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 3600.0, "took {elapsed:?}");
    println!(
        "[acceptance] criterion 8 (fine-tuning efficiency): PASS \
         (IQM samples/arm to reach scratch best: {f:.1} vs scratch {s:.1}; {elapsed:.2?})"
    );
}

#[test]
fn criterion_9_multi_arm_generalization_trend() {
    let start = Instant::now();
    let outcomes: Vec<(f64, f64)> = [400u64, 401, 402]
        .par_iter()
        .map(|&seed| {
            let mut rewards = [0.0; 2];
            for (slot, unique) in [45usize, 21].into_iter().enumerate() {
                let cfg = TrainConfig {
                    unique_arms: Some(unique),
                    ..synthetic_config(seed)
                };
                let (ckpt, _) = pretrain(&cfg).unwrap();
                // Same per-seed test distribution for both pool sizes, with
                // a small shift off the training distribution.
                let mut rng = seeds::stream(seed, &[9004]);
                let pop =
                    cfg.env
                        .sample_population(cfg.capacity, &ckpt.feature_map, &[], &mut rng);
                let (shifted, _) =
                    shift_population(&pop, 0.05, &ckpt.feature_map, &[]).unwrap();
                let eval = EvalSettings {
                    opt_in_rate: 1.0,
                    trials: 50,
                    rounds: 10,
                    seed: 3500 + seed,
                };
                rewards[slot] = evaluate(&ckpt, &shifted, &eval)
                    .unwrap()
                    .mean_reward_per_arm;
            }
            (rewards[0], rewards[1])
        })
        .collect();

    let many: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
    let few: Vec<f64> = outcomes.iter().map(|o| o.1).collect();
    let (m45, m21) = (iqm(&many), iqm(&few));
    assert!(
        m45 >= m21,
        "45 unique arms ({m45:.3}) should generalize at least as well as 21 ({m21:.3})"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 3600.0, "took {elapsed:?}");
    println!(
        "[acceptance] criterion 9 (multi-arm generalization): PASS \
         (IQM 45 unique {m45:.3} ≥ 21 unique {m21:.3}; {elapsed:.2?})"
    );
}

#[test]
fn criterion_10_environment_distributions() {
    let start = Instant::now();

    // SIS next state: with recovery disabled, s′ = s − NewlyInfected and
    // NewlyInfected ~ Binomial(s, q).
    let params = SisParams {
        kappa: 1.0,
        r_infect: 0.5,
        a1_eff: 5.0,
        a2_eff: 5.0,
        population: 100,
        recovery: 0.0,
        reward_scale: 1.0,
    };
    let s0 = 60usize;
    let q = sis_infection_probability(&params, s0, 0);
    let mut rng = seeds::stream(17, &[1]);
    let draws: Vec<f64> = (0..10_000)
        .map(|_| {
            let (next, _) = sis_step(&params, s0, 0, &mut rng).unwrap();
            (s0 - next) as f64
        })
        .collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
        / (draws.len() - 1) as f64;
    let want_mean = s0 as f64 * q;
    let want_var = s0 as f64 * q * (1.0 - q);
    assert!(
        (mean - want_mean).abs() / want_mean < 0.02,
        "SIS mean {mean:.3} vs binomial {want_mean:.3}"
    );
    assert!(
        (var - want_var).abs() / want_var < 0.02,
        "SIS variance {var:.3} vs binomial {want_var:.3}"
    );

    // Synthetic transition frequencies within 0.02 of every p_jk.
    let p = SyntheticParams {
        p00: 0.5,
        p01: 0.45,
        p10: 0.85,
        p11: 0.3,
    };
    let mut rng = seeds::stream(17, &[2]);
    for (s, a, want) in [(0, 0, 0.5), (0, 1, 0.45), (1, 0, 0.85), (1, 1, 0.3)] {
        let zeros = (0..10_000)
            .filter(|_| synthetic_step(&p, s, a, &mut rng).0 == 0)
            .count();
        let freq = zeros as f64 / 10_000.0;
        assert!(
            (freq - want).abs() < 0.02,
            "p[{s}][{a}]: frequency {freq:.4} vs {want}"
        );
    }

    // Continuous SIS normal approximation matches the binomial's moments.
    let mut cont = params;
    cont.population = 200;
    let s_frac = 0.6;
    let qc = 1.0 - (-cont.kappa * (1.0 - s_frac) * cont.r_infect).exp();
    let n = s_frac * 200.0;
    let (want_mean, want_var) = (n * (1.0 - qc), n * qc * (1.0 - qc));
    let mut rng = seeds::stream(17, &[3]);
    let draws: Vec<f64> = (0..10_000)
        .map(|_| cont_sis_step(&cont, s_frac, 0, &mut rng).0 * 200.0)
        .collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
        / (draws.len() - 1) as f64;
    assert!(
        (mean - want_mean).abs() / want_mean < 0.02,
        "continuous SIS mean {mean:.3} vs {want_mean:.3}"
    );
    assert!(
        (var - want_var).abs() / want_var < 0.02,
        "continuous SIS variance {var:.3} vs {want_var:.3}"
    );

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!(
        "[acceptance] criterion 10 (environment distributions): PASS ({elapsed:.2?})"
    );
}

/// Criterion-4 smoke companion: bit-identical replays of the same seeded
/// pretraining run (the determinism contract behind every criterion above).
#[test]
fn determinism_contract_holds() {
    let cfg = TrainConfig {
        n_epochs: 8,
        n_steps: 5,
        capacity: 4,
        budget: 2.0,
        seed: 77,
        ppo: PpoConfig {
            lambda_freeze_epochs: 4,
            trains_per_epoch: 3,
            lambda_fit_steps: 5,
            ..PpoConfig::default()
        },
        ..TrainConfig::default()
    };
    let (a, _) = pretrain(&cfg).unwrap();
    let (b, _) = pretrain(&cfg).unwrap();
    assert_eq!(a.actor.net, b.actor.net);
    assert_eq!(a.critic.net, b.critic.net);
    assert_eq!(a.lambda_net.net, b.lambda_net.net);
    println!("[acceptance] determinism contract: PASS (bit-identical replay)");
}
