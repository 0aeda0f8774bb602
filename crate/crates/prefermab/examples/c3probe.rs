// Diagnose criterion-3 style training: λ and per-state value agreement.
use prefermab::agent::PpoConfig;
use prefermab::core::{ActionCosts, ArmModel, OptInVector, RmabInstance};
use prefermab::engine::{finetune, scratch_checkpoint, EvalSettings, TrainConfig};
use prefermab::envs::{ArmDynamics, RewardKind, SyntheticParams};
use prefermab::oracle::{lambda_star, reward_vector, value_iteration, RewardTiming};
use prefermab::seeds;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1);
    let n_epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(320);
    let n_steps: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(100);
    let critic_lr: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(2e-3);
    let instance_states = [1.0, 0.0];
    let cfg = TrainConfig {
        n_epochs,
        n_steps,
        capacity: 2,
        budget: 0.5,
        discount: 0.75,
        opt_in_rate: 1.0,
        seed: 7000 + seed,
        ppo: PpoConfig {
            lambda_initial_learning_rate: 0.01,
            lambda_scheduler_discount_rate: 0.997,
            lambda_fit_steps: 100,
            lambda_freeze_epochs: 60,
            start_entropy_coeff: 0.2,
            end_entropy_coeff: 0.02,
            critic_learning_rate: critic_lr,
            exploration_floor: args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0.02),
            ..PpoConfig::default()
        },
        ..TrainConfig::default()
    };
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
    for arm in &arms {
        println!("arm params: {:?}", arm.dynamics.flat_params());
    }
    let scratch = scratch_checkpoint(&cfg).unwrap();
    let eval = EvalSettings { opt_in_rate: 1.0, trials: 2, rounds: 10, seed: cfg.seed };
    let start = std::time::Instant::now();
    let (trained, _, log) = finetune(&scratch, &arms, &cfg, &eval).unwrap();
    println!("lambda tail: {:?}", log.epochs.iter().rev().take(24).map(|e| (e.lambda * 1e3).round() / 1e3).collect::<Vec<_>>());
    println!("trained in {:.1?}; last critic losses: {:?}", start.elapsed(),
        log.epochs.iter().rev().take(5).map(|e| (e.critic_loss * 1e4).round() / 1e4).collect::<Vec<_>>());
    let entries: Vec<Option<(f64, &[f64])>> = arms.iter().enumerate()
        .map(|(i, arm)| Some((instance_states[i], arm.feature.as_slice()))).collect();
    let input = trained.lambda_net.build_input(&entries, &OptInVector::ones(2));
    let emitted = trained.lambda_net.forward(&input).unwrap();
    let instance = RmabInstance {
        capacity: 2, budget: cfg.budget, discount: cfg.discount,
        costs: ActionCosts::binary(), horizon: cfg.n_steps, arms: arms.clone(),
    };
    let star = lambda_star(&instance, 10.0, 400, RewardTiming::OnArrival).unwrap();
    println!("lambda emitted {emitted:.4} vs star {star:.4} (gap {:.4})", (emitted - star).abs());
    for (ai, arm) in arms.iter().enumerate() {
        let ArmDynamics::Synthetic(params) = &arm.dynamics else { unreachable!() };
        let q_vi = value_iteration(&params.to_tabular(), &reward_vector(arm.reward, 2),
            &instance.costs, emitted, cfg.discount, 1e-9, RewardTiming::OnArrival);
        for s in 0..2 {
            let v_vi = q_vi[s][0].max(q_vi[s][1]);
            let ql = trained.critic.q_values(s as f64, emitted, &arm.feature).unwrap();
            let v_l = ql[0].max(ql[1]);
            println!("  arm {ai} s {s}: VI q=({:.4},{:.4}) learned q=({:.4},{:.4}) Vgap {:.4}",
                q_vi[s][0], q_vi[s][1], ql[0], ql[1], (v_l - v_vi).abs());
        }
    }
}
