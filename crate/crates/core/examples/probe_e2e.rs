//! End-to-end probe: trains a reduced stack and prints fidelity/return diagnostics.
use dawm::agents::{AgentConfig, AgentKind};
use dawm::data::Tier;
use dawm::diffusion::DiffusionTrainConfig;
use dawm::envs::*;
use dawm::idm::IdmConfig;
use dawm::pipeline::*;
use dawm::rng::{derive_seed, Rng};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let dwm_steps: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let idm_steps: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let agent_steps: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(10_000);

    let env = PointMass2D::standard(0.0);
    let ds = generate_dataset(&env, Tier::Medium, 100, derive_seed(100, "data")).unwrap();
    println!("dataset: {} transitions, rtg_scale {}", ds.n_transitions(), ds.rtg_scale);

    let dwm_cfg = DiffusionTrainConfig { steps: dwm_steps, ..Default::default() };
    let t = Instant::now();
    let dwm = dawm::diffusion::train_diffusion(&ds, &dwm_cfg, derive_seed(100, "dwm"), |s, l| {
        if s % 2000 == 0 { println!("  dwm step {s}: loss {l:.4}"); }
    }).unwrap();
    println!("dwm trained in {:.1}s, g_max={:.4}", t.elapsed().as_secs_f64(), dwm.meta.g_max);

    // Fidelity: one-step next-state error vs true dynamics at alpha_temp=0.
    let ema = dwm.ema_store().unwrap();
    let guid = dawm::diffusion::GuidanceConfig {
        alpha_temp: 0.0, g_eval: Some(dwm.meta.g_default()), ..Default::default()
    };
    let mut err_sum = 0.0;
    let mut disp_sum = 0.0;
    let mut count = 0;
    let mut rng = Rng::seed_from_u64(5);
    for ep in ds.episodes.iter().take(30) {
        for t in (0..ep.n_transitions()).step_by(7) {
            let cond = dawm::data::ConditioningTuple {
                state: ep.states[t].clone(), action: ep.actions[t].clone(), rtg: 0.0, null_flag: false,
            };
            let seg = dawm::diffusion::sample_segment(
                &dwm.model.denoiser, &ema, &dwm.schedule, &cond, &guid, &dwm.meta.stats, &mut rng,
            ).unwrap();
            let truth = &ep.states[t + 1];
            let err: f64 = seg.states[0].iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let disp: f64 = truth.iter().zip(&ep.states[t]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            err_sum += err; disp_sum += disp; count += 1;
        }
    }
    println!("one-step error {:.4} vs mean displacement {:.4} -> ratio {:.3} over {count} anchors",
        err_sum / count as f64, disp_sum / count as f64, (err_sum / count as f64) / (disp_sum / count as f64));

    let t = Instant::now();
    let idm_cfg = IdmConfig { steps: idm_steps, ..Default::default() };
    let idm = dawm::idm::train_idm(&ds, &idm_cfg, derive_seed(100, "idm"), |s, l| {
        if s % 2000 == 0 { println!("  idm step {s}: nll {l:.4}"); }
    }).unwrap();
    println!("idm trained in {:.1}s", t.elapsed().as_secs_f64());

    // IDM oracle check on held-out rollouts.
    let mut mse = 0.0;
    let mut n_act = 0;
    for i in 0..20 {
        let mut ep_rng = Rng::derive_indexed(999, "heldout", i);
        let ep = rollout(&env, &BehaviorPolicy::new(PolicyKind::Medium), &mut ep_rng).unwrap();
        for t in 1..ep.n_transitions() {
            let pred = idm.infer_action(&ep.states[t - 1], &ep.states[t], &ep.states[t + 1]).unwrap();
            let oracle = env.invert_action(&ep.states[t], &ep.states[t + 1]);
            mse += pred.iter().zip(&oracle).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            n_act += pred.len();
        }
    }
    println!("idm held-out MSE vs algebraic inverse: {:.2e}", mse / n_act as f64);

    // Synthesize and train TD3BC on real vs synthetic.
    let t = Instant::now();
    let synth = synthesize_dataset(&dwm, &idm, &ds, &SynthesisConfig {
        t_divisor: 1, omega: 1.0, alpha_temp: 0.5, n_infer: 3, g_eval: None, x0_clip: 5.0, renoise: false,
        seed: derive_seed(100, "synth"), threads: 2,
    }).unwrap();
    println!("synthesized {} transitions from {} anchors in {:.1}s",
        synth.n_transitions(), synth.n_anchors_used, t.elapsed().as_secs_f64());

    let spec = env_spec("pointmass").unwrap();
    println!("references: r_random {:.2}, r_expert {:.2}", spec.r_random, spec.r_expert);
    let agent_cfg = AgentConfig { kind: AgentKind::Td3bc, steps: agent_steps, ..Default::default() };

    for (name, buffer) in [("real", ds.transitions()), ("synthetic", synth.transitions())] {
        let t = Instant::now();
        let agent = train_agent_on(&buffer, &agent_cfg, derive_seed(100, "agent"), None, |_, _| {}).unwrap();
        let report = evaluate(&EvalPolicy::Agent(&agent), &env, &spec, name, 50, derive_seed(100, "eval")).unwrap();
        println!("td3bc on {name}: normalized {:.3} (mean {:.2}) trained in {:.1}s",
            report.normalized_return, report.mean_return, t.elapsed().as_secs_f64());
    }
}
