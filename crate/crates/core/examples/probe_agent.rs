//! Agent-only probe: trains TD3BC/IQL on the real dataset with periodic eval.
use dawm::agents::{AgentConfig, AgentKind, AnyAgent, TransitionBatch};
use dawm::data::Tier;
use dawm::envs::*;
use dawm::pipeline::*;
use dawm::rng::{derive_seed, Rng};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(40_000);
    let kind = match args.get(2).map(|s| s.as_str()) {
        Some("iql") => AgentKind::Iql,
        _ => AgentKind::Td3bc,
    };
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-4);
    let hidden: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(64);

    let seed: u64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(100);
    let env = PointMass2D::standard(0.0);
    let spec = env_spec("pointmass").unwrap();
    let ds = generate_dataset(&env, Tier::Medium, 100, derive_seed(100, "data")).unwrap();
    let buffer = ds.transitions();
    let behavior_return: f64 = ds.episodes.iter().map(episode_return).sum::<f64>() / 100.0;
    println!("behavior (medium) normalized: {:.3}", spec.normalized_return(behavior_return));

    let alpha_bc: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(2.5);
    let cfg = AgentConfig { kind, steps, lr, hidden, alpha_bc, ..Default::default() };
    let mut agent = AnyAgent::new(&cfg, ds.d_s, ds.d_a, derive_seed(seed, "agent"));
    let mut rng = Rng::derive(derive_seed(seed, "agent"), "agent-train");
    let t0 = std::time::Instant::now();
    let mut c1s = 0.0;
    for iter in 0..steps {
        let indices: Vec<usize> = (0..cfg.batch_size).map(|_| rng.below(buffer.len() as u64) as usize).collect();
        let batch = TransitionBatch::gather(&buffer, &indices);
        let rec = agent.update(&batch, &mut rng).unwrap();
        c1s += rec.critic1;
        if (iter + 1) % 5000 == 0 {
            let report = evaluate(&EvalPolicy::Agent(&agent), &env, &spec, "probe", 30, 777).unwrap();
            println!("iter {}: critic1 loss avg {:.4}, normalized {:.3} ({:.1}s)",
                iter + 1, c1s / 5000.0, report.normalized_return, t0.elapsed().as_secs_f64());
            c1s = 0.0;
        }
    }
}
