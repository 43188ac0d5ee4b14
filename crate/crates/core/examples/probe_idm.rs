//! IDM-only probe: held-out action MSE vs the algebraic inverse.
use dawm::data::Tier;
use dawm::envs::*;
use dawm::idm::IdmConfig;
use dawm::rng::{derive_seed, Rng};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let batch: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(64);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-4);

    let env = PointMass2D::standard(0.0);
    let ds = generate_dataset(&env, Tier::Medium, 100, derive_seed(100, "data")).unwrap();
    let cfg = IdmConfig { steps, batch_size: batch, lr, ..Default::default() };
    let t = std::time::Instant::now();
    let idm = dawm::idm::train_idm(&ds, &cfg, derive_seed(100, "idm"), |s, l| {
        if s % 5000 == 0 { eprintln!("  step {s}: nll {l:.3}"); }
    }).unwrap();
    let train_s = t.elapsed().as_secs_f64();

    let mut mse = 0.0;
    let mut n_act = 0;
    for i in 0..50 {
        let mut ep_rng = Rng::derive_indexed(999, "heldout", i);
        let ep = rollout(&env, &BehaviorPolicy::new(PolicyKind::Medium), &mut ep_rng).unwrap();
        for t in 1..ep.n_transitions() {
            let pred = idm.infer_action(&ep.states[t - 1], &ep.states[t], &ep.states[t + 1]).unwrap();
            let oracle = env.invert_action(&ep.states[t], &ep.states[t + 1]);
            mse += pred.iter().zip(&oracle).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            n_act += pred.len();
        }
    }
    println!("steps={steps} batch={batch} lr={lr}: held-out MSE {:.3e} (trained {:.0}s)", mse / n_act as f64, train_s);
}
