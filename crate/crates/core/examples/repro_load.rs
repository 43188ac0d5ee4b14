use dawm::data::{extract_segments, Tier};
use dawm::diffusion::*;
use dawm::envs::*;
use dawm::rng::{derive_seed, Rng};

fn col0_err(dwm: &TrainedDiffusion, ds: &dawm::data::OfflineDataset) -> f64 {
    let segments = extract_segments(ds, 7, 0.99).unwrap();
    let stats = &dwm.meta.stats;
    let ema = dwm.ema_store().unwrap();
    let mut rng = Rng::seed_from_u64(42);
    let k = 1;
    let ab = dwm.schedule.alpha_bar(k);
    let mut col0 = 0.0;
    for i in 0..100 {
        let (cond, seg) = &segments[(i * 31) % segments.len()];
        let flat = seg.to_flat();
        let len = 8;
        let mut x0 = vec![0.0; flat.len()];
        for c in 0..4 {
            for j in 0..len {
                x0[c * len + j] = (flat[c * len + j] - stats.state_mean[c]) / stats.state_std[c];
            }
        }
        for j in 0..len {
            x0[4 * len + j] = (flat[4 * len + j] - stats.reward_mean) / stats.reward_std;
        }
        let mut eps = vec![0.0; x0.len()];
        rng.fill_normal(&mut eps);
        let xk = forward_noising(&x0, k, &eps, &dwm.schedule).unwrap();
        let s_norm = stats.normalize_state(&cond.state);
        let pred = cfg_epsilon(&dwm.model.denoiser, &ema, &xk, k, &s_norm, &cond.action, cond.rtg, 0.0).unwrap();
        let mut err2 = 0.0;
        for c in 0..4 {
            let x0p = (xk[c * len] - (1.0 - ab).sqrt() * pred[c * len]) / ab.sqrt();
            let denorm = x0p * stats.state_std[c] + stats.state_mean[c];
            let truth = flat[c * len];
            err2 += (denorm - truth) * (denorm - truth);
        }
        col0 += err2.sqrt();
    }
    col0 / 100.0
}

fn main() {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let env = PointMass2D::standard(0.0);
    let ds = generate_dataset(&env, Tier::Medium, 100, derive_seed(100, "data")).unwrap();
    let cfg = DiffusionTrainConfig {
        steps,
        lr: 1e-3,
        schedule: ScheduleKind::Linear { beta_start: 0.1, beta_end: 0.5 },
        ..Default::default()
    };
    let dwm = train_diffusion(&ds, &cfg, derive_seed(100, "dwm"), |_, _| {}).unwrap();
    println!("in-memory col0 err: {:.4}", col0_err(&dwm, &ds));
    let path = std::path::PathBuf::from("/root/crate/target/probe_ck/repro50.ck");
    dwm.save(&path).unwrap();
    let loaded = TrainedDiffusion::load(&path).unwrap();
    println!("loaded col0 err: {:.4}", col0_err(&loaded, &ds));
    // Compare stores directly
    let a = dwm.model.store.snapshot();
    let b = loaded.model.store.snapshot();
    println!("stores equal: {}", a == b);
    let ea: &[Vec<f64>] = dwm.ema.shadow();
    let eb: &[Vec<f64>] = loaded.ema.shadow();
    println!("ema equal: {}", ea == eb);
    println!("schedule equal: {:?} vs {:?}", dwm.schedule.alpha_bar(5), loaded.schedule.alpha_bar(5));
    println!("meta stats equal: {}", dwm.meta.stats == loaded.meta.stats);
}
