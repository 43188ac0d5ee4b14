//! Diffusion model diagnostics: per-step eps error, reverse-path magnitudes.
use dawm::data::{extract_segments, ConditioningTuple, Tier};
use dawm::diffusion::*;
use dawm::envs::*;
use dawm::rng::{derive_seed, Rng};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let omega: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let alpha: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let n_infer: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(3);
    let schedule = match args.get(5).map(|s| s.as_str()) {
        Some("linear-mild") => ScheduleKind::Linear { beta_start: 0.05, beta_end: 0.35 },
        Some("linear-mid") => ScheduleKind::Linear { beta_start: 0.1, beta_end: 0.5 },
        Some("linear-hot") => ScheduleKind::Linear { beta_start: 0.2, beta_end: 0.7 },
        _ => ScheduleKind::Cosine,
    };

    let env = PointMass2D::standard(0.0);
    let ds = generate_dataset(&env, Tier::Medium, 100, derive_seed(100, "data")).unwrap();
    let lr: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(1e-4);
    let cfg = DiffusionTrainConfig { steps, schedule, lr, ..Default::default() };
    let dwm = train_diffusion(&ds, &cfg, derive_seed(100, "dwm"), |_, _| {}).unwrap();
    println!("trained {} steps; schedule {:?}; alpha_bars {:?}", steps, schedule,
        (0..=5).map(|k| (dwm.schedule.alpha_bar(k) * 1e4).round() / 1e4).collect::<Vec<_>>());

    // Per-k epsilon prediction MSE on fresh training pairs (conditional branch).
    let segments = extract_segments(&ds, 7, 0.99).unwrap();
    let stats = &dwm.meta.stats;
    let ema = dwm.ema_store().unwrap();
    let mut rng = Rng::seed_from_u64(42);
    for k in 1..=5usize {
        let mut mse = 0.0;
        let mut n = 0.0;
        for i in 0..200 {
            let (cond, seg) = &segments[(i * 17) % segments.len()];
            let flat = seg.to_flat();
            let x0: Vec<f64> = {
                // normalize
                let mut v = vec![0.0; flat.len()];
                let len = 8;
                for c in 0..4 {
                    for j in 0..len {
                        v[c * len + j] = (flat[c * len + j] - stats.state_mean[c]) / stats.state_std[c];
                    }
                }
                for j in 0..len {
                    v[4 * len + j] = (flat[4 * len + j] - stats.reward_mean) / stats.reward_std;
                }
                v
            };
            let mut eps = vec![0.0; x0.len()];
            rng.fill_normal(&mut eps);
            let xk = forward_noising(&x0, k, &eps, &dwm.schedule).unwrap();
            let s_norm = stats.normalize_state(&cond.state);
            let pred = cfg_epsilon(&dwm.model.denoiser, &ema, &xk, k, &s_norm, &cond.action, cond.rtg, 0.0).unwrap();
            mse += pred.iter().zip(&eps).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            n += eps.len() as f64;
        }
        println!("k={k}: per-dim eps MSE {:.4}", mse / n);
    }

    // Teacher-forced column-0 regression: denoise a noised TRUE segment once
    // per k and measure the first generated state's error (env units).
    for k in [1usize, 3, 5] {
        let mut col0 = 0.0;
        let mut n0 = 0.0;
        let ab = dwm.schedule.alpha_bar(k);
        for i in 0..200 {
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
            // x0_pred column 0 states, denormalized
            let mut err2 = 0.0;
            for c in 0..4 {
                let x0p = (xk[c * len] - (1.0 - ab).sqrt() * pred[c * len]) / ab.sqrt();
                let denorm = x0p * stats.state_std[c] + stats.state_mean[c];
                let truth = flat[c * len];
                err2 += (denorm - truth) * (denorm - truth);
            }
            col0 += err2.sqrt();
            n0 += 1.0;
        }
        println!("teacher-forced k={k}: column-0 state error {:.4}", col0 / n0);
    }

    // One-step fidelity with the requested sampler settings.
    let renoise = args.get(7).map(|s| s == "renoise").unwrap_or(false);
    let guid = GuidanceConfig { omega, alpha_temp: alpha, n_infer, g_eval: Some(dwm.meta.g_default()), renoise, ..Default::default() };
    let mut err_sum = 0.0;
    let mut disp_sum = 0.0;
    let mut count = 0;
    for ep in ds.episodes.iter().take(30) {
        for t in (0..ep.n_transitions()).step_by(7) {
            let cond = ConditioningTuple { state: ep.states[t].clone(), action: ep.actions[t].clone(), rtg: 0.0, null_flag: false };
            let seg = sample_segment(&dwm.model.denoiser, &ema, &dwm.schedule, &cond, &guid, stats, &mut rng).unwrap();
            let truth = &ep.states[t + 1];
            let err: f64 = seg.states[0].iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let disp: f64 = truth.iter().zip(&ep.states[t]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            err_sum += err; disp_sum += disp; count += 1;
        }
    }
    println!("omega={omega} alpha={alpha} N={n_infer} renoise={renoise}: one-step err {:.4} / disp {:.4} = ratio {:.3}",
        err_sum / count as f64, disp_sum / count as f64, err_sum / disp_sum);
}
