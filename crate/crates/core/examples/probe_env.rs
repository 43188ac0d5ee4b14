//! Environment design probe: gains vs returns vs action saturation.
use dawm::data::Tier;
use dawm::envs::*;
use dawm::rng::Rng;

fn main() {
    for (kp, kd) in [(5.0, 3.0), (2.5, 2.0), (1.5, 1.2), (1.0, 1.0), (0.8, 0.9)] {
        // Patch gains via a local expert closure replicated from the env.
        let env = PointMass2D::standard(0.0);
        let expert = move |s: &[f64]| -> Vec<f64> {
            vec![
                (kp * (0.0 - s[0]) - kd * s[2]).clamp(-1.0, 1.0),
                (kp * (0.0 - s[1]) - kd * s[3]).clamp(-1.0, 1.0),
            ]
        };
        let run = |noise: f64, seed: u64| -> (f64, f64) {
            let mut total = 0.0;
            let mut sat = 0.0;
            let mut n_act = 0.0;
            for i in 0..100u64 {
                let mut rng = Rng::derive_indexed(seed, "probe", i);
                let mut s = env.reset(&mut rng);
                for _ in 0..env.episode_len() {
                    let mut a = expert(&s);
                    if noise > 0.0 {
                        for v in &mut a {
                            *v = (*v + rng.normal_scaled(noise)).clamp(-1.0, 1.0);
                        }
                    }
                    for v in &a {
                        if v.abs() > 0.999 { sat += 1.0; }
                        n_act += 1.0;
                    }
                    let (next, r) = env.step(&s, &a, &mut rng).unwrap();
                    total += r;
                    s = next;
                }
            }
            (total / 100.0, sat / n_act)
        };
        let (expert_ret, expert_sat) = run(0.0, 11);
        let (medium_ret, medium_sat) = run(0.3, 22);
        let (r_random, _) = {
            let mut total = 0.0;
            for i in 0..100u64 {
                let mut rng = Rng::derive_indexed(33, "probe-r", i);
                let mut s = env.reset(&mut rng);
                for _ in 0..env.episode_len() {
                    let a = vec![rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)];
                    let (next, r) = env.step(&s, &a, &mut rng).unwrap();
                    total += r;
                    s = next;
                }
            }
            (total / 100.0, 0.0)
        };
        let norm = |r: f64| (r - r_random) / (expert_ret - r_random);
        println!(
            "kp={kp} kd={kd}: expert {:.2} (sat {:.0}%), medium {:.2} -> norm {:.3} (sat {:.0}%), random {:.2}",
            expert_ret, expert_sat * 100.0, medium_ret, norm(medium_ret), medium_sat * 100.0, r_random
        );
    }
}
