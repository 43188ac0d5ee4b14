use dawm::data::ConditioningTuple;
use dawm::diffusion::*;
use dawm::nn::*;
use dawm::rng::Rng;
use std::time::Instant;

fn main() {
    let cfg = DenoiserConfig {
        d_s: 4, d_a: 2, horizon: 7, width: 32, blocks: 3, kernel: 3, time_dim: 16, proj_dim: 16,
    };
    let mut store = ParamStore::new();
    let mut rng = Rng::seed_from_u64(7);
    let denoiser = Denoiser::new(&mut store, &cfg, &mut rng);
    let schedule = NoiseSchedule::cosine(5).unwrap();
    let n = 64;
    let dim = cfg.sample_dim();
    let mut make = |seed: u64| -> Vec<(Vec<f64>, ConditioningTuple)> {
        let mut r = Rng::seed_from_u64(seed);
        (0..n).map(|_| {
            let x0: Vec<f64> = (0..dim).map(|_| r.normal()).collect();
            (x0, ConditioningTuple {
                state: (0..4).map(|_| r.normal()).collect(),
                action: vec![0.1, -0.2],
                rtg: -0.4,
                null_flag: false,
            })
        }).collect()
    };
    let batch = make(1);
    let refs: Vec<(&[f64], &ConditioningTuple)> = batch.iter().map(|(x, c)| (x.as_slice(), c)).collect();

    // forward only
    let xk: Vec<f64> = (0..n*dim).map(|i| (i as f64 * 0.1).sin()).collect();
    let ks: Vec<usize> = (0..n).map(|i| 1 + i % 5).collect();
    let states: Vec<f64> = (0..n*4).map(|i| (i as f64 * 0.3).cos()).collect();
    let actions: Vec<f64> = vec![0.1; n*2];
    let rtgs = vec![0.3; n];
    let nulls = vec![false; n];
    let cond = CondBatch { states: &states, actions: &actions, rtgs: &rtgs, nulls: &nulls };

    let reps = 200;
    let t = Instant::now();
    for _ in 0..reps {
        let _ = denoiser.forward(&store, &xk, &ks, &cond).unwrap();
    }
    println!("forward only: {:.2} ms", t.elapsed().as_secs_f64()*1000.0/reps as f64);

    let t = Instant::now();
    for _ in 0..reps {
        let (_, cache) = denoiser.forward(&store, &xk, &ks, &cond).unwrap();
        let up = vec![1e-3; n*dim];
        denoiser.backward(&mut store, &cache, &up).unwrap();
        store.zero_grads();
    }
    println!("forward+backward: {:.2} ms", t.elapsed().as_secs_f64()*1000.0/reps as f64);

    let mut lrng = Rng::seed_from_u64(2);
    let t = Instant::now();
    for _ in 0..reps {
        let _ = training_loss(&denoiser, &mut store, &schedule, &refs, 0.25, &mut lrng).unwrap();
        store.zero_grads();
    }
    println!("training_loss only: {:.2} ms", t.elapsed().as_secs_f64()*1000.0/reps as f64);

    let mut adam = AdamState::new(&store, 1e-4);
    let t = Instant::now();
    for _ in 0..reps {
        adam.step(&mut store).unwrap();
    }
    println!("adam only: {:.4} ms", t.elapsed().as_secs_f64()*1000.0/reps as f64);

    let mut ema = EmaState::new(&store, 0.995);
    let t = Instant::now();
    for _ in 0..reps {
        ema.update(&store);
    }
    println!("ema only: {:.4} ms", t.elapsed().as_secs_f64()*1000.0/reps as f64);

    let t = Instant::now();
    let dim2 = dim;
    let mut acc = 0.0;
    for _ in 0..reps {
        let mut e = vec![0.0; 64*dim2];
        lrng.fill_normal(&mut e);
        acc += e[0];
    }
    println!("noise draws only: {:.4} ms (ignore {acc})", t.elapsed().as_secs_f64()*1000.0/reps as f64);

    let mut adam2 = AdamState::new(&store, 1e-4);
    let mut ema2 = EmaState::new(&store, 0.995);
    let t = Instant::now();
    for _ in 0..reps {
        let _ = training_loss(&denoiser, &mut store, &schedule, &refs, 0.25, &mut lrng).unwrap();
        adam2.step(&mut store).unwrap();
        ema2.update(&store);
    }
    println!("full step: {:.2} ms", t.elapsed().as_secs_f64()*1000.0/reps as f64);
}
