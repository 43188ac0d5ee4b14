//! Synthetic dataset construction: every T-th anchor from the real dataset
//! seeds one guided diffusion rollout, completed into transitions by the
//! inverse dynamics model.

use crate::data::{ConditioningTuple, OfflineDataset, Transition};
use crate::diffusion::{sample_segment, GuidanceConfig, TrainedDiffusion};
use crate::error::{Error, Result};
use crate::idm::{complete_segment, IdmModel};
use crate::rng::Rng;

/// Knobs for one synthesis pass; the rollout horizon is a property of the
/// trained world model.
#[derive(Debug, Clone)]
pub struct SynthesisConfig {
    pub t_divisor: usize,
    pub omega: f64,
    pub alpha_temp: f64,
    pub n_infer: usize,
    pub g_eval: Option<f64>,
    pub x0_clip: f64,
    pub renoise: bool,
    pub seed: u64,
    pub threads: usize,
}

/// Result of a synthesis pass: one chained transition block per used anchor,
/// in anchor order, plus fault accounting.
pub struct SynthesisOutcome {
    pub chains: Vec<Vec<Transition>>,
    pub n_anchors_total: usize,
    pub n_anchors_used: usize,
    pub n_faulted: usize,
}

impl SynthesisOutcome {
    pub fn transitions(&self) -> Vec<Transition> {
        self.chains.iter().flatten().cloned().collect()
    }

    pub fn n_transitions(&self) -> usize {
        self.chains.iter().map(|c| c.len()).sum()
    }
}

/// Fault budget: aborting beyond this fraction keeps silent data loss from
/// biasing comparisons.
pub const MAX_FAULT_FRACTION: f64 = 0.01;

/// Iterates anchors (every T-th in seed-shuffled order when T > 1; natural
/// order when T = 1), samples a segment per anchor and completes it with the
/// IDM. Faulted anchors are skipped and counted; more than 1% aborts.
pub fn synthesize_dataset(
    dwm: &TrainedDiffusion,
    idm: &IdmModel,
    real: &OfflineDataset,
    cfg: &SynthesisConfig,
) -> Result<SynthesisOutcome> {
    if cfg.t_divisor == 0 {
        return Err(Error::Config("t_divisor must be >= 1".into()));
    }
    // Every (s_t, a_t) pair is an anchor.
    let mut anchors: Vec<(usize, usize)> = Vec::new();
    for (e, ep) in real.episodes.iter().enumerate() {
        for t in 0..ep.n_transitions() {
            anchors.push((e, t));
        }
    }
    let n_total = anchors.len();
    if n_total == 0 {
        return Err(Error::DataIntegrity("dataset has no anchors".into()));
    }
    if cfg.t_divisor > 1 {
        let mut rng = Rng::derive(cfg.seed, "synth-anchors");
        rng.shuffle(&mut anchors);
        let keep = n_total.div_ceil(cfg.t_divisor);
        anchors.truncate(keep);
    }
    let n_used = anchors.len();

    let guid = GuidanceConfig {
        omega: cfg.omega,
        p_null: 0.0,
        n_infer: cfg.n_infer,
        alpha_temp: cfg.alpha_temp,
        g_eval: Some(cfg.g_eval.unwrap_or_else(|| dwm.meta.g_default())),
        x0_clip: cfg.x0_clip,
        renoise: cfg.renoise,
    };
    let ema_store = dwm.ema_store()?;
    let stats = dwm.meta.stats.clone();

    // Workers own per-anchor RNG streams derived from the anchor's position
    // in the used list, so results are identical for any thread count and
    // output order is input order.
    let threads = cfg.threads.max(1).min(n_used);
    let mut results: Vec<Option<Result<Vec<Transition>>>> = Vec::new();
    results.resize_with(n_used, || None);
    let run_one = |idx: usize, (e, t): (usize, usize)| -> Result<Vec<Transition>> {
        let ep = &real.episodes[e];
        let cond = ConditioningTuple {
            state: ep.states[t].clone(),
            action: ep.actions[t].clone(),
            rtg: 0.0, // g_eval overrides
            null_flag: false,
        };
        let mut rng = Rng::derive_indexed(cfg.seed, "synth", idx as u64);
        let seg = sample_segment(
            &dwm.model.denoiser,
            &ema_store,
            &dwm.schedule,
            &cond,
            &guid,
            &stats,
            &mut rng,
        )?;
        complete_segment(idm, &ep.states[t], &ep.actions[t], &seg)
    };

    if threads <= 1 {
        for (idx, &anchor) in anchors.iter().enumerate() {
            results[idx] = Some(run_one(idx, anchor));
        }
    } else {
        let chunk = n_used.div_ceil(threads);
        std::thread::scope(|scope| {
            for (w, (anchor_chunk, result_chunk)) in anchors
                .chunks(chunk)
                .zip(results.chunks_mut(chunk))
                .enumerate()
            {
                let run_one = &run_one;
                let base = w * chunk;
                scope.spawn(move || {
                    for (off, (&anchor, slot)) in
                        anchor_chunk.iter().zip(result_chunk.iter_mut()).enumerate()
                    {
                        *slot = Some(run_one(base + off, anchor));
                    }
                });
            }
        });
    }

    let mut chains = Vec::with_capacity(n_used);
    let mut n_faulted = 0usize;
    for slot in results {
        match slot.expect("synthesis slot not filled") {
            Ok(chain) => chains.push(chain),
            Err(Error::SamplingFault(_)) => n_faulted += 1,
            Err(other) => return Err(other),
        }
    }
    if n_faulted as f64 > MAX_FAULT_FRACTION * n_used as f64 {
        return Err(Error::Runtime(format!(
            "{n_faulted} of {n_used} anchors faulted during synthesis (over the {}% budget)",
            MAX_FAULT_FRACTION * 100.0
        )));
    }
    Ok(SynthesisOutcome {
        chains,
        n_anchors_total: n_total,
        n_anchors_used: n_used,
        n_faulted,
    })
}
