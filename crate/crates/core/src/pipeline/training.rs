//! Agent training on a transition buffer, plus the literal interleaved
//! variant that synthesizes one rollout per outer iteration.

use std::path::Path;

use crate::agents::{AgentConfig, AnyAgent, LossRecord, TransitionBatch};
use crate::data::{OfflineDataset, Transition};
use crate::diffusion::TrainedDiffusion;
use crate::error::{Error, Result};
use crate::idm::IdmModel;
use crate::pipeline::synthesis::SynthesisConfig;
use crate::rng::Rng;

pub const CHECKPOINT_INTERVAL: u64 = 10_000;

/// Runs `cfg.steps` update iterations on uniformly sampled minibatches.
/// Deterministic per seed; a NaN loss aborts with the last periodic
/// checkpoint retained on disk.
pub fn train_agent_on(
    buffer: &[Transition],
    cfg: &AgentConfig,
    seed: u64,
    ckpt_dir: Option<&Path>,
    mut on_iter: impl FnMut(u64, &LossRecord),
) -> Result<AnyAgent> {
    if buffer.is_empty() {
        return Err(Error::DataIntegrity("empty transition buffer".into()));
    }
    let d_s = buffer[0].state.len();
    let d_a = buffer[0].action.len();
    let mut agent = AnyAgent::new(cfg, d_s, d_a, seed);
    let mut rng = Rng::derive(seed, "agent-train");
    let mut last_ckpt: Option<std::path::PathBuf> = None;
    for iter in 0..cfg.steps {
        let indices: Vec<usize> = (0..cfg.batch_size)
            .map(|_| rng.below(buffer.len() as u64) as usize)
            .collect();
        let batch = TransitionBatch::gather(buffer, &indices);
        let record = match agent.update(&batch, &mut rng) {
            Ok(r) => r,
            Err(e) => {
                let kept = last_ckpt
                    .as_ref()
                    .map(|p| format!("; last good checkpoint at {}", p.display()))
                    .unwrap_or_default();
                return Err(Error::Runtime(format!(
                    "agent training aborted at iteration {iter}: {e}{kept}"
                )));
            }
        };
        on_iter(iter, &record);
        if let Some(dir) = ckpt_dir {
            if (iter + 1) % CHECKPOINT_INTERVAL == 0 {
                let path = dir.join(format!("agent_{:07}.ck", iter + 1));
                agent.save(&path, iter + 1)?;
                last_ckpt = Some(path);
            }
        }
    }
    Ok(agent)
}

/// Literal per-anchor loop: each outer iteration synthesizes one rollout and
/// feeds its transitions to the agent one at a time, in order.
pub fn train_agent_interleaved(
    dwm: &TrainedDiffusion,
    idm: &IdmModel,
    real: &OfflineDataset,
    agent_cfg: &AgentConfig,
    synth_cfg: &SynthesisConfig,
    outer_iterations: u64,
    seed: u64,
    mut on_iter: impl FnMut(u64, &LossRecord),
) -> Result<AnyAgent> {
    let mut agent = AnyAgent::new(agent_cfg, real.d_s, real.d_a, seed);
    let mut rng = Rng::derive(seed, "agent-interleaved");
    let transitions: Vec<Transition> = real.transitions();
    if transitions.is_empty() {
        return Err(Error::DataIntegrity("empty dataset".into()));
    }
    let mut iter = 0u64;
    for outer in 0..outer_iterations {
        // One anchor per outer step, one rollout, then per-transition updates.
        let anchor = rng.below(transitions.len() as u64) as usize;
        let one = SynthesisConfig {
            t_divisor: transitions.len().max(1), // single anchor
            seed: crate::rng::derive_seed(seed, "interleaved") ^ outer,
            threads: 1,
            ..synth_cfg.clone()
        };
        // Synthesize from exactly the chosen anchor by rotating it to the
        // front of a one-anchor pass.
        let chain = synthesize_one_anchor(dwm, idm, real, &one, anchor)?;
        for tr in &chain {
            let batch = TransitionBatch::gather(std::slice::from_ref(tr), &[0]);
            let record = agent.update(&batch, &mut rng)?;
            on_iter(iter, &record);
            iter += 1;
        }
    }
    Ok(agent)
}

fn synthesize_one_anchor(
    dwm: &TrainedDiffusion,
    idm: &IdmModel,
    real: &OfflineDataset,
    cfg: &SynthesisConfig,
    anchor_index: usize,
) -> Result<Vec<Transition>> {
    use crate::data::ConditioningTuple;
    use crate::diffusion::{sample_segment, GuidanceConfig};
    use crate::idm::complete_segment;

    let mut remaining = anchor_index;
    for ep in &real.episodes {
        if remaining < ep.n_transitions() {
            let cond = ConditioningTuple {
                state: ep.states[remaining].clone(),
                action: ep.actions[remaining].clone(),
                rtg: 0.0,
                null_flag: false,
            };
            let guid = GuidanceConfig {
                omega: cfg.omega,
                p_null: 0.0,
                n_infer: cfg.n_infer,
                alpha_temp: cfg.alpha_temp,
                g_eval: Some(cfg.g_eval.unwrap_or_else(|| dwm.meta.g_default())),
                x0_clip: cfg.x0_clip,
                renoise: cfg.renoise,
            };
            let ema = dwm.ema_store()?;
            let mut rng = Rng::derive_indexed(cfg.seed, "synth", anchor_index as u64);
            let seg = sample_segment(
                &dwm.model.denoiser,
                &ema,
                &dwm.schedule,
                &cond,
                &guid,
                &dwm.meta.stats,
                &mut rng,
            )?;
            return complete_segment(idm, &ep.states[remaining], &ep.actions[remaining], &seg);
        }
        remaining -= ep.n_transitions();
    }
    Err(Error::DataIntegrity(format!(
        "anchor index {anchor_index} out of range"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::AgentKind;
    use crate::data::Tier;
    use crate::envs::{generate_dataset, PointMass2D};

    #[test]
    fn zero_budget_returns_initialization() {
        let env = PointMass2D::standard(0.0);
        let ds = generate_dataset(&env, Tier::Medium, 2, 1).unwrap();
        let buffer = ds.transitions();
        let cfg = AgentConfig {
            steps: 0,
            ..AgentConfig::default()
        };
        let trained = train_agent_on(&buffer, &cfg, 5, None, |_, _| {}).unwrap();
        let fresh = AnyAgent::new(&cfg, ds.d_s, ds.d_a, 5);
        let s = vec![0.2, -0.2, 0.0, 0.1];
        let mut r1 = Rng::seed_from_u64(1);
        let mut r2 = Rng::seed_from_u64(1);
        assert_eq!(
            trained.act(&s, true, &mut r1).unwrap(),
            fresh.act(&s, true, &mut r2).unwrap()
        );
    }

    #[test]
    fn telemetry_has_one_row_per_iteration() {
        let env = PointMass2D::standard(0.0);
        let ds = generate_dataset(&env, Tier::Medium, 2, 2).unwrap();
        let buffer = ds.transitions();
        let cfg = AgentConfig {
            steps: 25,
            batch_size: 16,
            hidden: 8,
            ..AgentConfig::default()
        };
        let mut rows = 0u64;
        train_agent_on(&buffer, &cfg, 5, None, |_, _| rows += 1).unwrap();
        assert_eq!(rows, 25);
    }

    #[test]
    fn training_is_seed_deterministic() {
        let env = PointMass2D::standard(0.0);
        let ds = generate_dataset(&env, Tier::Medium, 2, 3).unwrap();
        let buffer = ds.transitions();
        let cfg = AgentConfig {
            kind: AgentKind::Iql,
            steps: 30,
            batch_size: 16,
            hidden: 8,
            ..AgentConfig::default()
        };
        let a = train_agent_on(&buffer, &cfg, 9, None, |_, _| {}).unwrap();
        let b = train_agent_on(&buffer, &cfg, 9, None, |_, _| {}).unwrap();
        let s = vec![0.5, 0.5, 0.0, 0.0];
        let mut r1 = Rng::seed_from_u64(1);
        let mut r2 = Rng::seed_from_u64(1);
        assert_eq!(
            a.act(&s, true, &mut r1).unwrap(),
            b.act(&s, true, &mut r2).unwrap()
        );
    }
}
