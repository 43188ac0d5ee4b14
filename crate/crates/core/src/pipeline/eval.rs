//! Seeded evaluation rollouts and the normalized-return metric.

use serde::{Deserialize, Serialize};

use crate::agents::AnyAgent;
use crate::envs::{BehaviorPolicy, EnvSpec, Environment};
use crate::error::Result;
use crate::rng::Rng;

/// Anything evaluable: a trained agent (deterministic actions) or a scripted
/// behavior policy (used for metric calibration).
pub enum EvalPolicy<'a> {
    Agent(&'a AnyAgent),
    Scripted(&'a BehaviorPolicy),
}

impl EvalPolicy<'_> {
    fn act(&self, env: &dyn Environment, state: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        match self {
            EvalPolicy::Agent(a) => a.act(state, true, rng),
            EvalPolicy::Scripted(p) => Ok(p.act(env, state, rng)),
        }
    }
}

/// Evaluation result; wall-clock timings are reported separately so this
/// record stays bit-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub env: String,
    pub policy: String,
    pub mean_return: f64,
    pub normalized_return: f64,
    pub std_return: f64,
    pub episodes: usize,
}

/// Deterministic-seeded rollouts; normalized return
/// `(R - R_random) / (R_expert - R_random)` against the env references.
pub fn evaluate(
    policy: &EvalPolicy,
    env: &dyn Environment,
    spec: &EnvSpec,
    policy_name: &str,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    let mut returns = Vec::with_capacity(n_episodes);
    for ep in 0..n_episodes {
        let mut rng = Rng::derive_indexed(seed, "eval-episode", ep as u64);
        let mut state = env.reset(&mut rng);
        let mut total = 0.0;
        for _ in 0..env.episode_len() {
            let action = policy.act(env, &state, &mut rng)?;
            let (next, reward) = env.step(&state, &action, &mut rng)?;
            total += reward;
            state = next;
        }
        returns.push(total);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    Ok(EvalReport {
        env: spec.name.clone(),
        policy: policy_name.to_string(),
        mean_return: mean,
        normalized_return: spec.normalized_return(mean),
        std_return: var.sqrt(),
        episodes: n_episodes,
    })
}
