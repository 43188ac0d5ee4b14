//! Shared agent plumbing: configuration, minibatch layout, loss telemetry,
//! and the multi-store checkpoint merge.

use serde::{Deserialize, Serialize};

use crate::data::Transition;
use crate::error::{Error, Result};
use crate::nn::{Init, ParamStore};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Td3bc,
    Iql,
}

impl AgentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AgentKind::Td3bc => "td3bc",
            AgentKind::Iql => "iql",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "td3bc" => Ok(AgentKind::Td3bc),
            "iql" => Ok(AgentKind::Iql),
            other => Err(Error::Config(format!(
                "unknown agent `{other}` (expected td3bc or iql)"
            ))),
        }
    }
}

/// Hyperparameters for both agents; fields irrelevant to one agent are
/// ignored by it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub kind: AgentKind,
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub gamma: f64,
    /// Polyak coefficient for target networks.
    pub tau: f64,
    /// Actor / target update period `n`.
    pub policy_delay: u64,
    /// TD3+BC behavior-cloning weight in `lambda = alpha_bc / mean|Q|`.
    pub alpha_bc: f64,
    /// Target-policy smoothing noise std (TD3+BC).
    pub policy_noise: f64,
    pub noise_clip: f64,
    /// Disable to match the plain target line without smoothing noise.
    pub target_smoothing: bool,
    /// IQL expectile; 0.5 reduces the value loss to a scaled squared error.
    pub expectile: f64,
    /// IQL inverse temperature for advantage weighting.
    pub beta: f64,
    pub adv_clip: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            kind: AgentKind::Td3bc,
            hidden: 64,
            lr: 3e-4,
            batch_size: 256,
            steps: 30_000,
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            alpha_bc: 2.5,
            policy_noise: 0.2,
            noise_clip: 0.5,
            target_smoothing: true,
            expectile: 0.7,
            beta: 3.0,
            adv_clip: 100.0,
        }
    }
}

/// Column-packed minibatch of transitions.
pub struct TransitionBatch {
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
    pub n: usize,
    pub d_s: usize,
    pub d_a: usize,
}

impl TransitionBatch {
    pub fn gather(buffer: &[Transition], indices: &[usize]) -> Self {
        let d_s = buffer[0].state.len();
        let d_a = buffer[0].action.len();
        let n = indices.len();
        let mut states = Vec::with_capacity(n * d_s);
        let mut actions = Vec::with_capacity(n * d_a);
        let mut rewards = Vec::with_capacity(n);
        let mut next_states = Vec::with_capacity(n * d_s);
        for &i in indices {
            states.extend_from_slice(&buffer[i].state);
            actions.extend_from_slice(&buffer[i].action);
            rewards.push(buffer[i].reward);
            next_states.extend_from_slice(&buffer[i].next_state);
        }
        TransitionBatch {
            states,
            actions,
            rewards,
            next_states,
            n,
            d_s,
            d_a,
        }
    }

    /// `[s | a]` rows for critic input.
    pub fn state_action(&self, states: &[f64], actions: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * (self.d_s + self.d_a));
        for r in 0..self.n {
            out.extend_from_slice(&states[r * self.d_s..(r + 1) * self.d_s]);
            out.extend_from_slice(&actions[r * self.d_a..(r + 1) * self.d_a]);
        }
        out
    }
}

/// Per-iteration loss telemetry.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LossRecord {
    pub critic1: f64,
    pub critic2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub actor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

/// Asymmetric expectile weight `|tau_e - 1[u < 0]|`.
#[inline]
pub fn expectile_weight(tau_e: f64, u: f64) -> f64 {
    if u < 0.0 {
        (tau_e - 1.0).abs()
    } else {
        tau_e
    }
}

/// Merges named stores into one flat store for checkpointing.
pub(crate) fn merge_stores(parts: &[(&str, &ParamStore)]) -> ParamStore {
    let mut merged = ParamStore::new();
    let mut dummy = Rng::seed_from_u64(0);
    for (prefix, store) in parts {
        for i in 0..store.n_tensors() {
            let id = crate::nn::ParamId(i);
            let name = format!("{prefix}/{}", store.name(id));
            let new_id = merged.add(&name, store.shape(id), Init::Zero, &mut dummy);
            merged.value_mut(new_id).copy_from_slice(store.value(id));
        }
    }
    merged
}

/// Restores each part from a merged checkpoint store laid out by
/// [`merge_stores`] with the same part order.
pub(crate) fn split_restore(
    values: &[Vec<f64>],
    parts: &mut [(&str, &mut ParamStore)],
) -> Result<()> {
    let total: usize = parts.iter().map(|(_, s)| s.n_tensors()).sum();
    if values.len() != total {
        return Err(Error::DimensionMismatch(format!(
            "agent checkpoint has {} tensors, expected {total}",
            values.len()
        )));
    }
    let mut offset = 0;
    for (_, store) in parts.iter_mut() {
        let n = store.n_tensors();
        store.load_snapshot(&values[offset..offset + n])?;
        offset += n;
    }
    Ok(())
}
