//! One-step TD offline-RL learners consuming complete transitions:
//! TD3+BC (twin critics, delayed actor, behavior-cloning regularizer) and
//! IQL (expectile value net, advantage-weighted actor).

mod common;
mod iql;
mod td3bc;

pub use common::{expectile_weight, AgentConfig, AgentKind, LossRecord, TransitionBatch};
pub use iql::IqlAgent;
pub use td3bc::Td3bcAgent;

use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Either agent behind one dispatch surface.
pub enum AnyAgent {
    Td3bc(Td3bcAgent),
    Iql(IqlAgent),
}

impl AnyAgent {
    pub fn new(cfg: &AgentConfig, d_s: usize, d_a: usize, seed: u64) -> Self {
        match cfg.kind {
            AgentKind::Td3bc => AnyAgent::Td3bc(Td3bcAgent::new(cfg.clone(), d_s, d_a, seed)),
            AgentKind::Iql => AnyAgent::Iql(IqlAgent::new(cfg.clone(), d_s, d_a, seed)),
        }
    }

    /// One full algorithm iteration on a minibatch.
    pub fn update(&mut self, batch: &TransitionBatch, rng: &mut Rng) -> Result<LossRecord> {
        match self {
            AnyAgent::Td3bc(a) => a.update(batch, rng),
            AnyAgent::Iql(a) => a.update(batch, rng),
        }
    }

    /// Policy action, clipped to [-1, 1].
    pub fn act(&self, state: &[f64], deterministic: bool, rng: &mut Rng) -> Result<Vec<f64>> {
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::DataIntegrity("non-finite state in act".into()));
        }
        match self {
            AnyAgent::Td3bc(a) => a.act(state),
            AnyAgent::Iql(a) => a.act(state, deterministic, rng),
        }
    }

    pub fn kind(&self) -> AgentKind {
        match self {
            AnyAgent::Td3bc(_) => AgentKind::Td3bc,
            AnyAgent::Iql(_) => AgentKind::Iql,
        }
    }

    pub fn save(&self, path: &Path, step: u64) -> Result<()> {
        match self {
            AnyAgent::Td3bc(a) => a.save(path, step),
            AnyAgent::Iql(a) => a.save(path, step),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = crate::nn::load_checkpoint(path)?;
        match ck.kind.as_str() {
            "td3bc" => Ok(AnyAgent::Td3bc(Td3bcAgent::from_checkpoint(&ck)?)),
            "iql" => Ok(AnyAgent::Iql(IqlAgent::from_checkpoint(&ck)?)),
            other => Err(Error::Format(format!(
                "checkpoint kind `{other}` is not an agent"
            ))),
        }
    }
}
