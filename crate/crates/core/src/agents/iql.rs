//! IQL: expectile value regression, twin critics bootstrapping from the
//! value net, and advantage-weighted regression toward dataset actions.

use serde::{Deserialize, Serialize};

use crate::agents::common::{
    expectile_weight, merge_stores, split_restore, AgentConfig, LossRecord, TransitionBatch,
};
use crate::error::Result;
use crate::nn::{
    save_checkpoint, Activation, AdamState, Checkpoint, Init, Mlp, MlpSpec, ParamId, ParamStore,
};
use crate::rng::Rng;

pub const IQL_LOGSTD_MIN: f64 = -5.0;
pub const IQL_LOGSTD_MAX: f64 = 2.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentMeta {
    pub config: AgentConfig,
    pub d_s: usize,
    pub d_a: usize,
}

/// Gaussian policy: tanh-squashed mean MLP plus a learned state-independent
/// log-std vector, clamped like the IDM's.
pub struct IqlAgent {
    pub meta: AgentMeta,
    actor: Mlp,
    log_std: ParamId,
    actor_store: ParamStore,
    critic1: Mlp,
    critic2: Mlp,
    critic_store: ParamStore,
    target_critic_store: ParamStore,
    value: Mlp,
    value_store: ParamStore,
    adam_actor: AdamState,
    adam_critic: AdamState,
    adam_value: AdamState,
    iter: u64,
}

impl IqlAgent {
    pub fn new(config: AgentConfig, d_s: usize, d_a: usize, seed: u64) -> Self {
        let hidden = config.hidden;
        let mut rng = Rng::derive(seed, "iql-init");
        let mut actor_store = ParamStore::new();
        let actor = Mlp::new(
            &mut actor_store,
            "actor",
            &MlpSpec::new(
                vec![d_s, hidden, hidden, d_a],
                Activation::Relu,
                Activation::Tanh,
            ),
            &mut rng,
        );
        let log_std = actor_store.add("actor.log_std", &[d_a], Init::Zero, &mut rng);
        let mut critic_store = ParamStore::new();
        let critic1 = Mlp::new(
            &mut critic_store,
            "q1",
            &MlpSpec::new(
                vec![d_s + d_a, hidden, hidden, 1],
                Activation::Relu,
                Activation::Identity,
            ),
            &mut rng,
        );
        let critic2 = Mlp::new(
            &mut critic_store,
            "q2",
            &MlpSpec::new(
                vec![d_s + d_a, hidden, hidden, 1],
                Activation::Relu,
                Activation::Identity,
            ),
            &mut rng,
        );
        let mut value_store = ParamStore::new();
        let value = Mlp::new(
            &mut value_store,
            "v",
            &MlpSpec::new(
                vec![d_s, hidden, hidden, 1],
                Activation::Relu,
                Activation::Identity,
            ),
            &mut rng,
        );
        let target_critic_store = critic_store.clone();
        let adam_actor = AdamState::new(&actor_store, config.lr);
        let adam_critic = AdamState::new(&critic_store, config.lr);
        let adam_value = AdamState::new(&value_store, config.lr);
        IqlAgent {
            meta: AgentMeta { config, d_s, d_a },
            actor,
            log_std,
            actor_store,
            critic1,
            critic2,
            critic_store,
            target_critic_store,
            value,
            value_store,
            adam_actor,
            adam_critic,
            adam_value,
            iter: 0,
        }
    }

    /// `min_j Q_j'(s, a)` from the target critics.
    pub fn target_q_min(&self, batch: &TransitionBatch) -> Result<Vec<f64>> {
        let sa = batch.state_action(&batch.states, &batch.actions);
        let (q1, _) = self
            .critic1
            .forward(&self.target_critic_store, &sa, batch.n)?;
        let (q2, _) = self
            .critic2
            .forward(&self.target_critic_store, &sa, batch.n)?;
        Ok(q1.iter().zip(&q2).map(|(a, b)| a.min(*b)).collect())
    }

    /// Expectile loss of V against fixed `q_min`; optionally accumulates.
    pub fn value_loss(
        &mut self,
        batch: &TransitionBatch,
        q_min: &[f64],
        accumulate: bool,
    ) -> Result<f64> {
        let tau_e = self.meta.config.expectile;
        let (v, cache) = self.value.forward(&self.value_store, &batch.states, batch.n)?;
        let n = batch.n as f64;
        let mut loss = 0.0;
        let mut dv = vec![0.0; batch.n];
        for i in 0..batch.n {
            let u = q_min[i] - v[i];
            let w = expectile_weight(tau_e, u);
            loss += w * u * u;
            dv[i] = -2.0 * w * u / n;
        }
        if accumulate {
            self.value.backward(&mut self.value_store, &cache, &dv, true)?;
        }
        Ok(loss / n)
    }

    /// Expectile regression of V toward `min_j Q_j'(s, a)`.
    pub fn value_update(&mut self, batch: &TransitionBatch) -> Result<f64> {
        let q_min = self.target_q_min(batch)?;
        let loss = self.value_loss(batch, &q_min, true)?;
        self.adam_value.step(&mut self.value_store)?;
        Ok(loss)
    }

    /// TD targets `y = r + gamma * V(s')` with the value net detached.
    pub fn td_targets(&self, batch: &TransitionBatch) -> Result<Vec<f64>> {
        let gamma = self.meta.config.gamma;
        let (v_next, _) = self
            .value
            .forward(&self.value_store, &batch.next_states, batch.n)?;
        Ok(batch
            .rewards
            .iter()
            .zip(&v_next)
            .map(|(r, v)| r + gamma * v)
            .collect())
    }

    /// Twin squared-error losses against fixed targets.
    pub fn critic_loss(
        &mut self,
        batch: &TransitionBatch,
        targets: &[f64],
        accumulate: bool,
    ) -> Result<(f64, f64)> {
        let sa = batch.state_action(&batch.states, &batch.actions);
        let (q1, c1) = self.critic1.forward(&self.critic_store, &sa, batch.n)?;
        let (q2, c2) = self.critic2.forward(&self.critic_store, &sa, batch.n)?;
        let n = batch.n as f64;
        let mut loss1 = 0.0;
        let mut loss2 = 0.0;
        let mut d1 = vec![0.0; batch.n];
        let mut d2 = vec![0.0; batch.n];
        for i in 0..batch.n {
            let e1 = q1[i] - targets[i];
            let e2 = q2[i] - targets[i];
            loss1 += e1 * e1;
            loss2 += e2 * e2;
            d1[i] = 2.0 * e1 / n;
            d2[i] = 2.0 * e2 / n;
        }
        if accumulate {
            self.critic1.backward(&mut self.critic_store, &c1, &d1, true)?;
            self.critic2.backward(&mut self.critic_store, &c2, &d2, true)?;
        }
        Ok((loss1 / n, loss2 / n))
    }

    /// Regresses both critics to `y = r + gamma * V(s')`.
    pub fn critic_update(&mut self, batch: &TransitionBatch) -> Result<(f64, f64)> {
        let y = self.td_targets(batch)?;
        let losses = self.critic_loss(batch, &y, true)?;
        self.adam_critic.step(&mut self.critic_store)?;
        Ok(losses)
    }

    /// Clipped exponential advantage weights `min(exp(beta A), clip)` with
    /// `A = min_j Q_j(s, a) - V(s)` from the online critics and value net.
    pub fn advantage_weights(&self, batch: &TransitionBatch) -> Result<Vec<f64>> {
        let cfg = &self.meta.config;
        let sa = batch.state_action(&batch.states, &batch.actions);
        let (q1, _) = self.critic1.forward(&self.critic_store, &sa, batch.n)?;
        let (q2, _) = self.critic2.forward(&self.critic_store, &sa, batch.n)?;
        let (v, _) = self.value.forward(&self.value_store, &batch.states, batch.n)?;
        Ok((0..batch.n)
            .map(|i| {
                let adv = q1[i].min(q2[i]) - v[i];
                (cfg.beta * adv).exp().min(cfg.adv_clip)
            })
            .collect())
    }

    /// Weighted Gaussian NLL of the batch actions under the policy.
    pub fn actor_loss(
        &mut self,
        batch: &TransitionBatch,
        weights: &[f64],
        accumulate: bool,
    ) -> Result<f64> {
        let (mean, cache) = self.actor.forward(&self.actor_store, &batch.states, batch.n)?;
        let log_std_raw = self.actor_store.value(self.log_std).to_vec();
        let n = batch.n as f64;
        let d_a = batch.d_a;
        let half_ln_2pi = 0.5 * std::f64::consts::TAU.ln();
        let mut loss = 0.0;
        let mut d_mean = vec![0.0; batch.n * d_a];
        let mut d_log_std = vec![0.0; d_a];
        for i in 0..batch.n {
            let w = weights[i];
            for d in 0..d_a {
                let ls = log_std_raw[d].clamp(IQL_LOGSTD_MIN, IQL_LOGSTD_MAX);
                let inv_var = (-2.0 * ls).exp();
                let diff = batch.actions[i * d_a + d] - mean[i * d_a + d];
                // -log N = ls + 0.5 ln 2pi + diff^2 / (2 sigma^2)
                loss += w * (ls + half_ln_2pi + 0.5 * diff * diff * inv_var);
                d_mean[i * d_a + d] = -w * diff * inv_var / n;
                if log_std_raw[d] > IQL_LOGSTD_MIN && log_std_raw[d] < IQL_LOGSTD_MAX {
                    d_log_std[d] += w * (1.0 - diff * diff * inv_var) / n;
                }
            }
        }
        loss /= n;
        if accumulate {
            self.actor
                .backward(&mut self.actor_store, &cache, &d_mean, true)?;
            let g = self.actor_store.grad_mut(self.log_std);
            for (gd, d) in g.iter_mut().zip(&d_log_std) {
                *gd += d;
            }
        }
        Ok(loss)
    }

    /// Advantage-weighted regression toward the batch actions:
    /// `-mean(min(exp(beta * A), clip) * log pi(a|s))`.
    pub fn actor_update(&mut self, batch: &TransitionBatch) -> Result<f64> {
        let weights = self.advantage_weights(batch)?;
        let loss = self.actor_loss(batch, &weights, true)?;
        self.adam_actor.step(&mut self.actor_store)?;
        self.target_critic_store
            .polyak_from(&self.critic_store, self.meta.config.tau)?;
        Ok(loss)
    }

    /// One full algorithm iteration: value, critics, then the delayed actor
    /// and target update.
    pub fn update(&mut self, batch: &TransitionBatch, rng: &mut Rng) -> Result<LossRecord> {
        let _ = rng; // IQL draws no noise during updates
        self.iter += 1;
        let value = self.value_update(batch)?;
        let (critic1, critic2) = self.critic_update(batch)?;
        let actor = if self.iter % self.meta.config.policy_delay == 0 {
            Some(self.actor_update(batch)?)
        } else {
            None
        };
        Ok(LossRecord {
            critic1,
            critic2,
            actor,
            value: Some(value),
        })
    }

    /// Gaussian mean when deterministic, a clipped sample otherwise.
    pub fn act(&self, state: &[f64], deterministic: bool, rng: &mut Rng) -> Result<Vec<f64>> {
        let (mean, _) = self.actor.forward(&self.actor_store, state, 1)?;
        if deterministic {
            return Ok(mean.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect());
        }
        let log_std = self.actor_store.value(self.log_std);
        Ok(mean
            .iter()
            .zip(log_std)
            .map(|(m, ls)| {
                (m + ls.clamp(IQL_LOGSTD_MIN, IQL_LOGSTD_MAX).exp() * rng.normal())
                    .clamp(-1.0, 1.0)
            })
            .collect())
    }

    pub fn save(&self, path: &std::path::Path, step: u64) -> Result<()> {
        let merged = merge_stores(&[
            ("actor", &self.actor_store),
            ("critic", &self.critic_store),
            ("target_critic", &self.target_critic_store),
            ("value", &self.value_store),
        ]);
        save_checkpoint(
            path,
            "iql",
            serde_json::to_value(&self.meta)?,
            step,
            &merged,
            None,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: AgentMeta = serde_json::from_value(ck.spec.clone())?;
        let mut agent = IqlAgent::new(meta.config.clone(), meta.d_s, meta.d_a, 0);
        split_restore(
            &ck.values,
            &mut [
                ("actor", &mut agent.actor_store),
                ("critic", &mut agent.critic_store),
                ("target_critic", &mut agent.target_critic_store),
                ("value", &mut agent.value_store),
            ],
        )?;
        Ok(agent)
    }

    /// Mutable access to (actor, critic, target-critic, value) stores; used
    /// by gradient-check harnesses and tests.
    pub fn test_stores(
        &mut self,
    ) -> (
        &mut ParamStore,
        &mut ParamStore,
        &mut ParamStore,
        &mut ParamStore,
    ) {
        (
            &mut self.actor_store,
            &mut self.critic_store,
            &mut self.target_critic_store,
            &mut self.value_store,
        )
    }
}
