//! TD3+BC: twin critics regressing to a smoothed min-target, delayed actor
//! maximizing `lambda * Q1` with a behavior-cloning term, Polyak targets.

use serde::{Deserialize, Serialize};

use crate::agents::common::{merge_stores, split_restore, AgentConfig, LossRecord, TransitionBatch};
use crate::error::Result;
use crate::nn::{
    save_checkpoint, Activation, AdamState, Checkpoint, Mlp, MlpSpec, ParamStore,
};
use crate::rng::Rng;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentMeta {
    pub config: AgentConfig,
    pub d_s: usize,
    pub d_a: usize,
}

pub struct Td3bcAgent {
    pub meta: AgentMeta,
    actor: Mlp,
    actor_store: ParamStore,
    target_actor_store: ParamStore,
    critic1: Mlp,
    critic2: Mlp,
    critic_store: ParamStore,
    target_critic_store: ParamStore,
    adam_actor: AdamState,
    adam_critic: AdamState,
    iter: u64,
}

fn build_actor(store: &mut ParamStore, d_s: usize, d_a: usize, hidden: usize, rng: &mut Rng) -> Mlp {
    Mlp::new(
        store,
        "actor",
        &MlpSpec::new(
            vec![d_s, hidden, hidden, d_a],
            Activation::Relu,
            Activation::Tanh,
        ),
        rng,
    )
}

fn build_critic(
    store: &mut ParamStore,
    name: &str,
    d_s: usize,
    d_a: usize,
    hidden: usize,
    rng: &mut Rng,
) -> Mlp {
    Mlp::new(
        store,
        name,
        &MlpSpec::new(
            vec![d_s + d_a, hidden, hidden, 1],
            Activation::Relu,
            Activation::Identity,
        ),
        rng,
    )
}

impl Td3bcAgent {
    pub fn new(config: AgentConfig, d_s: usize, d_a: usize, seed: u64) -> Self {
        let hidden = config.hidden;
        let mut actor_store = ParamStore::new();
        let mut rng = Rng::derive(seed, "td3bc-init");
        let actor = build_actor(&mut actor_store, d_s, d_a, hidden, &mut rng);
        let mut critic_store = ParamStore::new();
        let critic1 = build_critic(&mut critic_store, "q1", d_s, d_a, hidden, &mut rng);
        let critic2 = build_critic(&mut critic_store, "q2", d_s, d_a, hidden, &mut rng);
        // Targets start as exact copies of the online networks.
        let target_actor_store = actor_store.clone();
        let target_critic_store = critic_store.clone();
        let adam_actor = AdamState::new(&actor_store, config.lr);
        let adam_critic = AdamState::new(&critic_store, config.lr);
        Td3bcAgent {
            meta: AgentMeta {
                config,
                d_s,
                d_a,
            },
            actor,
            actor_store,
            target_actor_store,
            critic1,
            critic2,
            critic_store,
            target_critic_store,
            adam_actor,
            adam_critic,
            iter: 0,
        }
    }

    /// Target values `y = r + gamma * min_j Q_j'(s', pi'(s') + noise)`.
    pub fn compute_targets(&self, batch: &TransitionBatch, rng: &mut Rng) -> Result<Vec<f64>> {
        let cfg = &self.meta.config;
        let (pi_next, _) = self
            .actor
            .forward(&self.target_actor_store, &batch.next_states, batch.n)?;
        let mut a_next = pi_next;
        if cfg.target_smoothing && cfg.policy_noise > 0.0 {
            for v in &mut a_next {
                let noise = (rng.normal() * cfg.policy_noise).clamp(-cfg.noise_clip, cfg.noise_clip);
                *v = (*v + noise).clamp(-1.0, 1.0);
            }
        } else {
            for v in &mut a_next {
                *v = v.clamp(-1.0, 1.0);
            }
        }
        let sa_next = batch.state_action(&batch.next_states, &a_next);
        let (q1, _) = self.critic1.forward(&self.target_critic_store, &sa_next, batch.n)?;
        let (q2, _) = self.critic2.forward(&self.target_critic_store, &sa_next, batch.n)?;
        Ok(batch
            .rewards
            .iter()
            .zip(q1.iter().zip(&q2))
            .map(|(r, (a, b))| r + cfg.gamma * a.min(*b))
            .collect())
    }

    /// Twin squared-error losses against fixed targets; optionally
    /// accumulates gradients without stepping (probe mode for tests).
    pub fn critic_loss(
        &mut self,
        batch: &TransitionBatch,
        targets: &[f64],
        accumulate: bool,
    ) -> Result<(f64, f64)> {
        let sa = batch.state_action(&batch.states, &batch.actions);
        let n = batch.n as f64;
        let (q1, c1) = self.critic1.forward(&self.critic_store, &sa, batch.n)?;
        let (q2, c2) = self.critic2.forward(&self.critic_store, &sa, batch.n)?;
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

    /// Regresses both critics to the shared target; returns the loss pair.
    pub fn critic_update(&mut self, batch: &TransitionBatch, rng: &mut Rng) -> Result<(f64, f64)> {
        let y = self.compute_targets(batch, rng)?;
        let losses = self.critic_loss(batch, &y, true)?;
        self.adam_critic.step(&mut self.critic_store)?;
        Ok(losses)
    }

    /// Actor loss with an optionally frozen normalizer `lambda`; accumulates
    /// actor gradients when asked, never touching critic parameters.
    pub fn actor_loss(
        &mut self,
        batch: &TransitionBatch,
        lambda: Option<f64>,
        accumulate: bool,
    ) -> Result<f64> {
        let n = batch.n as f64;
        let (pi, actor_cache) = self.actor.forward(&self.actor_store, &batch.states, batch.n)?;
        let sa_pi = batch.state_action(&batch.states, &pi);
        let (q1, critic_cache) = self.critic1.forward(&self.critic_store, &sa_pi, batch.n)?;
        let mean_abs_q = q1.iter().map(|q| q.abs()).sum::<f64>() / n;
        let lambda = lambda.unwrap_or(self.meta.config.alpha_bc / mean_abs_q.max(1e-12));
        let mut loss = 0.0;
        for i in 0..batch.n {
            loss += -lambda * q1[i];
        }
        loss /= n;
        let mut bc = 0.0;
        let mut d_pi = vec![0.0; batch.n * batch.d_a];
        if accumulate {
            let dq = vec![-lambda / n; batch.n];
            let d_sa = self
                .critic1
                .backward(&mut self.critic_store, &critic_cache, &dq, false)?;
            let width = batch.d_s + batch.d_a;
            for r in 0..batch.n {
                d_pi[r * batch.d_a..(r + 1) * batch.d_a]
                    .copy_from_slice(&d_sa[r * width + batch.d_s..(r + 1) * width]);
            }
        }
        for i in 0..batch.n * batch.d_a {
            let diff = pi[i] - batch.actions[i];
            bc += diff * diff;
            if accumulate {
                d_pi[i] += 2.0 * diff / n;
            }
        }
        loss += bc / n;
        if accumulate {
            self.actor
                .backward(&mut self.actor_store, &actor_cache, &d_pi, true)?;
        }
        Ok(loss)
    }

    /// Actor loss `-lambda * mean Q1(s, pi(s)) + mean |a - pi(s)|^2` with the
    /// usual normalizer `lambda = alpha_bc / mean |Q1|`, then Polyak updates.
    pub fn actor_update(&mut self, batch: &TransitionBatch) -> Result<f64> {
        let loss = self.actor_loss(batch, None, true)?;
        self.adam_actor.step(&mut self.actor_store)?;
        let tau = self.meta.config.tau;
        self.target_actor_store.polyak_from(&self.actor_store, tau)?;
        self.target_critic_store.polyak_from(&self.critic_store, tau)?;
        Ok(loss)
    }

    /// One full algorithm iteration.
    pub fn update(&mut self, batch: &TransitionBatch, rng: &mut Rng) -> Result<LossRecord> {
        self.iter += 1;
        let (critic1, critic2) = self.critic_update(batch, rng)?;
        let actor = if self.iter % self.meta.config.policy_delay == 0 {
            Some(self.actor_update(batch)?)
        } else {
            None
        };
        Ok(LossRecord {
            critic1,
            critic2,
            actor,
            value: None,
        })
    }

    /// Deterministic tanh-bounded policy action.
    pub fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        let (a, _) = self.actor.forward(&self.actor_store, state, 1)?;
        Ok(a.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect())
    }

    pub fn save(&self, path: &std::path::Path, step: u64) -> Result<()> {
        let merged = merge_stores(&[
            ("actor", &self.actor_store),
            ("critic", &self.critic_store),
            ("target_actor", &self.target_actor_store),
            ("target_critic", &self.target_critic_store),
        ]);
        save_checkpoint(
            path,
            "td3bc",
            serde_json::to_value(&self.meta)?,
            step,
            &merged,
            None,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: AgentMeta = serde_json::from_value(ck.spec.clone())?;
        let mut agent = Td3bcAgent::new(meta.config.clone(), meta.d_s, meta.d_a, 0);
        split_restore(
            &ck.values,
            &mut [
                ("actor", &mut agent.actor_store),
                ("critic", &mut agent.critic_store),
                ("target_actor", &mut agent.target_actor_store),
                ("target_critic", &mut agent.target_critic_store),
            ],
        )?;
        agent.iter = 0;
        Ok(agent)
    }

    /// Mutable access to (actor, critic, target-critic) parameter stores;
    /// used by gradient-check harnesses and tests.
    pub fn stores_mut(&mut self) -> (&mut ParamStore, &mut ParamStore, &mut ParamStore) {
        (
            &mut self.actor_store,
            &mut self.critic_store,
            &mut self.target_critic_store,
        )
    }

    #[cfg(test)]
    pub(crate) fn critic_param_names(&self) -> Vec<String> {
        self.critic_store.iter_names().cloned().collect()
    }

    #[cfg(test)]
    pub(crate) fn actor_grads(&self) -> Vec<Vec<f64>> {
        (0..self.actor_store.n_tensors())
            .map(|i| self.actor_store.grad(crate::nn::ParamId(i)).to_vec())
            .collect()
    }
}

impl Td3bcAgent {
    /// Finite-difference target for tests: actor loss value at the current
    /// parameters without taking an optimizer step.
    #[cfg(test)]
    pub(crate) fn actor_loss_value(&mut self, batch: &TransitionBatch) -> Result<f64> {
        let cfg = &self.meta.config;
        let n = batch.n as f64;
        let (pi, _) = self.actor.forward(&self.actor_store, &batch.states, batch.n)?;
        let sa_pi = batch.state_action(&batch.states, &pi);
        let (q1, _) = self.critic1.forward(&self.critic_store, &sa_pi, batch.n)?;
        let mean_abs_q = q1.iter().map(|q| q.abs()).sum::<f64>() / n;
        let lambda = cfg.alpha_bc / mean_abs_q.max(1e-12);
        let mut loss = 0.0;
        for i in 0..batch.n {
            loss += -lambda * q1[i];
        }
        loss /= n;
        let mut bc = 0.0;
        for i in 0..batch.n * batch.d_a {
            let diff = pi[i] - batch.actions[i];
            bc += diff * diff;
        }
        Ok(loss + bc / n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamId;

    fn toy_batch(n: usize, d_s: usize, d_a: usize, seed: u64) -> TransitionBatch {
        let mut rng = Rng::seed_from_u64(seed);
        let transitions: Vec<crate::data::Transition> = (0..n)
            .map(|_| crate::data::Transition {
                state: (0..d_s).map(|_| rng.normal()).collect(),
                action: (0..d_a).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
                reward: rng.normal(),
                next_state: (0..d_s).map(|_| rng.normal()).collect(),
                synthetic: false,
            })
            .collect();
        let indices: Vec<usize> = (0..n).collect();
        TransitionBatch::gather(&transitions, &indices)
    }

    fn zero_store(store: &mut ParamStore) {
        for i in 0..store.n_tensors() {
            store.value_mut(ParamId(i)).iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Sets the output bias of a critic MLP inside a (possibly shared) store.
    fn set_critic_output_bias(store: &mut ParamStore, critic_prefix: &str, value: f64) {
        for i in 0..store.n_tensors() {
            let id = ParamId(i);
            let name = store.name(id).to_string();
            if name.starts_with(critic_prefix) && name.ends_with(".l2.b") {
                store.value_mut(id).iter_mut().for_each(|v| *v = value);
            }
        }
    }

    #[test]
    fn target_is_reward_when_target_critics_are_zero() {
        let mut agent = Td3bcAgent::new(AgentConfig::default(), 3, 2, 1);
        {
            let (_, _, target_critic) = agent.stores_mut();
            zero_store(target_critic);
        }
        let mut batch = toy_batch(4, 3, 2, 2);
        batch.rewards = vec![1.0; 4];
        let mut rng = Rng::seed_from_u64(3);
        let y = agent.compute_targets(&batch, &mut rng).unwrap();
        for v in y {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn target_uses_min_of_twin_critics() {
        let mut agent = Td3bcAgent::new(AgentConfig::default(), 3, 2, 4);
        {
            let (_, _, target_critic) = agent.stores_mut();
            zero_store(target_critic);
            set_critic_output_bias(target_critic, "q1", 2.0);
            set_critic_output_bias(target_critic, "q2", 3.0);
        }
        let mut batch = toy_batch(5, 3, 2, 5);
        batch.rewards = vec![0.0; 5];
        let mut rng = Rng::seed_from_u64(6);
        let y = agent.compute_targets(&batch, &mut rng).unwrap();
        for v in y {
            assert!((v - 0.99 * 2.0).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn critics_at_fixed_point_stay_put() {
        // Zero critics, zero rewards, zero target critics -> y = 0 = Q -> zero
        // loss and zero gradient, so Adam leaves the parameters unchanged.
        let mut agent = Td3bcAgent::new(AgentConfig::default(), 3, 2, 7);
        {
            let (_, critic, target_critic) = agent.stores_mut();
            zero_store(critic);
            zero_store(target_critic);
        }
        let mut batch = toy_batch(4, 3, 2, 8);
        batch.rewards = vec![0.0; 4];
        let before = agent.critic_store.snapshot();
        let mut rng = Rng::seed_from_u64(9);
        let (l1, l2) = agent.critic_update(&batch, &mut rng).unwrap();
        assert_eq!(l1, 0.0);
        assert_eq!(l2, 0.0);
        assert_eq!(agent.critic_store.snapshot(), before);
    }

    #[test]
    fn bc_term_vanishes_for_perfect_cloning() {
        let mut agent = Td3bcAgent::new(AgentConfig::default(), 3, 2, 10);
        {
            let (actor, critic, _) = agent.stores_mut();
            zero_store(actor); // pi(s) = tanh(0) = 0
            zero_store(critic);
            set_critic_output_bias(critic, "q1", 5.0);
        }
        let mut batch = toy_batch(6, 3, 2, 11);
        batch.actions = vec![0.0; 6 * 2]; // matches pi exactly
        let loss = agent.actor_loss_value(&batch).unwrap();
        // lambda = 2.5 / 5 = 0.5; loss = -lambda * mean Q + 0 = -0.5 * 5.
        assert!((loss - -2.5).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn constant_critic_leaves_only_bc_gradient() {
        // With Q1 constant the dQ/da path is zero, so the actor gradient must
        // equal the gradient of the pure BC objective.
        let cfg = AgentConfig {
            hidden: 8,
            ..AgentConfig::default()
        };
        let mut agent = Td3bcAgent::new(cfg.clone(), 3, 2, 12);
        {
            let (_, critic, _) = agent.stores_mut();
            zero_store(critic);
            set_critic_output_bias(critic, "q1", 5.0);
        }
        let batch = toy_batch(6, 3, 2, 13);
        agent.actor_update(&batch).unwrap();
        // Recompute the BC-only gradient on a fresh twin agent with identical
        // actor weights.
        let mut twin = Td3bcAgent::new(cfg, 3, 2, 12);
        let n = batch.n as f64;
        let (pi, cache) = twin
            .actor
            .forward(&twin.actor_store, &batch.states, batch.n)
            .unwrap();
        let mut d_pi = vec![0.0; batch.n * batch.d_a];
        for i in 0..d_pi.len() {
            d_pi[i] = 2.0 * (pi[i] - batch.actions[i]) / n;
        }
        twin.actor
            .backward(&mut twin.actor_store, &cache, &d_pi, true)
            .unwrap();
        // agent's adam already consumed its grads; compare against the twin's
        // grads by re-running the loss path without stepping.
        let mut rerun = Td3bcAgent::new(
            AgentConfig {
                hidden: 8,
                ..AgentConfig::default()
            },
            3,
            2,
            12,
        );
        {
            let (_, critic, _) = rerun.stores_mut();
            zero_store(critic);
            set_critic_output_bias(critic, "q1", 5.0);
        }
        let (pi2, cache2) = rerun
            .actor
            .forward(&rerun.actor_store, &batch.states, batch.n)
            .unwrap();
        let sa_pi = batch.state_action(&batch.states, &pi2);
        let (q1, ccache) = rerun
            .critic1
            .forward(&rerun.critic_store, &sa_pi, batch.n)
            .unwrap();
        let mean_abs_q = q1.iter().map(|q| q.abs()).sum::<f64>() / n;
        let lambda = rerun.meta.config.alpha_bc / mean_abs_q;
        let dq = vec![-lambda / n; batch.n];
        let d_sa = rerun
            .critic1
            .backward(&mut rerun.critic_store, &ccache, &dq, false)
            .unwrap();
        let width = batch.d_s + batch.d_a;
        let mut d_pi2 = vec![0.0; batch.n * batch.d_a];
        for r in 0..batch.n {
            d_pi2[r * batch.d_a..(r + 1) * batch.d_a]
                .copy_from_slice(&d_sa[r * width + batch.d_s..(r + 1) * width]);
        }
        for i in 0..d_pi2.len() {
            d_pi2[i] += 2.0 * (pi2[i] - batch.actions[i]) / n;
        }
        rerun
            .actor
            .backward(&mut rerun.actor_store, &cache2, &d_pi2, true)
            .unwrap();
        for (a, b) in rerun.actor_grads().iter().zip(twin.actor_grads().iter()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn lambda_normalizer_formula() {
        // mean |Q| = 5, alpha_bc = 2.5 -> lambda = 0.5; verified through the
        // loss value of a zero actor with zero target actions: loss = -0.5*5.
        let mut agent = Td3bcAgent::new(AgentConfig::default(), 3, 2, 20);
        {
            let (actor, critic, _) = agent.stores_mut();
            zero_store(actor);
            zero_store(critic);
            set_critic_output_bias(critic, "q1", 5.0);
        }
        let mut batch = toy_batch(4, 3, 2, 21);
        batch.actions = vec![0.0; 8];
        let loss = agent.actor_loss_value(&batch).unwrap();
        assert!((loss - -2.5).abs() < 1e-12);
    }

    #[test]
    fn actor_gradients_match_finite_differences() {
        let cfg = AgentConfig {
            hidden: 8,
            ..AgentConfig::default()
        };
        let mut agent = Td3bcAgent::new(cfg, 3, 2, 30);
        let batch = toy_batch(4, 3, 2, 31);

        // Analytic gradient (replicates actor_update without the Adam step).
        let n = batch.n as f64;
        let (pi, cache) = agent
            .actor
            .forward(&agent.actor_store, &batch.states, batch.n)
            .unwrap();
        let sa_pi = batch.state_action(&batch.states, &pi);
        let (q1, ccache) = agent
            .critic1
            .forward(&agent.critic_store, &sa_pi, batch.n)
            .unwrap();
        let mean_abs_q = q1.iter().map(|q| q.abs()).sum::<f64>() / n;
        let lambda = agent.meta.config.alpha_bc / mean_abs_q.max(1e-12);
        let dq = vec![-lambda / n; batch.n];
        let d_sa = agent
            .critic1
            .backward(&mut agent.critic_store, &ccache, &dq, false)
            .unwrap();
        let width = batch.d_s + batch.d_a;
        let mut d_pi = vec![0.0; batch.n * batch.d_a];
        for r in 0..batch.n {
            d_pi[r * batch.d_a..(r + 1) * batch.d_a]
                .copy_from_slice(&d_sa[r * width + batch.d_s..(r + 1) * width]);
        }
        for i in 0..d_pi.len() {
            d_pi[i] += 2.0 * (pi[i] - batch.actions[i]) / n;
        }
        agent
            .actor
            .backward(&mut agent.actor_store, &cache, &d_pi, true)
            .unwrap();
        let analytic = agent.actor_grads();

        // NOTE: lambda depends on the actor parameters through mean |Q1|, but
        // TD3+BC treats it as a detached constant, so the finite-difference
        // comparison freezes lambda by re-normalizing.
        let h = 1e-6;
        for ti in 0..agent.actor_store.n_tensors() {
            for j in 0..agent.actor_store.value(ParamId(ti)).len() {
                let orig = agent.actor_store.value(ParamId(ti))[j];
                agent.actor_store.value_mut(ParamId(ti))[j] = orig + h;
                let lp = frozen_lambda_loss(&mut agent, &batch, lambda);
                agent.actor_store.value_mut(ParamId(ti))[j] = orig - h;
                let lm = frozen_lambda_loss(&mut agent, &batch, lambda);
                agent.actor_store.value_mut(ParamId(ti))[j] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let a = analytic[ti][j];
                let denom = a.abs().max(fd.abs());
                if denom < 1e-7 {
                    continue;
                }
                assert!(
                    (a - fd).abs() / denom < 1e-4,
                    "actor param {ti}[{j}]: {a} vs {fd}"
                );
            }
        }
    }

    fn frozen_lambda_loss(agent: &mut Td3bcAgent, batch: &TransitionBatch, lambda: f64) -> f64 {
        let n = batch.n as f64;
        let (pi, _) = agent
            .actor
            .forward(&agent.actor_store, &batch.states, batch.n)
            .unwrap();
        let sa_pi = batch.state_action(&batch.states, &pi);
        let (q1, _) = agent
            .critic1
            .forward(&agent.critic_store, &sa_pi, batch.n)
            .unwrap();
        let mut loss = 0.0;
        for i in 0..batch.n {
            loss += -lambda * q1[i];
        }
        loss /= n;
        let mut bc = 0.0;
        for i in 0..batch.n * batch.d_a {
            let diff = pi[i] - batch.actions[i];
            bc += diff * diff;
        }
        loss + bc / n
    }

    #[test]
    fn critic_gradients_match_finite_differences() {
        let cfg = AgentConfig {
            hidden: 8,
            target_smoothing: false,
            ..AgentConfig::default()
        };
        let mut agent = Td3bcAgent::new(cfg, 3, 2, 40);
        let batch = toy_batch(4, 3, 2, 41);
        let mut rng = Rng::seed_from_u64(42);
        let y = agent.compute_targets(&batch, &mut rng).unwrap();

        let sa = batch.state_action(&batch.states, &batch.actions);
        let loss_fn = |agent: &Td3bcAgent| -> f64 {
            let (q1, _) = agent
                .critic1
                .forward(&agent.critic_store, &sa, batch.n)
                .unwrap();
            let (q2, _) = agent
                .critic2
                .forward(&agent.critic_store, &sa, batch.n)
                .unwrap();
            let mut l = 0.0;
            for i in 0..batch.n {
                l += (q1[i] - y[i]).powi(2) + (q2[i] - y[i]).powi(2);
            }
            l / batch.n as f64
        };

        // Analytic grads for the combined twin loss.
        let n = batch.n as f64;
        let (q1, c1) = agent
            .critic1
            .forward(&agent.critic_store, &sa, batch.n)
            .unwrap();
        let (q2, c2) = agent
            .critic2
            .forward(&agent.critic_store, &sa, batch.n)
            .unwrap();
        let d1: Vec<f64> = q1.iter().zip(&y).map(|(q, y)| 2.0 * (q - y) / n).collect();
        let d2: Vec<f64> = q2.iter().zip(&y).map(|(q, y)| 2.0 * (q - y) / n).collect();
        agent
            .critic1
            .backward(&mut agent.critic_store, &c1, &d1, true)
            .unwrap();
        agent
            .critic2
            .backward(&mut agent.critic_store, &c2, &d2, true)
            .unwrap();
        let analytic: Vec<Vec<f64>> = (0..agent.critic_store.n_tensors())
            .map(|i| agent.critic_store.grad(ParamId(i)).to_vec())
            .collect();

        let h = 1e-6;
        for ti in 0..agent.critic_store.n_tensors() {
            for j in 0..agent.critic_store.value(ParamId(ti)).len() {
                let orig = agent.critic_store.value(ParamId(ti))[j];
                agent.critic_store.value_mut(ParamId(ti))[j] = orig + h;
                let lp = loss_fn(&agent);
                agent.critic_store.value_mut(ParamId(ti))[j] = orig - h;
                let lm = loss_fn(&agent);
                agent.critic_store.value_mut(ParamId(ti))[j] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let a = analytic[ti][j];
                let denom = a.abs().max(fd.abs());
                if denom < 1e-7 {
                    continue;
                }
                assert!(
                    (a - fd).abs() / denom < 1e-4,
                    "critic param {}[{j}]: {a} vs {fd}",
                    agent.critic_param_names()[ti]
                );
            }
        }
    }

    #[test]
    fn act_is_deterministic_bounded_and_zero_for_zero_actor() {
        let mut agent = Td3bcAgent::new(AgentConfig::default(), 3, 2, 50);
        let s = vec![0.4, -0.9, 2.0];
        assert_eq!(agent.act(&s).unwrap(), agent.act(&s).unwrap());
        let mut rng = Rng::seed_from_u64(51);
        for _ in 0..20 {
            let s: Vec<f64> = (0..3).map(|_| rng.normal() * 3.0).collect();
            assert!(agent.act(&s).unwrap().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        {
            let (actor, _, _) = agent.stores_mut();
            zero_store(actor);
        }
        assert_eq!(agent.act(&s).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn polyak_happens_only_on_delayed_iterations() {
        let mut agent = Td3bcAgent::new(AgentConfig::default(), 3, 2, 60);
        let batch = toy_batch(8, 3, 2, 61);
        let mut rng = Rng::seed_from_u64(62);
        let t0 = agent.target_critic_store.snapshot();
        let r1 = agent.update(&batch, &mut rng).unwrap();
        assert!(r1.actor.is_none());
        assert_eq!(agent.target_critic_store.snapshot(), t0);
        let r2 = agent.update(&batch, &mut rng).unwrap();
        assert!(r2.actor.is_some());
        assert_ne!(agent.target_critic_store.snapshot(), t0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut agent = Td3bcAgent::new(
            AgentConfig {
                hidden: 8,
                ..AgentConfig::default()
            },
            3,
            2,
            70,
        );
        let batch = toy_batch(8, 3, 2, 71);
        let mut rng = Rng::seed_from_u64(72);
        for _ in 0..4 {
            agent.update(&batch, &mut rng).unwrap();
        }
        let dir = std::env::temp_dir().join("dawm_agent_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("td3bc.ck");
        agent.save(&path, 4).unwrap();
        let loaded = crate::agents::AnyAgent::load(&path).unwrap();
        let s = vec![0.3, 0.1, -0.5];
        let mut r = Rng::seed_from_u64(73);
        assert_eq!(
            agent.act(&s).unwrap(),
            loaded.act(&s, true, &mut r).unwrap()
        );
        std::fs::remove_file(&path).unwrap();
    }
}
