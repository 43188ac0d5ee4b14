//! Inverse dynamics model: a diagonal Gaussian over the action that produced
//! an observed state transition, conditioned on a short history context.
//!
//! Trained by maximum likelihood on real annotated windows only, then applied
//! to diffusion-generated state sequences to fill in the missing actions.
//! Inference returns the Gaussian mean, so synthetic datasets are
//! reproducible; sampling is available behind a flag for ablations.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{OfflineDataset, TrajectorySegment, Transition};
use crate::error::{Error, Result};
use crate::nn::{
    load_checkpoint, save_checkpoint, Activation, AdamState, Mlp, MlpSpec, ParamStore,
};
use crate::rng::Rng;

pub const LOGSTD_MIN: f64 = -5.0;
pub const LOGSTD_MAX: f64 = 2.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IdmConfig {
    /// Length of the historical state context `m`.
    pub context_len: usize,
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: u64,
    /// Draw actions from the Gaussian instead of returning its mean.
    pub sample_actions: bool,
}

impl Default for IdmConfig {
    fn default() -> Self {
        IdmConfig {
            context_len: 1,
            hidden: 1024,
            lr: 6e-4,
            batch_size: 64,
            steps: 20_000,
            sample_actions: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdmMeta {
    pub config: IdmConfig,
    pub d_s: usize,
    pub d_a: usize,
}

/// Two independent MLPs predict the mean (tanh-squashed) and the clamped
/// log-std of the action distribution from `(m + 2) * d_s` stacked states.
pub struct IdmModel {
    pub meta: IdmMeta,
    mean_net: Mlp,
    logstd_net: Mlp,
    pub store: ParamStore,
}

impl IdmModel {
    pub fn new(meta: IdmMeta, seed: u64) -> Self {
        let input_dim = (meta.config.context_len + 2) * meta.d_s;
        let mut store = ParamStore::new();
        let mut rng = Rng::derive(seed, "idm-init");
        let mean_net = Mlp::new(
            &mut store,
            "idm.mean",
            &MlpSpec::new(
                vec![input_dim, meta.config.hidden, meta.d_a],
                Activation::Relu,
                Activation::Tanh,
            ),
            &mut rng,
        );
        let logstd_net = Mlp::new(
            &mut store,
            "idm.logstd",
            &MlpSpec::new(
                vec![input_dim, meta.config.hidden, meta.d_a],
                Activation::Relu,
                Activation::Identity,
            ),
            &mut rng,
        );
        IdmModel {
            meta,
            mean_net,
            logstd_net,
            store,
        }
    }

    pub fn input_dim(&self) -> usize {
        (self.meta.config.context_len + 2) * self.meta.d_s
    }

    /// Mean negative log likelihood of the batch actions; gradients
    /// accumulated into the store. Inputs are rows of stacked
    /// `(context..., s_t, s_{t+1})` states; targets are the executed actions.
    pub fn nll_loss(&mut self, inputs: &[f64], targets: &[f64], n: usize) -> Result<f64> {
        if n == 0 {
            return Err(Error::Config("empty IDM batch".into()));
        }
        let d_a = self.meta.d_a;
        let (mean, mean_cache) = self.mean_net.forward(&self.store, inputs, n)?;
        let (logstd_raw, logstd_cache) = self.logstd_net.forward(&self.store, inputs, n)?;

        let half_ln_2pi = 0.5 * (std::f64::consts::TAU).ln();
        let mut loss = 0.0;
        let mut d_mean = vec![0.0; n * d_a];
        let mut d_logstd = vec![0.0; n * d_a];
        for i in 0..n * d_a {
            let ls = logstd_raw[i].clamp(LOGSTD_MIN, LOGSTD_MAX);
            let inv_var = (-2.0 * ls).exp();
            let diff = targets[i] - mean[i];
            loss += ls + half_ln_2pi + 0.5 * diff * diff * inv_var;
            d_mean[i] = -diff * inv_var / n as f64;
            // Clamp gate: no gradient outside the bounds.
            if logstd_raw[i] > LOGSTD_MIN && logstd_raw[i] < LOGSTD_MAX {
                d_logstd[i] = (1.0 - diff * diff * inv_var) / n as f64;
            }
        }
        loss /= n as f64;
        self.mean_net
            .backward(&mut self.store, &mean_cache, &d_mean, true)?;
        self.logstd_net
            .backward(&mut self.store, &logstd_cache, &d_logstd, true)?;
        Ok(loss)
    }

    /// Deterministic action inference: the Gaussian mean, already in [-1, 1].
    pub fn infer_action(&self, context: &[f64], s_t: &[f64], s_next: &[f64]) -> Result<Vec<f64>> {
        let input = self.stack_window(context, s_t, s_next)?;
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::DataIntegrity("non-finite IDM input".into()));
        }
        let (mean, _) = self.mean_net.forward(&self.store, &input, 1)?;
        Ok(mean)
    }

    /// Draws an action from the Gaussian (ablation mode).
    pub fn sample_action(
        &self,
        context: &[f64],
        s_t: &[f64],
        s_next: &[f64],
        rng: &mut Rng,
    ) -> Result<Vec<f64>> {
        let input = self.stack_window(context, s_t, s_next)?;
        let (mean, _) = self.mean_net.forward(&self.store, &input, 1)?;
        let (logstd_raw, _) = self.logstd_net.forward(&self.store, &input, 1)?;
        Ok(mean
            .iter()
            .zip(&logstd_raw)
            .map(|(m, ls)| {
                (m + ls.clamp(LOGSTD_MIN, LOGSTD_MAX).exp() * rng.normal()).clamp(-1.0, 1.0)
            })
            .collect())
    }

    fn stack_window(&self, context: &[f64], s_t: &[f64], s_next: &[f64]) -> Result<Vec<f64>> {
        let d_s = self.meta.d_s;
        let m = self.meta.config.context_len;
        if context.len() != m * d_s || s_t.len() != d_s || s_next.len() != d_s {
            return Err(Error::DimensionMismatch(format!(
                "IDM window: context {} (want {}), s {}, s' {}",
                context.len(),
                m * d_s,
                s_t.len(),
                s_next.len()
            )));
        }
        let mut input = Vec::with_capacity((m + 2) * d_s);
        input.extend_from_slice(context);
        input.extend_from_slice(s_t);
        input.extend_from_slice(s_next);
        Ok(input)
    }

    pub fn save(&self, path: &Path, step: u64) -> Result<()> {
        save_checkpoint(
            path,
            "idm",
            serde_json::to_value(&self.meta)?,
            step,
            &self.store,
            None,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = load_checkpoint(path)?;
        if ck.kind != "idm" {
            return Err(Error::Format(format!(
                "checkpoint kind `{}` is not an inverse dynamics model",
                ck.kind
            )));
        }
        let meta: IdmMeta = serde_json::from_value(ck.spec.clone())?;
        let mut model = IdmModel::new(meta, 0);
        ck.restore_into(&mut model.store)?;
        Ok(model)
    }
}

/// Supervised windows from the real dataset; windows never cross an episode
/// boundary.
pub struct IdmWindows {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub n: usize,
    input_dim: usize,
    d_a: usize,
}

impl IdmWindows {
    pub fn build(dataset: &OfflineDataset, context_len: usize) -> Result<Self> {
        let d_s = dataset.d_s;
        let d_a = dataset.d_a;
        let m = context_len;
        let input_dim = (m + 2) * d_s;
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        let mut n = 0usize;
        for ep in &dataset.episodes {
            let len = ep.len();
            // Need s_{t-m..t-1}, s_t, s_{t+1} and an action label a_t.
            if len < m + 2 {
                continue;
            }
            for t in m..=len - 2 {
                for c in 0..m {
                    inputs.extend_from_slice(&ep.states[t - m + c]);
                }
                inputs.extend_from_slice(&ep.states[t]);
                inputs.extend_from_slice(&ep.states[t + 1]);
                targets.extend_from_slice(&ep.actions[t]);
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::DataIntegrity(
                "no IDM windows: episodes shorter than context".into(),
            ));
        }
        Ok(IdmWindows {
            inputs,
            targets,
            n,
            input_dim,
            d_a,
        })
    }

    pub fn gather(&self, indices: &[usize], inputs: &mut Vec<f64>, targets: &mut Vec<f64>) {
        inputs.clear();
        targets.clear();
        for &i in indices {
            inputs.extend_from_slice(&self.inputs[i * self.input_dim..(i + 1) * self.input_dim]);
            targets.extend_from_slice(&self.targets[i * self.d_a..(i + 1) * self.d_a]);
        }
    }
}

/// Trains an IDM on the real dataset by maximum likelihood.
pub fn train_idm(
    dataset: &OfflineDataset,
    cfg: &IdmConfig,
    seed: u64,
    mut on_step: impl FnMut(u64, f64),
) -> Result<IdmModel> {
    if dataset.synthetic {
        return Err(Error::Config(
            "the inverse dynamics model trains on real data only".into(),
        ));
    }
    let windows = IdmWindows::build(dataset, cfg.context_len)?;
    let meta = IdmMeta {
        config: cfg.clone(),
        d_s: dataset.d_s,
        d_a: dataset.d_a,
    };
    let mut model = IdmModel::new(meta, seed);
    let mut adam = AdamState::new(&model.store, cfg.lr);
    let mut rng = Rng::derive(seed, "idm-train");
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for step in 0..cfg.steps {
        let indices: Vec<usize> = (0..cfg.batch_size)
            .map(|_| rng.below(windows.n as u64) as usize)
            .collect();
        windows.gather(&indices, &mut inputs, &mut targets);
        let loss = model.nll_loss(&inputs, &targets, cfg.batch_size)?;
        adam.step(&mut model.store)?;
        on_step(step, loss);
    }
    Ok(model)
}

/// Builds the `H+1` transitions for one anchor: the real `(s_t, a_t)` with
/// the generated first reward and next state, then one transition per
/// generated step with the action inferred from the generated sequence.
/// Every transition is flagged synthetic (the first one's reward is
/// generated too).
pub fn complete_segment(
    model: &IdmModel,
    anchor_state: &[f64],
    anchor_action: &[f64],
    seg: &TrajectorySegment,
) -> Result<Vec<Transition>> {
    let h = seg.horizon;
    if seg.states.len() != h + 1 || seg.rewards.len() != h + 1 {
        return Err(Error::DimensionMismatch(format!(
            "segment has {} states / {} rewards for horizon {h}",
            seg.states.len(),
            seg.rewards.len()
        )));
    }
    let m = model.meta.config.context_len;
    let d_s = model.meta.d_s;
    let mut out = Vec::with_capacity(h + 1);
    out.push(Transition {
        state: anchor_state.to_vec(),
        action: anchor_action.to_vec(),
        reward: seg.rewards[0],
        next_state: seg.states[0].clone(),
        synthetic: true,
    });
    // Full state sequence seen by the IDM: real anchor then generated states.
    let mut sequence: Vec<&[f64]> = Vec::with_capacity(h + 2);
    sequence.push(anchor_state);
    for s in &seg.states {
        sequence.push(s);
    }
    let mut context = vec![0.0; m * d_s];
    for step in 1..=h {
        // Action at offset `step`: current state is sequence[step], next is
        // sequence[step + 1]; history is the preceding states, left-padded by
        // repeating the oldest available one.
        for c in 0..m {
            let idx = (step as isize - (m - c) as isize).max(0) as usize;
            context[c * d_s..(c + 1) * d_s].copy_from_slice(sequence[idx]);
        }
        let action = model.infer_action(&context, sequence[step], sequence[step + 1])?;
        out.push(Transition {
            state: sequence[step].to_vec(),
            action,
            reward: seg.rewards[step],
            next_state: sequence[step + 1].to_vec(),
            synthetic: true,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamId;

    fn zeroed_model(d_s: usize, d_a: usize, hidden: usize) -> IdmModel {
        let meta = IdmMeta {
            config: IdmConfig {
                hidden,
                ..IdmConfig::default()
            },
            d_s,
            d_a,
        };
        let mut model = IdmModel::new(meta, 1);
        for i in 0..model.store.n_tensors() {
            model
                .store
                .value_mut(ParamId(i))
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        model
    }

    #[test]
    fn nll_at_mean_with_unit_std_is_half_log_2pi_per_dim() {
        // Zero weights: mean = tanh(0) = 0, log-std = 0 -> sigma = 1.
        let mut model = zeroed_model(4, 2, 8);
        let input = vec![0.5; 12];
        let target = vec![0.0, 0.0];
        let loss = model.nll_loss(&input, &target, 1).unwrap();
        let expected = 2.0 / 2.0 * (std::f64::consts::TAU).ln();
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
    }

    #[test]
    fn nll_grows_quadratically_with_perturbation() {
        let mut model = zeroed_model(4, 2, 8);
        let input = vec![0.5; 12];
        let base = model.nll_loss(&input, &[0.0, 0.0], 1).unwrap();
        model.store.zero_grads();
        let delta = 0.3;
        let shifted = model.nll_loss(&input, &[delta, 0.0], 1).unwrap();
        assert!((shifted - base - delta * delta / 2.0).abs() < 1e-12);
    }

    #[test]
    fn identical_batch_equals_single_sample_loss() {
        let meta = IdmMeta {
            config: IdmConfig {
                hidden: 8,
                ..IdmConfig::default()
            },
            d_s: 3,
            d_a: 2,
        };
        let mut model = IdmModel::new(meta, 3);
        let window: Vec<f64> = (0..9).map(|i| (i as f64 * 0.31).sin()).collect();
        let action = vec![0.2, -0.4];
        let single = model.nll_loss(&window, &action, 1).unwrap();
        model.store.zero_grads();
        let batch_in: Vec<f64> = window.repeat(5);
        let batch_tg: Vec<f64> = action.repeat(5);
        let batch = model.nll_loss(&batch_in, &batch_tg, 5).unwrap();
        assert!((single - batch).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let meta = IdmMeta {
            config: IdmConfig {
                hidden: 8,
                ..IdmConfig::default()
            },
            d_s: 2,
            d_a: 2,
        };
        let mut model = IdmModel::new(meta, 9);
        let mut rng = Rng::seed_from_u64(40);
        let n = 3;
        let inputs: Vec<f64> = (0..n * 6).map(|_| rng.normal()).collect();
        let targets: Vec<f64> = (0..n * 2).map(|_| rng.uniform_range(-1.0, 1.0)).collect();

        model.store.zero_grads();
        let _ = model.nll_loss(&inputs, &targets, n).unwrap();
        let analytic: Vec<Vec<f64>> = (0..model.store.n_tensors())
            .map(|i| model.store.grad(ParamId(i)).to_vec())
            .collect();

        let h = 1e-5;
        for ti in 0..model.store.n_tensors() {
            for j in 0..model.store.value(ParamId(ti)).len() {
                let orig = model.store.value(ParamId(ti))[j];
                model.store.value_mut(ParamId(ti))[j] = orig + h;
                let lp = model.nll_loss(&inputs, &targets, n).unwrap();
                model.store.zero_grads();
                model.store.value_mut(ParamId(ti))[j] = orig - h;
                let lm = model.nll_loss(&inputs, &targets, n).unwrap();
                model.store.zero_grads();
                model.store.value_mut(ParamId(ti))[j] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let a = analytic[ti][j];
                let denom = a.abs().max(fd.abs());
                if denom < 1e-7 {
                    continue;
                }
                assert!(
                    (a - fd).abs() / denom < 1e-4,
                    "param {}[{j}]: {a} vs {fd}",
                    model.store.name(ParamId(ti))
                );
            }
        }
    }

    #[test]
    fn inference_is_deterministic_and_bounded() {
        let meta = IdmMeta {
            config: IdmConfig {
                hidden: 16,
                ..IdmConfig::default()
            },
            d_s: 4,
            d_a: 2,
        };
        let model = IdmModel::new(meta, 4);
        assert_eq!(model.input_dim(), 12); // (m + 2) * d_s with m = 1
        let ctx = vec![0.1; 4];
        let s = vec![0.2; 4];
        let s2 = vec![0.3; 4];
        let a1 = model.infer_action(&ctx, &s, &s2).unwrap();
        let a2 = model.infer_action(&ctx, &s, &s2).unwrap();
        assert_eq!(a1, a2);
        assert!(a1.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn complete_segment_contract() {
        let meta = IdmMeta {
            config: IdmConfig {
                hidden: 8,
                ..IdmConfig::default()
            },
            d_s: 2,
            d_a: 1,
        };
        let model = IdmModel::new(meta, 5);
        let h = 7;
        let mut rng = Rng::seed_from_u64(50);
        let states: Vec<Vec<f64>> = (0..=h).map(|_| vec![rng.normal(), rng.normal()]).collect();
        let rewards: Vec<f64> = (0..=h).map(|_| rng.normal()).collect();
        let seg = TrajectorySegment::new(states, rewards, h).unwrap();
        let anchor_s = vec![0.7, -0.7];
        let anchor_a = vec![0.123456789];
        let transitions = complete_segment(&model, &anchor_s, &anchor_a, &seg).unwrap();
        assert_eq!(transitions.len(), h + 1);
        // The anchor action passes through bit-exactly.
        assert_eq!(transitions[0].action, anchor_a);
        assert_eq!(transitions[0].state, anchor_s);
        // State chaining.
        for w in transitions.windows(2) {
            assert_eq!(w[0].next_state, w[1].state);
        }
        assert!(transitions.iter().all(|t| t.synthetic));
    }

    #[test]
    fn windows_respect_episode_boundaries() {
        use crate::data::{Episode, Tier};
        let ep = |n: usize| {
            let states = (0..n).map(|i| vec![i as f64]).collect();
            let actions = (0..n - 1).map(|i| vec![i as f64 * 0.1]).collect();
            let rewards = vec![0.0; n - 1];
            Episode {
                states,
                actions,
                rewards,
            }
        };
        let ds = OfflineDataset::from_episodes(vec![ep(5), ep(3)], Tier::Medium).unwrap();
        let w = IdmWindows::build(&ds, 1).unwrap();
        // Episode of 5 states: t in 1..=3 -> 3 windows; episode of 3: t=1 -> 1.
        assert_eq!(w.n, 4);
        // First window of episode 1 must be (s0, s1, s2) with label a_1.
        assert_eq!(&w.inputs[0..3], &[0.0, 1.0, 2.0]);
        assert_eq!(w.targets[0], 0.1);
    }
}
