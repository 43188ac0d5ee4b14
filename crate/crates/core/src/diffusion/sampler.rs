//! Classifier-free guided reverse sampling over a strided subset of the
//! training steps, with a temperature that scales every stochastic injection.

use serde::{Deserialize, Serialize};

use crate::data::{ConditioningTuple, NormStats, TrajectorySegment};
use crate::diffusion::denoiser::{CondBatch, Denoiser};
use crate::diffusion::schedule::NoiseSchedule;
use crate::diffusion::{denormalize_flat_segment};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::rng::Rng;

/// Guidance and sampling knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuidanceConfig {
    /// Guidance weight in `eps_null + (1 + omega) * (eps_cond - eps_null)`.
    pub omega: f64,
    /// Probability of masking the condition during training.
    pub p_null: f64,
    /// Reduced inference steps (out of the schedule's training steps).
    pub n_infer: usize,
    /// Multiplies every noise injection during reverse sampling; 0 makes the
    /// sampler a pure function of (parameters, condition).
    pub alpha_temp: f64,
    /// Conditioning return-to-go used at synthesis time (already divided by
    /// the dataset scale). `None` selects the data-driven default.
    pub g_eval: Option<f64>,
    /// Clamp on the predicted clean sample (in standardized units) applied at
    /// every reverse step; 0 disables. Bounds the error amplification of the
    /// high-noise steps.
    pub x0_clip: f64,
    /// Reverse update form. `false`: DDPM posterior generalized to strides
    /// (keeps the predicted noise direction). `true`: re-noise the predicted
    /// clean sample to the next level with fresh temperature-scaled noise,
    /// which drops the carried direction term.
    pub renoise: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            omega: 1.0,
            p_null: 0.25,
            n_infer: 3,
            alpha_temp: 0.5,
            g_eval: None,
            x0_clip: 5.0,
            renoise: false,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self, k_steps: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_null) {
            return Err(Error::Config(format!("p_null {} not in [0,1]", self.p_null)));
        }
        if self.n_infer == 0 || self.n_infer > k_steps {
            return Err(Error::Config(format!(
                "n_infer {} not in 1..={k_steps}",
                self.n_infer
            )));
        }
        if self.alpha_temp < 0.0 {
            return Err(Error::Config("alpha_temp must be >= 0".into()));
        }
        Ok(())
    }
}

/// Evenly strided descending step subset: `K=5, N=3 -> [5, 3, 1]`.
pub fn inference_steps(k_steps: usize, n_infer: usize) -> Vec<usize> {
    if n_infer <= 1 {
        return vec![k_steps];
    }
    let n = n_infer.min(k_steps);
    let mut steps = Vec::with_capacity(n);
    for i in 0..n {
        let t = k_steps as f64 - (i as f64 * (k_steps - 1) as f64 / (n - 1) as f64);
        let t = t.round() as usize;
        if steps.last() != Some(&t) {
            steps.push(t.max(1));
        }
    }
    steps
}

/// Guided noise prediction: exactly two denoiser evaluations combined as
/// `eps_null + (1 + omega) * (eps_cond - eps_null)`. The collapse cases
/// `omega = 0` and `omega = -1` return the corresponding branch bit-exactly.
pub fn cfg_epsilon(
    denoiser: &Denoiser,
    store: &ParamStore,
    x: &[f64],
    k: usize,
    state_norm: &[f64],
    action: &[f64],
    rtg: f64,
    omega: f64,
) -> Result<Vec<f64>> {
    let ks = [k];
    let cond = CondBatch {
        states: state_norm,
        actions: action,
        rtgs: &[rtg],
        nulls: &[false],
    };
    let (eps_cond, _) = denoiser.forward(store, x, &ks, &cond)?;
    let null = CondBatch {
        states: state_norm,
        actions: action,
        rtgs: &[rtg],
        nulls: &[true],
    };
    let (eps_null, _) = denoiser.forward(store, x, &ks, &null)?;
    if omega == 0.0 {
        return Ok(eps_cond);
    }
    if omega == -1.0 {
        return Ok(eps_null);
    }
    Ok(eps_null
        .iter()
        .zip(&eps_cond)
        .map(|(u, c)| u + (1.0 + omega) * (c - u))
        .collect())
}

/// Reverse diffusion from a conditioning tuple to a trajectory segment in
/// environment units.
///
/// The condition's state is in raw environment units (standardized
/// internally); `cond.rtg` must already be divided by the dataset scale.
/// Noise injections (including the initial draw) are scaled by
/// `guid.alpha_temp`; the posterior update is the DDPM posterior generalized
/// to strided steps.
pub fn sample_segment(
    denoiser: &Denoiser,
    ema_store: &ParamStore,
    schedule: &NoiseSchedule,
    cond: &ConditioningTuple,
    guid: &GuidanceConfig,
    stats: &NormStats,
    rng: &mut Rng,
) -> Result<TrajectorySegment> {
    guid.validate(schedule.k_steps)?;
    let cfg = &denoiser.config;
    let dim = cfg.sample_dim();
    let state_norm = stats.normalize_state(&cond.state);
    let g = guid.g_eval.unwrap_or(cond.rtg);

    let mut x = vec![0.0; dim];
    if guid.alpha_temp != 0.0 {
        for v in &mut x {
            *v = guid.alpha_temp * rng.normal();
        }
    }

    let steps = inference_steps(schedule.k_steps, guid.n_infer);
    let mut x0_pred = vec![0.0; dim];
    for (idx, &t) in steps.iter().enumerate() {
        let eps_hat = cfg_epsilon(
            denoiser,
            ema_store,
            &x,
            t,
            &state_norm,
            &cond.action,
            g,
            guid.omega,
        )?;
        let ab_t = schedule.alpha_bar(t);
        let t_prev = steps.get(idx + 1).copied().unwrap_or(0);
        let ab_prev = schedule.alpha_bar(t_prev);
        let sq_ab_t = ab_t.sqrt();
        let sq_1m_ab_t = (1.0 - ab_t).sqrt();
        for (x0, (xv, e)) in x0_pred.iter_mut().zip(x.iter().zip(&eps_hat)) {
            *x0 = (xv - sq_1m_ab_t * e) / sq_ab_t;
            if guid.x0_clip > 0.0 {
                *x0 = x0.clamp(-guid.x0_clip, guid.x0_clip);
            }
        }
        let sq_ab_prev = ab_prev.sqrt();
        if guid.renoise {
            // Fresh forward noising of the prediction to the next level.
            let noise_std = (1.0 - ab_prev).sqrt();
            for (xv, x0) in x.iter_mut().zip(&x0_pred) {
                *xv = sq_ab_prev * x0;
            }
            if t_prev != 0 && guid.alpha_temp != 0.0 {
                for xv in &mut x {
                    *xv += guid.alpha_temp * noise_std * rng.normal();
                }
            }
        } else {
            // DDPM posterior std generalized to strides (DDIM eta = 1).
            let sigma = if t_prev == 0 {
                0.0
            } else {
                ((1.0 - ab_prev) / (1.0 - ab_t) * (1.0 - ab_t / ab_prev)).sqrt()
            };
            let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
            for (xv, (x0, e)) in x.iter_mut().zip(x0_pred.iter().zip(&eps_hat)) {
                *xv = sq_ab_prev * x0 + dir * e;
            }
            if sigma > 0.0 && guid.alpha_temp != 0.0 {
                for xv in &mut x {
                    *xv += guid.alpha_temp * sigma * rng.normal();
                }
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SamplingFault(format!(
                "non-finite sample value at step {t}"
            )));
        }
    }

    let denorm = denormalize_flat_segment(&x, cfg.horizon, cfg.d_s, stats);
    TrajectorySegment::from_flat(&denorm, cfg.horizon, cfg.d_s)
}
