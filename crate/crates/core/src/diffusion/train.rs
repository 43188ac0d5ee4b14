//! Masked score-matching training for the diffusion world model.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{extract_segments, ConditioningTuple, NormStats, OfflineDataset};
use crate::diffusion::denoiser::{CondBatch, Denoiser, DenoiserConfig};
use crate::diffusion::normalize_flat_segment;
use crate::diffusion::schedule::{forward_noising, NoiseSchedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::nn::{load_checkpoint, save_checkpoint, AdamState, EmaState, ParamStore};
use crate::rng::Rng;

/// All knobs for one diffusion training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionTrainConfig {
    pub horizon: usize,
    pub k_steps: usize,
    pub schedule: ScheduleKind,
    pub width: usize,
    pub blocks: usize,
    pub kernel: usize,
    pub time_dim: usize,
    pub proj_dim: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub p_null: f64,
    pub ema_decay: f64,
    pub gamma: f64,
}

impl Default for DiffusionTrainConfig {
    fn default() -> Self {
        DiffusionTrainConfig {
            horizon: 7,
            k_steps: 5,
            schedule: ScheduleKind::Linear {
                beta_start: 0.1,
                beta_end: 0.5,
            },
            width: 32,
            blocks: 3,
            kernel: 3,
            time_dim: 16,
            proj_dim: 16,
            lr: 1e-3,
            batch_size: 64,
            steps: 50_000,
            p_null: 0.25,
            ema_decay: 0.995,
            gamma: 0.99,
        }
    }
}

/// Everything synthesis needs besides the weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiffusionMeta {
    pub denoiser: DenoiserConfig,
    pub k_steps: usize,
    pub schedule: ScheduleKind,
    pub gamma: f64,
    pub stats: NormStats,
    pub rtg_scale: f64,
    /// Largest conditioning return-to-go seen in training data.
    pub g_max: f64,
}

impl DiffusionMeta {
    /// Data-driven evaluation return-to-go: 0.9 x the best in-support value.
    pub fn g_default(&self) -> f64 {
        0.9 * self.g_max
    }
}

pub struct DiffusionModel {
    pub denoiser: Denoiser,
    pub store: ParamStore,
}

impl DiffusionModel {
    pub fn new(config: &DenoiserConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = Rng::derive(seed, "dwm-init");
        let denoiser = Denoiser::new(&mut store, config, &mut rng);
        DiffusionModel { denoiser, store }
    }
}

/// Trained model bundle: online weights, EMA shadow, schedule and metadata.
pub struct TrainedDiffusion {
    pub model: DiffusionModel,
    pub ema: EmaState,
    pub schedule: NoiseSchedule,
    pub meta: DiffusionMeta,
    pub step: u64,
}

impl TrainedDiffusion {
    /// Store the model holding EMA weights for inference.
    pub fn ema_store(&self) -> Result<ParamStore> {
        self.ema.shadow_store(&self.model.store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(
            path,
            "diffusion",
            serde_json::to_value(&self.meta)?,
            self.step,
            &self.model.store,
            Some(&self.ema),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = load_checkpoint(path)?;
        if ck.kind != "diffusion" {
            return Err(Error::Format(format!(
                "checkpoint kind `{}` is not a diffusion model",
                ck.kind
            )));
        }
        let meta: DiffusionMeta = serde_json::from_value(ck.spec.clone())?;
        let mut model = DiffusionModel::new(&meta.denoiser, 0);
        ck.restore_into(&mut model.store)?;
        let shadow = ck
            .ema
            .clone()
            .ok_or_else(|| Error::Format("diffusion checkpoint lacks EMA shadow".into()))?;
        let ema = EmaState::from_snapshot(0.995, shadow);
        let schedule = NoiseSchedule::new(meta.schedule, meta.k_steps)?;
        Ok(TrainedDiffusion {
            model,
            ema,
            schedule,
            meta,
            step: ck.step,
        })
    }
}

/// Loss value plus the fraction of the batch that trained unconditionally.
#[derive(Debug, Clone, Copy)]
pub struct LossStats {
    pub loss: f64,
    pub null_fraction: f64,
}

/// One batch of the masked denoising loss: per sample draw a uniform
/// timestep, Gaussian noise and a Bernoulli mask, predict the noise from the
/// noised segment and the (possibly nulled) condition, and return the batch
/// mean of the squared-error terms. Gradients are accumulated into the store.
///
/// `x0` values and condition states must already be standardized.
pub fn training_loss(
    denoiser: &Denoiser,
    store: &mut ParamStore,
    schedule: &NoiseSchedule,
    batch: &[(&[f64], &ConditioningTuple)],
    p_null: f64,
    rng: &mut Rng,
) -> Result<LossStats> {
    if batch.is_empty() {
        return Err(Error::Config("empty diffusion batch".into()));
    }
    let n = batch.len();
    let cfg = &denoiser.config;
    let dim = cfg.sample_dim();

    let mut xk = vec![0.0; n * dim];
    let mut eps = vec![0.0; n * dim];
    let mut ks = vec![0usize; n];
    let mut states = vec![0.0; n * cfg.d_s];
    let mut actions = vec![0.0; n * cfg.d_a];
    let mut rtgs = vec![0.0; n];
    let mut nulls = vec![false; n];

    for (r, (x0, cond)) in batch.iter().enumerate() {
        if x0.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "segment width {} != {dim}",
                x0.len()
            )));
        }
        let k = 1 + rng.below(schedule.k_steps as u64) as usize;
        ks[r] = k;
        let e = &mut eps[r * dim..(r + 1) * dim];
        rng.fill_normal(e);
        let noised = forward_noising(x0, k, e, schedule)?;
        xk[r * dim..(r + 1) * dim].copy_from_slice(&noised);
        nulls[r] = rng.uniform() < p_null;
        states[r * cfg.d_s..(r + 1) * cfg.d_s].copy_from_slice(&cond.state);
        actions[r * cfg.d_a..(r + 1) * cfg.d_a].copy_from_slice(&cond.action);
        rtgs[r] = cond.rtg;
    }

    let cond_batch = CondBatch {
        states: &states,
        actions: &actions,
        rtgs: &rtgs,
        nulls: &nulls,
    };
    let (pred, cache) = denoiser.forward(store, &xk, &ks, &cond_batch)?;
    let mut loss = 0.0;
    let mut upstream = vec![0.0; n * dim];
    for i in 0..n * dim {
        let d = pred[i] - eps[i];
        loss += d * d;
        upstream[i] = 2.0 * d / n as f64;
    }
    loss /= n as f64;
    denoiser.backward(store, &cache, &upstream)?;
    Ok(LossStats {
        loss,
        null_fraction: nulls.iter().filter(|&&b| b).count() as f64 / n as f64,
    })
}

/// Trains a diffusion world model on the (raw) dataset; standardization
/// happens internally from the dataset's stored stats.
pub fn train_diffusion(
    dataset: &OfflineDataset,
    cfg: &DiffusionTrainConfig,
    seed: u64,
    mut on_step: impl FnMut(u64, f64),
) -> Result<TrainedDiffusion> {
    if dataset.normalized {
        return Err(Error::State(
            "diffusion trainer expects a raw dataset; it standardizes internally".into(),
        ));
    }
    let schedule = NoiseSchedule::new(cfg.schedule, cfg.k_steps)?;
    let segments = extract_segments(dataset, cfg.horizon, cfg.gamma)?;
    if segments.is_empty() {
        return Err(Error::DataIntegrity(
            "no training segments for the requested horizon".into(),
        ));
    }
    let stats = dataset.norm_stats.clone();
    let denoiser_cfg = DenoiserConfig {
        d_s: dataset.d_s,
        d_a: dataset.d_a,
        horizon: cfg.horizon,
        width: cfg.width,
        blocks: cfg.blocks,
        kernel: cfg.kernel,
        time_dim: cfg.time_dim,
        proj_dim: cfg.proj_dim,
    };
    let mut model = DiffusionModel::new(&denoiser_cfg, seed);
    let mut adam = AdamState::new(&model.store, cfg.lr);
    let mut ema = EmaState::new(&model.store, cfg.ema_decay);

    // Pre-standardize all segments and condition states once.
    let mut g_max = f64::NEG_INFINITY;
    let prepared: Vec<(Vec<f64>, ConditioningTuple)> = segments
        .iter()
        .map(|(cond, seg)| {
            g_max = g_max.max(cond.rtg);
            let flat = normalize_flat_segment(&seg.to_flat(), cfg.horizon, dataset.d_s, &stats);
            let cond = ConditioningTuple {
                state: stats.normalize_state(&cond.state),
                action: cond.action.clone(),
                rtg: cond.rtg,
                null_flag: false,
            };
            (flat, cond)
        })
        .collect();

    let mut rng = Rng::derive(seed, "dwm-train");
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let i = rng.below(prepared.len() as u64) as usize;
            batch.push((prepared[i].0.as_slice(), &prepared[i].1));
        }
        let stats = training_loss(
            &model.denoiser,
            &mut model.store,
            &schedule,
            &batch,
            cfg.p_null,
            &mut rng,
        )?;
        adam.step(&mut model.store)?;
        ema.update(&model.store);
        on_step(step, stats.loss);
    }

    Ok(TrainedDiffusion {
        model,
        ema,
        schedule,
        meta: DiffusionMeta {
            denoiser: denoiser_cfg,
            k_steps: cfg.k_steps,
            schedule: cfg.schedule,
            gamma: cfg.gamma,
            stats,
            rtg_scale: dataset.rtg_scale,
            g_max,
        },
        step: cfg.steps,
    })
}
