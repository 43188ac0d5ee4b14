//! One full experiment from a `RunConfig`: dataset, world model, synthesis,
//! agent training and evaluation, with the standard run-directory layout:
//! `config.json`, `metrics.jsonl`, `report.json`, `timings.json`, `ckpt/`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agents::LossRecord;
use crate::data::{dataset_from_chains, save_dataset, OfflineDataset, Tier, Transition};
use crate::diffusion::{train_diffusion, TrainedDiffusion};
use crate::envs::{env_spec, generate_dataset, make_env};
use crate::error::{Error, Result};
use crate::idm::{train_idm, IdmModel};
use crate::pipeline::config::{DataSource, RunConfig};
use crate::pipeline::eval::{evaluate, EvalPolicy, EvalReport};
use crate::pipeline::synthesis::{synthesize_dataset, SynthesisConfig};
use crate::pipeline::training::{train_agent_interleaved, train_agent_on};
use crate::rng::derive_seed;

/// Wall-clock accounting, written to `timings.json` (kept out of
/// `report.json` so reports stay bit-reproducible).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunTimings {
    pub dwm_train_seconds: f64,
    pub idm_train_seconds: f64,
    pub synthesis_seconds: f64,
    pub agent_train_seconds: f64,
    pub eval_seconds: f64,
}

/// Append-only JSONL telemetry stream for one run directory.
pub struct MetricsWriter {
    w: std::io::BufWriter<std::fs::File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(MetricsWriter {
            w: std::io::BufWriter::with_capacity(1 << 20, std::fs::File::create(path)?),
        })
    }

    pub fn log_loss(&mut self, phase: &str, iter: u64, loss: f64) {
        let _ = writeln!(self.w, r#"{{"phase":"{phase}","iter":{iter},"loss":{loss}}}"#);
    }

    pub fn log_agent(&mut self, iter: u64, record: &LossRecord) {
        if let Ok(js) = serde_json::to_string(record) {
            let _ = writeln!(
                self.w,
                r#"{{"phase":"agent","iter":{iter},"losses":{js}}}"#
            );
        }
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

/// The trained generative side of a run: real dataset, diffusion world model
/// and inverse dynamics model. Shareable read-only across agent variants.
pub struct WorldModelStack {
    pub dataset: OfflineDataset,
    pub dwm: TrainedDiffusion,
    pub idm: IdmModel,
}

/// Builds dataset, diffusion model and IDM from the per-component seed
/// streams of `cfg.seed`.
pub fn build_world_model(
    cfg: &RunConfig,
    mut metrics: Option<&mut MetricsWriter>,
    timings: &mut RunTimings,
) -> Result<WorldModelStack> {
    let env = make_env(&cfg.env)?;
    let tier = Tier::parse(&cfg.tier)?;
    let dataset = generate_dataset(env.as_ref(), tier, cfg.n_episodes, derive_seed(cfg.seed, "data"))?;

    let t0 = Instant::now();
    let dwm = train_diffusion(
        &dataset,
        &cfg.diffusion,
        derive_seed(cfg.seed, "dwm"),
        |step, loss| {
            if let Some(m) = metrics.as_deref_mut() {
                m.log_loss("dwm", step, loss);
            }
        },
    )?;
    timings.dwm_train_seconds = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let idm = train_idm(
        &dataset,
        &cfg.idm,
        derive_seed(cfg.seed, "idm"),
        |step, loss| {
            if let Some(m) = metrics.as_deref_mut() {
                m.log_loss("idm", step, loss);
            }
        },
    )?;
    timings.idm_train_seconds = t1.elapsed().as_secs_f64();

    Ok(WorldModelStack { dataset, dwm, idm })
}

pub fn synthesis_config(cfg: &RunConfig) -> SynthesisConfig {
    SynthesisConfig {
        t_divisor: cfg.synthesis.t_divisor,
        omega: cfg.synthesis.omega,
        alpha_temp: cfg.synthesis.alpha_temp,
        n_infer: cfg.synthesis.n_infer,
        g_eval: cfg.synthesis.g_eval,
        x0_clip: cfg.synthesis.x0_clip,
        renoise: cfg.synthesis.renoise,
        seed: derive_seed(cfg.seed, "synth"),
        threads: cfg.threads,
    }
}

/// Runs the full pipeline into `out_dir`. A pre-built world-model stack can
/// be supplied to share across variants; it must have been built from the
/// same env/tier/diffusion/idm settings.
pub fn run_full(
    cfg: &RunConfig,
    out_dir: &Path,
    shared_stack: Option<Arc<WorldModelStack>>,
) -> Result<EvalReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let ckpt_dir = out_dir.join("ckpt");
    std::fs::create_dir_all(&ckpt_dir)?;
    std::fs::write(out_dir.join("config.json"), cfg.to_json_pretty()?)?;
    let mut metrics = MetricsWriter::create(&out_dir.join("metrics.jsonl"))?;
    let mut timings = RunTimings::default();

    let source = cfg.synthesis.source;
    let needs_world_model = source == DataSource::Dawm;

    // Buffer assembly.
    let (buffer, method): (Vec<Transition>, String) = if needs_world_model {
        let stack = match shared_stack {
            Some(s) => s,
            None => Arc::new(build_world_model(cfg, Some(&mut metrics), &mut timings)?),
        };
        stack.dwm.save(&ckpt_dir.join("dwm.ck"))?;
        stack.idm.save(&ckpt_dir.join("idm.ck"), cfg.idm.steps)?;

        if cfg.synthesis.interleaved {
            // Literal per-anchor mode: synthesis and agent updates interleave,
            // so training happens here and the buffer is not materialized.
            let horizon = stack.dwm.meta.denoiser.horizon;
            let outer = cfg.agent.steps.div_ceil(horizon as u64 + 1);
            let t2 = Instant::now();
            let agent = train_agent_interleaved(
                &stack.dwm,
                &stack.idm,
                &stack.dataset,
                &cfg.agent,
                &synthesis_config(cfg),
                outer,
                derive_seed(cfg.seed, "agent"),
                |iter, record| metrics.log_agent(iter, record),
            )?;
            timings.agent_train_seconds = t2.elapsed().as_secs_f64();
            agent.save(&ckpt_dir.join("agent.ck"), cfg.agent.steps)?;
            let report = eval_and_write(
                cfg,
                out_dir,
                &agent,
                &format!("{}-dawm-interleaved", cfg.agent.kind.as_str()),
                &mut timings,
            )?;
            metrics.finish()?;
            return Ok(report);
        }

        let t2 = Instant::now();
        let outcome = synthesize_dataset(&stack.dwm, &stack.idm, &stack.dataset, &synthesis_config(cfg))?;
        timings.synthesis_seconds = t2.elapsed().as_secs_f64();
        let synthetic = dataset_from_chains(&outcome.chains, &stack.dataset)?;
        save_dataset(&synthetic, &out_dir.join("synthetic.ds"))?;
        let mut buffer = synthetic.transitions();
        if cfg.synthesis.mix_real {
            buffer.extend(stack.dataset.transitions());
        }
        let method = format!("{}-dawm", cfg.agent.kind.as_str());
        (buffer, method)
    } else {
        let env = make_env(&cfg.env)?;
        let tier = Tier::parse(&cfg.tier)?;
        let dataset =
            generate_dataset(env.as_ref(), tier, cfg.n_episodes, derive_seed(cfg.seed, "data"))?;
        let method = format!("{}-real", cfg.agent.kind.as_str());
        (dataset.transitions(), method)
    };

    let t3 = Instant::now();
    let agent = train_agent_on(
        &buffer,
        &cfg.agent,
        derive_seed(cfg.seed, "agent"),
        Some(&ckpt_dir),
        |iter, record| metrics.log_agent(iter, record),
    )?;
    timings.agent_train_seconds = t3.elapsed().as_secs_f64();
    agent.save(&ckpt_dir.join("agent.ck"), cfg.agent.steps)?;

    let report = eval_and_write(cfg, out_dir, &agent, &method, &mut timings)?;
    metrics.finish()?;
    Ok(report)
}

fn eval_and_write(
    cfg: &RunConfig,
    out_dir: &Path,
    agent: &crate::agents::AnyAgent,
    method: &str,
    timings: &mut RunTimings,
) -> Result<EvalReport> {
    let env = make_env(&cfg.env)?;
    let spec = env_spec(&cfg.env)?;
    let t = Instant::now();
    let report = evaluate(
        &EvalPolicy::Agent(agent),
        env.as_ref(),
        &spec,
        method,
        cfg.eval.n_episodes,
        derive_seed(cfg.seed, "eval"),
    )?;
    timings.eval_seconds = t.elapsed().as_secs_f64();
    write_report(out_dir, &report)?;
    std::fs::write(
        out_dir.join("timings.json"),
        serde_json::to_string_pretty(timings)?,
    )?;
    Ok(report)
}

pub fn write_report(out_dir: &Path, report: &EvalReport) -> Result<()> {
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(report)?,
    )?;
    Ok(())
}

pub fn read_report(dir: &Path) -> Result<EvalReport> {
    let path = dir.join("report.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|_| Error::Config(format!("{} has no report.json", dir.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Resolves a configured path against the output directory.
pub fn resolve_path(out_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out_dir.join(p)
    }
}
