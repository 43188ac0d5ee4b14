//! Command-line interface: one executable exposing the pipeline as
//! subcommands over a JSON config file with dotted-key overrides.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime fault.
//! Diagnostics go to stderr; all data goes to files under `--out`.

use std::path::{Path, PathBuf};

use crate::data::{export_csv, load_dataset, save_dataset, Tier};
use crate::diffusion::{train_diffusion, TrainedDiffusion};
use crate::envs::{env_spec, generate_dataset, make_env};
use crate::error::{Error, Result};
use crate::idm::{train_idm, IdmModel};
use crate::pipeline::{
    aggregate_reports, evaluate, run_matrix, synthesize_dataset, EvalPolicy, MetricsWriter,
    RunConfig, RunTimings, SynthesisConfig,
};
use crate::rng::derive_seed;

const USAGE: &str = "\
usage: dawm <command> [options]

commands:
  gen-data      generate an offline dataset for the configured env/tier
  train-dwm     train the diffusion world model on a dataset
  train-idm     train the inverse dynamics model on a dataset
  synthesize    sample rollouts and complete them into a transition buffer
  train-agent   train an offline RL agent on a transition buffer
  eval          evaluate an agent checkpoint and write report.json
  run-matrix    run the configured experiment sweep and write table.csv
  report        aggregate run directories into one CSV + summary

options:
  --config PATH   JSON config file (defaults apply when omitted)
  --seed INT      root seed (default 100)
  --out DIR       output directory (required except for `report`)
  --set KEY=VAL   dotted-key config override, repeatable
  --dry-run       print the resolved config and exit without writing
  --threads INT   worker threads for synthesis (default 1)
";

#[derive(Debug)]
pub struct Invocation {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub overrides: Vec<(String, String)>,
    pub dry_run: bool,
    pub threads: Option<usize>,
    pub extra: Vec<String>,
}

pub fn parse_args(argv: &[String]) -> Result<Invocation> {
    if argv.is_empty() {
        return Err(Error::Config(format!("missing subcommand\n{USAGE}")));
    }
    let command = argv[0].clone();
    let mut inv = Invocation {
        command,
        config_path: None,
        seed: None,
        out: None,
        overrides: Vec::new(),
        dry_run: false,
        threads: None,
        extra: Vec::new(),
    };
    let mut i = 1;
    let grab = |argv: &[String], i: usize, flag: &str| -> Result<String> {
        argv.get(i + 1)
            .cloned()
            .ok_or_else(|| Error::Config(format!("{flag} needs a value")))
    };
    while i < argv.len() {
        match argv[i].as_str() {
            "--config" => {
                inv.config_path = Some(PathBuf::from(grab(argv, i, "--config")?));
                i += 2;
            }
            "--seed" => {
                let v = grab(argv, i, "--seed")?;
                inv.seed = Some(
                    v.parse()
                        .map_err(|_| Error::Config(format!("bad --seed value `{v}`")))?,
                );
                i += 2;
            }
            "--out" => {
                inv.out = Some(PathBuf::from(grab(argv, i, "--out")?));
                i += 2;
            }
            "--set" => {
                let kv = grab(argv, i, "--set")?;
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
                inv.overrides.push((k.to_string(), v.to_string()));
                i += 2;
            }
            "--dry-run" => {
                inv.dry_run = true;
                i += 1;
            }
            "--threads" => {
                let v = grab(argv, i, "--threads")?;
                inv.threads = Some(
                    v.parse()
                        .map_err(|_| Error::Config(format!("bad --threads value `{v}`")))?,
                );
                i += 2;
            }
            "--help" | "-h" => {
                return Err(Error::Config(USAGE.to_string()));
            }
            other if other.starts_with("--") => {
                return Err(Error::Config(format!("unknown flag `{other}`\n{USAGE}")));
            }
            other => {
                inv.extra.push(other.to_string());
                i += 1;
            }
        }
    }
    Ok(inv)
}

/// Collects every dotted key path of a JSON object tree.
fn collect_keys(value: &serde_json::Value, prefix: &str, out: &mut Vec<String>) {
    if let serde_json::Value::Object(map) = value {
        for (k, v) in map {
            let path = if prefix.is_empty() {
                k.clone()
            } else {
                format!("{prefix}.{k}")
            };
            match v {
                serde_json::Value::Object(_) => collect_keys(v, &path, out),
                _ => out.push(path),
            }
        }
    }
}

fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let cost = usize::from(ca != cb);
            cur[j + 1] = (prev[j] + cost).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Applies one dotted-key override; unknown keys fail with the nearest valid
/// key named.
fn apply_override(value: &mut serde_json::Value, key: &str, raw: &str) -> Result<()> {
    let mut valid = Vec::new();
    collect_keys(value, "", &mut valid);
    if !valid.iter().any(|k| k == key) {
        let nearest = valid
            .iter()
            .min_by_key(|k| edit_distance(k, key))
            .cloned()
            .unwrap_or_default();
        return Err(Error::Config(format!(
            "unknown config key `{key}`; nearest valid key is `{nearest}`"
        )));
    }
    // Parse the value as JSON when possible, else as a bare string.
    let parsed: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = value;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        cursor = cursor
            .get_mut(part)
            .ok_or_else(|| Error::Config(format!("missing config section `{part}`")))?;
    }
    cursor[parts[parts.len() - 1]] = parsed;
    Ok(())
}

/// Loads + merges config file, CLI flags and `--set` overrides.
pub fn resolve_config(inv: &Invocation) -> Result<RunConfig> {
    let base = match &inv.config_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    let mut value = serde_json::to_value(&base)?;
    for (k, v) in &inv.overrides {
        apply_override(&mut value, k, v)?;
    }
    let mut cfg: RunConfig = serde_json::from_value(value)
        .map_err(|e| Error::Config(format!("override produced an invalid config: {e}")))?;
    if let Some(seed) = inv.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = inv.threads {
        cfg.threads = threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn require_out(inv: &Invocation) -> Result<PathBuf> {
    inv.out
        .clone()
        .ok_or_else(|| Error::Config("missing required flag --out".into()))
}

fn resolve(out: &Path, configured: &Option<PathBuf>, default_name: &str) -> PathBuf {
    match configured {
        Some(p) if p.is_absolute() => p.clone(),
        Some(p) => out.join(p),
        None => out.join(default_name),
    }
}

fn require_file(path: &Path, field: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::Config(format!(
            "missing {field}: no file at {}",
            path.display()
        )));
    }
    Ok(())
}

/// Runs one subcommand; returns the process exit code.
pub fn dispatch(argv: &[String]) -> i32 {
    match run(argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(argv: &[String]) -> Result<()> {
    let inv = parse_args(argv)?;
    if inv.command == "report" {
        return cmd_report(&inv);
    }
    let cfg = resolve_config(&inv)?;
    if inv.dry_run {
        println!("{}", cfg.to_json_pretty()?);
        return Ok(());
    }
    let out = require_out(&inv)?;
    std::fs::create_dir_all(&out)?;
    match inv.command.as_str() {
        "gen-data" => cmd_gen_data(&cfg, &out),
        "train-dwm" => cmd_train_dwm(&cfg, &out),
        "train-idm" => cmd_train_idm(&cfg, &out),
        "synthesize" => cmd_synthesize(&cfg, &out),
        "train-agent" => cmd_train_agent(&cfg, &out),
        "eval" => cmd_eval(&cfg, &out),
        "run-matrix" => cmd_run_matrix(&cfg, &out),
        other => Err(Error::Config(format!(
            "unknown subcommand `{other}`\n{USAGE}"
        ))),
    }
}

fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let env = make_env(&cfg.env)?;
    let tier = Tier::parse(&cfg.tier)?;
    let dataset = generate_dataset(
        env.as_ref(),
        tier,
        cfg.n_episodes,
        derive_seed(cfg.seed, "data"),
    )?;
    let path = resolve(out, &cfg.paths.dataset, "dataset.ds");
    save_dataset(&dataset, &path)?;
    if cfg.data.export_csv {
        export_csv(&dataset, &out.join("dataset.csv"))?;
    }
    eprintln!(
        "wrote {} ({} episodes, {} transitions)",
        path.display(),
        dataset.episodes.len(),
        dataset.n_transitions()
    );
    Ok(())
}

fn cmd_train_dwm(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds_path = resolve(out, &cfg.paths.dataset, "dataset.ds");
    require_file(&ds_path, "paths.dataset")?;
    let dataset = load_dataset(&ds_path)?;
    let ckpt_dir = out.join("ckpt");
    std::fs::create_dir_all(&ckpt_dir)?;
    let mut metrics = MetricsWriter::create(&out.join("metrics.jsonl"))?;
    let trained = train_diffusion(
        &dataset,
        &cfg.diffusion,
        derive_seed(cfg.seed, "dwm"),
        |step, loss| metrics.log_loss("dwm", step, loss),
    )?;
    metrics.finish()?;
    let path = resolve(out, &cfg.paths.dwm_checkpoint, "ckpt/dwm.ck");
    trained.save(&path)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cmd_train_idm(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds_path = resolve(out, &cfg.paths.dataset, "dataset.ds");
    require_file(&ds_path, "paths.dataset")?;
    let dataset = load_dataset(&ds_path)?;
    let ckpt_dir = out.join("ckpt");
    std::fs::create_dir_all(&ckpt_dir)?;
    let mut metrics = MetricsWriter::create(&out.join("metrics_idm.jsonl"))?;
    let model = train_idm(
        &dataset,
        &cfg.idm,
        derive_seed(cfg.seed, "idm"),
        |step, loss| metrics.log_loss("idm", step, loss),
    )?;
    metrics.finish()?;
    let path = resolve(out, &cfg.paths.idm_checkpoint, "ckpt/idm.ck");
    model.save(&path, cfg.idm.steps)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cmd_synthesize(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds_path = resolve(out, &cfg.paths.dataset, "dataset.ds");
    let dwm_path = resolve(out, &cfg.paths.dwm_checkpoint, "ckpt/dwm.ck");
    let idm_path = resolve(out, &cfg.paths.idm_checkpoint, "ckpt/idm.ck");
    require_file(&ds_path, "paths.dataset")?;
    require_file(&dwm_path, "paths.dwm_checkpoint")?;
    require_file(&idm_path, "paths.idm_checkpoint")?;
    let dataset = load_dataset(&ds_path)?;
    let dwm = TrainedDiffusion::load(&dwm_path)?;
    let idm = IdmModel::load(&idm_path)?;
    let synth_cfg = SynthesisConfig {
        t_divisor: cfg.synthesis.t_divisor,
        omega: cfg.synthesis.omega,
        alpha_temp: cfg.synthesis.alpha_temp,
        n_infer: cfg.synthesis.n_infer,
        g_eval: cfg.synthesis.g_eval,
        x0_clip: cfg.synthesis.x0_clip,
        renoise: cfg.synthesis.renoise,
        seed: derive_seed(cfg.seed, "synth"),
        threads: cfg.threads,
    };
    let t0 = std::time::Instant::now();
    let outcome = synthesize_dataset(&dwm, &idm, &dataset, &synth_cfg)?;
    let elapsed = t0.elapsed().as_secs_f64();
    let synthetic = crate::data::dataset_from_chains(&outcome.chains, &dataset)?;
    let path = resolve(out, &cfg.paths.buffer, "synthetic.ds");
    save_dataset(&synthetic, &path)?;
    std::fs::write(
        out.join("timings.json"),
        serde_json::to_string_pretty(&RunTimings {
            synthesis_seconds: elapsed,
            ..RunTimings::default()
        })?,
    )?;
    eprintln!(
        "wrote {} ({} anchors used of {}, {} faulted, {} transitions)",
        path.display(),
        outcome.n_anchors_used,
        outcome.n_anchors_total,
        outcome.n_faulted,
        outcome.n_transitions()
    );
    Ok(())
}

fn cmd_train_agent(cfg: &RunConfig, out: &Path) -> Result<()> {
    use crate::pipeline::DataSource;
    let buffer_path = match cfg.synthesis.source {
        DataSource::Dawm => resolve(out, &cfg.paths.buffer, "synthetic.ds"),
        DataSource::Real => resolve(out, &cfg.paths.dataset, "dataset.ds"),
    };
    require_file(
        &buffer_path,
        if cfg.synthesis.source == DataSource::Dawm {
            "paths.buffer"
        } else {
            "paths.dataset"
        },
    )?;
    let buffer_ds = load_dataset(&buffer_path)?;
    let mut buffer = buffer_ds.transitions();
    if cfg.synthesis.mix_real && cfg.synthesis.source == DataSource::Dawm {
        let real_path = resolve(out, &cfg.paths.dataset, "dataset.ds");
        require_file(&real_path, "paths.dataset")?;
        buffer.extend(load_dataset(&real_path)?.transitions());
    }
    let ckpt_dir = out.join("ckpt");
    std::fs::create_dir_all(&ckpt_dir)?;
    let mut metrics = MetricsWriter::create(&out.join("metrics_agent.jsonl"))?;
    let agent = crate::pipeline::train_agent_on(
        &buffer,
        &cfg.agent,
        derive_seed(cfg.seed, "agent"),
        Some(&ckpt_dir),
        |iter, record| metrics.log_agent(iter, record),
    )?;
    metrics.finish()?;
    let path = resolve(out, &cfg.paths.agent_checkpoint, "ckpt/agent.ck");
    agent.save(&path, cfg.agent.steps)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<()> {
    let agent_path = resolve(out, &cfg.paths.agent_checkpoint, "ckpt/agent.ck");
    if !agent_path.exists() {
        return Err(Error::Config(format!(
            "eval needs paths.agent_checkpoint: no checkpoint at {}",
            agent_path.display()
        )));
    }
    let agent = crate::agents::AnyAgent::load(&agent_path)?;
    let env = make_env(&cfg.env)?;
    let spec = env_spec(&cfg.env)?;
    let method = format!("{}-{}", agent.kind().as_str(), cfg.synthesis.source.as_str());
    let report = evaluate(
        &EvalPolicy::Agent(&agent),
        env.as_ref(),
        &spec,
        &method,
        cfg.eval.n_episodes,
        derive_seed(cfg.seed, "eval"),
    )?;
    crate::pipeline::write_report(out, &report)?;
    eprintln!(
        "normalized return {:.3} over {} episodes -> {}",
        report.normalized_return,
        report.episodes,
        out.join("report.json").display()
    );
    Ok(())
}

fn cmd_run_matrix(cfg: &RunConfig, out: &Path) -> Result<()> {
    let sweep = cfg.matrix.sweep.clone().ok_or_else(|| {
        Error::Config("run-matrix needs matrix.sweep (horizon | tdivisor | source)".into())
    })?;
    let mut cache = crate::pipeline::WorldModelCache::new();
    let outcome = run_matrix(cfg, &sweep, out, Some(&mut cache))?;
    eprintln!("{}", outcome.csv.trim_end());
    eprintln!("wrote {}", out.join("table.csv").display());
    Ok(())
}

fn cmd_report(inv: &Invocation) -> Result<()> {
    let dirs: Vec<PathBuf> = inv.extra.iter().map(PathBuf::from).collect();
    let (_, csv, summary) = aggregate_reports(&dirs)?;
    println!("{csv}");
    println!("{summary}");
    if let Some(out) = &inv.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("summary.csv"), &csv)?;
        std::fs::write(out.join("summary.txt"), &summary)?;
    }
    Ok(())
}
