//! Experiment matrices: independent seeded runs per sweep variant, with a
//! CSV table mirroring the usual env-by-variant layout.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use crate::error::Result;
use crate::pipeline::config::{RunConfig, Sweep};
use crate::pipeline::runner::{build_world_model, run_full, RunTimings, WorldModelStack};

/// World models keyed by `(env, horizon, seed)`; sharable across matrix
/// invocations so several agents can reuse one trained stack.
pub type WorldModelCache = HashMap<(String, usize, u64), Arc<WorldModelStack>>;

#[derive(Debug, Clone)]
pub struct MatrixCell {
    pub env: String,
    pub mean: f64,
    pub std: f64,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct MatrixRow {
    pub variant: String,
    pub seeds: usize,
    pub cells: Vec<MatrixCell>,
}

#[derive(Debug, Clone)]
pub struct MatrixOutcome {
    pub rows: Vec<MatrixRow>,
    pub csv: String,
    /// Normalized return per (variant, env, seed); NaN marks a failed cell.
    pub runs: Vec<(String, String, u64, f64)>,
}

fn apply_variant(cfg: &mut RunConfig, sweep: &Sweep, index: usize) {
    match sweep {
        Sweep::Horizon { values } => cfg.diffusion.horizon = values[index],
        Sweep::TDivisor { values } => cfg.synthesis.t_divisor = values[index],
        Sweep::Source { values } => cfg.synthesis.source = values[index],
    }
}

/// Executes every (variant x env x seed) cell as an independent run under
/// `out_dir/cells/`, then writes `table.csv`. Cell failures are recorded and
/// the matrix continues.
pub fn run_matrix(
    base: &RunConfig,
    sweep: &Sweep,
    out_dir: &Path,
    mut cache: Option<&mut WorldModelCache>,
) -> Result<MatrixOutcome> {
    base.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let envs: Vec<String> = if base.matrix.envs.is_empty() {
        vec![base.env.clone()]
    } else {
        base.matrix.envs.clone()
    };
    let n_seeds = base.matrix.seeds.max(1);
    let variants = sweep.variant_names();

    let mut rows = Vec::with_capacity(variants.len());
    let mut runs = Vec::new();
    for (vi, variant) in variants.iter().enumerate() {
        let mut cells = Vec::with_capacity(envs.len());
        for env in &envs {
            let mut returns = Vec::new();
            let mut failures = 0usize;
            for s in 0..n_seeds {
                let mut cfg = base.clone();
                cfg.env = env.clone();
                cfg.seed = base.seed + s as u64;
                apply_variant(&mut cfg, sweep, vi);
                let cell_dir = out_dir
                    .join("cells")
                    .join(format!("{variant}_{env}_s{}", cfg.seed));
                let shared = lookup_stack(&mut cache, &cfg);
                match shared.and_then(|st| run_full(&cfg, &cell_dir, st)) {
                    Ok(report) => {
                        runs.push((
                            variant.clone(),
                            env.clone(),
                            cfg.seed,
                            report.normalized_return,
                        ));
                        returns.push(report.normalized_return);
                    }
                    Err(e) => {
                        eprintln!("matrix cell {variant}/{env}/seed{} failed: {e}", cfg.seed);
                        runs.push((variant.clone(), env.clone(), cfg.seed, f64::NAN));
                        failures += 1;
                    }
                }
            }
            let (mean, std) = mean_std(&returns);
            cells.push(MatrixCell {
                env: env.clone(),
                mean,
                std,
                failures,
            });
        }
        rows.push(MatrixRow {
            variant: variant.clone(),
            seeds: n_seeds,
            cells,
        });
    }

    let csv = render_csv(&rows, &envs);
    std::fs::write(out_dir.join("table.csv"), &csv)?;
    Ok(MatrixOutcome { rows, csv, runs })
}

/// Builds or reuses the world-model stack for configs that need one.
fn lookup_stack(
    cache: &mut Option<&mut WorldModelCache>,
    cfg: &RunConfig,
) -> Result<Option<Arc<WorldModelStack>>> {
    use crate::pipeline::config::DataSource;
    if cfg.synthesis.source != DataSource::Dawm {
        return Ok(None);
    }
    let Some(cache) = cache.as_deref_mut() else {
        return Ok(None); // run_full builds its own
    };
    let key = (cfg.env.clone(), cfg.diffusion.horizon, cfg.seed);
    if let Some(stack) = cache.get(&key) {
        return Ok(Some(stack.clone()));
    }
    let mut timings = RunTimings::default();
    let stack = Arc::new(build_world_model(cfg, None, &mut timings)?);
    cache.insert(key, stack.clone());
    Ok(Some(stack))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn render_csv(rows: &[MatrixRow], envs: &[String]) -> String {
    let mut out = String::new();
    out.push_str("variant,seeds");
    for env in envs {
        out.push_str(&format!(",mean_{env},std_{env}"));
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!("{},{}", row.variant, row.seeds));
        for cell in &row.cells {
            if cell.mean.is_nan() {
                out.push_str(",FAILED,FAILED");
            } else {
                out.push_str(&format!(",{:.6},{:.6}", cell.mean, cell.std));
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_shape_contract() {
        let rows = vec![
            MatrixRow {
                variant: "H1".into(),
                seeds: 3,
                cells: vec![MatrixCell {
                    env: "pointmass".into(),
                    mean: 0.5,
                    std: 0.1,
                    failures: 0,
                }],
            },
            MatrixRow {
                variant: "H3".into(),
                seeds: 3,
                cells: vec![MatrixCell {
                    env: "pointmass".into(),
                    mean: f64::NAN,
                    std: f64::NAN,
                    failures: 3,
                }],
            },
        ];
        let csv = render_csv(&rows, &["pointmass".to_string()]);
        let lines: Vec<&str> = csv.trim().lines().collect();
        assert_eq!(lines.len(), 3); // header + 2 variants
        for line in &lines {
            assert_eq!(line.split(',').count(), 2 + 2); // 2 + 2 * n_envs
        }
        assert!(lines[2].contains("FAILED"));
    }
}
