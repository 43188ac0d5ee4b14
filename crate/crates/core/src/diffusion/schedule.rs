//! Cosine noise schedule discretized to a handful of training steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Betas, alphas and cumulative alpha products for `k = 1..=k_steps`;
/// `alpha_bar(0) == 1` by definition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub k_steps: usize,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

/// Schedule family. At a handful of steps the cosine schedule drives the
/// final cumulative alpha to ~1e-4, which amplifies noise-prediction error
/// by 1/sqrt(alpha_bar) during strided reverse jumps; the linear form keeps
/// the terminal signal level configurable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScheduleKind {
    Cosine,
    Linear { beta_start: f64, beta_end: f64 },
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, k_steps: usize) -> Result<Self> {
        match kind {
            ScheduleKind::Cosine => Self::cosine(k_steps),
            ScheduleKind::Linear {
                beta_start,
                beta_end,
            } => Self::linear(k_steps, beta_start, beta_end),
        }
    }

    /// Cosine alpha-bar schedule.
    pub fn cosine(k_steps: usize) -> Result<Self> {
        if k_steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        let f = |k: f64| {
            let x = ((k / k_steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET))
                * std::f64::consts::FRAC_PI_2;
            x.cos().powi(2)
        };
        let f0 = f(0.0);
        let mut betas = Vec::with_capacity(k_steps);
        let mut alphas = Vec::with_capacity(k_steps);
        let mut alpha_bars = vec![1.0];
        let mut raw_prev = 1.0;
        for k in 1..=k_steps {
            let raw = f(k as f64) / f0;
            let beta = (1.0 - raw / raw_prev).min(MAX_BETA);
            raw_prev = raw;
            let alpha = 1.0 - beta;
            betas.push(beta);
            alphas.push(alpha);
            alpha_bars.push(alpha_bars.last().unwrap() * alpha);
        }
        Ok(NoiseSchedule {
            k_steps,
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// Betas linearly spaced between `beta_start` and `beta_end`.
    pub fn linear(k_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if k_steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "bad beta range [{beta_start}, {beta_end}]"
            )));
        }
        let mut betas = Vec::with_capacity(k_steps);
        let mut alphas = Vec::with_capacity(k_steps);
        let mut alpha_bars = vec![1.0];
        for k in 0..k_steps {
            let frac = if k_steps == 1 {
                0.0
            } else {
                k as f64 / (k_steps - 1) as f64
            };
            let beta = beta_start + (beta_end - beta_start) * frac;
            let alpha = 1.0 - beta;
            betas.push(beta);
            alphas.push(alpha);
            alpha_bars.push(alpha_bars.last().unwrap() * alpha);
        }
        Ok(NoiseSchedule {
            k_steps,
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// Cumulative product of alphas up to step `k`; `k = 0` gives 1.
    #[inline]
    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bars[k]
    }
}

/// `x_k = sqrt(alpha_bar_k) x0 + sqrt(1 - alpha_bar_k) eps`.
pub fn forward_noising(
    x0: &[f64],
    k: usize,
    eps: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if k == 0 || k > schedule.k_steps {
        return Err(Error::Config(format!(
            "diffusion step {k} out of range 1..={}",
            schedule.k_steps
        )));
    }
    if eps.len() != x0.len() {
        return Err(Error::DimensionMismatch(format!(
            "noise len {} != sample len {}",
            eps.len(),
            x0.len()
        )));
    }
    let ab = schedule.alpha_bar(k);
    let (c0, c1) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0
        .iter()
        .zip(eps)
        .map(|(x, e)| c0 * x + c1 * e)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_bar_strictly_decreasing() {
        for k_steps in [1usize, 2, 5, 20] {
            let s = NoiseSchedule::cosine(k_steps).unwrap();
            assert_eq!(s.alpha_bar(0), 1.0);
            for k in 1..=k_steps {
                assert!(s.alpha_bar(k) < s.alpha_bar(k - 1));
                assert!(s.betas[k - 1] > 0.0 && s.betas[k - 1] < 1.0);
            }
            if k_steps > 1 {
                assert!(s.alpha_bar(k_steps) < s.alpha_bar(1));
            }
            assert!(s.alpha_bar(k_steps) > 0.0);
        }
    }

    #[test]
    fn noising_with_zero_noise_is_pure_scaling() {
        let s = NoiseSchedule::cosine(5).unwrap();
        let x0 = vec![1.0, -2.0, 0.5];
        let eps = vec![0.0; 3];
        for k in 1..=5 {
            let xk = forward_noising(&x0, k, &eps, &s).unwrap();
            let c = s.alpha_bar(k).sqrt();
            for (a, b) in xk.iter().zip(&x0) {
                assert!((a - c * b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn noising_formula_direct_value() {
        // alpha_bar = 0.25, x0 = eps = 1 -> 0.5 + sqrt(0.75)
        let mut s = NoiseSchedule::cosine(1).unwrap();
        s.alpha_bars = vec![1.0, 0.25];
        let xk = forward_noising(&[1.0], 1, &[1.0], &s).unwrap();
        assert!((xk[0] - (0.5 + 0.75f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn noising_near_pure_noise_limit() {
        // As alpha_bar -> 0 the sample approaches the raw noise.
        let mut s = NoiseSchedule::cosine(1).unwrap();
        s.alpha_bars = vec![1.0, 1e-30];
        let xk = forward_noising(&[3.0], 1, &[0.7], &s).unwrap();
        assert!((xk[0] - 0.7).abs() < 1e-9);
    }

    #[test]
    fn noising_rejects_out_of_range_step() {
        let s = NoiseSchedule::cosine(5).unwrap();
        assert!(forward_noising(&[1.0], 0, &[0.0], &s).is_err());
        assert!(forward_noising(&[1.0], 6, &[0.0], &s).is_err());
    }
}
