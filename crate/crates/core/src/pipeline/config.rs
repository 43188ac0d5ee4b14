//! The full experiment description, serialized as one JSON document with
//! per-module sections. A run is reproducible bit-exactly from this record
//! plus the binary.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::agents::AgentConfig;
use crate::diffusion::DiffusionTrainConfig;
use crate::error::{Error, Result};
use crate::idm::IdmConfig;

/// Which transitions the agent trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// The real offline dataset.
    Real,
    /// World-model synthesized transitions.
    Dawm,
}

impl DataSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            DataSource::Real => "real",
            DataSource::Dawm => "dawm",
        }
    }
}

/// Synthesis-phase knobs (the generation horizon lives with the diffusion
/// section since the network depends on it).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisSection {
    /// Subsample divisor `T`: 1 keeps every anchor, 8 uses one in eight.
    pub t_divisor: usize,
    pub omega: f64,
    pub alpha_temp: f64,
    pub n_infer: usize,
    /// Conditioning return-to-go; `null` selects 0.9 x the best in-support
    /// value observed during world-model training.
    pub g_eval: Option<f64>,
    /// Clamp on predicted clean samples in standardized units (0 disables).
    pub x0_clip: f64,
    /// Use the re-noising reverse update instead of the strided posterior.
    pub renoise: bool,
    pub source: DataSource,
    /// Append the real transitions to the synthetic buffer.
    pub mix_real: bool,
    /// Run the literal per-anchor interleaved loop instead of the two-phase
    /// synthesize-then-train pipeline.
    pub interleaved: bool,
}

impl Default for SynthesisSection {
    fn default() -> Self {
        SynthesisSection {
            t_divisor: 1,
            omega: 1.0,
            alpha_temp: 0.5,
            n_infer: 3,
            g_eval: None,
            x0_clip: 5.0,
            renoise: false,
            source: DataSource::Dawm,
            mix_real: false,
            interleaved: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub n_episodes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { n_episodes: 100 }
    }
}

/// Experiment-matrix sweep description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "sweep", rename_all = "lowercase")]
pub enum Sweep {
    Horizon { values: Vec<usize> },
    TDivisor { values: Vec<usize> },
    Source { values: Vec<DataSource> },
}

impl Sweep {
    pub fn variant_names(&self) -> Vec<String> {
        match self {
            Sweep::Horizon { values } => values.iter().map(|h| format!("H{h}")).collect(),
            Sweep::TDivisor { values } => values.iter().map(|t| format!("T{t}")).collect(),
            Sweep::Source { values } => {
                values.iter().map(|s| s.as_str().to_string()).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MatrixSection {
    pub sweep: Option<Sweep>,
    pub seeds: usize,
    /// Environments to run the matrix over; empty means the base env.
    pub envs: Vec<String>,
}

impl Default for MatrixSection {
    fn default() -> Self {
        MatrixSection {
            sweep: None,
            seeds: 3,
            envs: Vec::new(),
        }
    }
}

/// Input / output paths for the chained CLI subcommands. Paths are resolved
/// relative to the output directory when not absolute.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsSection {
    pub dataset: Option<PathBuf>,
    pub dwm_checkpoint: Option<PathBuf>,
    pub idm_checkpoint: Option<PathBuf>,
    pub buffer: Option<PathBuf>,
    pub agent_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    pub export_csv: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { export_csv: false }
    }
}

/// Root experiment configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub env: String,
    pub tier: String,
    pub n_episodes: usize,
    pub seed: u64,
    pub threads: usize,
    pub data: DataSection,
    pub diffusion: DiffusionTrainConfig,
    pub idm: IdmConfig,
    pub agent: AgentConfig,
    pub synthesis: SynthesisSection,
    pub eval: EvalSection,
    pub matrix: MatrixSection,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: "pointmass".into(),
            tier: "medium".into(),
            n_episodes: 100,
            seed: 100,
            threads: 1,
            data: DataSection::default(),
            diffusion: DiffusionTrainConfig::default(),
            idm: IdmConfig::default(),
            agent: AgentConfig::default(),
            synthesis: SynthesisSection::default(),
            eval: EvalSection::default(),
            matrix: MatrixSection::default(),
            paths: PathsSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        crate::data::Tier::parse(&self.tier)?;
        if self.n_episodes == 0 {
            return Err(Error::Config("n_episodes must be >= 1".into()));
        }
        if self.synthesis.t_divisor == 0 {
            return Err(Error::Config("synthesis.t_divisor must be >= 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        if self.eval.n_episodes == 0 {
            return Err(Error::Config("eval.n_episodes must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = RunConfig::default();
        let json = cfg.to_json_pretty().unwrap();
        let back = RunConfig::from_json(&json).unwrap();
        assert_eq!(json, back.to_json_pretty().unwrap());
    }

    #[test]
    fn partial_config_takes_defaults() {
        let cfg = RunConfig::from_json(r#"{"env": "pendulum", "seed": 7}"#).unwrap();
        assert_eq!(cfg.env, "pendulum");
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.diffusion.k_steps, 5);
        assert_eq!(cfg.synthesis.t_divisor, 1);
    }

    #[test]
    fn validation_catches_bad_tier() {
        let cfg = RunConfig::from_json(r#"{"tier": "gold"}"#).unwrap();
        assert!(cfg.validate().is_err());
    }
}
