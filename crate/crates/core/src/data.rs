//! Offline dataset model: transitions, episodes, trajectory segments,
//! return-to-go, normalization statistics, and bit-exact serialization.
//!
//! An episode stores `n` states and `n-1` actions/rewards; transition `i` is
//! `(s_i, a_i, r_i, s_{i+1})`. Segments for diffusion training pair a
//! conditioning tuple `(s_t, a_t, g)` with the flattened future
//! state-reward block of horizon `H`.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One `(s, a, r, s')` tuple, real or synthetic.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub synthetic: bool,
}

impl Transition {
    pub fn validate(&self) -> Result<()> {
        if self.state.is_empty() || self.state.len() != self.next_state.len() {
            return Err(Error::DataIntegrity(format!(
                "state dims differ: {} vs {}",
                self.state.len(),
                self.next_state.len()
            )));
        }
        if self.action.is_empty() {
            return Err(Error::DataIntegrity("empty action".into()));
        }
        for v in self.state.iter().chain(&self.next_state) {
            if !v.is_finite() {
                return Err(Error::DataIntegrity("non-finite state component".into()));
            }
        }
        for v in &self.action {
            if !v.is_finite() {
                return Err(Error::DataIntegrity("non-finite action component".into()));
            }
        }
        if !self.reward.is_finite() {
            return Err(Error::DataIntegrity("non-finite reward".into()));
        }
        Ok(())
    }
}

/// Future state-reward block of horizon `H`: `H+1` states `s_{t+1..t+H+1}`
/// aligned with `H+1` rewards `r_{t..t+H}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySegment {
    pub states: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub horizon: usize,
}

impl TrajectorySegment {
    pub fn new(states: Vec<Vec<f64>>, rewards: Vec<f64>, horizon: usize) -> Result<Self> {
        if states.len() != horizon + 1 || rewards.len() != horizon + 1 {
            return Err(Error::DimensionMismatch(format!(
                "segment needs H+1={} states and rewards, got {} and {}",
                horizon + 1,
                states.len(),
                rewards.len()
            )));
        }
        Ok(TrajectorySegment {
            states,
            rewards,
            horizon,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    /// Flattened width `(H+1) * (d_s + 1)`, the diffusion sample dimension.
    pub fn flat_width(&self) -> usize {
        (self.horizon + 1) * (self.state_dim() + 1)
    }

    /// Channel-major layout: `d_s` state channels then the reward channel,
    /// each of length `H+1`. Index `(c, j) -> c * (H+1) + j`.
    pub fn to_flat(&self) -> Vec<f64> {
        let d_s = self.state_dim();
        let len = self.horizon + 1;
        let mut flat = vec![0.0; (d_s + 1) * len];
        for (j, s) in self.states.iter().enumerate() {
            for (c, &v) in s.iter().enumerate() {
                flat[c * len + j] = v;
            }
        }
        for (j, &r) in self.rewards.iter().enumerate() {
            flat[d_s * len + j] = r;
        }
        flat
    }

    pub fn from_flat(flat: &[f64], horizon: usize, d_s: usize) -> Result<Self> {
        let len = horizon + 1;
        if flat.len() != (d_s + 1) * len {
            return Err(Error::DimensionMismatch(format!(
                "flat segment width {} != (H+1)(d_s+1) = {}",
                flat.len(),
                (d_s + 1) * len
            )));
        }
        let states = (0..len)
            .map(|j| (0..d_s).map(|c| flat[c * len + j]).collect())
            .collect();
        let rewards = (0..len).map(|j| flat[d_s * len + j]).collect();
        Ok(TrajectorySegment {
            states,
            rewards,
            horizon,
        })
    }
}

/// Diffusion condition `y = (s_t, a_t, g)`; `null_flag` marks the masked
/// condition that trains the unconditional branch.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningTuple {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub rtg: f64,
    pub null_flag: bool,
}

/// Dataset tier mirroring the usual locomotion suite naming.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tier {
    Medium,
    MediumReplay,
    MediumExpert,
}

impl Tier {
    pub fn as_str(&self) -> &'static str {
        match self {
            Tier::Medium => "medium",
            Tier::MediumReplay => "medium-replay",
            Tier::MediumExpert => "medium-expert",
        }
    }

    pub fn parse(s: &str) -> Result<Tier> {
        match s {
            "medium" | "m" => Ok(Tier::Medium),
            "medium-replay" | "mr" => Ok(Tier::MediumReplay),
            "medium-expert" | "me" => Ok(Tier::MediumExpert),
            other => Err(Error::Config(format!(
                "unknown tier `{other}` (expected medium, medium-replay, medium-expert)"
            ))),
        }
    }
}

/// Per-dimension standardization statistics for states and rewards.
/// Stds are floored so constant dimensions normalize to zero instead of NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub reward_mean: f64,
    pub reward_std: f64,
}

pub const STD_FLOOR: f64 = 1e-6;

impl NormStats {
    pub fn normalize_state(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(&self.state_mean)
            .zip(&self.state_std)
            .map(|((v, m), sd)| (v - m) / sd)
            .collect()
    }

    pub fn denormalize_state(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(&self.state_mean)
            .zip(&self.state_std)
            .map(|((v, m), sd)| v * sd + m)
            .collect()
    }

    pub fn normalize_reward(&self, r: f64) -> f64 {
        (r - self.reward_mean) / self.reward_std
    }

    pub fn denormalize_reward(&self, r: f64) -> f64 {
        r * self.reward_std + self.reward_mean
    }
}

/// One episode: `states.len() == n`, `actions.len() == rewards.len() == n-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

impl Episode {
    /// Number of stored states.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn n_transitions(&self) -> usize {
        self.rewards.len()
    }

    pub fn validate(&self, d_s: usize, d_a: usize) -> Result<()> {
        if self.states.len() != self.rewards.len() + 1 || self.actions.len() != self.rewards.len()
        {
            return Err(Error::DataIntegrity(format!(
                "episode shape: {} states, {} actions, {} rewards",
                self.states.len(),
                self.actions.len(),
                self.rewards.len()
            )));
        }
        for s in &self.states {
            if s.len() != d_s {
                return Err(Error::DimensionMismatch(format!(
                    "state dim {} != {d_s}",
                    s.len()
                )));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::DataIntegrity("non-finite state".into()));
            }
        }
        for a in &self.actions {
            if a.len() != d_a {
                return Err(Error::DimensionMismatch(format!(
                    "action dim {} != {d_a}",
                    a.len()
                )));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::DataIntegrity("non-finite action".into()));
            }
        }
        if self.rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::DataIntegrity("non-finite reward".into()));
        }
        Ok(())
    }
}

/// A fixed collection of episodes plus the statistics needed to standardize
/// it and to normalize return-to-go values. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub episodes: Vec<Episode>,
    pub d_s: usize,
    pub d_a: usize,
    pub tier: Tier,
    pub norm_stats: NormStats,
    pub rtg_scale: f64,
    /// True when states/rewards have been standardized in place.
    pub normalized: bool,
    /// True when the episodes were produced by the world model.
    pub synthetic: bool,
}

/// Default horizon and discount used to compute the empirical `rtg_scale`
/// when a dataset is built.
pub const RTG_SCALE_HORIZON: usize = 7;
pub const RTG_SCALE_GAMMA: f64 = 0.99;

impl OfflineDataset {
    /// Builds a dataset from raw episodes: computes standardization stats and
    /// the empirical return-to-go scale (max |R_tg| rounded up to one
    /// significant figure).
    pub fn from_episodes(episodes: Vec<Episode>, tier: Tier) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::DataIntegrity("empty dataset".into()));
        }
        let d_s = episodes[0].states[0].len();
        let d_a = episodes[0].actions[0].len();
        for ep in &episodes {
            ep.validate(d_s, d_a)?;
        }
        let norm_stats = compute_norm_stats(&episodes, d_s);
        let rtg_scale = empirical_rtg_scale(&episodes, RTG_SCALE_HORIZON, RTG_SCALE_GAMMA);
        Ok(OfflineDataset {
            episodes,
            d_s,
            d_a,
            tier,
            norm_stats,
            rtg_scale,
            normalized: false,
            synthetic: false,
        })
    }

    pub fn n_transitions(&self) -> usize {
        self.episodes.iter().map(|e| e.n_transitions()).sum()
    }

    /// All transitions in episode order.
    pub fn transitions(&self) -> Vec<Transition> {
        let mut out = Vec::with_capacity(self.n_transitions());
        for ep in &self.episodes {
            for i in 0..ep.n_transitions() {
                out.push(Transition {
                    state: ep.states[i].clone(),
                    action: ep.actions[i].clone(),
                    reward: ep.rewards[i],
                    next_state: ep.states[i + 1].clone(),
                    synthetic: self.synthetic,
                });
            }
        }
        out
    }
}

fn compute_norm_stats(episodes: &[Episode], d_s: usize) -> NormStats {
    let mut n = 0usize;
    let mut mean = vec![0.0; d_s];
    let mut r_mean = 0.0;
    let mut n_r = 0usize;
    for ep in episodes {
        for s in &ep.states {
            for (acc, v) in mean.iter_mut().zip(s) {
                *acc += v;
            }
            n += 1;
        }
        for &r in &ep.rewards {
            r_mean += r;
            n_r += 1;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    r_mean /= n_r as f64;

    let mut var = vec![0.0; d_s];
    let mut r_var = 0.0;
    for ep in episodes {
        for s in &ep.states {
            for ((acc, v), m) in var.iter_mut().zip(s).zip(&mean) {
                let d = v - m;
                *acc += d * d;
            }
        }
        for &r in &ep.rewards {
            let d = r - r_mean;
            r_var += d * d;
        }
    }
    let state_std = var
        .iter()
        .map(|v| (v / n as f64).sqrt().max(STD_FLOOR))
        .collect();
    let reward_std = (r_var / n_r as f64).sqrt().max(STD_FLOOR);
    NormStats {
        state_mean: mean,
        state_std,
        reward_mean: r_mean,
        reward_std,
    }
}

/// Rounds `x` up to one significant figure; 7.34 -> 8, 43 -> 50, 0.0072 -> 0.008.
pub fn round_up_one_sig_fig(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let mag = 10f64.powf(x.abs().log10().floor());
    let lead = (x / mag).ceil();
    lead * mag
}

fn empirical_rtg_scale(episodes: &[Episode], horizon: usize, gamma: f64) -> f64 {
    let mut max_abs: f64 = 0.0;
    for ep in episodes {
        let n_r = ep.rewards.len();
        if n_r < horizon + 1 {
            // Fall back to whole-episode windows on short episodes.
            if n_r > 0 {
                if let Ok(g) = compute_rtg(&ep.rewards, gamma) {
                    max_abs = max_abs.max(g.abs());
                }
            }
            continue;
        }
        for t in 0..=(n_r - horizon - 1) {
            if let Ok(g) = compute_rtg(&ep.rewards[t..=t + horizon], gamma) {
                max_abs = max_abs.max(g.abs());
            }
        }
    }
    round_up_one_sig_fig(max_abs).max(STD_FLOOR)
}

/// Discounted return-to-go `sum_k gamma^k r_k` over the given window.
pub fn compute_rtg(rewards: &[f64], gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Config(format!("gamma {gamma} not in (0, 1]")));
    }
    let mut acc = 0.0;
    let mut disc = 1.0;
    for &r in rewards {
        if !r.is_finite() {
            return Err(Error::DataIntegrity("non-finite reward in rtg".into()));
        }
        acc += disc * r;
        disc *= gamma;
    }
    Ok(acc)
}

/// Returns a standardized copy of the dataset (states and rewards zero mean,
/// unit std per dimension; actions untouched).
pub fn normalize(dataset: &OfflineDataset) -> Result<OfflineDataset> {
    if dataset.episodes.is_empty() {
        return Err(Error::DataIntegrity("empty dataset".into()));
    }
    if dataset.normalized {
        return Err(Error::State("dataset already normalized".into()));
    }
    let stats = dataset.norm_stats.clone();
    let episodes = dataset
        .episodes
        .iter()
        .map(|ep| Episode {
            states: ep.states.iter().map(|s| stats.normalize_state(s)).collect(),
            actions: ep.actions.clone(),
            rewards: ep.rewards.iter().map(|&r| stats.normalize_reward(r)).collect(),
        })
        .collect();
    Ok(OfflineDataset {
        episodes,
        normalized: true,
        ..dataset.clone()
    })
}

/// Inverse of [`normalize`].
pub fn denormalize(dataset: &OfflineDataset) -> Result<OfflineDataset> {
    if !dataset.normalized {
        return Err(Error::State("dataset is not normalized".into()));
    }
    let stats = dataset.norm_stats.clone();
    let episodes = dataset
        .episodes
        .iter()
        .map(|ep| Episode {
            states: ep
                .states
                .iter()
                .map(|s| stats.denormalize_state(s))
                .collect(),
            actions: ep.actions.clone(),
            rewards: ep
                .rewards
                .iter()
                .map(|&r| stats.denormalize_reward(r))
                .collect(),
        })
        .collect();
    Ok(OfflineDataset {
        episodes,
        normalized: false,
        ..dataset.clone()
    })
}

/// Training pairs for the diffusion model: for every anchor `t` with a full
/// `H+1` future window inside one episode, the condition `(s_t, a_t, g)` with
/// `g = rtg(r_{t..t+H}) / rtg_scale` and the segment
/// `(s_{t+1..t+H+1}, r_{t..t+H})`. Values are emitted as stored in the
/// dataset (raw or standardized); `g` always uses the stored rewards divided
/// by `rtg_scale`.
pub fn extract_segments(
    dataset: &OfflineDataset,
    horizon: usize,
    gamma: f64,
) -> Result<Vec<(ConditioningTuple, TrajectorySegment)>> {
    if horizon == 0 {
        return Err(Error::Config("horizon must be >= 1".into()));
    }
    let shortest = dataset.episodes.iter().map(|e| e.len()).min().unwrap_or(0);
    if horizon >= shortest {
        return Err(Error::Config(format!(
            "horizon {horizon} >= shortest episode length {shortest}"
        )));
    }
    let mut out = Vec::new();
    for ep in &dataset.episodes {
        let len = ep.len();
        if len < horizon + 2 {
            continue;
        }
        // Valid anchors: need states t+1..t+H+1 and rewards t..t+H.
        for t in 0..(len - horizon - 1) {
            let g = compute_rtg(&ep.rewards[t..=t + horizon], gamma)? / dataset.rtg_scale;
            let cond = ConditioningTuple {
                state: ep.states[t].clone(),
                action: ep.actions[t].clone(),
                rtg: g,
                null_flag: false,
            };
            let seg = TrajectorySegment::new(
                ep.states[t + 1..=t + horizon + 1].to_vec(),
                ep.rewards[t..=t + horizon].to_vec(),
                horizon,
            )?;
            out.push((cond, seg));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Serialization: magic + JSON header line + little-endian f64 payload.
// ---------------------------------------------------------------------------

pub const DATASET_MAGIC: &[u8; 8] = b"DAWMDS01";

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    d_s: usize,
    d_a: usize,
    n_episodes: usize,
    tier: Tier,
    rtg_scale: f64,
    norm_stats: NormStats,
    episode_lens: Vec<usize>,
    normalized: bool,
    synthetic: bool,
}

/// Writes the dataset with bit-exact float payload.
pub fn save_dataset(dataset: &OfflineDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(DATASET_MAGIC)?;
    let header = DatasetHeader {
        d_s: dataset.d_s,
        d_a: dataset.d_a,
        n_episodes: dataset.episodes.len(),
        tier: dataset.tier,
        rtg_scale: dataset.rtg_scale,
        norm_stats: dataset.norm_stats.clone(),
        episode_lens: dataset.episodes.iter().map(|e| e.len()).collect(),
        normalized: dataset.normalized,
        synthetic: dataset.synthetic,
    };
    let mut header_bytes = serde_json::to_vec(&header)?;
    header_bytes.push(b'\n');
    w.write_all(&header_bytes)?;
    for ep in &dataset.episodes {
        for s in &ep.states {
            for v in s {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for a in &ep.actions {
            for v in a {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for r in &ep.rewards {
            w.write_all(&r.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<OfflineDataset> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Truncated(format!("{}: missing magic", path.display())))?;
    if &magic != DATASET_MAGIC {
        if magic[..6] == DATASET_MAGIC[..6] {
            return Err(Error::VersionMismatch {
                expected: String::from_utf8_lossy(DATASET_MAGIC).into_owned(),
                found: String::from_utf8_lossy(&magic).into_owned(),
            });
        }
        return Err(Error::Format(format!(
            "{}: not a dataset file",
            path.display()
        )));
    }
    let mut header_line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)
            .map_err(|_| Error::Truncated("header".into()))?;
        if byte[0] == b'\n' {
            break;
        }
        header_line.push(byte[0]);
        if header_line.len() > 1 << 20 {
            return Err(Error::Format("unterminated header".into()));
        }
    }
    let header: DatasetHeader = serde_json::from_slice(&header_line)?;
    if header.episode_lens.len() != header.n_episodes {
        return Err(Error::DimensionMismatch(format!(
            "header lists {} episode lengths for {} episodes",
            header.episode_lens.len(),
            header.n_episodes
        )));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let expected_floats: usize = header
        .episode_lens
        .iter()
        .map(|&len| len * header.d_s + (len - 1) * (header.d_a + 1))
        .sum();
    if payload.len() < expected_floats * 8 {
        return Err(Error::Truncated(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            expected_floats * 8
        )));
    }
    if payload.len() > expected_floats * 8 {
        return Err(Error::DimensionMismatch(format!(
            "payload has {} bytes, header implies {}",
            payload.len(),
            expected_floats * 8
        )));
    }
    let mut floats = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()));
    let mut episodes = Vec::with_capacity(header.n_episodes);
    for &len in &header.episode_lens {
        let mut states = Vec::with_capacity(len);
        for _ in 0..len {
            states.push((0..header.d_s).map(|_| floats.next().unwrap()).collect());
        }
        let mut actions = Vec::with_capacity(len - 1);
        for _ in 0..len - 1 {
            actions.push((0..header.d_a).map(|_| floats.next().unwrap()).collect());
        }
        let rewards = (0..len - 1).map(|_| floats.next().unwrap()).collect();
        episodes.push(Episode {
            states,
            actions,
            rewards,
        });
    }
    Ok(OfflineDataset {
        episodes,
        d_s: header.d_s,
        d_a: header.d_a,
        tier: header.tier,
        norm_stats: header.norm_stats,
        rtg_scale: header.rtg_scale,
        normalized: header.normalized,
        synthetic: header.synthetic,
    })
}

/// One transition per row, for inspection.
pub fn export_csv(dataset: &OfflineDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let mut cols = vec!["episode".to_string(), "t".to_string()];
    cols.extend((0..dataset.d_s).map(|i| format!("s{i}")));
    cols.extend((0..dataset.d_a).map(|i| format!("a{i}")));
    cols.push("r".into());
    cols.extend((0..dataset.d_s).map(|i| format!("s_next{i}")));
    writeln!(w, "{}", cols.join(","))?;
    for (e, ep) in dataset.episodes.iter().enumerate() {
        for t in 0..ep.n_transitions() {
            let mut row = vec![e.to_string(), t.to_string()];
            row.extend(ep.states[t].iter().map(|v| format!("{v}")));
            row.extend(ep.actions[t].iter().map(|v| format!("{v}")));
            row.push(format!("{}", ep.rewards[t]));
            row.extend(ep.states[t + 1].iter().map(|v| format!("{v}")));
            writeln!(w, "{}", row.join(","))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Packs synthetic transition chains (each `H+1` transitions with chained
/// states) into a dataset so they reuse the same on-disk format.
pub fn dataset_from_chains(
    chains: &[Vec<Transition>],
    template: &OfflineDataset,
) -> Result<OfflineDataset> {
    if chains.is_empty() {
        return Err(Error::DataIntegrity("no synthetic chains".into()));
    }
    let mut episodes = Vec::with_capacity(chains.len());
    for chain in chains {
        let mut states: Vec<Vec<f64>> = Vec::with_capacity(chain.len() + 1);
        let mut actions = Vec::with_capacity(chain.len());
        let mut rewards = Vec::with_capacity(chain.len());
        for (i, tr) in chain.iter().enumerate() {
            if i == 0 {
                states.push(tr.state.clone());
            } else if tr.state != chain[i - 1].next_state {
                return Err(Error::DataIntegrity(
                    "transition chain does not connect".into(),
                ));
            } else {
                states.push(tr.state.clone());
            }
            actions.push(tr.action.clone());
            rewards.push(tr.reward);
        }
        states.push(chain.last().unwrap().next_state.clone());
        episodes.push(Episode {
            states,
            actions,
            rewards,
        });
    }
    Ok(OfflineDataset {
        episodes,
        d_s: template.d_s,
        d_a: template.d_a,
        tier: template.tier,
        norm_stats: template.norm_stats.clone(),
        rtg_scale: template.rtg_scale,
        normalized: false,
        synthetic: true,
    })
}

/// Stable map used in run reports: tier name -> count.
pub fn tier_counts(datasets: &[&OfflineDataset]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for d in datasets {
        *m.entry(d.tier.as_str().to_string()).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn toy_episode(len: usize, d_s: usize, d_a: usize, rng: &mut Rng) -> Episode {
        let states = (0..len)
            .map(|_| (0..d_s).map(|_| rng.normal()).collect())
            .collect();
        let actions = (0..len - 1)
            .map(|_| (0..d_a).map(|_| rng.uniform_range(-1.0, 1.0)).collect())
            .collect();
        let rewards = (0..len - 1).map(|_| rng.normal()).collect();
        Episode {
            states,
            actions,
            rewards,
        }
    }

    fn toy_dataset(n_eps: usize, len: usize) -> OfflineDataset {
        let mut rng = Rng::seed_from_u64(9);
        let eps = (0..n_eps).map(|_| toy_episode(len, 3, 2, &mut rng)).collect();
        OfflineDataset::from_episodes(eps, Tier::Medium).unwrap()
    }

    #[test]
    fn rtg_zero_rewards() {
        assert_eq!(compute_rtg(&[0.0, 0.0, 0.0], 0.99).unwrap(), 0.0);
    }

    #[test]
    fn rtg_undiscounted_sum() {
        assert_eq!(compute_rtg(&[1.0, 1.0, 1.0], 1.0).unwrap(), 3.0);
    }

    #[test]
    fn rtg_discounted() {
        // 1 + 0.99 + 0.99^2 evaluated directly.
        let expected = 1.0 + 0.99 + 0.99 * 0.99;
        assert!((compute_rtg(&[1.0, 1.0, 1.0], 0.99).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 2.9701).abs() < 1e-12);
    }

    #[test]
    fn rtg_rejects_non_finite() {
        assert!(compute_rtg(&[1.0, f64::NAN], 0.99).is_err());
    }

    #[test]
    fn rtg_matches_brute_force_loop() {
        let mut rng = Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = 1 + rng.below(64) as usize;
            let rewards: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let gamma = rng.uniform_range(0.5, 1.0);
            let mut brute = 0.0;
            for (k, &r) in rewards.iter().enumerate() {
                brute += gamma.powi(k as i32) * r;
            }
            let got = compute_rtg(&rewards, gamma).unwrap();
            assert!((got - brute).abs() <= 1e-12, "got {got} brute {brute}");
        }
    }

    #[test]
    fn normalize_constant_dimension_is_zero() {
        let eps = vec![Episode {
            states: vec![vec![5.0], vec![5.0], vec![5.0]],
            actions: vec![vec![0.1], vec![0.2]],
            rewards: vec![1.0, 2.0],
        }];
        let ds = OfflineDataset::from_episodes(eps, Tier::Medium).unwrap();
        let norm = normalize(&ds).unwrap();
        for ep in &norm.episodes {
            for s in &ep.states {
                assert_eq!(s[0], 0.0);
            }
        }
    }

    #[test]
    fn normalize_two_point_dataset() {
        // states {1, 3}: mean 2, population std 1 -> {-1, +1}.
        let eps = vec![Episode {
            states: vec![vec![1.0], vec![3.0]],
            actions: vec![vec![0.0]],
            rewards: vec![0.5],
        }];
        let ds = OfflineDataset::from_episodes(eps, Tier::Medium).unwrap();
        let norm = normalize(&ds).unwrap();
        assert!((norm.episodes[0].states[0][0] - -1.0).abs() < 1e-12);
        assert!((norm.episodes[0].states[1][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_round_trip() {
        let ds = toy_dataset(4, 12);
        let back = denormalize(&normalize(&ds).unwrap()).unwrap();
        for (a, b) in ds.episodes.iter().zip(&back.episodes) {
            for (sa, sb) in a.states.iter().zip(&b.states) {
                for (x, y) in sa.iter().zip(sb) {
                    assert!((x - y).abs() < 1e-9);
                }
            }
            for (x, y) in a.rewards.iter().zip(&b.rewards) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn segment_counts() {
        // length 9 episode, H=7 -> exactly 1 segment.
        let mut rng = Rng::seed_from_u64(2);
        let ds = OfflineDataset::from_episodes(
            vec![toy_episode(9, 3, 2, &mut rng)],
            Tier::Medium,
        )
        .unwrap();
        assert_eq!(extract_segments(&ds, 7, 0.99).unwrap().len(), 1);

        // length 20, H=1 -> 18 segments.
        let ds = OfflineDataset::from_episodes(
            vec![toy_episode(20, 3, 2, &mut rng)],
            Tier::Medium,
        )
        .unwrap();
        assert_eq!(extract_segments(&ds, 1, 0.99).unwrap().len(), 18);

        // length 8, H=7 -> 0 segments, no error.
        let ds = OfflineDataset::from_episodes(
            vec![toy_episode(8, 3, 2, &mut rng)],
            Tier::Medium,
        )
        .unwrap();
        assert_eq!(extract_segments(&ds, 7, 0.99).unwrap().len(), 0);
    }

    #[test]
    fn segment_count_formula_over_mixed_lengths() {
        let mut rng = Rng::seed_from_u64(5);
        let lens = [9usize, 12, 30, 8, 15];
        let eps: Vec<Episode> = lens
            .iter()
            .map(|&l| toy_episode(l, 3, 2, &mut rng))
            .collect();
        let ds = OfflineDataset::from_episodes(eps, Tier::Medium).unwrap();
        for h in [1usize, 3, 7] {
            let expected: usize = lens.iter().map(|&l| l.saturating_sub(h + 1)).sum();
            assert_eq!(extract_segments(&ds, h, 0.99).unwrap().len(), expected);
        }
    }

    #[test]
    fn segment_error_when_horizon_too_long() {
        let mut rng = Rng::seed_from_u64(6);
        let ds = OfflineDataset::from_episodes(
            vec![toy_episode(8, 3, 2, &mut rng)],
            Tier::Medium,
        )
        .unwrap();
        assert!(extract_segments(&ds, 8, 0.99).is_err());
    }

    #[test]
    fn segment_rtg_in_range_implied_by_reward_bounds() {
        let ds = toy_dataset(5, 20);
        let h = 3;
        let (r_min, r_max) = ds
            .episodes
            .iter()
            .flat_map(|e| e.rewards.iter())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                (lo.min(r), hi.max(r))
            });
        let horizon_sum = (0..=h).map(|k| 0.99f64.powi(k as i32)).sum::<f64>();
        let (g_lo, g_hi) = (
            r_min * horizon_sum / ds.rtg_scale,
            r_max * horizon_sum / ds.rtg_scale,
        );
        for (cond, _) in extract_segments(&ds, h, 0.99).unwrap() {
            assert!(cond.rtg >= g_lo - 1e-12 && cond.rtg <= g_hi + 1e-12);
        }
    }

    #[test]
    fn save_load_round_trip_bit_exact() {
        let ds = toy_dataset(7, 11);
        let dir = std::env::temp_dir().join("dawm_data_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.ds");
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(ds, back);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn load_rejects_bad_magic() {
        let dir = std::env::temp_dir().join("dawm_data_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad_magic.ds");
        std::fs::write(&path, b"NOTADSXXjunkjunkjunk").unwrap();
        match load_dataset(&path) {
            Err(Error::Format(_)) => {}
            other => panic!("expected format error, got {other:?}"),
        }
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn load_distinguishes_version_mismatch() {
        let ds = toy_dataset(2, 9);
        let dir = std::env::temp_dir().join("dawm_data_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("version.ds");
        save_dataset(&ds, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[7] = b'9'; // DAWMDS09
        std::fs::write(&path, &bytes).unwrap();
        match load_dataset(&path) {
            Err(Error::VersionMismatch { .. }) => {}
            other => panic!("expected version mismatch, got {other:?}"),
        }
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn load_detects_truncation() {
        let ds = toy_dataset(2, 9);
        let dir = std::env::temp_dir().join("dawm_data_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trunc.ds");
        save_dataset(&ds, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 16]).unwrap();
        match load_dataset(&path) {
            Err(Error::Truncated(_)) => {}
            other => panic!("expected truncation error, got {other:?}"),
        }
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn transition_count_preserved() {
        let ds = toy_dataset(10, 101); // 10 * 100 = 1000 transitions
        assert_eq!(ds.n_transitions(), 1000);
        let dir = std::env::temp_dir().join("dawm_data_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("count.ds");
        save_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap().n_transitions(), 1000);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn segment_flat_layout_round_trips() {
        let seg = TrajectorySegment::new(
            vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]],
            vec![0.1, 0.2, 0.3],
            2,
        )
        .unwrap();
        assert_eq!(seg.flat_width(), 9);
        let flat = seg.to_flat();
        let back = TrajectorySegment::from_flat(&flat, 2, 2).unwrap();
        assert_eq!(seg, back);
    }

    #[test]
    fn round_up_sig_fig_cases() {
        assert_eq!(round_up_one_sig_fig(7.34), 8.0);
        assert_eq!(round_up_one_sig_fig(43.0), 50.0);
        assert!((round_up_one_sig_fig(0.0072) - 0.008).abs() < 1e-15);
        assert_eq!(round_up_one_sig_fig(0.0), 1.0);
        assert_eq!(round_up_one_sig_fig(100.0), 100.0);
    }
}
