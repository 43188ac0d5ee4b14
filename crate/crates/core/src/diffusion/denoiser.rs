//! Noise-prediction network over flattened trajectory segments.
//!
//! Backbone: residual temporal-convolution blocks over the
//! `(d_s + 1) x (H + 1)` segment. Each block receives a conditioning vector
//! built from a timestep embedding (2-layer MLP on sinusoidal features)
//! concatenated with either the condition `[s_t | proj(a_t) | proj(g)]`
//! (action and return-to-go each through a 3-layer MLP) or one learned null
//! embedding that replaces the whole concatenated condition. The output head
//! is zero-initialized so the untrained model predicts zero noise.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{
    mish_with_deriv, Activation, Conv1d, Conv1dCache, Dense, DenseCache, Init, Mlp, MlpCache,
    MlpSpec, ParamId, ParamStore,
};
use crate::rng::Rng;

/// Architecture description; stored in checkpoints so the network can be
/// rebuilt before loading weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub d_s: usize,
    pub d_a: usize,
    pub horizon: usize,
    pub width: usize,
    pub blocks: usize,
    pub kernel: usize,
    pub time_dim: usize,
    pub proj_dim: usize,
}

impl DenoiserConfig {
    pub fn seq_len(&self) -> usize {
        self.horizon + 1
    }

    pub fn channels(&self) -> usize {
        self.d_s + 1
    }

    pub fn sample_dim(&self) -> usize {
        self.seq_len() * self.channels()
    }

    /// Width of the concatenated condition `[s_t | proj(a) | proj(g)]`.
    pub fn cond_dim(&self) -> usize {
        self.d_s + 2 * self.proj_dim
    }
}

const TIME_FEATURES: usize = 8;

struct ResidualBlock {
    conv1: Conv1d,
    /// Projects the conditioning vector to a per-(channel, time) additive
    /// field; time-resolved so each column can receive its own shift.
    cond_proj: Dense,
    conv2: Conv1d,
    skip: Option<Conv1d>,
    c_out: usize,
    len: usize,
}

struct BlockCache {
    conv1: Conv1dCache,
    cond_proj: DenseCache,
    /// Mish derivative at the bias-shifted pre-activation of the first conv.
    biased_deriv: Vec<f64>,
    conv2: Conv1dCache,
    skip: Option<Conv1dCache>,
}

impl ResidualBlock {
    fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        cond_full_dim: usize,
        len: usize,
        rng: &mut Rng,
    ) -> Self {
        let conv1 = Conv1d::new(store, &format!("{name}.conv1"), c_in, c_out, kernel, Activation::Identity, rng);
        let cond_proj = Dense::new(store, &format!("{name}.cond"), cond_full_dim, c_out * len, Activation::Identity, rng);
        let conv2 = Conv1d::new(store, &format!("{name}.conv2"), c_out, c_out, kernel, Activation::Mish, rng);
        let skip = (c_in != c_out).then(|| {
            Conv1d::new(store, &format!("{name}.skip"), c_in, c_out, 1, Activation::Identity, rng)
        });
        ResidualBlock {
            conv1,
            cond_proj,
            conv2,
            skip,
            c_out,
            len,
        }
    }

    fn forward(
        &self,
        store: &ParamStore,
        x: &[f64],
        cond_full: &[f64],
        n: usize,
        len: usize,
    ) -> Result<(Vec<f64>, BlockCache)> {
        debug_assert_eq!(len, self.len);
        let (pre1, c1) = self.conv1.forward(store, x, n, len)?;
        let (bias, cproj) = self.cond_proj.forward(store, cond_full, n)?;
        // bias rows are laid out [c_out][len], matching pre1 rows.
        let mut h1 = pre1;
        let mut biased_deriv = vec![0.0; h1.len()];
        for i in 0..h1.len() {
            let (v, d) = mish_with_deriv(h1[i] + bias[i]);
            h1[i] = v;
            biased_deriv[i] = d;
        }
        let (h2, c2) = self.conv2.forward(store, &h1, n, len)?;
        let (skip_out, skip_cache) = match &self.skip {
            Some(conv) => {
                let (s, c) = conv.forward(store, x, n, len)?;
                (s, Some(c))
            }
            None => (x.to_vec(), None),
        };
        let out: Vec<f64> = h2.iter().zip(&skip_out).map(|(a, b)| a + b).collect();
        Ok((
            out,
            BlockCache {
                conv1: c1,
                cond_proj: cproj,
                biased_deriv,
                conv2: c2,
                skip: skip_cache,
            },
        ))
    }

    /// Returns `(d_input, d_cond_full)`.
    fn backward(
        &self,
        store: &mut ParamStore,
        cache: &BlockCache,
        upstream: &[f64],
        n: usize,
        len: usize,
        accumulate: bool,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        // Residual add fans the upstream into both branches.
        let d_h1 = self.conv2.backward(store, &cache.conv2, upstream, accumulate)?;
        let mut d_biased = vec![0.0; d_h1.len()];
        for (d, (&u, &dv)) in d_biased
            .iter_mut()
            .zip(d_h1.iter().zip(&cache.biased_deriv))
        {
            *d = u * dv;
        }
        // The time-resolved bias receives the gradient elementwise.
        let d_cond_full = self
            .cond_proj
            .backward(store, &cache.cond_proj, &d_biased, accumulate)?;
        let mut d_input = self
            .conv1
            .backward(store, &cache.conv1, &d_biased, accumulate)?;
        match (&self.skip, &cache.skip) {
            (Some(conv), Some(sc)) => {
                let d_skip = conv.backward(store, sc, upstream, accumulate)?;
                for (a, b) in d_input.iter_mut().zip(&d_skip) {
                    *a += b;
                }
            }
            _ => {
                for (a, b) in d_input.iter_mut().zip(upstream) {
                    *a += b;
                }
            }
        }
        Ok((d_input, d_cond_full))
    }
}

/// Epsilon-prediction network; output shape equals the input segment shape.
pub struct Denoiser {
    pub config: DenoiserConfig,
    time_mlp: Mlp,
    rtg_mlp: Mlp,
    act_mlp: Mlp,
    null_embed: ParamId,
    blocks: Vec<ResidualBlock>,
    out_conv: Conv1d,
}

/// Per-sample conditioning inputs for one batch; states are already
/// standardized, `rtg` is already divided by the dataset scale.
pub struct CondBatch<'a> {
    pub states: &'a [f64],
    pub actions: &'a [f64],
    pub rtgs: &'a [f64],
    pub nulls: &'a [bool],
}

pub struct DenoiserCache {
    n: usize,
    time: MlpCache,
    rtg: MlpCache,
    act: MlpCache,
    nulls: Vec<bool>,
    blocks: Vec<BlockCache>,
    out: Conv1dCache,
}

impl Denoiser {
    pub fn new(store: &mut ParamStore, config: &DenoiserConfig, rng: &mut Rng) -> Self {
        let t = config.time_dim;
        let p = config.proj_dim;
        let time_mlp = Mlp::new(
            store,
            "dwm.time",
            &MlpSpec::new(vec![TIME_FEATURES, t, t], Activation::Mish, Activation::Identity),
            rng,
        );
        let rtg_mlp = Mlp::new(
            store,
            "dwm.rtg",
            &MlpSpec::new(vec![1, p, p, p], Activation::Mish, Activation::Identity),
            rng,
        );
        let act_mlp = Mlp::new(
            store,
            "dwm.act",
            &MlpSpec::new(vec![config.d_a, p, p, p], Activation::Mish, Activation::Identity),
            rng,
        );
        let null_embed = store.add(
            "dwm.null_embed",
            &[config.cond_dim()],
            Init::SmallUniform { scale: 0.1 },
            rng,
        );
        let cond_full_dim = t + config.cond_dim();
        let mut blocks = Vec::with_capacity(config.blocks);
        // One extra input channel carries the time-axis position so the
        // translation-equivariant convs can distinguish the columns.
        let mut c_in = config.channels() + 1;
        for i in 0..config.blocks {
            blocks.push(ResidualBlock::new(
                store,
                &format!("dwm.block{i}"),
                c_in,
                config.width,
                config.kernel,
                cond_full_dim,
                config.seq_len(),
                rng,
            ));
            c_in = config.width;
        }
        let out_conv = Conv1d::new_zeroed(
            store,
            "dwm.out",
            config.width,
            config.channels(),
            1,
            Activation::Identity,
            rng,
        );
        Denoiser {
            config: config.clone(),
            time_mlp,
            rtg_mlp,
            act_mlp,
            null_embed,
            blocks,
            out_conv,
        }
    }

    fn time_features(k: usize, out: &mut [f64]) {
        let half = TIME_FEATURES / 2;
        for i in 0..half {
            let freq = 10_000f64.powf(-(i as f64) / half as f64);
            out[2 * i] = (k as f64 * freq).sin();
            out[2 * i + 1] = (k as f64 * freq).cos();
        }
    }

    /// Predicts the noise for a batch of noisy segments.
    pub fn forward(
        &self,
        store: &ParamStore,
        x: &[f64],
        ks: &[usize],
        cond: &CondBatch,
    ) -> Result<(Vec<f64>, DenoiserCache)> {
        let n = ks.len();
        let cfg = &self.config;
        let len = cfg.seq_len();
        let d_c = cfg.cond_dim();

        let mut t_feat = vec![0.0; n * TIME_FEATURES];
        for (r, &k) in ks.iter().enumerate() {
            Self::time_features(k, &mut t_feat[r * TIME_FEATURES..(r + 1) * TIME_FEATURES]);
        }
        let (t_emb, time_cache) = self.time_mlp.forward(store, &t_feat, n)?;
        let (rtg_proj, rtg_cache) = self.rtg_mlp.forward(store, cond.rtgs, n)?;
        let (act_proj, act_cache) = self.act_mlp.forward(store, cond.actions, n)?;

        let t = cfg.time_dim;
        let p = cfg.proj_dim;
        let null_embed = store.value(self.null_embed);
        let mut cond_full = vec![0.0; n * (t + d_c)];
        for r in 0..n {
            let row = &mut cond_full[r * (t + d_c)..(r + 1) * (t + d_c)];
            row[..t].copy_from_slice(&t_emb[r * t..(r + 1) * t]);
            if cond.nulls[r] {
                row[t..].copy_from_slice(null_embed);
            } else {
                row[t..t + cfg.d_s].copy_from_slice(&cond.states[r * cfg.d_s..(r + 1) * cfg.d_s]);
                row[t + cfg.d_s..t + cfg.d_s + p].copy_from_slice(&act_proj[r * p..(r + 1) * p]);
                row[t + cfg.d_s + p..].copy_from_slice(&rtg_proj[r * p..(r + 1) * p]);
            }
        }

        // Append the positional channel per sample.
        let c = cfg.channels();
        let mut h = vec![0.0; n * (c + 1) * len];
        for r in 0..n {
            let dst = &mut h[r * (c + 1) * len..];
            dst[..c * len].copy_from_slice(&x[r * c * len..(r + 1) * c * len]);
            for j in 0..len {
                dst[c * len + j] = if len > 1 {
                    2.0 * j as f64 / (len - 1) as f64 - 1.0
                } else {
                    0.0
                };
            }
        }
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(store, &h, &cond_full, n, len)?;
            block_caches.push(cache);
            h = next;
        }
        let (eps, out_cache) = self.out_conv.forward(store, &h, n, len)?;
        Ok((
            eps,
            DenoiserCache {
                n,
                time: time_cache,
                rtg: rtg_cache,
                act: act_cache,
                nulls: cond.nulls.to_vec(),
                blocks: block_caches,
                out: out_cache,
            },
        ))
    }

    /// Accumulates gradients of a scalar loss given `d loss / d eps`.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &DenoiserCache,
        upstream: &[f64],
    ) -> Result<()> {
        let n = cache.n;
        let cfg = &self.config;
        let len = cfg.seq_len();
        let t = cfg.time_dim;
        let p = cfg.proj_dim;
        let d_c = cfg.cond_dim();

        let mut d_h = self.out_conv.backward(store, &cache.out, upstream, true)?;
        let mut d_cond_full = vec![0.0; n * (t + d_c)];
        for (block, bcache) in self.blocks.iter().zip(&cache.blocks).rev() {
            let (d_in, d_cond) = block.backward(store, bcache, &d_h, n, len, true)?;
            d_h = d_in;
            for (a, b) in d_cond_full.iter_mut().zip(&d_cond) {
                *a += b;
            }
        }

        // Split the condition gradient: timestep part always flows; the rest
        // goes to the null embedding on masked rows and to the projection
        // MLPs otherwise.
        let mut d_time = vec![0.0; n * t];
        let mut d_act = vec![0.0; n * p];
        let mut d_rtg = vec![0.0; n * p];
        {
            let null_grad = store.grad_mut(self.null_embed);
            for r in 0..n {
                let row = &d_cond_full[r * (t + d_c)..(r + 1) * (t + d_c)];
                d_time[r * t..(r + 1) * t].copy_from_slice(&row[..t]);
                if cache.nulls[r] {
                    for (g, v) in null_grad.iter_mut().zip(&row[t..]) {
                        *g += v;
                    }
                } else {
                    // State slot is a raw input, no parameters behind it.
                    d_act[r * p..(r + 1) * p]
                        .copy_from_slice(&row[t + cfg.d_s..t + cfg.d_s + p]);
                    d_rtg[r * p..(r + 1) * p].copy_from_slice(&row[t + cfg.d_s + p..]);
                }
            }
        }
        self.time_mlp.backward(store, &cache.time, &d_time, true)?;
        self.act_mlp.backward(store, &cache.act, &d_act, true)?;
        self.rtg_mlp.backward(store, &cache.rtg, &d_rtg, true)?;
        Ok(())
    }

    /// Parameter ids of the two condition-projection MLPs (used by tests to
    /// verify the null mask cuts their gradients).
    pub fn cond_projection_params(&self) -> Vec<ParamId> {
        self.rtg_mlp
            .layers
            .iter()
            .chain(self.act_mlp.layers.iter())
            .flat_map(|l| [l.w, l.b])
            .collect()
    }

    /// Weight tensor of the (zero-initialized) output head.
    pub fn out_conv_w(&self) -> ParamId {
        self.out_conv.w
    }
}
