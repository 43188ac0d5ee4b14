//! Dense and temporal-convolution layers with explicit backward passes.
//!
//! Batches are row-major flat slices: a dense input of `n` rows and width `d`
//! is `n * d` long; a conv input of `n` samples, `c` channels and length `l`
//! is `n * c * l` long with channel-major samples.

use crate::error::{Error, Result};
use crate::nn::store::{Init, ParamId, ParamStore};
use crate::nn::{mish, mish_deriv, mish_with_deriv};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Mish,
}

impl Activation {
    #[inline]
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Mish => mish(x),
        }
    }

    /// Derivative with respect to the pre-activation input.
    #[inline]
    fn deriv(&self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Mish => mish_deriv(x),
        }
    }

    /// Value and derivative in one pass.
    #[inline]
    fn apply_with_deriv(&self, x: f64) -> (f64, f64) {
        match self {
            Activation::Identity => (x, 1.0),
            Activation::Relu => {
                if x > 0.0 {
                    (x, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                (t, 1.0 - t * t)
            }
            Activation::Mish => mish_with_deriv(x),
        }
    }
}

/// Fully connected layer `y = act(x W^T + b)` with `W: [out, in]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
    pub act: Activation,
}

/// Forward cache: the input batch and activation derivatives at the
/// pre-activations.
#[derive(Debug)]
pub struct DenseCache {
    input: Vec<f64>,
    deriv: Vec<f64>,
    n: usize,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        act: Activation,
        rng: &mut Rng,
    ) -> Self {
        let w = store.add(
            &format!("{name}.w"),
            &[out_dim, in_dim],
            Init::KaimingUniform { fan_in: in_dim },
            rng,
        );
        let b = store.add(&format!("{name}.b"), &[out_dim], Init::Zero, rng);
        Dense {
            w,
            b,
            in_dim,
            out_dim,
            act,
        }
    }

    /// Like [`Dense::new`] but with zero-initialized weights (used for output
    /// heads that should start by predicting zero).
    pub fn new_zeroed(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        act: Activation,
        rng: &mut Rng,
    ) -> Self {
        let w = store.add(&format!("{name}.w"), &[out_dim, in_dim], Init::Zero, rng);
        let b = store.add(&format!("{name}.b"), &[out_dim], Init::Zero, rng);
        Dense {
            w,
            b,
            in_dim,
            out_dim,
            act,
        }
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        input: &[f64],
        n: usize,
    ) -> Result<(Vec<f64>, DenseCache)> {
        if input.len() != n * self.in_dim {
            return Err(Error::ShapeMismatch {
                layer: store.name(self.w).to_string(),
                expected: n * self.in_dim,
                actual: input.len(),
            });
        }
        let w = store.value(self.w);
        let b = store.value(self.b);
        let mut out = vec![0.0; n * self.out_dim];
        for r in 0..n {
            let x = &input[r * self.in_dim..(r + 1) * self.in_dim];
            let yrow = &mut out[r * self.out_dim..(r + 1) * self.out_dim];
            for (o, out_v) in yrow.iter_mut().enumerate() {
                let wrow = &w[o * self.in_dim..(o + 1) * self.in_dim];
                let mut acc = b[o];
                for (xi, wi) in x.iter().zip(wrow) {
                    acc += xi * wi;
                }
                *out_v = acc;
            }
        }
        let mut deriv = vec![0.0; n * self.out_dim];
        for (y, d) in out.iter_mut().zip(deriv.iter_mut()) {
            let (v, dv) = self.act.apply_with_deriv(*y);
            *y = v;
            *d = dv;
        }
        Ok((
            out,
            DenseCache {
                input: input.to_vec(),
                deriv,
                n,
            },
        ))
    }

    /// Accumulates parameter gradients (unless `accumulate` is false) and
    /// returns the gradient with respect to the input.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &DenseCache,
        upstream: &[f64],
        accumulate: bool,
    ) -> Result<Vec<f64>> {
        if upstream.len() != cache.n * self.out_dim {
            return Err(Error::ShapeMismatch {
                layer: store.name(self.w).to_string(),
                expected: cache.n * self.out_dim,
                actual: upstream.len(),
            });
        }
        let n = cache.n;
        let mut dpre = vec![0.0; n * self.out_dim];
        for (dp, (&u, &d)) in dpre.iter_mut().zip(upstream.iter().zip(&cache.deriv)) {
            *dp = u * d;
        }
        let mut dinput = vec![0.0; n * self.in_dim];
        {
            let w = store.value(self.w);
            for r in 0..n {
                let dp = &dpre[r * self.out_dim..(r + 1) * self.out_dim];
                let dx = &mut dinput[r * self.in_dim..(r + 1) * self.in_dim];
                for (o, &d) in dp.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let wrow = &w[o * self.in_dim..(o + 1) * self.in_dim];
                    for (dxi, wi) in dx.iter_mut().zip(wrow) {
                        *dxi += d * wi;
                    }
                }
            }
        }
        if accumulate {
            let (w_id, b_id) = (self.w, self.b);
            {
                let gw = store.grad_mut(w_id);
                for r in 0..n {
                    let x = &cache.input[r * self.in_dim..(r + 1) * self.in_dim];
                    let dp = &dpre[r * self.out_dim..(r + 1) * self.out_dim];
                    for (o, &d) in dp.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        let grow = &mut gw[o * self.in_dim..(o + 1) * self.in_dim];
                        for (g, xi) in grow.iter_mut().zip(x) {
                            *g += d * xi;
                        }
                    }
                }
            }
            let gb = store.grad_mut(b_id);
            for r in 0..n {
                let dp = &dpre[r * self.out_dim..(r + 1) * self.out_dim];
                for (g, &d) in gb.iter_mut().zip(dp) {
                    *g += d;
                }
            }
        }
        Ok(dinput)
    }
}

/// Layer widths plus activations; `widths` includes input and output dims.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub hidden_act: Activation,
    pub out_act: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, hidden_act: Activation, out_act: Activation) -> Self {
        MlpSpec {
            widths,
            hidden_act,
            out_act,
        }
    }
}

/// Stack of dense layers built from an [`MlpSpec`].
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

#[derive(Debug)]
pub struct MlpCache {
    caches: Vec<DenseCache>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, spec: &MlpSpec, rng: &mut Rng) -> Self {
        assert!(spec.widths.len() >= 2, "MLP needs at least input and output");
        let mut layers = Vec::new();
        for i in 0..spec.widths.len() - 1 {
            let act = if i + 2 == spec.widths.len() {
                spec.out_act
            } else {
                spec.hidden_act
            };
            layers.push(Dense::new(
                store,
                &format!("{name}.l{i}"),
                spec.widths[i],
                spec.widths[i + 1],
                act,
                rng,
            ));
        }
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        input: &[f64],
        n: usize,
    ) -> Result<(Vec<f64>, MlpCache)> {
        let mut x = input.to_vec();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, cache) = layer.forward(store, &x, n)?;
            caches.push(cache);
            x = y;
        }
        Ok((x, MlpCache { caches }))
    }

    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &MlpCache,
        upstream: &[f64],
        accumulate: bool,
    ) -> Result<Vec<f64>> {
        let mut grad = upstream.to_vec();
        for (layer, c) in self.layers.iter().zip(&cache.caches).rev() {
            grad = layer.backward(store, c, &grad, accumulate)?;
        }
        Ok(grad)
    }
}

/// 1-d convolution over the time axis with same padding (odd kernel).
/// Weights are `[c_out, c_in, k]`; inputs `[n, c_in, len]` channel-major.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub act: Activation,
}

#[derive(Debug)]
pub struct Conv1dCache {
    input: Vec<f64>,
    deriv: Vec<f64>,
    n: usize,
    len: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        act: Activation,
        rng: &mut Rng,
    ) -> Self {
        assert!(k % 2 == 1, "same padding requires an odd kernel");
        let w = store.add(
            &format!("{name}.w"),
            &[c_out, c_in, k],
            Init::KaimingUniform { fan_in: c_in * k },
            rng,
        );
        let b = store.add(&format!("{name}.b"), &[c_out], Init::Zero, rng);
        Conv1d {
            w,
            b,
            c_in,
            c_out,
            k,
            act,
        }
    }

    pub fn new_zeroed(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        act: Activation,
        rng: &mut Rng,
    ) -> Self {
        assert!(k % 2 == 1);
        let w = store.add(&format!("{name}.w"), &[c_out, c_in, k], Init::Zero, rng);
        let b = store.add(&format!("{name}.b"), &[c_out], Init::Zero, rng);
        Conv1d {
            w,
            b,
            c_in,
            c_out,
            k,
            act,
        }
    }

    /// Unrolled patch matrix for one sample: row `t` holds the receptive
    /// field `x[ci][t + j - pad]` flattened as `ci * k + j`, matching the
    /// weight layout so the conv becomes `len` dot products per channel.
    fn im2col(&self, sample: &[f64], len: usize, padded: &mut [f64], col: &mut [f64]) {
        let pad = self.k / 2;
        let lp = len + 2 * pad;
        let cols_w = self.c_in * self.k;
        for ci in 0..self.c_in {
            padded[ci * lp + pad..ci * lp + pad + len]
                .copy_from_slice(&sample[ci * len..(ci + 1) * len]);
        }
        for t in 0..len {
            let row = &mut col[t * cols_w..(t + 1) * cols_w];
            for ci in 0..self.c_in {
                row[ci * self.k..(ci + 1) * self.k]
                    .copy_from_slice(&padded[ci * lp + t..ci * lp + t + self.k]);
            }
        }
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        input: &[f64],
        n: usize,
        len: usize,
    ) -> Result<(Vec<f64>, Conv1dCache)> {
        if input.len() != n * self.c_in * len {
            return Err(Error::ShapeMismatch {
                layer: store.name(self.w).to_string(),
                expected: n * self.c_in * len,
                actual: input.len(),
            });
        }
        let w = store.value(self.w);
        let b = store.value(self.b);
        let pad = self.k / 2;
        let lp = len + 2 * pad;
        let cols_w = self.c_in * self.k;
        let mut padded = vec![0.0; self.c_in * lp];
        let mut col = vec![0.0; len * cols_w];
        let mut out = vec![0.0; n * self.c_out * len];
        for r in 0..n {
            let xin = &input[r * self.c_in * len..(r + 1) * self.c_in * len];
            self.im2col(xin, len, &mut padded, &mut col);
            let yout = &mut out[r * self.c_out * len..(r + 1) * self.c_out * len];
            for co in 0..self.c_out {
                let wrow = &w[co * cols_w..(co + 1) * cols_w];
                let yrow = &mut yout[co * len..(co + 1) * len];
                for (t, y) in yrow.iter_mut().enumerate() {
                    let crow = &col[t * cols_w..(t + 1) * cols_w];
                    let mut acc = b[co];
                    for (wv, cv) in wrow.iter().zip(crow) {
                        acc += wv * cv;
                    }
                    *y = acc;
                }
            }
        }
        let mut deriv = vec![0.0; n * self.c_out * len];
        for (y, d) in out.iter_mut().zip(deriv.iter_mut()) {
            let (v, dv) = self.act.apply_with_deriv(*y);
            *y = v;
            *d = dv;
        }
        Ok((
            out,
            Conv1dCache {
                input: input.to_vec(),
                deriv,
                n,
                len,
            },
        ))
    }

    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &Conv1dCache,
        upstream: &[f64],
        accumulate: bool,
    ) -> Result<Vec<f64>> {
        let (n, len) = (cache.n, cache.len);
        if upstream.len() != n * self.c_out * len {
            return Err(Error::ShapeMismatch {
                layer: store.name(self.w).to_string(),
                expected: n * self.c_out * len,
                actual: upstream.len(),
            });
        }
        let pad = self.k / 2;
        let lp = len + 2 * pad;
        let cols_w = self.c_in * self.k;
        let mut dpre = vec![0.0; n * self.c_out * len];
        for (dp, (&u, &d)) in dpre.iter_mut().zip(upstream.iter().zip(&cache.deriv)) {
            *dp = u * d;
        }
        let mut dinput = vec![0.0; n * self.c_in * len];
        let mut d_col = vec![0.0; len * cols_w];
        let mut padded = vec![0.0; self.c_in * lp];
        let mut col = vec![0.0; len * cols_w];
        for r in 0..n {
            let dy = &dpre[r * self.c_out * len..(r + 1) * self.c_out * len];
            // d_col = W^T dy per output position.
            d_col.iter_mut().for_each(|v| *v = 0.0);
            {
                let w = store.value(self.w);
                for co in 0..self.c_out {
                    let wrow = &w[co * cols_w..(co + 1) * cols_w];
                    let dyrow = &dy[co * len..(co + 1) * len];
                    for (t, &d) in dyrow.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        let crow = &mut d_col[t * cols_w..(t + 1) * cols_w];
                        for (c, wv) in crow.iter_mut().zip(wrow) {
                            *c += d * wv;
                        }
                    }
                }
            }
            // col2im scatter back to the input gradient.
            let dx = &mut dinput[r * self.c_in * len..(r + 1) * self.c_in * len];
            for t in 0..len {
                let crow = &d_col[t * cols_w..(t + 1) * cols_w];
                for ci in 0..self.c_in {
                    for j in 0..self.k {
                        let src_t = t + j;
                        if src_t >= pad && src_t < pad + len {
                            dx[ci * len + src_t - pad] += crow[ci * self.k + j];
                        }
                    }
                }
            }
            if accumulate {
                let xin = &cache.input[r * self.c_in * len..(r + 1) * self.c_in * len];
                self.im2col(xin, len, &mut padded, &mut col);
                let gw = store.grad_mut(self.w);
                for co in 0..self.c_out {
                    let grow = &mut gw[co * cols_w..(co + 1) * cols_w];
                    let dyrow = &dy[co * len..(co + 1) * len];
                    for (t, &d) in dyrow.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        let crow = &col[t * cols_w..(t + 1) * cols_w];
                        for (g, cv) in grow.iter_mut().zip(crow) {
                            *g += d * cv;
                        }
                    }
                }
                let gb = store.grad_mut(self.b);
                for (co, g) in gb.iter_mut().enumerate() {
                    *g += dy[co * len..(co + 1) * len].iter().sum::<f64>();
                }
            }
        }
        Ok(dinput)
    }
}
