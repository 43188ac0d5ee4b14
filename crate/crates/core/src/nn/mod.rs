//! Minimal dense / temporal-convolution network substrate with exact
//! reverse-mode gradients, Adam, and EMA parameter shadowing.
//!
//! There is no general autodiff graph: each layer implements an explicit
//! forward that caches what its backward needs. All math is in f64 and every
//! forward is a pure function of (parameters, input), so training runs are
//! bit-reproducible.

mod checkpoint;
mod layers;
mod optim;
mod store;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use layers::{Activation, Conv1d, Conv1dCache, Dense, DenseCache, Mlp, MlpCache, MlpSpec};
pub use optim::{AdamState, EmaState};
pub use store::{Init, ParamId, ParamStore};

/// Numerically stable softplus.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `tanh(softplus(x))` computed with one exp via
/// `tanh(ln(1+e)) = e(e+2) / (e(e+2)+2)`; saturates for large x where the
/// squared exponential would overflow.
#[inline]
fn tanh_softplus(x: f64) -> (f64, f64) {
    // Returns (tanh(softplus(x)), exp(x)).
    if x > 30.0 {
        return (1.0, f64::INFINITY);
    }
    let e = x.exp();
    let num = e * (e + 2.0);
    (num / (num + 2.0), e)
}

/// Mish activation `x * tanh(softplus(x))`.
#[inline]
pub fn mish(x: f64) -> f64 {
    x * tanh_softplus(x).0
}

/// Derivative of Mish with respect to its input.
#[inline]
pub fn mish_deriv(x: f64) -> f64 {
    mish_with_deriv(x).1
}

/// Value and derivative together from a single exp; the training hot path
/// uses this so backward never recomputes the transcendentals.
#[inline]
pub fn mish_with_deriv(x: f64) -> (f64, f64) {
    let (t, e) = tanh_softplus(x);
    if e.is_infinite() {
        return (x, 1.0);
    }
    let sig = e / (1.0 + e);
    (x * t, t + x * (1.0 - t * t) * sig)
}
