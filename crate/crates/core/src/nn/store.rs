//! Flat named parameter collection with a mirrored gradient buffer.

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Handle into a [`ParamStore`]; cheap to copy, tied to the store that
/// created it by declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zero,
    /// Uniform Kaiming-style fan-in scaling: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
    KaimingUniform { fan_in: usize },
    /// Small uniform values for embeddings.
    SmallUniform { scale: f64 },
}

/// Named parameter tensors plus a gradient buffer of identical shapes.
/// One store is exclusively owned by one training loop; evaluation workers
/// get cloned snapshots.
#[derive(Debug, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<f64>>,
    grads: Vec<Vec<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            shapes: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut Rng) -> ParamId {
        let n: usize = shape.iter().product();
        let values = match init {
            Init::Zero => vec![0.0; n],
            Init::KaimingUniform { fan_in } => {
                let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| rng.uniform_range(-bound, bound)).collect()
            }
            Init::SmallUniform { scale } => {
                (0..n).map(|_| rng.uniform_range(-scale, scale)).collect()
            }
        };
        self.names.push(name.to_string());
        self.shapes.push(shape.to_vec());
        self.values.push(values);
        self.grads.push(vec![0.0; n]);
        ParamId(self.names.len() - 1)
    }

    pub fn n_tensors(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.shapes[id.0]
    }

    #[inline]
    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.values[id.0]
    }

    #[inline]
    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    #[inline]
    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id.0]
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Copies of all value tensors in declaration order.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.values.clone()
    }

    /// Value tensors without copying.
    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Disjoint mutable value / immutable gradient views of one tensor.
    #[inline]
    pub fn value_grad_mut(&mut self, id: ParamId) -> (&mut [f64], &[f64]) {
        (&mut self.values[id.0], &self.grads[id.0])
    }

    /// Overwrites all values from a snapshot with matching shapes.
    pub fn load_snapshot(&mut self, snapshot: &[Vec<f64>]) -> Result<()> {
        if snapshot.len() != self.values.len() {
            return Err(Error::DimensionMismatch(format!(
                "snapshot has {} tensors, store has {}",
                snapshot.len(),
                self.values.len()
            )));
        }
        for (i, s) in snapshot.iter().enumerate() {
            if s.len() != self.values[i].len() {
                return Err(Error::DimensionMismatch(format!(
                    "tensor `{}`: snapshot len {} != {}",
                    self.names[i],
                    s.len(),
                    self.values[i].len()
                )));
            }
            self.values[i].copy_from_slice(s);
        }
        Ok(())
    }

    /// Polyak update of this store toward `online`:
    /// `self <- tau * online + (1 - tau) * self`.
    pub fn polyak_from(&mut self, online: &ParamStore, tau: f64) -> Result<()> {
        if online.values.len() != self.values.len() {
            return Err(Error::DimensionMismatch(
                "polyak: store layouts differ".into(),
            ));
        }
        for (mine, theirs) in self.values.iter_mut().zip(&online.values) {
            for (t, o) in mine.iter_mut().zip(theirs) {
                *t = tau * o + (1.0 - tau) * *t;
            }
        }
        Ok(())
    }

    pub fn iter_names(&self) -> impl Iterator<Item = &String> {
        self.names.iter()
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_sums_shapes() {
        let mut rng = Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        store.add("a", &[3, 4], Init::Zero, &mut rng);
        store.add("b", &[7], Init::KaimingUniform { fan_in: 3 }, &mut rng);
        assert_eq!(store.param_count(), 19);
    }

    #[test]
    fn polyak_is_exact() {
        let mut rng = Rng::seed_from_u64(2);
        let mut online = ParamStore::new();
        let id = online.add("w", &[4], Init::KaimingUniform { fan_in: 4 }, &mut rng);
        let mut target = online.clone();
        let before = target.value(id).to_vec();
        let tau = 0.005;
        online.value_mut(id).iter_mut().for_each(|v| *v += 1.0);
        target.polyak_from(&online, tau).unwrap();
        for i in 0..4 {
            let expected = tau * online.value(id)[i] + (1.0 - tau) * before[i];
            assert_eq!(target.value(id)[i], expected);
        }
    }
}
