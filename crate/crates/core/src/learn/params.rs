use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::learn::{Real, Tensor};

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T: Real = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }
}

/// Weight initialisation schemes (centered uniform, fan-in scaled).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// He-style bound `sqrt(6 / ((1 + a²)·fan_in))` for leaky-relu layers.
    He { leak: f64 },
    /// Xavier-style bound `sqrt(6 / (fan_in + fan_out))`.
    Xavier,
    Zeros,
}

impl Init {
    pub fn sample<T: Real>(
        self,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Tensor<T> {
        let bound = match self {
            Init::He { leak } => (6.0 / ((1.0 + leak * leak) * fan_in as f64)).sqrt(),
            Init::Xavier => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            Init::Zeros => return Tensor::zeros(shape),
        };
        Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-bound..bound)))
    }
}

/// Ordered collection of a model's parameters.
///
/// Each store carries a process-unique id so gradients computed on a
/// [`Graph`](crate::learn::Graph) can be routed back to the right store.
/// Frozen stores take part in forward passes but never receive gradients.
#[derive(Debug, PartialEq)]
pub struct ParamStore<T: Real = f32> {
    id: u64,
    params: Vec<Parameter<T>>,
    frozen: bool,
}

impl<T: Real> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        Self {
            id: fresh_id(),
            params: self.params.clone(),
            frozen: self.frozen,
        }
    }
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            id: fresh_id(),
            params: Vec::new(),
            frozen: false,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        self.params.push(Parameter::new(name, value));
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, index: usize) -> &Parameter<T> {
        &self.params[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Parameter<T> {
        &mut self.params[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
        self.zero_grad();
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(T::zero());
        }
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Same parameters in another precision (fresh store id).
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            id: fresh_id(),
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                })
                .collect(),
            frozen: self.frozen,
        }
    }

    /// SHA-256 over parameter names, shapes and little-endian values.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for &d in p.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in p.value.data() {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn he_bound_respected_and_seeded() {
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(1);
        let t: Tensor<f32> = Init::He { leak: 0.0 }.sample(&[8, 4, 3, 3], 36, 72, &mut a);
        let u: Tensor<f32> = Init::He { leak: 0.0 }.sample(&[8, 4, 3, 3], 36, 72, &mut b);
        assert_eq!(t, u);
        let bound = (6.0f32 / 36.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn cloned_store_gets_new_id() {
        let mut s = ParamStore::<f32>::new();
        s.push("w", Tensor::zeros(&[2]));
        let c = s.clone();
        assert_ne!(s.id(), c.id());
        assert_eq!(s.checksum(), c.checksum());
    }
}
