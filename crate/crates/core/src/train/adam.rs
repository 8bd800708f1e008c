use crate::error::{Error, Result};
use crate::tensor::{Element, ParamStore};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment estimates for every trainable entry of a [`ParamStore`], indexed like the
/// store. Non-trainable entries hold empty vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Element> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = store
            .entries()
            .iter()
            .map(|e| if e.trainable { vec![T::zero(); e.tensor.len()] } else { Vec::new() })
            .collect();
        AdamState { m: zeros.clone(), v: zeros, t: 0, beta1: BETA1, beta2: BETA2, epsilon: EPSILON }
    }

    /// One bias-corrected update from the gradients accumulated in `store`.
    /// Entries without a gradient are treated as having a zero gradient. Any
    /// non-finite gradient aborts the step before anything is modified.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} entries, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        for e in store.entries().iter().filter(|e| e.trainable) {
            if let Some(g) = e.tensor.grad() {
                if g.iter().any(|v| !v.as_f64().is_finite()) {
                    return Err(Error::NonFinite { name: format!("gradient of {}", e.name) });
                }
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            if !store.entry(id).trainable {
                continue;
            }
            let tensor = store.get_mut(id);
            let grad = tensor.grad().map(|g| g.to_vec());
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in tensor.data_mut().iter_mut().enumerate() {
                let g = grad.as_ref().map_or(0.0, |g| g[j].as_f64());
                let mj = b1 * m[j].as_f64() + (1.0 - b1) * g;
                let vj = b2 * v[j].as_f64() + (1.0 - b2) * g * g;
                m[j] = T::from_f64(mj);
                v[j] = T::from_f64(vj);
                let update = lr * (mj / bc1) / ((vj / bc2).sqrt() + eps);
                *p = T::from_f64(p.as_f64() - update);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", &[1], vec![w], true).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = scalar_store(0.0);
        let mut adam = AdamState::new(&s);
        let id = s.id("w").unwrap();
        s.get_mut(id).accumulate_grad(&[1.0]);
        adam.step(&mut s, 1e-3).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((s.get(id).data()[0] - expected).abs() < 1e-15);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut s = scalar_store(0.5);
        let mut adam = AdamState::new(&s);
        adam.step(&mut s, 1e-3).unwrap();
        assert_eq!(s.get(s.id("w").unwrap()).data()[0], 0.5);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn nan_gradient_aborts_with_name() {
        let mut s = scalar_store(0.5);
        let mut adam = AdamState::new(&s);
        let id = s.id("w").unwrap();
        s.get_mut(id).accumulate_grad(&[f64::NAN]);
        let err = adam.step(&mut s, 1e-3).unwrap_err().to_string();
        assert!(err.contains("gradient of w"), "{err}");
        assert_eq!(adam.t, 0);
        assert_eq!(s.get(id).data()[0], 0.5);
    }

    #[test]
    fn buffers_are_not_updated() {
        let mut s = scalar_store(0.5);
        let b = s.add("stat", &[1], vec![2.0], false).unwrap();
        s.get_mut(b).accumulate_grad(&[1.0]);
        let mut adam = AdamState::new(&s);
        adam.step(&mut s, 1e-3).unwrap();
        assert_eq!(s.get(b).data()[0], 2.0);
    }
}
