//! First-order optimizers over a [`ParamStore`]. Only trainable entries move;
//! buffers are left alone.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tape::ParamGrads;
use crate::tensor::Tensor;

fn check_aligned<T: Real>(op: &'static str, store: &ParamStore<T>, grads: &ParamGrads<T>) -> Result<()> {
    if grads.len() != store.len() {
        return Err(Error::invalid(
            op,
            format!("{} gradients for {} parameters", grads.len(), store.len()),
        ));
    }
    for (id, p) in store.iter() {
        if grads.get(id).shape() != p.value.shape() {
            return Err(Error::shapes(op, p.value.shape(), grads.get(id).shape()));
        }
    }
    Ok(())
}

/// Stochastic gradient descent with heavy-ball momentum:
/// `v ← μ·v + g`, `p ← p − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    velocity: Vec<Tensor<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: T, momentum: T) -> Result<Self> {
        if lr <= T::zero() || momentum < T::zero() || momentum >= T::one() {
            return Err(Error::invalid("sgd", format!("lr={lr}, momentum={momentum}")));
        }
        Ok(Self { lr, momentum, velocity: Vec::new() })
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &ParamGrads<T>) -> Result<()> {
        check_aligned("sgd_step", store, grads)?;
        if self.velocity.is_empty() {
            self.velocity = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        }
        for id in store.trainable_ids() {
            let v = &mut self.velocity[id.index()];
            for (vi, &g) in v.data_mut().iter_mut().zip(grads.get(id).data()) {
                *vi = self.momentum * *vi + g;
            }
            store.value_mut(id).axpy(-self.lr, v);
        }
        Ok(())
    }
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    t: i32,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    /// `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn new(lr: T) -> Self {
        Self::with_params(lr, T::from_f64(0.9).unwrap(), T::from_f64(0.999).unwrap(), T::from_f64(1e-8).unwrap())
    }

    pub fn with_params(lr: T, beta1: T, beta2: T, eps: T) -> Self {
        Self { lr, beta1, beta2, eps, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &ParamGrads<T>) -> Result<()> {
        check_aligned("adam_step", store, grads)?;
        if self.m.is_empty() {
            self.m = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.t);
        let c2 = one - self.beta2.powi(self.t);
        for id in store.trainable_ids() {
            let i = id.index();
            let g = grads.get(id).data();
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let p = store.value_mut(id).data_mut();
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (one - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (one - self.beta2) * g[k] * g[k];
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                p[k] = p[k] - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::{Mode, Tape};

    fn one_param(p: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("p", Tensor::full(&[1], p)).unwrap();
        s
    }

    /// Gradient of `g·p` at any `p` is `g`.
    fn const_grad(store: &ParamStore<f64>, g: f64) -> ParamGrads<f64> {
        let tape = Tape::new(Mode::Train);
        let id = store.id("p").unwrap();
        let p = tape.param(store, id);
        let loss = p.scale(g).unwrap().sum_all().unwrap();
        tape.backward(loss).unwrap().for_params(store)
    }

    #[test]
    fn sgd_single_step() {
        let mut s = one_param(1.0);
        let g = const_grad(&s, 2.0);
        Sgd::new(0.1, 0.0).unwrap().step(&mut s, &g).unwrap();
        assert!((s.by_name("p").unwrap().value.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_unrolled() {
        let mut s = one_param(1.0);
        let mut opt = Sgd::new(0.1, 0.9).unwrap();
        let mut seen = vec![];
        for _ in 0..2 {
            let g = const_grad(&s, 1.0);
            opt.step(&mut s, &g).unwrap();
            seen.push(s.by_name("p").unwrap().value.data()[0]);
        }
        assert!((seen[0] - 0.9).abs() < 1e-12 && (seen[1] - 0.71).abs() < 1e-12, "{seen:?}");
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = one_param(0.37);
        let g = ParamGrads::zeros_like(&s);
        Sgd::new(0.5, 0.5).unwrap().step(&mut s, &g).unwrap();
        Adam::new(0.5).step(&mut s, &g).unwrap();
        assert_eq!(s.by_name("p").unwrap().value.data()[0], 0.37);
    }

    #[test]
    fn adam_first_step() {
        let mut s = one_param(0.0);
        let g = const_grad(&s, 1.0);
        Adam::new(1e-3).step(&mut s, &g).unwrap();
        assert!((s.by_name("p").unwrap().value.data()[0] + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn bad_hyperparameters() {
        assert!(Sgd::<f64>::new(0.0, 0.0).is_err());
        assert!(Sgd::<f64>::new(0.1, 1.0).is_err());
    }
}
