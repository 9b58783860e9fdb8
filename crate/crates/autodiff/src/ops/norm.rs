use rand::Rng;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tape::{BackwardCtx, Var};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch statistics from a training-mode [`Var::batch_norm`].
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Tensor<T>,
    /// Unbiased variance, for the running estimate.
    pub var: Tensor<T>,
}

impl<T: Real> BatchStats<T> {
    /// `running ← (1 − momentum)·running + momentum·batch`
    pub fn update(&self, running_mean: &mut Tensor<T>, running_var: &mut Tensor<T>, momentum: T) {
        let keep = T::one() - momentum;
        for (r, &b) in running_mean.data_mut().iter_mut().zip(self.mean.data()) {
            *r = keep * *r + momentum * b;
        }
        for (r, &b) in running_var.data_mut().iter_mut().zip(self.var.data()) {
            *r = keep * *r + momentum * b;
        }
    }
}

impl<'t, T: Real> Var<'t, T> {
    /// Batch normalisation over the last (channel) axis; statistics pool every
    /// other axis. Training tapes normalise with the batch moments and return
    /// them; evaluation tapes use the running estimates.
    pub fn batch_norm(
        self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
    ) -> Result<(Var<'t, T>, Option<BatchStats<T>>)> {
        let x = self.value();
        let ch = *x.shape().last().expect("non-empty shape");
        for s in [gamma.shape(), beta.shape(), running_mean.shape().to_vec(), running_var.shape().to_vec()] {
            if s != [ch] {
                return Err(Error::shapes("batch_norm", x.shape(), &s));
            }
        }
        let eps = T::from_f64(BN_EPS).expect("eps");
        let m = x.len() / ch;
        let mf = T::from_usize(m).expect("count");
        let train = self.tape.is_train();
        let (mean, var, stats) = if train {
            let mut mean = vec![T::zero(); ch];
            for row in x.data().chunks(ch) {
                for (a, &v) in mean.iter_mut().zip(row) {
                    *a = *a + v;
                }
            }
            mean.iter_mut().for_each(|a| *a = *a / mf);
            let mut var = vec![T::zero(); ch];
            for row in x.data().chunks(ch) {
                for ((a, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
                    *a = *a + (v - mu) * (v - mu);
                }
            }
            let denom = if m > 1 { mf - T::one() } else { T::one() };
            let unbiased: Vec<T> = var.iter().map(|&v| v / denom).collect();
            var.iter_mut().for_each(|a| *a = *a / mf);
            let stats = BatchStats {
                mean: Tensor::from_parts(vec![ch], mean.clone()),
                var: Tensor::from_parts(vec![ch], unbiased),
            };
            (mean, var, Some(stats))
        } else {
            (running_mean.data().to_vec(), running_var.data().to_vec(), None)
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (gv, bv) = (gamma.value(), beta.value());
        let mut xhat = Vec::with_capacity(x.len());
        let mut out = Vec::with_capacity(x.len());
        for row in x.data().chunks(ch) {
            for c in 0..ch {
                let h = (row[c] - mean[c]) * inv_std[c];
                xhat.push(h);
                out.push(gv.data()[c] * h + bv.data()[c]);
            }
        }
        let y = self.tape.push(
            "batch_norm",
            Tensor::from_parts(x.shape().to_vec(), out),
            &[self, gamma, beta],
            Box::new(move |c: &BackwardCtx<'_, T>| {
                let g = c.grad.data();
                let gamma = c.inputs[1].data();
                let mut sum_g = vec![T::zero(); ch];
                let mut sum_gx = vec![T::zero(); ch];
                for (gr, hr) in g.chunks(ch).zip(xhat.chunks(ch)) {
                    for k in 0..ch {
                        sum_g[k] = sum_g[k] + gr[k];
                        sum_gx[k] = sum_gx[k] + gr[k] * hr[k];
                    }
                }
                let gx = c.needs[0].then(|| {
                    let mut dx = Vec::with_capacity(g.len());
                    for (gr, hr) in g.chunks(ch).zip(xhat.chunks(ch)) {
                        for k in 0..ch {
                            let scale = gamma[k] * inv_std[k];
                            dx.push(if train {
                                scale * (gr[k] - (sum_g[k] + hr[k] * sum_gx[k]) / mf)
                            } else {
                                scale * gr[k]
                            });
                        }
                    }
                    Tensor::from_parts(c.grad.shape().to_vec(), dx)
                });
                vec![
                    gx,
                    c.needs[1].then(|| Tensor::from_parts(vec![ch], sum_gx)),
                    c.needs[2].then(|| Tensor::from_parts(vec![ch], sum_g)),
                ]
            }),
        )?;
        Ok((y, stats))
    }

    /// Inverted dropout: in training tapes each entry is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 − rate)`; the
    /// mask is drawn from the tape's seeded stream. Identity in evaluation.
    pub fn dropout(self, rate: f64) -> Result<Var<'t, T>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid("dropout", format!("rate {rate} outside [0, 1)")));
        }
        if !self.tape.is_train() || rate == 0.0 {
            return Ok(self);
        }
        let keep = T::from_f64(1.0 / (1.0 - rate)).expect("scale");
        let n = self.value().len();
        let mask: Vec<T> = {
            let mut rng = self.tape.rng();
            (0..n)
                .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
                .collect()
        };
        let x = self.value();
        let out: Vec<T> = x.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        self.tape.push(
            "dropout",
            Tensor::from_parts(x.shape().to_vec(), out),
            &[self],
            Box::new(move |c: &BackwardCtx<'_, T>| {
                let g: Vec<T> = c.grad.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
                vec![Some(Tensor::from_parts(c.grad.shape().to_vec(), g))]
            }),
        )
    }
}
