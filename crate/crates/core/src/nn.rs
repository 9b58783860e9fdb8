//! Parameterised building blocks shared by every module of the model.

use std::cell::RefCell;

use rand::Rng;
use symgnn_autodiff::{xavier_uniform, BatchStats, ParamId, ParamStore, Real, Tape, Tensor, Var, BN_MOMENTUM};

use crate::error::Result;

/// Everything a forward pass needs besides the input: the tape, the weights,
/// and a sink for batch-norm statistics gathered in training mode.
pub struct Ctx<'t, 's, T: Real> {
    pub tape: &'t Tape<T>,
    pub store: &'s ParamStore<T>,
    pub dropout: f64,
    updates: RefCell<Vec<BnUpdate<T>>>,
}

#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub stats: BatchStats<T>,
}

impl<'t, 's, T: Real> Ctx<'t, 's, T> {
    pub fn new(tape: &'t Tape<T>, store: &'s ParamStore<T>, dropout: f64) -> Self {
        Self { tape, store, dropout, updates: RefCell::new(Vec::new()) }
    }

    pub fn p(&self, id: ParamId) -> Var<'t, T> {
        self.tape.param(self.store, id)
    }

    pub fn constant(&self, t: Tensor<T>) -> Var<'t, T> {
        self.tape.constant(t)
    }

    pub fn dropout(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.dropout(self.dropout)?)
    }

    /// Running-statistic updates recorded so far.
    pub fn into_updates(self) -> Vec<BnUpdate<T>> {
        self.updates.into_inner()
    }
}

/// Folds batch statistics into the running estimates.
pub fn apply_bn_updates<T: Real>(store: &mut ParamStore<T>, updates: &[BnUpdate<T>]) {
    let momentum = T::from_f64_lossy(BN_MOMENTUM);
    for u in updates {
        let mut mean = std::mem::replace(store.value_mut(u.running_mean), Tensor::zeros(&[0]));
        let mut var = std::mem::replace(store.value_mut(u.running_var), Tensor::zeros(&[0]));
        u.stats.update(&mut mean, &mut var, momentum);
        *store.value_mut(u.running_mean) = mean;
        *store.value_mut(u.running_var) = var;
    }
}

/// `y = x Wᵀ + b` over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = store.add(&format!("{name}.W"), xavier_uniform(&[output, input], input, output, rng))?;
        let b = if bias { Some(store.add(&format!("{name}.b"), Tensor::zeros(&[output]))?) } else { None };
        Ok(Self { w, b })
    }

    /// Weights and bias start at zero.
    pub fn zeros<T: Real>(store: &mut ParamStore<T>, name: &str, input: usize, output: usize) -> Result<Self> {
        let w = store.add(&format!("{name}.W"), Tensor::zeros(&[output, input]))?;
        let b = store.add(&format!("{name}.b"), Tensor::zeros(&[output]))?;
        Ok(Self { w, b: Some(b) })
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.linear(ctx.p(self.w), self.b.map(|b| ctx.p(b)))?)
    }
}

/// Per-channel batch normalisation over the last axis.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(&format!("{name}.gamma"), Tensor::ones(&[channels]))?,
            beta: store.add(&format!("{name}.beta"), Tensor::zeros(&[channels]))?,
            running_mean: store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[channels]))?,
            running_var: store.add_buffer(&format!("{name}.running_var"), Tensor::ones(&[channels]))?,
        })
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (y, stats) = x.batch_norm(
            ctx.p(self.gamma),
            ctx.p(self.beta),
            ctx.store.value(self.running_mean),
            ctx.store.value(self.running_var),
        )?;
        if let Some(stats) = stats {
            ctx.updates.borrow_mut().push(BnUpdate {
                running_mean: self.running_mean,
                running_var: self.running_var,
                stats,
            });
        }
        Ok(y)
    }
}

/// `in-hidden-relu-dropout-out-relu-bn`, optionally followed by a plain
/// linear `out-out` projection.
#[derive(Clone, Debug)]
pub struct FeatureMlp {
    pub fc1: Linear,
    pub fc2: Linear,
    pub bn: BatchNorm,
    pub proj: Option<Linear>,
}

impl FeatureMlp {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        proj: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), input, hidden, true, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, output, true, rng)?,
            bn: BatchNorm::new(store, &format!("{name}.bn"), output)?,
            proj: if proj {
                Some(Linear::new(store, &format!("{name}.proj"), output, output, true, rng)?)
            } else {
                None
            },
        })
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = ctx.dropout(self.fc1.forward(ctx, x)?.relu()?)?;
        let h = self.bn.forward(ctx, self.fc2.forward(ctx, h)?.relu()?)?;
        match &self.proj {
            Some(p) => p.forward(ctx, h),
            None => Ok(h),
        }
    }
}

/// Two linear layers, each followed by ReLU.
#[derive(Clone, Debug)]
pub struct FuseMlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FuseMlp {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), input, hidden, true, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, hidden, true, rng)?,
        })
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.fc1.forward(ctx, x)?.relu()?;
        Ok(self.fc2.forward(ctx, h)?.relu()?)
    }
}
