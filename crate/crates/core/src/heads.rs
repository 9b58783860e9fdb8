//! Recognition head and the recurrent motion-prediction head.

use rand::Rng;
use symgnn_autodiff::{gru_cell, xavier_uniform, GruWeights, ParamId, ParamStore, Real, Tensor, Var};

use crate::error::{ensure, Result};
use crate::graph::JgcLayer;
use crate::nn::{Ctx, FuseMlp, Linear};
use crate::skeleton::StructuralSupports;

#[derive(Clone, Debug)]
pub struct RecognitionHead {
    pub fuse: FuseMlp,
    pub cls: Linear,
    pub classes: usize,
}

impl RecognitionHead {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        input: usize,
        hidden: usize,
        classes: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        ensure!(classes >= 2, "recognition needs at least 2 classes, got {classes}");
        Ok(Self {
            fuse: FuseMlp::new(store, "recg.fuse", input, hidden, rng)?,
            cls: Linear::new(store, "recg.cls", hidden, classes, true, rng)?,
            classes,
        })
    }

    /// Branch features `[N, M, D_h]` each → logits `[N, C]`.
    pub fn logits<'t, T: Real>(&self, ctx: &Ctx<'t, '_, T>, h: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let cat = ctx.tape.concat(h, 2)?;
        let fused = self.fuse.forward(ctx, cat)?.mean(1)?;
        self.cls.forward(ctx, fused)
    }
}

#[derive(Clone, Debug)]
pub struct Gru {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
}

impl Gru {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            w_ih: store.add(&format!("{name}.w_ih"), xavier_uniform(&[3 * hidden, input], input, hidden, rng))?,
            w_hh: store.add(&format!("{name}.w_hh"), xavier_uniform(&[3 * hidden, hidden], hidden, hidden, rng))?,
            b_ih: store.add(&format!("{name}.b_ih"), Tensor::zeros(&[3 * hidden]))?,
            b_hh: store.add(&format!("{name}.b_hh"), Tensor::zeros(&[3 * hidden]))?,
        })
    }

    pub fn weights<'t, T: Real>(&self, ctx: &Ctx<'t, '_, T>) -> GruWeights<'t, T> {
        GruWeights { w_ih: ctx.p(self.w_ih), w_hh: ctx.p(self.w_hh), b_ih: ctx.p(self.b_ih), b_hh: ctx.p(self.b_hh) }
    }
}

/// Starting state of a rollout; all `[N, M, D]`.
pub struct RolloutStart<'t, T: Real> {
    pub x_last: Var<'t, T>,
    pub d1: Var<'t, T>,
    pub d2: Var<'t, T>,
}

#[derive(Clone, Debug)]
pub struct PredictionHead {
    pub fuse: FuseMlp,
    pub jgc: JgcLayer,
    pub gru: Gru,
    pub out1: Linear,
    pub out2: Linear,
    pub hidden: usize,
    pub coords: usize,
}

impl PredictionHead {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        input: usize,
        hidden: usize,
        classes: usize,
        coords: usize,
        supports: &StructuralSupports,
        lambda_act: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            fuse: FuseMlp::new(store, "pred.fuse", input, hidden, rng)?,
            jgc: JgcLayer::new(store, "pred.jgc", supports, hidden, hidden, lambda_act, rng)?,
            gru: Gru::new(store, "pred.gru", 3 * coords + classes, hidden, rng)?,
            out1: Linear::new(store, "pred.out.fc1", hidden, hidden, true, rng)?,
            out2: Linear::zeros(store, "pred.out.fc2", hidden, coords)?,
            hidden,
            coords,
        })
    }

    /// Rolls out `steps` future poses, `[N, steps, M, D]`. `y` is `[N, C]`
    /// on the simplex.
    pub fn rollout<'t, T: Real>(
        &self,
        ctx: &Ctx<'t, '_, T>,
        h: &[Var<'t, T>],
        a_act: Var<'t, T>,
        start: RolloutStart<'t, T>,
        y: Var<'t, T>,
        steps: usize,
    ) -> Result<Var<'t, T>> {
        ensure!(steps >= 1, "prediction horizon must be at least 1");
        let ys = y.value();
        ensure!(ys.ndim() == 2, "class posterior must be [N, C], got {:?}", ys.shape());
        for row in ys.data().chunks(ys.shape()[1]) {
            let sum: f64 = row.iter().map(|v| v.to_f64_lossy()).sum();
            let min = row.iter().map(|v| v.to_f64_lossy()).fold(f64::INFINITY, f64::min);
            ensure!((sum - 1.0).abs() <= 1e-6 && min >= -1e-6, "class posterior is not on the simplex");
        }
        let xs = start.x_last.shape();
        let (n, m, d) = (xs[0], xs[1], xs[2]);
        let c = ys.shape()[1];
        let y_joint = y.reshape(&[n, 1, c])?.gather(1, &vec![0; m])?;
        let mut state = self.fuse.forward(ctx, ctx.tape.concat(h, 2)?)?;
        let gru = self.gru.weights(ctx);
        let (mut x, mut d1, mut d2) = (start.x_last, start.d1, start.d2);
        let mut frames = Vec::with_capacity(steps);
        for _ in 0..steps {
            let ht = self
                .jgc
                .forward(ctx, state.reshape(&[n, m, 1, self.hidden])?, a_act)?
                .reshape(&[n * m, self.hidden])?;
            let inp = ctx.tape.concat(&[x, d1, d2, y_joint], 2)?.reshape(&[n * m, 3 * d + c])?;
            let hn = gru_cell(inp, ht, &gru)?;
            let disp = self.out2.forward(ctx, self.out1.forward(ctx, hn)?.relu()?)?.reshape(&[n, m, d])?;
            let xn = x.add(disp)?;
            let d1n = xn.sub(x)?;
            d2 = d1n.sub(d1)?;
            d1 = d1n;
            x = xn;
            state = hn.reshape(&[n, m, self.hidden])?;
            frames.push(x.reshape(&[n, 1, m, d])?);
        }
        Ok(ctx.tape.concat(&frames, 1)?)
    }
}
