//! Actional graph inference: joint/edge message passing over the observed
//! clip followed by an embedded-correlation softmax.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use symgnn_autodiff::{Mode, ParamStore, Real, Tape, Tensor, Var};

use crate::error::{ensure, Result};
use crate::nn::{Ctx, FeatureMlp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgimConfig {
    /// Frames the clip is resampled to before flattening.
    pub t_agim: usize,
    pub k: usize,
    pub hidden: usize,
    pub d_v: usize,
    pub d_e: usize,
    pub d_emb: usize,
}

impl Default for AgimConfig {
    fn default() -> Self {
        Self { t_agim: 49, k: 3, hidden: 128, d_v: 128, d_e: 128, d_emb: 128 }
    }
}

#[derive(Clone, Debug)]
pub struct Agim {
    pub config: AgimConfig,
    pub joints: usize,
    pub f_v: Vec<FeatureMlp>,
    pub f_e: Vec<FeatureMlp>,
    pub f_emb: FeatureMlp,
    pub g_emb: FeatureMlp,
    senders: Vec<usize>,
    receivers: Vec<usize>,
}

/// `[T_out, T_in]` linear-interpolation matrix along time.
pub fn resample_matrix(t_in: usize, t_out: usize) -> Tensor<f64> {
    let mut r = Tensor::zeros(&[t_out, t_in]);
    for i in 0..t_out {
        if t_in == 1 {
            r.set(&[i, 0], 1.0);
            continue;
        }
        let pos = if t_out == 1 { 0.0 } else { i as f64 * (t_in - 1) as f64 / (t_out - 1) as f64 };
        let lo = (pos.floor() as usize).min(t_in - 2);
        let frac = pos - lo as f64;
        r.set(&[i, lo], 1.0 - frac);
        r.set(&[i, lo + 1], r.at(&[i, lo + 1]) + frac);
    }
    r
}

impl Agim {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        config: &AgimConfig,
        joints: usize,
        coords: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        ensure!(joints >= 2, "actional graph inference needs at least 2 joints, got {joints}");
        ensure!(config.t_agim >= 1, "t_agim must be positive");
        let c = config;
        let mut f_v = vec![FeatureMlp::new(store, &format!("{name}.f_v.0"), coords * c.t_agim, c.hidden, c.d_v, false, rng)?];
        let mut f_e = Vec::new();
        for k in 1..=c.k {
            f_e.push(FeatureMlp::new(store, &format!("{name}.f_e.{k}"), 2 * c.d_v, c.hidden, c.d_e, false, rng)?);
            f_v.push(FeatureMlp::new(store, &format!("{name}.f_v.{k}"), c.d_e, c.hidden, c.d_v, false, rng)?);
        }
        let f_emb = FeatureMlp::new(store, &format!("{name}.f_emb"), c.d_v, c.hidden, c.d_emb, true, rng)?;
        let g_emb = FeatureMlp::new(store, &format!("{name}.g_emb"), c.d_v, c.hidden, c.d_emb, true, rng)?;
        let (mut senders, mut receivers) = (Vec::new(), Vec::new());
        for i in 0..joints {
            for j in 0..joints {
                if i != j {
                    senders.push(i);
                    receivers.push(j);
                }
            }
        }
        Ok(Self { config: config.clone(), joints, f_v, f_e, f_emb, g_emb, senders, receivers })
    }

    /// `[N, T, M, D]` clip → `[N, M, D·T_agim]` time-major joint trajectories.
    pub fn flatten_input<'t, T: Real>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        ensure!(s.len() == 4 && s[2] == self.joints, "agim expects [N, T, {}, D], got {s:?}", self.joints);
        let (n, t, m, d) = (s[0], s[1], s[2], s[3]);
        let ta = self.config.t_agim;
        let traj = x.permute(&[0, 2, 1, 3])?.reshape(&[n * m, t, d])?;
        let traj = if t == ta { traj } else { ctx.constant(resample_matrix(t, ta).cast()).matmul(traj)? };
        Ok(traj.reshape(&[n, m, ta * d])?)
    }

    /// Joint embeddings `p^K`, `[N, M, D_v]`, from flattened trajectories.
    pub fn propagate<'t, T: Real>(&self, ctx: &Ctx<'t, '_, T>, flat: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut p = self.f_v[0].forward(ctx, flat)?;
        let scale = T::from_f64_lossy(1.0 / (self.joints - 1) as f64);
        for (f_e, f_v) in self.f_e.iter().zip(&self.f_v[1..]) {
            let pair = ctx.tape.concat(&[p.gather(1, &self.senders)?, p.gather(1, &self.receivers)?], 2)?;
            let q = f_e.forward(ctx, pair)?;
            let mean = q.scatter_add(1, &self.senders, self.joints)?.scale(scale)?;
            p = f_v.forward(ctx, mean)?;
        }
        Ok(p)
    }

    /// Row-wise softmax of `f_emb(p) · g_emb(p)ᵀ`, `[N, M, M]`.
    pub fn infer<'t, T: Real>(&self, ctx: &Ctx<'t, '_, T>, p: Var<'t, T>) -> Result<Var<'t, T>> {
        let f = self.f_emb.forward(ctx, p)?;
        let g = self.g_emb.forward(ctx, p)?;
        Ok(f.matmul(g.transpose()?)?.softmax()?)
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let flat = self.flatten_input(ctx, x)?;
        let p = self.propagate(ctx, flat)?;
        self.infer(ctx, p)
    }

    /// Evaluation-mode actional graph of one `[T, M, D]` clip.
    pub fn graph_of(&self, store: &ParamStore<f64>, clip: &Tensor<f64>) -> Result<Tensor<f64>> {
        let tape = Tape::new(Mode::Eval);
        let ctx = Ctx::new(&tape, store, 0.0);
        let mut shape = vec![1];
        shape.extend_from_slice(clip.shape());
        let x = ctx.constant(clip.reshape(&shape)?);
        let a = self.forward(&ctx, x)?.value();
        Ok(a.reshape(&[self.joints, self.joints])?)
    }
}

/// `‖A*X* − AX‖_F / ‖X* − X‖_F` accumulated over every frame of `clip`,
/// where `X*` adds Gaussian noise of standard deviation `sigma`.
pub fn perturbation_ratio(
    agim: &Agim,
    store: &ParamStore<f64>,
    clip: &Tensor<f64>,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    ensure!(sigma > 0.0, "sigma must be positive");
    let noise = Normal::new(0.0, sigma).map_err(|e| crate::Error::invalid(e.to_string()))?;
    let mut noisy = clip.clone();
    noisy.data_mut().iter_mut().for_each(|v| *v += noise.sample(rng));
    let a = agim.graph_of(store, clip)?;
    let a_star = agim.graph_of(store, &noisy)?;
    let s = clip.shape();
    let (t, m, d) = (s[0], s[1], s[2]);
    let (mut num, mut den) = (0.0, 0.0);
    for f in 0..t {
        let frame = |c: &Tensor<f64>| Tensor::new(&[m, d], c.data()[f * m * d..(f + 1) * m * d].to_vec());
        let (x, xs) = (frame(clip)?, frame(&noisy)?);
        let diff = a_star.matmul(&xs)?.zip_map(&a.matmul(&x)?, |p, q| p - q)?;
        num += diff.dot(&diff);
        let dx = xs.zip_map(&x, |p, q| p - q)?;
        den += dx.dot(&dx);
    }
    Ok((num / den).sqrt())
}
