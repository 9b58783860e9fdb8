//! Spatial and temporal graph convolutions, the difference operator and the
//! joint/part graph-temporal blocks.

use rand::Rng;
use serde::{Deserialize, Serialize};
use symgnn_autodiff::{xavier_uniform, ParamStore, ParamId, Real, Tensor, Var};

use crate::error::{ensure, Result};
use crate::nn::{BatchNorm, Ctx};
use crate::skeleton::{PartGraph, StructuralSupports};

/// `A_act · X · W_actᵀ`. `x` is `[.., M, D_x]`, `a_act` `[M, M]` or
/// `[N, M, M]` matching a leading batch axis of `x`.
pub fn agc<'t, T: Real>(x: Var<'t, T>, a_act: Var<'t, T>, w_act: Var<'t, T>) -> Result<Var<'t, T>> {
    Ok(a_act.matmul(x.linear(w_act, None)?)?)
}

/// `Σ_γ (Ã^γ ⊙ M^γ) · X · W_str^γᵀ`.
pub fn sgc<'t, T: Real>(
    x: Var<'t, T>,
    supports: &[Var<'t, T>],
    masks: &[Var<'t, T>],
    w_str: &[Var<'t, T>],
) -> Result<Var<'t, T>> {
    ensure!(
        !supports.is_empty() && supports.len() == masks.len() && masks.len() == w_str.len(),
        "sgc needs matching Γ lists, got {} supports, {} masks, {} weights",
        supports.len(),
        masks.len(),
        w_str.len()
    );
    let mut out: Option<Var<'t, T>> = None;
    for ((s, m), w) in supports.iter().zip(masks).zip(w_str) {
        let term = s.mul(*m)?.matmul(x.linear(*w, None)?)?;
        out = Some(match out {
            Some(acc) => acc.add(term)?,
            None => term,
        });
    }
    Ok(out.expect("non-empty"))
}

/// `λ_act · AGC(X) + SGC(X)`.
#[allow(clippy::too_many_arguments)]
pub fn jgc<'t, T: Real>(
    x: Var<'t, T>,
    a_act: Var<'t, T>,
    w_act: Var<'t, T>,
    lambda_act: f64,
    supports: &[Var<'t, T>],
    masks: &[Var<'t, T>],
    w_str: &[Var<'t, T>],
) -> Result<Var<'t, T>> {
    let s = sgc(x, supports, masks, w_str)?;
    if lambda_act == 0.0 {
        return Ok(s);
    }
    let a = agc(x, a_act, w_act)?;
    Ok(a.scale(T::from_f64_lossy(lambda_act))?.add(s)?)
}

/// `(A_part ⊙ M_p) · X_p · W_partᵀ`.
pub fn pgc<'t, T: Real>(
    x: Var<'t, T>,
    support: Var<'t, T>,
    mask: Var<'t, T>,
    w: Var<'t, T>,
) -> Result<Var<'t, T>> {
    Ok(support.mul(mask)?.matmul(x.linear(w, None)?)?)
}

/// Boundary handling of [`difference`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// The frame before the first is zero.
    #[default]
    Zero,
    /// The frame before the first repeats the first, so the first
    /// difference is zero.
    Replicate,
}

/// `β`-th order temporal difference along `axis`.
pub fn difference<T: Real>(x: &Tensor<T>, axis: usize, beta: usize, padding: Padding) -> Result<Tensor<T>> {
    ensure!(beta <= 2, "difference order must be 0, 1 or 2, got {beta}");
    ensure!(axis < x.ndim(), "axis {axis} out of range for {:?}", x.shape());
    let shape = x.shape();
    let t = shape[axis];
    ensure!(t >= 1, "difference of an empty sequence");
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut cur = x.clone();
    for _ in 0..beta {
        let src = cur.data().to_vec();
        let dst = cur.data_mut();
        for o in 0..outer {
            let base = o * t * inner;
            for s in (0..t).rev() {
                for i in 0..inner {
                    let k = base + s * inner + i;
                    let prev = if s > 0 {
                        src[k - inner]
                    } else {
                        match padding {
                            Padding::Zero => T::zero(),
                            Padding::Replicate => src[k],
                        }
                    };
                    dst[k] = src[k] - prev;
                }
            }
        }
    }
    Ok(cur)
}

/// Spatial operator of a joint-scale block. Supports are stored at 64-bit
/// and cast per forward.
#[derive(Clone, Debug)]
pub struct JgcLayer {
    pub w_act: ParamId,
    pub w_str: Vec<ParamId>,
    pub masks: Vec<ParamId>,
    pub supports: Vec<Tensor<f64>>,
    pub lambda_act: f64,
}

impl JgcLayer {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        graphs: &StructuralSupports,
        input: usize,
        output: usize,
        lambda_act: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w_act = store.add(&format!("{name}.W_act"), xavier_uniform(&[output, input], input, output, rng))?;
        let mut w_str = Vec::new();
        let mut masks = Vec::new();
        for g in 0..graphs.gamma() {
            w_str.push(store.add(
                &format!("{name}.W_str.{}", g + 1),
                xavier_uniform(&[output, input], input, output, rng),
            )?);
        }
        for (g, m) in graphs.masks.iter().enumerate() {
            masks.push(store.add(&format!("{name}.M.{}", g + 1), m.cast())?);
        }
        Ok(Self { w_act, w_str, masks, supports: graphs.supports.clone(), lambda_act })
    }

    /// `x: [N, M, T, C_in]`, `a_act: [N, M, M]` → `[N, M, T, C_out]`.
    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>, a_act: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        ensure!(s.len() == 4, "jgc expects [N, M, T, C], got {s:?}");
        let (n, m, t) = (s[0], s[1], s[2]);
        let cout = ctx.store.value(self.w_act).shape()[0];
        let flat = |y: Var<'t, T>| y.reshape(&[n, m, t * cout]);
        let mut out: Option<Var<'t, T>> = None;
        for ((sup, mask), w) in self.supports.iter().zip(&self.masks).zip(&self.w_str) {
            let b = ctx.constant(sup.cast()).mul(ctx.p(*mask))?;
            let term = b.matmul(flat(x.linear(ctx.p(*w), None)?)?)?;
            out = Some(match out {
                Some(acc) => acc.add(term)?,
                None => term,
            });
        }
        let mut out = out.expect("Γ ≥ 1");
        if self.lambda_act != 0.0 {
            let act = a_act.matmul(flat(x.linear(ctx.p(self.w_act), None)?)?)?;
            out = act.scale(T::from_f64_lossy(self.lambda_act))?.add(out)?;
        }
        Ok(out.reshape(&[n, m, t, cout])?)
    }

    /// Current weights as plain tensors.
    pub fn snapshot<T: Real>(&self, store: &ParamStore<T>) -> JgcParams {
        JgcParams {
            w_act: store.value(self.w_act).cast(),
            w_str: self.w_str.iter().map(|&w| store.value(w).cast()).collect(),
            a_str: self
                .supports
                .iter()
                .zip(&self.masks)
                .map(|(s, &m)| s.zip_map(&store.value(m).cast(), |a, b| a * b).expect("same shape"))
                .collect(),
            lambda_act: self.lambda_act,
        }
    }
}

/// Spatial operator of a part-scale block.
#[derive(Clone, Debug)]
pub struct PgcLayer {
    pub w: ParamId,
    pub mask: ParamId,
    pub support: Tensor<f64>,
}

impl PgcLayer {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        graph: &PartGraph,
        input: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add(&format!("{name}.W"), xavier_uniform(&[output, input], input, output, rng))?,
            mask: store.add(&format!("{name}.M"), graph.mask.cast())?,
            support: graph.support.clone(),
        })
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        ensure!(s.len() == 4, "pgc expects [N, M_p, T, C], got {s:?}");
        let (n, m, t) = (s[0], s[1], s[2]);
        let cout = ctx.store.value(self.w).shape()[0];
        let b = ctx.constant(self.support.cast()).mul(ctx.p(self.mask))?;
        let y = x.linear(ctx.p(self.w), None)?.reshape(&[n, m, t * cout])?;
        Ok(b.matmul(y)?.reshape(&[n, m, t, cout])?)
    }
}

#[derive(Clone, Debug)]
pub enum Spatial {
    Joint(JgcLayer),
    Part(PgcLayer),
}

/// 1×1 strided temporal convolution with bias.
#[derive(Clone, Debug)]
pub struct Projection {
    pub w: ParamId,
    pub b: ParamId,
}

/// Channel and kernel layout of one graph-temporal block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockShape {
    pub input: usize,
    pub spatial: usize,
    pub output: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Spatial conv, bn, relu, temporal conv, bn, dropout, residual, relu.
#[derive(Clone, Debug)]
pub struct GtcBlock {
    pub spatial: Spatial,
    pub spatial_bn: BatchNorm,
    pub tc: ParamId,
    pub tc_bn: BatchNorm,
    pub residual: Option<Projection>,
    pub shape: BlockShape,
}

impl GtcBlock {
    pub fn joint<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        graphs: &StructuralSupports,
        shape: BlockShape,
        lambda_act: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let spatial = JgcLayer::new(store, &format!("{name}.jgc"), graphs, shape.input, shape.spatial, lambda_act, rng)?;
        Self::finish(store, name, Spatial::Joint(spatial), "jgc_bn", shape, rng)
    }

    pub fn part<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        graph: &PartGraph,
        shape: BlockShape,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let spatial = PgcLayer::new(store, &format!("{name}.pgc"), graph, shape.input, shape.spatial, rng)?;
        Self::finish(store, name, Spatial::Part(spatial), "pgc_bn", shape, rng)
    }

    fn finish<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        spatial: Spatial,
        bn_name: &str,
        shape: BlockShape,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        ensure!(shape.kernel % 2 == 1, "{name}: temporal kernel must be odd, got {}", shape.kernel);
        ensure!(shape.stride >= 1, "{name}: stride must be positive");
        let spatial_bn = BatchNorm::new(store, &format!("{name}.{bn_name}"), shape.spatial)?;
        let (k, ci, co) = (shape.kernel, shape.spatial, shape.output);
        let tc = store.add(&format!("{name}.tc.W"), xavier_uniform(&[co, k, ci], ci * k, co * k, rng))?;
        let tc_bn = BatchNorm::new(store, &format!("{name}.tc_bn"), co)?;
        let residual = if shape.input != co || shape.stride != 1 {
            Some(Projection {
                w: store.add(&format!("{name}.res.W"), xavier_uniform(&[co, 1, shape.input], shape.input, co, rng))?,
                b: store.add(&format!("{name}.res.b"), Tensor::zeros(&[co]))?,
            })
        } else {
            None
        };
        Ok(Self { spatial, spatial_bn, tc, tc_bn, residual, shape })
    }

    /// `x: [N, V, T, C_in]` → `[N, V, ceil(T / s), C_out]`. `a_act` is only
    /// read by joint-scale blocks.
    pub fn forward<'t, T: Real>(
        &self,
        ctx: &Ctx<'t, '_, T>,
        x: Var<'t, T>,
        a_act: Option<Var<'t, T>>,
    ) -> Result<Var<'t, T>> {
        let s = x.shape();
        ensure!(
            s.len() == 4 && s[3] == self.shape.input,
            "block expects [N, V, T, {}], got {s:?}",
            self.shape.input
        );
        let (n, v, t) = (s[0], s[1], s[2]);
        let h = match &self.spatial {
            Spatial::Joint(l) => {
                let a = a_act.ok_or_else(|| crate::error::Error::invalid("joint block needs an actional graph"))?;
                l.forward(ctx, x, a)?
            }
            Spatial::Part(l) => l.forward(ctx, x)?,
        };
        let h = self.spatial_bn.forward(ctx, h)?.relu()?;
        let h = h
            .reshape(&[n * v, t, self.shape.spatial])?
            .conv1d_time(ctx.p(self.tc), None, self.shape.stride)?;
        let t_out = h.shape()[1];
        let h = h.reshape(&[n, v, t_out, self.shape.output])?;
        let h = ctx.dropout(self.tc_bn.forward(ctx, h)?)?;
        let r = match &self.residual {
            None => x,
            Some(p) => x
                .reshape(&[n * v, t, self.shape.input])?
                .conv1d_time(ctx.p(p.w), Some(ctx.p(p.b)), self.shape.stride)?
                .reshape(&[n, v, t_out, self.shape.output])?,
        };
        Ok(h.add(r)?.relu()?)
    }
}

/// Plain-tensor JGC weights for analysis outside a tape.
#[derive(Clone, Debug)]
pub struct JgcParams {
    pub w_act: Tensor<f64>,
    pub w_str: Vec<Tensor<f64>>,
    /// Masked supports `Ã^γ ⊙ M^γ`.
    pub a_str: Vec<Tensor<f64>>,
    pub lambda_act: f64,
}

impl JgcParams {
    /// `λ A X W_actᵀ + Σ_γ A_str^γ X W_str^γᵀ` on one `[M, D]` frame.
    pub fn apply(&self, x: &Tensor<f64>, a_act: &Tensor<f64>) -> Result<Tensor<f64>> {
        let mut out = a_act.matmul(&x.matmul(&self.w_act.t()?)?)?.scaled(self.lambda_act);
        for (a, w) in self.a_str.iter().zip(&self.w_str) {
            out.add_assign(&a.matmul(&x.matmul(&w.t()?)?)?);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

fn relu(t: &Tensor<f64>) -> Tensor<f64> {
    t.map(|v| v.max(0.0))
}

fn diff_norm(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    Ok(a.zip_map(b, |x, y| x - y)?.frobenius())
}

/// Compares `‖ρ(JGC(X*)) − ρ(JGC(X))‖_F` against the bound
/// `λ‖A*X* − AX‖‖W_act‖ + Σ_γ ‖A_str^γ‖‖X* − X‖‖W_str^γ‖`.
pub fn stability_check(
    params: &JgcParams,
    x: &Tensor<f64>,
    a_act: &Tensor<f64>,
    x_star: &Tensor<f64>,
    a_star: &Tensor<f64>,
) -> Result<StabilityReport> {
    ensure!(
        x.shape() == x_star.shape() && a_act.shape() == a_star.shape(),
        "stability_check: shapes {:?}/{:?} and {:?}/{:?} differ",
        x.shape(),
        x_star.shape(),
        a_act.shape(),
        a_star.shape()
    );
    let y = relu(&params.apply(x, a_act)?);
    let y_star = relu(&params.apply(x_star, a_star)?);
    let lhs = diff_norm(&y_star, &y)?;
    let act = diff_norm(&a_star.matmul(x_star)?, &a_act.matmul(x)?)?;
    let dx = diff_norm(x_star, x)?;
    let mut rhs = params.lambda_act * act * params.w_act.frobenius();
    for (a, w) in params.a_str.iter().zip(&params.w_str) {
        rhs += a.frobenius() * dx * w.frobenius();
    }
    Ok(StabilityReport { lhs, rhs, holds: lhs <= rhs + 1e-9 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn difference_examples() {
        let c = Tensor::<f64>::from_f64(&[4], &[2.0; 4]).unwrap();
        assert_eq!(difference(&c, 0, 1, Padding::Zero).unwrap().data(), &[2.0, 0.0, 0.0, 0.0]);
        assert_eq!(difference(&c, 0, 1, Padding::Replicate).unwrap().data(), &[0.0; 4]);
        let ramp = Tensor::<f64>::from_f64(&[4], &[0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(difference(&ramp, 0, 1, Padding::Zero).unwrap().data(), &[0.0, 1.0, 1.0, 1.0]);
        let sq = Tensor::<f64>::from_f64(&[5], &[0.0, 1.0, 4.0, 9.0, 16.0]).unwrap();
        assert_eq!(difference(&sq, 0, 2, Padding::Zero).unwrap().data(), &[0.0, 1.0, 2.0, 2.0, 2.0]);
        assert!(difference(&sq, 0, 3, Padding::Zero).is_err());
    }

    #[test]
    fn difference_along_inner_axis() {
        // [2, 3]: difference along axis 1
        let x = Tensor::<f64>::from_f64(&[2, 3], &[1.0, 2.0, 4.0, 0.0, 0.0, 5.0]).unwrap();
        let d = difference(&x, 1, 1, Padding::Zero).unwrap();
        assert_eq!(d.data(), &[1.0, 1.0, 2.0, 0.0, 0.0, 5.0]);
    }

    #[test]
    fn relu_contraction_example() {
        let a = Tensor::from_f64(&[2], &[1.0, -1.0]).unwrap();
        let b = Tensor::zeros(&[2]);
        assert_eq!(diff_norm(&relu(&a), &relu(&b)).unwrap(), 1.0);
        assert!((diff_norm(&a, &b).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }
}
