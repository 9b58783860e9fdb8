use crate::error::{Error, Result};
use crate::real::{gemm, Real};
use crate::tape::{BackwardCtx, Var};
use crate::tensor::Tensor;

/// Operand layout of a (possibly batched) matrix product.
#[derive(Clone, Copy, Debug)]
struct Layout {
    batch: usize,
    a_batched: bool,
    b_batched: bool,
    m: usize,
    k: usize,
    n: usize,
}

fn layout(a: &[usize], b: &[usize]) -> Option<Layout> {
    let split = |s: &[usize]| -> Option<(usize, usize, usize)> {
        match s {
            [r, c] => Some((1, *r, *c)),
            [bt, r, c] => Some((*bt, *r, *c)),
            _ => None,
        }
    };
    let (ba, m, k) = split(a)?;
    let (bb, k2, n) = split(b)?;
    if k != k2 || (ba != bb && ba != 1 && bb != 1) {
        return None;
    }
    Some(Layout {
        batch: ba.max(bb),
        a_batched: a.len() == 3 && ba > 1,
        b_batched: b.len() == 3 && bb > 1,
        m,
        k,
        n,
    })
}

impl<'t, T: Real> Var<'t, T> {
    /// Matrix product over the last two axes. Either operand may carry one
    /// leading batch axis; an unbatched (or batch-1) operand is shared across
    /// the other's batch.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let l = layout(a.shape(), b.shape())
            .ok_or_else(|| Error::shapes("matmul", a.shape(), b.shape()))?;
        let Layout { batch, m, k, n, .. } = l;
        let mut out = vec![T::zero(); batch * m * n];
        if !l.b_batched {
            // Stack the batch of `a` into rows: one large product.
            let rows = if l.a_batched { batch * m } else { m };
            gemm(rows, k, n, a.data(), false, &b.data()[..k * n], false, &mut out[..rows * n], T::zero());
            if !l.a_batched && batch > 1 {
                let first = out[..m * n].to_vec();
                for chunk in out.chunks_mut(m * n).skip(1) {
                    chunk.copy_from_slice(&first);
                }
            }
        } else {
            for i in 0..batch {
                let ai = if l.a_batched { &a.data()[i * m * k..(i + 1) * m * k] } else { &a.data()[..m * k] };
                let bi = &b.data()[i * k * n..(i + 1) * k * n];
                gemm(m, k, n, ai, false, bi, false, &mut out[i * m * n..(i + 1) * m * n], T::zero());
            }
        }
        let shape = if a.ndim() == 3 || b.ndim() == 3 {
            vec![batch, m, n]
        } else {
            vec![m, n]
        };
        self.tape.push(
            "matmul",
            Tensor::from_parts(shape, out),
            &[self, other],
            Box::new(move |c: &BackwardCtx<'_, T>| {
                let (a, b, g) = (c.inputs[0].data(), c.inputs[1].data(), c.grad.data());
                let ga = c.needs[0].then(|| {
                    let mut ga = vec![T::zero(); a.len()];
                    if !l.b_batched && l.a_batched {
                        gemm(batch * m, n, k, g, false, &b[..k * n], true, &mut ga, T::zero());
                    } else {
                        for i in 0..batch {
                            let gi = &g[i * m * n..(i + 1) * m * n];
                            let bi = if l.b_batched { &b[i * k * n..(i + 1) * k * n] } else { &b[..k * n] };
                            if l.a_batched {
                                gemm(m, n, k, gi, false, bi, true, &mut ga[i * m * k..(i + 1) * m * k], T::zero());
                            } else {
                                gemm(m, n, k, gi, false, bi, true, &mut ga[..m * k], T::one());
                            }
                        }
                    }
                    Tensor::from_parts(c.inputs[0].shape().to_vec(), ga)
                });
                let gb = c.needs[1].then(|| {
                    let mut gb = vec![T::zero(); b.len()];
                    if !l.b_batched && l.a_batched {
                        gemm(k, batch * m, n, a, true, g, false, &mut gb[..k * n], T::zero());
                    } else {
                        for i in 0..batch {
                            let gi = &g[i * m * n..(i + 1) * m * n];
                            let ai = if l.a_batched { &a[i * m * k..(i + 1) * m * k] } else { &a[..m * k] };
                            if l.b_batched {
                                gemm(k, m, n, ai, true, gi, false, &mut gb[i * k * n..(i + 1) * k * n], T::zero());
                            } else {
                                gemm(k, m, n, ai, true, gi, false, &mut gb[..k * n], T::one());
                            }
                        }
                    }
                    Tensor::from_parts(c.inputs[1].shape().to_vec(), gb)
                });
                vec![ga, gb]
            }),
        )
    }

    /// `self · wᵀ (+ bias)` over the last axis of `self`; `w` is `out x in`.
    pub fn linear(self, w: Var<'t, T>, bias: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let ws = w.shape();
        if ws.len() != 2 || shape.last() != Some(&ws[1]) {
            return Err(Error::shapes("linear", &shape, &ws));
        }
        let rows = shape[..shape.len() - 1].iter().product::<usize>();
        let flat = if shape.len() == 2 { self } else { self.reshape(&[rows, ws[1]])? };
        let mut y = flat.matmul(w.transpose()?)?;
        if let Some(b) = bias {
            y = y.add(b)?;
        }
        let mut out_shape = shape.clone();
        *out_shape.last_mut().expect("non-empty") = ws[0];
        if out_shape.len() == 2 {
            Ok(y)
        } else {
            y.reshape(&out_shape)
        }
    }
}
