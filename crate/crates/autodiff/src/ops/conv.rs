use crate::error::{Error, Result};
use crate::real::{gemm, Real};
use crate::tape::{BackwardCtx, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    t_in: usize,
    t_out: usize,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.batch * self.t_out
    }

    fn cols(&self) -> usize {
        self.kernel * self.c_in
    }

    /// Input time index feeding output step `to` through tap `k`.
    fn source(&self, to: usize, k: usize) -> Option<usize> {
        let t = (to * self.stride + k).checked_sub(self.pad)?;
        (t < self.t_in).then_some(t)
    }
}

fn im2col<T: Real>(x: &[T], g: &Geometry) -> Vec<T> {
    let mut col = vec![T::zero(); g.rows() * g.cols()];
    for b in 0..g.batch {
        for to in 0..g.t_out {
            let row = &mut col[(b * g.t_out + to) * g.cols()..][..g.cols()];
            for k in 0..g.kernel {
                if let Some(t) = g.source(to, k) {
                    let src = &x[(b * g.t_in + t) * g.c_in..][..g.c_in];
                    row[k * g.c_in..(k + 1) * g.c_in].copy_from_slice(src);
                }
            }
        }
    }
    col
}

fn col2im<T: Real>(col: &[T], g: &Geometry) -> Vec<T> {
    let mut x = vec![T::zero(); g.batch * g.t_in * g.c_in];
    for b in 0..g.batch {
        for to in 0..g.t_out {
            let row = &col[(b * g.t_out + to) * g.cols()..][..g.cols()];
            for k in 0..g.kernel {
                if let Some(t) = g.source(to, k) {
                    let dst = &mut x[(b * g.t_in + t) * g.c_in..][..g.c_in];
                    for (d, &s) in dst.iter_mut().zip(&row[k * g.c_in..(k + 1) * g.c_in]) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
    x
}

impl<'t, T: Real> Var<'t, T> {
    /// Temporal convolution of `[B, T, C_in]` by `weight: [C_out, kernel, C_in]`
    /// with symmetric zero padding `(kernel - 1) / 2`; output `[B, T_out, C_out]`
    /// where `T_out = (T + 2·pad − kernel) / stride + 1`.
    pub fn conv1d_time(
        self,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        stride: usize,
    ) -> Result<Var<'t, T>> {
        let (x, w) = (self.value(), weight.value());
        let (xs, ws) = (x.shape(), w.shape());
        if xs.len() != 3 || ws.len() != 3 || xs[2] != ws[2] {
            return Err(Error::shapes("conv1d_time", xs, ws));
        }
        if stride == 0 {
            return Err(Error::invalid("conv1d_time", "stride must be positive"));
        }
        let kernel = ws[1];
        let pad = (kernel - 1) / 2;
        if xs[1] + 2 * pad < kernel {
            return Err(Error::invalid(
                "conv1d_time",
                format!("sequence of length {} shorter than kernel {kernel}", xs[1]),
            ));
        }
        let g = Geometry {
            batch: xs[0],
            t_in: xs[1],
            t_out: (xs[1] + 2 * pad - kernel) / stride + 1,
            c_in: xs[2],
            c_out: ws[0],
            kernel,
            stride,
            pad,
        };
        if let Some(b) = bias {
            if b.shape() != [g.c_out] {
                return Err(Error::shapes("conv1d_time", ws, &b.shape()));
            }
        }
        let col = im2col(x.data(), &g);
        let mut out = vec![T::zero(); g.rows() * g.c_out];
        gemm(g.rows(), g.cols(), g.c_out, &col, false, w.data(), true, &mut out, T::zero());
        drop(col);
        if let Some(b) = bias {
            let bv = b.value();
            for row in out.chunks_mut(g.c_out) {
                for (o, &bb) in row.iter_mut().zip(bv.data()) {
                    *o = *o + bb;
                }
            }
        }
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        self.tape.push(
            "conv1d_time",
            Tensor::from_parts(vec![g.batch, g.t_out, g.c_out], out),
            &inputs,
            Box::new(move |c: &BackwardCtx<'_, T>| {
                let (x, w, gr) = (c.inputs[0].data(), c.inputs[1].data(), c.grad.data());
                let gx = c.needs[0].then(|| {
                    let mut gcol = vec![T::zero(); g.rows() * g.cols()];
                    gemm(g.rows(), g.c_out, g.cols(), gr, false, w, false, &mut gcol, T::zero());
                    Tensor::from_parts(c.inputs[0].shape().to_vec(), col2im(&gcol, &g))
                });
                let gw = c.needs[1].then(|| {
                    let col = im2col(x, &g);
                    let mut gw = vec![T::zero(); g.c_out * g.cols()];
                    gemm(g.c_out, g.rows(), g.cols(), gr, true, &col, false, &mut gw, T::zero());
                    Tensor::from_parts(c.inputs[1].shape().to_vec(), gw)
                });
                let mut grads = vec![gx, gw];
                if c.inputs.len() == 3 {
                    grads.push(c.needs[2].then(|| {
                        let mut gb = vec![T::zero(); g.c_out];
                        for row in gr.chunks(g.c_out) {
                            for (a, &v) in gb.iter_mut().zip(row) {
                                *a = *a + v;
                            }
                        }
                        Tensor::from_parts(vec![g.c_out], gb)
                    }));
                }
                grads
            }),
        )
    }
}
