use crate::error::{Error, Result};
use crate::real::Real;
use crate::tape::{BackwardCtx, Var};
use crate::tensor::{numel, Tensor};

fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

fn sum_axis<T: Real>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, len, inner) = split(x.shape(), axis);
    let d = x.data();
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for l in 0..len {
            let src = &d[(o * len + l) * inner..(o * len + l + 1) * inner];
            let dst = &mut out[o * inner..(o + 1) * inner];
            for (a, &b) in dst.iter_mut().zip(src) {
                *a = *a + b;
            }
        }
    }
    let mut shape: Vec<usize> = x.shape().to_vec();
    shape.remove(axis);
    if shape.is_empty() {
        shape.push(1);
    }
    Tensor::from_parts(shape, out)
}

fn expand_axis<T: Real>(g: &Tensor<T>, shape: &[usize], axis: usize, scale: T) -> Tensor<T> {
    let (outer, len, inner) = split(shape, axis);
    let gd = g.data();
    let mut out = Vec::with_capacity(numel(shape));
    for o in 0..outer {
        for _ in 0..len {
            out.extend(gd[o * inner..(o + 1) * inner].iter().map(|&v| v * scale));
        }
    }
    Tensor::from_parts(shape.to_vec(), out)
}

impl<'t, T: Real> Var<'t, T> {
    /// Sum over `axis`, removing it.
    pub fn sum(self, axis: usize) -> Result<Var<'t, T>> {
        self.reduce_axis("sum", axis, false)
    }

    /// Mean over `axis`, removing it.
    pub fn mean(self, axis: usize) -> Result<Var<'t, T>> {
        self.reduce_axis("mean", axis, true)
    }

    fn reduce_axis(self, op: &'static str, axis: usize, mean: bool) -> Result<Var<'t, T>> {
        let x = self.value();
        if axis >= x.ndim() {
            return Err(Error::invalid(op, format!("axis {axis} out of range for {:?}", x.shape())));
        }
        let len = x.shape()[axis];
        let scale = if mean {
            T::one() / T::from_usize(len).expect("extent")
        } else {
            T::one()
        };
        let mut v = sum_axis(&x, axis);
        if mean {
            v = v.scaled(scale);
        }
        self.tape.push(
            op,
            v,
            &[self],
            Box::new(move |c: &BackwardCtx<'_, T>| {
                vec![Some(expand_axis(c.grad, c.inputs[0].shape(), axis, scale))]
            }),
        )
    }

    /// Sum of every entry, as a one-element tensor.
    pub fn sum_all(self) -> Result<Var<'t, T>> {
        let v = Tensor::scalar(self.value().sum());
        self.tape.push(
            "sum_all",
            v,
            &[self],
            Box::new(|c: &BackwardCtx<'_, T>| {
                vec![Some(Tensor::full(c.inputs[0].shape(), c.grad.data()[0]))]
            }),
        )
    }

    pub fn mean_all(self) -> Result<Var<'t, T>> {
        let n = T::from_usize(self.value().len()).expect("size");
        self.sum_all()?.scale(T::one() / n)
    }

    /// Softmax over the last axis, with per-row max subtraction.
    pub fn softmax(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let width = *x.shape().last().expect("non-empty shape");
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(width) {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total = total + *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        self.tape.push(
            "softmax",
            Tensor::from_parts(x.shape().to_vec(), out),
            &[self],
            Box::new(move |c: &BackwardCtx<'_, T>| {
                let y = c.output.data();
                let g = c.grad.data();
                let mut dx = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(width).zip(g.chunks(width)) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    dx.extend(yr.iter().zip(gr).map(|(&a, &b)| a * (b - dot)));
                }
                vec![Some(Tensor::from_parts(c.output.shape().to_vec(), dx))]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use crate::tape::{Mode, Tape};
    use crate::tensor::Tensor;

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let tape = Tape::new(Mode::Eval);
        let x = tape.leaf(Tensor::<f64>::full(&[1, 3], 2.5));
        let y = x.softmax().unwrap().value();
        for &v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_survives_large_logits() {
        let tape = Tape::new(Mode::Eval);
        let x = tape.leaf(Tensor::<f64>::from_f64(&[2], &[1000.0, 1000.0]).unwrap());
        assert_eq!(x.softmax().unwrap().value().data(), &[0.5, 0.5]);
    }

    #[test]
    fn mean_over_middle_axis() {
        let tape = Tape::new(Mode::Eval);
        let x = tape.leaf(Tensor::<f64>::from_fn(&[2, 3, 2], |i| i as f64));
        let m = x.mean(1).unwrap().value();
        assert_eq!(m.shape(), &[2, 2]);
        assert_eq!(m.data(), &[2.0, 3.0, 8.0, 9.0]);
    }
}
