use crate::error::{Error, Result};
use crate::real::Real;
use crate::tape::{BackwardCtx, Tape, Var};
use crate::tensor::{numel, Tensor};

fn permute_tensor<T: Real>(x: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let shape = x.shape();
    let n = shape.len();
    let mut in_strides = vec![1usize; n];
    for d in (0..n.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src = x.data();
    let mut out = Vec::with_capacity(x.len());
    // Copy contiguous runs when the innermost axis stays innermost.
    let (run, outer_dims) = if perm[n - 1] == n - 1 {
        (shape[n - 1], n - 1)
    } else {
        (1, n)
    };
    let strides: Vec<usize> = perm[..outer_dims].iter().map(|&p| in_strides[p]).collect();
    let dims = &out_shape[..outer_dims];
    let mut idx = vec![0usize; outer_dims];
    let mut off = 0usize;
    for _ in 0..numel(dims) {
        out.extend_from_slice(&src[off..off + run]);
        for d in (0..outer_dims).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < dims[d] {
                break;
            }
            off -= strides[d] * dims[d];
            idx[d] = 0;
        }
    }
    Tensor::from_parts(out_shape, out)
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (numel(&shape[..axis]), numel(&shape[axis + 1..]))
}

pub(crate) fn gather_tensor<T: Real>(x: &Tensor<T>, axis: usize, index: &[usize]) -> Tensor<T> {
    let (outer, inner) = outer_inner(x.shape(), axis);
    let len = x.shape()[axis];
    let src = x.data();
    let mut out = Vec::with_capacity(outer * index.len() * inner);
    for o in 0..outer {
        for &i in index {
            let start = (o * len + i) * inner;
            out.extend_from_slice(&src[start..start + inner]);
        }
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = index.len();
    Tensor::from_parts(shape, out)
}

pub(crate) fn scatter_add_tensor<T: Real>(
    x: &Tensor<T>,
    axis: usize,
    index: &[usize],
    size: usize,
) -> Tensor<T> {
    let (outer, inner) = outer_inner(x.shape(), axis);
    let src = x.data();
    let mut out = vec![T::zero(); outer * size * inner];
    for o in 0..outer {
        for (r, &i) in index.iter().enumerate() {
            let s = (o * index.len() + r) * inner;
            let d = (o * size + i) * inner;
            for k in 0..inner {
                out[d + k] = out[d + k] + src[s + k];
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = size;
    Tensor::from_parts(shape, out)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::invalid(op, format!("axis {axis} out of range for {shape:?}")));
    }
    Ok(())
}

impl<'t, T: Real> Var<'t, T> {
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let v = self.value().reshape(shape)?;
        self.tape.push(
            "reshape",
            v,
            &[self],
            Box::new(|c: &BackwardCtx<'_, T>| {
                vec![Some(c.grad.reshape(c.inputs[0].shape()).expect("same size"))]
            }),
        )
    }

    /// Reorders axes: output axis `d` is input axis `perm[d]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let n = x.ndim();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid(
                "permute",
                format!("{perm:?} is not a permutation of the axes of {:?}", x.shape()),
            ));
        }
        let v = permute_tensor(&x, perm);
        let mut inverse = vec![0; n];
        for (d, &p) in perm.iter().enumerate() {
            inverse[p] = d;
        }
        self.tape.push(
            "permute",
            v,
            &[self],
            Box::new(move |c: &BackwardCtx<'_, T>| vec![Some(permute_tensor(c.grad, &inverse))]),
        )
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'t, T>> {
        let n = self.shape().len();
        if n < 2 {
            return Err(Error::invalid("transpose", "needs at least 2 axes"));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.swap(n - 2, n - 1);
        self.permute(&perm)
    }

    /// Selects entries `index` along `axis`; repeats are allowed.
    pub fn gather(self, axis: usize, index: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        check_axis("gather", x.shape(), axis)?;
        let len = x.shape()[axis];
        if index.is_empty() || index.iter().any(|&i| i >= len) {
            return Err(Error::invalid("gather", format!("index out of range for extent {len}")));
        }
        let v = gather_tensor(&x, axis, index);
        let index = index.to_vec();
        self.tape.push(
            "gather",
            v,
            &[self],
            Box::new(move |c: &BackwardCtx<'_, T>| {
                vec![Some(scatter_add_tensor(c.grad, axis, &index, len))]
            }),
        )
    }

    /// Adds entry `r` along `axis` into output position `index[r]`; the output
    /// extent along `axis` is `size`. Adjoint of [`Var::gather`].
    pub fn scatter_add(self, axis: usize, index: &[usize], size: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        check_axis("scatter_add", x.shape(), axis)?;
        if index.len() != x.shape()[axis] || index.iter().any(|&i| i >= size) {
            return Err(Error::invalid(
                "scatter_add",
                format!("index of length {} invalid for {:?} into {size}", index.len(), x.shape()),
            ));
        }
        let v = scatter_add_tensor(&x, axis, index, size);
        let index = index.to_vec();
        self.tape.push(
            "scatter_add",
            v,
            &[self],
            Box::new(move |c: &BackwardCtx<'_, T>| {
                vec![Some(gather_tensor(c.grad, axis, &index))]
            }),
        )
    }
}

impl<T: Real> Tape<T> {
    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat<'t>(&'t self, parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let values: Vec<_> = parts.iter().map(|v| v.value()).collect();
        let first = values
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?
            .shape()
            .to_vec();
        check_axis("concat", &first, axis)?;
        for v in &values[1..] {
            let s = v.shape();
            let ok = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(Error::shapes("concat", &first, s));
            }
        }
        let extents: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = extents.iter().sum();
        let (outer, inner) = outer_inner(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &e) in values.iter().zip(&extents) {
                out.extend_from_slice(&v.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total;
        self.push(
            "concat",
            Tensor::from_parts(shape, out),
            parts,
            Box::new(move |c: &BackwardCtx<'_, T>| {
                let g = c.grad.data();
                let mut grads: Vec<Vec<T>> = extents
                    .iter()
                    .map(|&e| Vec::with_capacity(outer * e * inner))
                    .collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (gv, &e) in grads.iter_mut().zip(&extents) {
                        gv.extend_from_slice(&g[pos..pos + e * inner]);
                        pos += e * inner;
                    }
                }
                grads
                    .into_iter()
                    .zip(c.inputs)
                    .zip(c.needs)
                    .map(|((gv, x), &need)| {
                        need.then(|| Tensor::from_parts(x.shape().to_vec(), gv))
                    })
                    .collect()
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Mode;

    #[test]
    fn permute_matches_index_formula() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 4, 5], |i| i as f64);
        for perm in [[0, 2, 1, 3], [3, 1, 0, 2], [1, 0, 3, 2]] {
            let y = permute_tensor(&x, &perm);
            for a in 0..2 {
                for b in 0..3 {
                    for c in 0..4 {
                        for d in 0..5 {
                            let src = [a, b, c, d];
                            let dst: Vec<usize> = perm.iter().map(|&p| src[p]).collect();
                            assert_eq!(y.at(&dst), x.at(&src));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn gather_then_scatter() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 2], |i| i as f64);
        let g = gather_tensor(&x, 1, &[2, 0, 2]);
        assert_eq!(g.shape(), &[2, 3, 2]);
        assert_eq!(g.at(&[1, 0, 1]), x.at(&[1, 2, 1]));
        let s = scatter_add_tensor(&g, 1, &[2, 0, 2], 3);
        assert_eq!(s.at(&[0, 2, 0]), 2.0 * x.at(&[0, 2, 0]));
        assert_eq!(s.at(&[0, 1, 0]), 0.0);
    }

    #[test]
    fn concat_rejects_mismatch() {
        let tape = Tape::<f64>::new(Mode::Eval);
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[3, 3]));
        assert!(tape.concat(&[a, b], 1).is_err());
        let c = tape.concat(&[a, b], 0).unwrap();
        assert_eq!(c.shape(), vec![5, 3]);
    }
}
