use crate::error::{Error, Result};
use crate::real::Real;
use crate::tape::{BackwardCtx, Var};
use crate::tensor::{numel, Tensor};

/// Numpy-style (right-aligned) broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` laid out against the (broadcast) `out` shape, with zero
/// stride on broadcast axes.
fn strides_in(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let lead = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[lead + i] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visits every output position with the matching offsets into both inputs.
fn for_each_offset(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize)) {
    let n = out.len();
    let mut idx = vec![0usize; n];
    let (mut oa, mut ob) = (0usize, 0usize);
    for _ in 0..numel(out) {
        f(oa, ob);
        for d in (0..n).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

fn is_suffix(short: &[usize], long: &[usize]) -> bool {
    short.len() <= long.len() && long[long.len() - short.len()..] == *short
}

pub(crate) fn broadcast_binary<T: Real>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    let out = broadcast_shape(a.shape(), b.shape())
        .ok_or_else(|| Error::shapes(op, a.shape(), b.shape()))?;
    let (ad, bd) = (a.data(), b.data());
    let data: Vec<T> = if a.shape() == b.shape() {
        ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
    } else if a.shape() == out.as_slice() && is_suffix(b.shape(), &out) {
        let nb = bd.len();
        ad.iter().enumerate().map(|(i, &x)| f(x, bd[i % nb])).collect()
    } else if b.shape() == out.as_slice() && is_suffix(a.shape(), &out) {
        let na = ad.len();
        bd.iter().enumerate().map(|(i, &y)| f(ad[i % na], y)).collect()
    } else {
        let sa = strides_in(a.shape(), &out);
        let sb = strides_in(b.shape(), &out);
        let mut data = Vec::with_capacity(numel(&out));
        for_each_offset(&out, &sa, &sb, |oa, ob| data.push(f(ad[oa], bd[ob])));
        data
    };
    Ok(Tensor::from_parts(out, data))
}

/// Sums a broadcast gradient back down to `shape`.
pub(crate) fn sum_to_shape<T: Real>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let n = numel(shape);
    let mut out = vec![T::zero(); n];
    if is_suffix(shape, g.shape()) {
        for (i, &v) in g.data().iter().enumerate() {
            out[i % n] = out[i % n] + v;
        }
    } else {
        let sa = strides_in(shape, g.shape());
        let zeros = vec![0; g.ndim()];
        let gd = g.data();
        let mut k = 0;
        for_each_offset(g.shape(), &sa, &zeros, |oa, _| {
            out[oa] = out[oa] + gd[k];
            k += 1;
        });
    }
    Tensor::from_parts(shape.to_vec(), out)
}

impl<'t, T: Real> Var<'t, T> {
    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let v = broadcast_binary("add", &self.value(), &other.value(), |x, y| x + y)?;
        self.tape.push(
            "add",
            v,
            &[self, other],
            Box::new(|c: &BackwardCtx<'_, T>| {
                vec![
                    c.needs[0].then(|| sum_to_shape(c.grad, c.inputs[0].shape())),
                    c.needs[1].then(|| sum_to_shape(c.grad, c.inputs[1].shape())),
                ]
            }),
        )
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let v = broadcast_binary("sub", &self.value(), &other.value(), |x, y| x - y)?;
        self.tape.push(
            "sub",
            v,
            &[self, other],
            Box::new(|c: &BackwardCtx<'_, T>| {
                vec![
                    c.needs[0].then(|| sum_to_shape(c.grad, c.inputs[0].shape())),
                    c.needs[1].then(|| sum_to_shape(&c.grad.map(|g| -g), c.inputs[1].shape())),
                ]
            }),
        )
    }

    #[allow(clippy::should_implement_trait)]
    /// Elementwise (Hadamard) product with broadcasting.
    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let v = broadcast_binary("mul", &self.value(), &other.value(), |x, y| x * y)?;
        self.tape.push(
            "mul",
            v,
            &[self, other],
            Box::new(|c: &BackwardCtx<'_, T>| {
                let (a, b) = (c.inputs[0], c.inputs[1]);
                let ga = c.needs[0].then(|| {
                    let full = broadcast_binary("mul", c.grad, b, |g, y| g * y).expect("shapes");
                    sum_to_shape(&full, a.shape())
                });
                let gb = c.needs[1].then(|| {
                    let full = broadcast_binary("mul", c.grad, a, |g, x| g * x).expect("shapes");
                    sum_to_shape(&full, b.shape())
                });
                vec![ga, gb]
            }),
        )
    }

    pub fn scale(self, alpha: T) -> Result<Var<'t, T>> {
        let v = self.value().scaled(alpha);
        self.tape.push(
            "scale",
            v,
            &[self],
            Box::new(move |c: &BackwardCtx<'_, T>| vec![Some(c.grad.scaled(alpha))]),
        )
    }

    #[allow(clippy::should_implement_trait)]
    pub fn neg(self) -> Result<Var<'t, T>> {
        self.scale(-T::one())
    }

    fn unary(
        self,
        op: &'static str,
        f: impl Fn(T) -> T,
        // derivative from (input, output)
        df: impl Fn(T, T) -> T + 'static,
    ) -> Result<Var<'t, T>> {
        let v = self.value().map(f);
        self.tape.push(
            op,
            v,
            &[self],
            Box::new(move |c: &BackwardCtx<'_, T>| {
                let x = c.inputs[0].data();
                let y = c.output.data();
                let g: Vec<T> = c
                    .grad
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &g)| g * df(x[i], y[i]))
                    .collect();
                vec![Some(Tensor::from_parts(c.grad.shape().to_vec(), g))]
            }),
        )
    }

    /// Subgradient 0 at non-positive inputs.
    pub fn relu(self) -> Result<Var<'t, T>> {
        self.unary(
            "relu",
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(self) -> Result<Var<'t, T>> {
        self.unary(
            "sigmoid",
            |x| T::one() / (T::one() + (-x).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    pub fn tanh(self) -> Result<Var<'t, T>> {
        self.unary("tanh", |x| x.tanh(), |_, y| T::one() - y * y)
    }

    /// Subgradient 0 at zero.
    pub fn abs(self) -> Result<Var<'t, T>> {
        self.unary(
            "abs",
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    /// Natural log of `max(x, floor)`; the gradient is zero where the floor
    /// is active.
    pub fn ln_floor(self, floor: T) -> Result<Var<'t, T>> {
        self.unary(
            "log",
            move |x| if x > floor { x.ln() } else { floor.ln() },
            move |x, _| if x > floor { T::one() / x } else { T::zero() },
        )
    }

    pub fn ln(self) -> Result<Var<'t, T>> {
        self.ln_floor(T::min_positive_value())
    }
}
