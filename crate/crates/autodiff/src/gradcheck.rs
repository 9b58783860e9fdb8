//! Finite-difference verification of the backward rules.
//!
//! The checked scalar is `Σ R ⊙ f(inputs)` for a fixed random `R`, so every
//! output entry contributes to every input gradient. Each input entry is
//! perturbed by `±h` and the central difference compared with the analytic
//! gradient from one backward sweep.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::{gru_cell, GruWeights};
use crate::tape::{Mode, Tape, Var};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Every differentiable primitive of the engine, plus the GRU cell composite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Primitive {
    Matmul,
    BatchedMatmul,
    Linear,
    Add,
    Sub,
    Mul,
    Scale,
    Relu,
    Sigmoid,
    Tanh,
    Abs,
    Log,
    Softmax,
    Concat,
    Transpose,
    Permute,
    Reshape,
    Sum,
    Mean,
    SumAll,
    Conv1dTime,
    BatchNormTrain,
    BatchNormEval,
    Dropout,
    Gather,
    ScatterAdd,
    GruCell,
}

impl Primitive {
    pub const ALL: [Primitive; 27] = [
        Primitive::Matmul,
        Primitive::BatchedMatmul,
        Primitive::Linear,
        Primitive::Add,
        Primitive::Sub,
        Primitive::Mul,
        Primitive::Scale,
        Primitive::Relu,
        Primitive::Sigmoid,
        Primitive::Tanh,
        Primitive::Abs,
        Primitive::Log,
        Primitive::Softmax,
        Primitive::Concat,
        Primitive::Transpose,
        Primitive::Permute,
        Primitive::Reshape,
        Primitive::Sum,
        Primitive::Mean,
        Primitive::SumAll,
        Primitive::Conv1dTime,
        Primitive::BatchNormTrain,
        Primitive::BatchNormEval,
        Primitive::Dropout,
        Primitive::Gather,
        Primitive::ScatterAdd,
        Primitive::GruCell,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Matmul => "matmul",
            Primitive::BatchedMatmul => "batched_matmul",
            Primitive::Linear => "linear",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale => "scale",
            Primitive::Relu => "relu",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Tanh => "tanh",
            Primitive::Abs => "abs",
            Primitive::Log => "log",
            Primitive::Softmax => "softmax_rows",
            Primitive::Concat => "concat",
            Primitive::Transpose => "transpose",
            Primitive::Permute => "permute",
            Primitive::Reshape => "reshape",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::SumAll => "sum_all",
            Primitive::Conv1dTime => "conv1d_time",
            Primitive::BatchNormTrain => "batch_norm_train",
            Primitive::BatchNormEval => "batch_norm_eval",
            Primitive::Dropout => "dropout",
            Primitive::Gather => "gather",
            Primitive::ScatterAdd => "scatter_add",
            Primitive::GruCell => "gru_cell",
        }
    }

    /// Shapes of the data inputs. Weights that the primitive implies (GRU
    /// matrices, batch-norm affine terms) are derived from these.
    pub fn default_shapes(self) -> Vec<Vec<usize>> {
        match self {
            Primitive::Matmul => vec![vec![3, 4], vec![4, 2]],
            Primitive::BatchedMatmul => vec![vec![2, 3, 4], vec![2, 4, 3]],
            Primitive::Linear => vec![vec![2, 3, 4], vec![5, 4], vec![5]],
            Primitive::Add | Primitive::Sub | Primitive::Mul => vec![vec![2, 3, 4], vec![3, 1]],
            Primitive::Softmax => vec![vec![5, 5]],
            Primitive::Concat => vec![vec![2, 3, 2], vec![2, 4, 2]],
            Primitive::Conv1dTime => vec![vec![2, 7, 3], vec![4, 3, 3], vec![4]],
            Primitive::BatchNormTrain | Primitive::BatchNormEval => vec![vec![4, 3, 5]],
            Primitive::GruCell => vec![vec![2, 5], vec![2, 8]],
            _ => vec![vec![3, 4, 2]],
        }
    }

    /// Expands the data shapes into the full list of differentiated inputs.
    fn input_shapes(self, shapes: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
        let want = match self {
            Primitive::Matmul
            | Primitive::BatchedMatmul
            | Primitive::Add
            | Primitive::Sub
            | Primitive::Mul
            | Primitive::Concat
            | Primitive::GruCell => 2,
            Primitive::Linear | Primitive::Conv1dTime => 3,
            _ => 1,
        };
        if shapes.len() != want || shapes.iter().any(|s| s.is_empty() || s.contains(&0)) {
            return Err(Error::invalid(
                "gradient_check",
                format!("{} takes {want} non-empty shapes, got {shapes:?}", self.name()),
            ));
        }
        let mut all = shapes.to_vec();
        match self {
            Primitive::GruCell => {
                let (i, h) = (*shapes[0].last().unwrap(), *shapes[1].last().unwrap());
                all.extend([vec![3 * h, i], vec![3 * h, h], vec![3 * h], vec![3 * h]]);
            }
            Primitive::BatchNormTrain | Primitive::BatchNormEval => {
                let c = *shapes[0].last().unwrap();
                all.extend([vec![c], vec![c]]);
            }
            _ => {}
        }
        Ok(all)
    }

    fn sample(self, shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| match self {
            Primitive::Log => rng.random_range(0.5..2.0),
            // keep clear of the kink so ±h never crosses it
            Primitive::Relu | Primitive::Abs => {
                let m = rng.random_range(0.1..1.0);
                if rng.random::<bool>() { m } else { -m }
            }
            _ => rng.random_range(-1.0..1.0),
        })
    }

    fn apply<'t>(self, tape: &'t Tape<f64>, x: &[Var<'t, f64>], extra: &Extra) -> Result<Var<'t, f64>> {
        match self {
            Primitive::Matmul | Primitive::BatchedMatmul => x[0].matmul(x[1]),
            Primitive::Linear => x[0].linear(x[1], Some(x[2])),
            Primitive::Add => x[0].add(x[1]),
            Primitive::Sub => x[0].sub(x[1]),
            Primitive::Mul => x[0].mul(x[1]),
            Primitive::Scale => x[0].scale(-1.7),
            Primitive::Relu => x[0].relu(),
            Primitive::Sigmoid => x[0].sigmoid(),
            Primitive::Tanh => x[0].tanh(),
            Primitive::Abs => x[0].abs(),
            Primitive::Log => x[0].ln(),
            Primitive::Softmax => x[0].softmax(),
            Primitive::Concat => tape.concat(&[x[0], x[1]], 1),
            Primitive::Transpose => x[0].transpose(),
            Primitive::Permute => {
                let n = x[0].shape().len();
                let perm: Vec<usize> = (0..n).rev().collect();
                x[0].permute(&perm)
            }
            Primitive::Reshape => {
                let len: usize = x[0].shape().iter().product();
                x[0].reshape(&[len])
            }
            Primitive::Sum => x[0].sum(0),
            Primitive::Mean => x[0].mean(x[0].shape().len() - 1),
            Primitive::SumAll => x[0].sum_all(),
            Primitive::Conv1dTime => x[0].conv1d_time(x[1], Some(x[2]), 2),
            Primitive::BatchNormTrain | Primitive::BatchNormEval => {
                let (m, v) = extra.running.as_ref().expect("running stats");
                Ok(x[0].batch_norm(x[1], x[2], m, v)?.0)
            }
            Primitive::Dropout => x[0].dropout(0.5),
            Primitive::Gather => {
                let len = x[0].shape()[1];
                let index: Vec<usize> = (0..len + 2).map(|i| (i * 2 + 1) % len).collect();
                x[0].gather(1, &index)
            }
            Primitive::ScatterAdd => {
                let len = x[0].shape()[0];
                let index: Vec<usize> = (0..len).map(|i| (i * 2) % (len + 1)).collect();
                x[0].scatter_add(0, &index, len + 1)
            }
            Primitive::GruCell => gru_cell(
                x[0],
                x[1],
                &GruWeights { w_ih: x[2], w_hh: x[3], b_ih: x[4], b_hh: x[5] },
            ),
        }
    }

    fn mode(self) -> Mode {
        match self {
            Primitive::BatchNormTrain | Primitive::Dropout => Mode::Train,
            _ => Mode::Eval,
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Primitive {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Primitive::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid("gradient_check", format!("unknown primitive `{s}`")))
    }
}

#[derive(Default)]
struct Extra {
    running: Option<(Tensor<f64>, Tensor<f64>)>,
}

/// Maximum relative error between analytic and central-difference gradients
/// of `primitive` over every entry of every input.
pub fn gradient_check(primitive: Primitive, shapes: &[Vec<usize>], seed: u64) -> Result<f64> {
    let all = primitive.input_shapes(shapes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor<f64>> = all.iter().map(|s| primitive.sample(s, &mut rng)).collect();
    let mut extra = Extra::default();
    if primitive == Primitive::BatchNormEval {
        let c = all[1][0];
        extra.running = Some((
            Tensor::from_fn(&[c], |_| rng.random_range(-0.5..0.5)),
            Tensor::from_fn(&[c], |_| rng.random_range(0.5..1.5)),
        ));
    } else if primitive == Primitive::BatchNormTrain {
        let c = all[1][0];
        extra.running = Some((Tensor::zeros(&[c]), Tensor::ones(&[c])));
    }
    check_function(&inputs, primitive.mode(), seed, |tape, x| primitive.apply(tape, x, &extra))
}

/// Gradient check of an arbitrary differentiable function of `inputs`. The
/// tape is rebuilt with the same `mode` and `seed` for every evaluation, so
/// dropout masks are identical across perturbations.
pub fn check_function<F>(inputs: &[Tensor<f64>], mode: Mode, seed: u64, f: F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let weights = {
        let tape = Tape::with_seed(mode, seed);
        let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&tape, &vars)?.value();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        Tensor::from_fn(out.shape(), |_| rng.random_range(-1.0..1.0))
    };
    let loss_at = |values: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::with_seed(mode, seed);
        let vars: Vec<_> = values.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &vars)?.value().dot(&weights))
    };

    let tape = Tape::with_seed(mode, seed);
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let loss = out.mul(tape.constant(weights.clone()))?.sum_all()?;
    let grads = tape.backward(loss)?;

    let mut worst = 0.0f64;
    let mut values = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        for k in 0..values[i].len() {
            let orig = values[i].data()[k];
            values[i].data_mut()[k] = orig + STEP;
            let up = loss_at(&values)?;
            values[i].data_mut()[k] = orig - STEP;
            let down = loss_at(&values)?;
            values[i].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic.data()[k];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for p in Primitive::ALL {
            assert_eq!(p.name().parse::<Primitive>().unwrap(), p);
        }
    }

    #[test]
    fn wrong_arity_is_rejected() {
        assert!(gradient_check(Primitive::Matmul, &[vec![2, 2]], 0).is_err());
    }
}
