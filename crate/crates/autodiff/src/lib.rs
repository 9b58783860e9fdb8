//! Small reverse-mode automatic differentiation engine over dense row-major
//! tensors, with SGD/Adam, finite-difference checking and a binary
//! checkpoint format.
//!
//! ```
//! use symgnn_autodiff::{Mode, Tape, Tensor};
//!
//! let tape = Tape::<f64>::new(Mode::Eval);
//! let x = tape.leaf(Tensor::from_f64(&[1], &[3.0]).unwrap());
//! let loss = x.mul(x).unwrap().sum_all().unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[6.0]);
//! ```

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod ops;
pub mod optim;
mod params;
mod real;
mod tape;
mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use gradcheck::{check_function, gradient_check, Primitive};
pub use ops::{gru_cell, BatchStats, GruWeights, BN_EPS, BN_MOMENTUM};
pub use optim::{Adam, Sgd};
pub use params::{xavier_uniform, ParamId, ParamStore, Parameter};
pub use real::Real;
pub use tape::{gradients, Gradients, Mode, ParamGrads, Tape, Var};
pub use tensor::Tensor;
