mod conv;
pub(crate) mod elementwise;
mod linalg;
mod norm;
mod recurrent;
mod reduce;
pub(crate) mod shape;

pub use norm::{BatchStats, BN_EPS, BN_MOMENTUM};
pub use recurrent::{gru_cell, GruWeights};
