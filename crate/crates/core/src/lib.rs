//! Symbiotic graph network for skeleton action recognition and motion
//! prediction.

pub mod agim;
pub mod backbone;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod graph;
pub mod heads;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod skeleton;
pub mod synth;
pub mod training;
pub mod verify;

pub use symgnn_autodiff as autodiff;

pub use error::{Error, Result};
pub use model::{ModelConfig, SymGnn};
pub use skeleton::SkeletonSpec;
