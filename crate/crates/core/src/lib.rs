//! Restore-to-classify cycle-consistent GAN built from self-organized
//! operational layers.
//!
//! Two generators translate between a poor-quality domain `Y` and a
//! high-quality domain `X` while predicting the class label of their input.
//! Two patch discriminators score realism with least-squares targets.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod operational;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod training;

pub use autodiff::{Activation, Graph, TensorNode, Var};
pub use error::{Error, Result};
pub use params::ParamSet;
pub use tensor::{Real, Tensor};
