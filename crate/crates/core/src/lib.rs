//! Robust Bayesian optimization under input noise.
//!
//! The surrogate is a zero-mean Gaussian process with a nonstationary Spartan kernel whose
//! hyperparameters are integrated out by slice sampling. Queries are selected by expected
//! improvement, optionally averaged over the input-noise distribution with the scaled
//! unscented transform, and either maximized greedily or sampled from a Boltzmann
//! meta-policy. The stochastic policy also runs fully distributed: nodes only exchange
//! `(query, observation)` pairs.
//!
//! The numeric core (`kernels`, `gp`, `hyper`, `unscented`, `acquisition`) is generic over
//! [`Scalar`] (`f32` or `f64`); the type aliases below fix `f64`, which is what the
//! optimizer, benchmarks and harness use.

pub mod acquisition;
pub mod distributed;
pub mod error;
pub mod gp;
pub mod harness;
pub mod hyper;
pub mod kernels;
pub mod linalg;
pub mod optimizer;
pub mod problems;
pub mod scalar;
pub mod sobol;
pub mod unscented;

pub use error::{Result, UboError};
pub use scalar::Scalar;

pub type Dataset = gp::Dataset<f64>;
pub type Prediction = gp::Prediction<f64>;
pub type Matrix = linalg::Matrix<f64>;
pub type MaternArd = kernels::MaternArd<f64>;
pub type Spartan = kernels::Spartan<f64>;
pub type SpartanHyperparams = kernels::SpartanHyperparams<f64>;
pub type SpartanGp = gp::GpState<f64, Spartan>;
pub type SpartanSampleSet = hyper::HyperSampleSet<f64, Spartan>;
pub type UtConfig = unscented::UtConfig<f64>;
pub type UnscentedTransform = unscented::UnscentedTransform<f64>;
pub type SigmaSet = unscented::SigmaSet<f64>;

pub type DatasetF32 = gp::Dataset<f32>;
pub type SpartanF32 = kernels::Spartan<f32>;
pub type SpartanGpF32 = gp::GpState<f32, SpartanF32>;
