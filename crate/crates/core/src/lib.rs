//! Importance-weighted spectral-filter regression in vector-valued
//! reproducing kernel Hilbert spaces.
//!
//! The crate covers the full learning chain for covariate-shift problems:
//! kernel evaluation ([`kernels`]), regularization families and matrix
//! functions ([`spectral`]), density-ratio estimation by KuLSIF
//! ([`weights`]), the weighted estimator itself ([`estimator`]), and linear
//! aggregation across regularization parameters and kernels
//! ([`aggregate`]). The [`imaging`], [`evalmetrics`], [`synthetic`] and
//! [`experiment`] modules provide a tomography deblurring pipeline and a
//! synthetic benchmark with known ground truth.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar to `f64`.

pub mod aggregate;
pub mod error;
pub mod estimator;
pub mod evalmetrics;
pub mod experiment;
pub mod imaging;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod scalar;
pub mod spectral;
pub mod synthetic;
pub mod weights;

pub use aggregate::{AggregateModel, Member};
pub use error::{Error, Result};
pub use estimator::{FittedModel, Predictor, ShiftDataset};
pub use imaging::{GrayImage, Sinogram};
pub use kernels::{KernelFamily, KernelSpec};
pub use scalar::Real;
pub use spectral::{EigenPair, FilterFamily, FilterSpec};
pub use weights::WeightEstimate;

pub type KernelSpec64 = KernelSpec<f64>;
pub type FilterSpec64 = FilterSpec<f64>;
pub type ShiftDataset64 = ShiftDataset<f64>;
pub type FittedModel64 = FittedModel<f64>;
pub type AggregateModel64 = AggregateModel<f64>;
pub type WeightEstimate64 = WeightEstimate<f64>;
pub type GrayImage64 = GrayImage<f64>;
pub type Sinogram64 = Sinogram<f64>;

pub type FittedModel32 = FittedModel<f32>;
pub type AggregateModel32 = AggregateModel<f32>;
