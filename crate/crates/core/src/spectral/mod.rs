//! Symmetric eigendecomposition and spectral regularization filters.

mod eigen;
mod filter;

pub use eigen::{sym_eig, EigenPair};
pub use filter::{
    apply_filter_eigen, apply_filter_matrix, clamped_spectrum, filter_value, psd_tolerance,
    residual_value, tikhonov_direct, FilterFamily, FilterSpec,
};
