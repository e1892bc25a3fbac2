//! Regularization families g_λ and their application to symmetric PSD
//! matrices.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::eigen::{sym_eig, EigenPair};
use crate::error::{Error, Result};
use crate::linalg::{ensure_square, Cholesky};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterFamily {
    Tikhonov,
    /// Iterated Tikhonov with `m ≥ 1` iterations.
    IteratedTikhonov { m: u32 },
    SpectralCutoff,
}

impl FilterFamily {
    pub fn name(&self) -> String {
        match self {
            FilterFamily::Tikhonov => "tikhonov".into(),
            FilterFamily::IteratedTikhonov { m } => format!("iterated_tikhonov(m={m})"),
            FilterFamily::SpectralCutoff => "cutoff".into(),
        }
    }

    /// Qualification of the family; `None` means infinite.
    pub fn qualification(&self) -> Option<u32> {
        match *self {
            FilterFamily::Tikhonov => Some(1),
            FilterFamily::IteratedTikhonov { m } => Some(m),
            FilterFamily::SpectralCutoff => None,
        }
    }

    /// Constant `B` in `|g_λ(σ)| ≤ B / λ`.
    pub fn bound_b(&self) -> u32 {
        match *self {
            FilterFamily::IteratedTikhonov { m } => m,
            _ => 1,
        }
    }
}

/// A regularization family paired with its parameter λ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFilterSpec<T>", into = "RawFilterSpec<T>")]
#[serde(bound = "T: Real")]
pub struct FilterSpec<T> {
    family: FilterFamily,
    lambda: T,
}

#[derive(Serialize, Deserialize, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum RawFamily {
    Tikhonov,
    IteratedTikhonov,
    Cutoff,
}

#[derive(Serialize, Deserialize, Clone, Copy)]
#[serde(bound = "T: Real")]
struct RawFilterSpec<T> {
    family: RawFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    m: Option<u32>,
    lambda: T,
}

impl<T: Real> TryFrom<RawFilterSpec<T>> for FilterSpec<T> {
    type Error = Error;
    fn try_from(raw: RawFilterSpec<T>) -> Result<Self> {
        let family = match (raw.family, raw.m) {
            (RawFamily::Tikhonov, None) => FilterFamily::Tikhonov,
            (RawFamily::Cutoff, None) => FilterFamily::SpectralCutoff,
            (RawFamily::IteratedTikhonov, Some(m)) => FilterFamily::IteratedTikhonov { m },
            (RawFamily::IteratedTikhonov, None) => {
                return Err(Error::invalid("iterated_tikhonov requires \"m\""))
            }
            (_, Some(_)) => return Err(Error::invalid("\"m\" only applies to iterated_tikhonov")),
        };
        FilterSpec::new(family, raw.lambda)
    }
}

impl<T: Real> From<FilterSpec<T>> for RawFilterSpec<T> {
    fn from(f: FilterSpec<T>) -> Self {
        let (family, m) = match f.family {
            FilterFamily::Tikhonov => (RawFamily::Tikhonov, None),
            FilterFamily::IteratedTikhonov { m } => (RawFamily::IteratedTikhonov, Some(m)),
            FilterFamily::SpectralCutoff => (RawFamily::Cutoff, None),
        };
        RawFilterSpec {
            family,
            m,
            lambda: f.lambda,
        }
    }
}

impl<T: Real> FilterSpec<T> {
    pub fn new(family: FilterFamily, lambda: T) -> Result<Self> {
        if !(lambda.is_finite() && lambda > T::zero()) {
            return Err(Error::invalid(format!(
                "regularization parameter must be positive and finite, got {lambda}"
            )));
        }
        if let FilterFamily::IteratedTikhonov { m } = family {
            if m == 0 {
                return Err(Error::invalid("iterated Tikhonov needs m >= 1"));
            }
        }
        Ok(FilterSpec { family, lambda })
    }

    pub fn tikhonov(lambda: T) -> Result<Self> {
        Self::new(FilterFamily::Tikhonov, lambda)
    }

    pub fn iterated_tikhonov(m: u32, lambda: T) -> Result<Self> {
        Self::new(FilterFamily::IteratedTikhonov { m }, lambda)
    }

    pub fn cutoff(lambda: T) -> Result<Self> {
        Self::new(FilterFamily::SpectralCutoff, lambda)
    }

    pub fn family(&self) -> FilterFamily {
        self.family
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn with_lambda(&self, lambda: T) -> Result<Self> {
        Self::new(self.family, lambda)
    }

    /// g_λ(σ) for σ ≥ 0 (no argument check).
    #[inline]
    pub fn g(&self, sigma: T) -> T {
        let lambda = self.lambda;
        match self.family {
            FilterFamily::Tikhonov => (sigma + lambda).recip(),
            FilterFamily::IteratedTikhonov { m } => {
                // (1 - q^m) / σ = (1 / (σ + λ)) Σ_{k<m} q^k with q = λ / (σ + λ);
                // the sum form stays accurate as σ → 0, where g → m / λ.
                let q = lambda / (sigma + lambda);
                let mut acc = T::zero();
                let mut qk = T::one();
                for _ in 0..m {
                    acc += qk;
                    qk *= q;
                }
                acc / (sigma + lambda)
            }
            FilterFamily::SpectralCutoff => {
                if sigma >= lambda {
                    sigma.recip()
                } else {
                    T::zero()
                }
            }
        }
    }

    /// r_λ(σ) = 1 - σ g_λ(σ), evaluated in a cancellation-free form.
    #[inline]
    pub fn residual(&self, sigma: T) -> T {
        let lambda = self.lambda;
        match self.family {
            FilterFamily::Tikhonov => lambda / (sigma + lambda),
            FilterFamily::IteratedTikhonov { m } => {
                (lambda / (sigma + lambda)).powi(m as i32)
            }
            FilterFamily::SpectralCutoff => {
                if sigma >= lambda {
                    T::zero()
                } else {
                    T::one()
                }
            }
        }
    }
}

fn check_sigma<T: Real>(sigma: T) -> Result<()> {
    if sigma >= T::zero() && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("filter argument must be a finite σ ≥ 0, got {sigma}")))
    }
}

pub fn filter_value<T: Real>(f: &FilterSpec<T>, sigma: T) -> Result<T> {
    check_sigma(sigma)?;
    Ok(f.g(sigma))
}

pub fn residual_value<T: Real>(f: &FilterSpec<T>, sigma: T) -> Result<T> {
    check_sigma(sigma)?;
    Ok(f.residual(sigma))
}

/// Tolerance below zero accepted for the spectrum of a PSD matrix:
/// `1e-8 * trace / n`.
pub fn psd_tolerance<T: Real>(eig: &EigenPair<T>) -> T {
    let n = eig.len().max(1);
    let trace: T = eig.values.iter().copied().sum();
    T::tol(1e-8) * trace.max(T::zero()) / T::count(n)
}

/// Eigenvalues with rounding-level negatives clamped to zero; errors if
/// any eigenvalue lies below `-psd_tolerance`.
pub fn clamped_spectrum<T: Real>(eig: &EigenPair<T>) -> Result<Vec<T>> {
    let tol = psd_tolerance(eig);
    eig.values
        .iter()
        .map(|&w| {
            if w < -tol {
                Err(Error::NotPsd {
                    eigenvalue: w.as_f64(),
                    tolerance: tol.as_f64(),
                })
            } else {
                Ok(w.max(T::zero()))
            }
        })
        .collect()
}

/// g_λ applied to an already decomposed PSD matrix.
pub fn apply_filter_eigen<T: Real>(f: &FilterSpec<T>, eig: &EigenPair<T>) -> Result<Array2<T>> {
    let w = clamped_spectrum(eig)?;
    let g: ndarray::Array1<T> = w.iter().map(|&s| f.g(s)).collect();
    let scaled = &eig.vectors * &g;
    Ok(scaled.dot(&eig.vectors.t()))
}

/// `V diag(g_λ(w⁺)) Vᵀ` for a symmetric PSD matrix `M = V diag(w) Vᵀ`.
pub fn apply_filter_matrix<T: Real>(f: &FilterSpec<T>, m: ArrayView2<T>) -> Result<Array2<T>> {
    let eig = sym_eig(m)?;
    apply_filter_eigen(f, &eig)
}

/// Direct solve `(M + λI)^{-1}`; an independent route to the Tikhonov filter.
pub fn tikhonov_direct<T: Real>(m: ArrayView2<T>, lambda: T) -> Result<Array2<T>> {
    let n = ensure_square(m, "tikhonov_direct")?;
    let mut shifted = m.to_owned();
    for i in 0..n {
        shifted[[i, i]] += lambda;
    }
    Cholesky::factor(shifted.view())?.solve_mat(Array2::eye(n).view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn scalar_values() {
        let t = FilterSpec::<f64>::tikhonov(0.1).unwrap();
        assert!((filter_value(&t, 0.9).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(residual_value(&t, 0.0).unwrap(), 1.0);
        assert!((residual_value(&t, 0.1).unwrap() - 0.5).abs() < 1e-15);

        let c = FilterSpec::<f64>::cutoff(0.5).unwrap();
        assert_eq!(filter_value(&c, 0.25).unwrap(), 0.0);
        assert_eq!(filter_value(&c, 0.5).unwrap(), 2.0);
        assert_eq!(residual_value(&c, 0.7).unwrap(), 0.0);

        let it = FilterSpec::<f64>::iterated_tikhonov(2, 1.0).unwrap();
        assert!((filter_value(&it, 1.0).unwrap() - 0.75).abs() < 1e-15);
        // σ → 0 limit is m / λ
        assert!((filter_value(&it, 0.0).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn iterated_matches_closed_form() {
        for m in 1..6u32 {
            let f = FilterSpec::<f64>::iterated_tikhonov(m, 0.3).unwrap();
            for &s in &[0.01, 0.2, 0.3, 1.0, 7.0] {
                let closed = (1.0 - (0.3f64 / (s + 0.3)).powi(m as i32)) / s;
                assert!((f.g(s) - closed).abs() < 1e-12 * closed.abs().max(1.0));
                assert!((f.residual(s) - (1.0 - s * f.g(s))).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn iterated_m1_is_tikhonov() {
        let a = FilterSpec::<f64>::iterated_tikhonov(1, 0.2).unwrap();
        let b = FilterSpec::<f64>::tikhonov(0.2).unwrap();
        for &s in &[0.0, 0.1, 3.0] {
            assert!((a.g(s) - b.g(s)).abs() < 1e-15);
        }
    }

    #[test]
    fn negative_sigma_rejected() {
        let t = FilterSpec::<f64>::tikhonov(0.1).unwrap();
        assert!(filter_value(&t, -1e-3).is_err());
        assert!(residual_value(&t, -1.0).is_err());
        assert!(FilterSpec::<f64>::tikhonov(0.0).is_err());
        assert!(FilterSpec::<f64>::iterated_tikhonov(0, 1.0).is_err());
    }

    #[test]
    fn matrix_filters() {
        let lambda = 0.25;
        let t = FilterSpec::<f64>::tikhonov(lambda).unwrap();
        let out = apply_filter_matrix(&t, Array2::<f64>::eye(3).view()).unwrap();
        let want = Array2::<f64>::eye(3) / (1.0 + lambda);
        assert!((&out - &want).iter().all(|v| v.abs() < 1e-14));

        let c = FilterSpec::<f64>::cutoff(0.5).unwrap();
        let out = apply_filter_matrix(&c, array![[1.0, 0.0], [0.0, 0.1]].view()).unwrap();
        assert!((&out - &array![[1.0, 0.0], [0.0, 0.0]]).iter().all(|v| v.abs() < 1e-14));

        let z = Array2::<f64>::zeros((3, 3));
        let out = apply_filter_matrix(&t, z.view()).unwrap();
        assert!((&out - &(Array2::<f64>::eye(3) / lambda)).iter().all(|v| v.abs() < 1e-12));
        let out = apply_filter_matrix(&c, z.view()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_indefinite() {
        let t = FilterSpec::<f64>::tikhonov(0.1).unwrap();
        let m = array![[1.0, 0.0], [0.0, -0.5]];
        assert!(matches!(apply_filter_matrix(&t, m.view()), Err(Error::NotPsd { .. })));
        // rounding-level negatives are clamped
        let m = array![[1.0, 0.0], [0.0, -1e-12]];
        assert!(apply_filter_matrix(&t, m.view()).is_ok());
    }

    #[test]
    fn json_shape() {
        let f = FilterSpec::<f64>::iterated_tikhonov(3, 0.01).unwrap();
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(s, r#"{"family":"iterated_tikhonov","m":3,"lambda":0.01}"#);
        let c: FilterSpec<f64> = serde_json::from_str(r#"{"family":"cutoff","lambda":0.5}"#).unwrap();
        assert_eq!(c, FilterSpec::<f64>::cutoff(0.5).unwrap());
        assert!(serde_json::from_str::<FilterSpec<f64>>(r#"{"family":"iterated_tikhonov","lambda":0.5}"#).is_err());
        assert!(serde_json::from_str::<FilterSpec<f64>>(r#"{"family":"tikhonov","m":2,"lambda":0.5}"#).is_err());
    }
}
