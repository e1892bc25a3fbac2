//! Scalar positive-definite kernels, Gram matrices and cross-kernel vectors.
//!
//! Four radial families are supported, each parameterized by a bandwidth
//! `gamma` exactly as used in the deblurring experiments:
//!
//! | family      | k(x, t)                          | k(x, x)   |
//! |-------------|----------------------------------|-----------|
//! | Gaussian    | exp(-gamma * ‖x - t‖²)           | 1         |
//! | Cauchy      | (1 + ‖x - t‖² / gamma²)^-1       | 1         |
//! | Exponential | exp(-‖x - t‖ / gamma²)           | 1         |
//! | IMQ         | (gamma² + ‖x - t‖²)^-1/2         | 1 / gamma |
//!
//! The operator-valued kernel of the vector-valued space is `k(x, t) * Id`,
//! so only the scalar part is ever evaluated.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Gaussian,
    Cauchy,
    Exponential,
    Imq,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 4] = [
        KernelFamily::Gaussian,
        KernelFamily::Exponential,
        KernelFamily::Cauchy,
        KernelFamily::Imq,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "Gaussian",
            KernelFamily::Cauchy => "Cauchy",
            KernelFamily::Exponential => "Exponential",
            KernelFamily::Imq => "IMQ",
        }
    }
}

/// A kernel family together with its bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKernelSpec<T>", into = "RawKernelSpec<T>")]
#[serde(bound = "T: Real")]
pub struct KernelSpec<T> {
    family: KernelFamily,
    gamma: T,
}

#[derive(Serialize, Deserialize, Clone, Copy)]
#[serde(bound = "T: Real")]
struct RawKernelSpec<T> {
    family: KernelFamily,
    gamma: T,
}

impl<T: Real> TryFrom<RawKernelSpec<T>> for KernelSpec<T> {
    type Error = Error;
    fn try_from(raw: RawKernelSpec<T>) -> Result<Self> {
        KernelSpec::new(raw.family, raw.gamma)
    }
}

impl<T: Real> From<KernelSpec<T>> for RawKernelSpec<T> {
    fn from(spec: KernelSpec<T>) -> Self {
        RawKernelSpec {
            family: spec.family,
            gamma: spec.gamma,
        }
    }
}

impl<T: Real> KernelSpec<T> {
    pub fn new(family: KernelFamily, gamma: T) -> Result<Self> {
        if !(gamma.is_finite() && gamma > T::zero()) {
            return Err(Error::invalid(format!(
                "kernel bandwidth must be positive and finite, got {gamma}"
            )));
        }
        Ok(KernelSpec { family, gamma })
    }

    pub fn gaussian(gamma: T) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, gamma)
    }

    pub fn cauchy(gamma: T) -> Result<Self> {
        Self::new(KernelFamily::Cauchy, gamma)
    }

    pub fn exponential(gamma: T) -> Result<Self> {
        Self::new(KernelFamily::Exponential, gamma)
    }

    pub fn imq(gamma: T) -> Result<Self> {
        Self::new(KernelFamily::Imq, gamma)
    }

    /// Bandwidth chosen so that the kernel's length scale matches a typical
    /// squared distance `median_sq_dist` of the data (times `scale`).
    pub fn from_median_heuristic(family: KernelFamily, median_sq_dist: T, scale: T) -> Result<Self> {
        let d2 = median_sq_dist * scale;
        if !(d2.is_finite() && d2 > T::zero()) {
            return Err(Error::invalid(format!(
                "median heuristic needs a positive squared distance, got {median_sq_dist}"
            )));
        }
        let gamma = match family {
            KernelFamily::Gaussian => d2.recip(),
            KernelFamily::Cauchy | KernelFamily::Imq => d2.sqrt(),
            KernelFamily::Exponential => d2.sqrt().sqrt(),
        };
        Self::new(family, gamma)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    /// k(x, x), which is also the bound κ² on the diagonal.
    pub fn diagonal(&self) -> T {
        match self.family {
            KernelFamily::Imq => self.gamma.recip(),
            _ => T::one(),
        }
    }

    /// Kernel value as a function of the squared distance.
    #[inline]
    pub fn of_sq_dist(&self, d2: T) -> T {
        let g = self.gamma;
        match self.family {
            KernelFamily::Gaussian => (-g * d2).exp(),
            KernelFamily::Cauchy => (T::one() + d2 / (g * g)).recip(),
            KernelFamily::Exponential => (-d2.sqrt() / (g * g)).exp(),
            KernelFamily::Imq => (g * g + d2).sqrt().recip(),
        }
    }
}

/// Exact squared Euclidean distance, summed in index order.
#[inline]
pub fn sq_dist<T: Real>(x: &[T], t: &[T]) -> T {
    x.iter()
        .zip(t)
        .fold(T::zero(), |acc, (&a, &b)| {
            let d = a - b;
            acc + d * d
        })
}

fn check_finite<T: Real>(x: ArrayView1<T>, what: &'static str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn check_finite_2d<T: Real>(x: ArrayView2<T>, what: &'static str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn row<T>(flat: &[T], d: usize, i: usize) -> &[T] {
    &flat[i * d..(i + 1) * d]
}

pub fn eval_kernel<T: Real>(spec: &KernelSpec<T>, x: ArrayView1<T>, t: ArrayView1<T>) -> Result<T> {
    check_dim("eval_kernel", x.len(), t.len())?;
    check_finite(x, "kernel argument")?;
    check_finite(t, "kernel argument")?;
    let d2 = x
        .iter()
        .zip(t.iter())
        .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
    Ok(spec.of_sq_dist(d2))
}

/// Gram matrix `K_ij = k(x_i, x_j)` over the rows of `x`.
///
/// Only the upper triangle is evaluated; the lower one is mirrored, so the
/// result is exactly symmetric.
pub fn gram<T: Real>(spec: &KernelSpec<T>, x: ArrayView2<T>) -> Result<Array2<T>> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Empty("gram: no rows"));
    }
    check_finite_2d(x, "gram input")?;
    let (xs, d) = (x.as_standard_layout(), x.ncols());
    let flat = xs.as_slice().expect("standard layout");
    let upper: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| {
                    if i == j {
                        spec.diagonal()
                    } else {
                        spec.of_sq_dist(sq_dist(row(flat, d, i), row(flat, d, j)))
                    }
                })
                .collect()
        })
        .collect();
    let mut k = Array2::zeros((n, n));
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            k[[i, i + off]] = v;
            k[[i + off, i]] = v;
        }
    }
    Ok(k)
}

/// Cross-kernel matrix `K_ij = k(a_i, b_j)`.
pub fn cross_gram<T: Real>(spec: &KernelSpec<T>, a: ArrayView2<T>, b: ArrayView2<T>) -> Result<Array2<T>> {
    check_dim("cross_gram columns", b.ncols(), a.ncols())?;
    check_finite_2d(a, "cross_gram input")?;
    check_finite_2d(b, "cross_gram input")?;
    let (na, nb) = (a.nrows(), b.nrows());
    let (ca, d) = (a.as_standard_layout(), a.ncols());
    let cb = b.as_standard_layout();
    let (fa, fb) = (ca.as_slice().expect("standard layout"), cb.as_slice().expect("standard layout"));
    let rows: Vec<Vec<T>> = (0..na)
        .into_par_iter()
        .map(|i| {
            (0..nb)
                .map(|j| spec.of_sq_dist(sq_dist(row(fa, d, i), row(fb, d, j))))
                .collect()
        })
        .collect();
    let mut out = Array2::zeros((na, nb));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    Ok(out)
}

/// `k_{x,n} = (k(x, x_1), ..., k(x, x_n))`.
pub fn cross_kernel_vector<T: Real>(
    spec: &KernelSpec<T>,
    x_train: ArrayView2<T>,
    x: ArrayView1<T>,
) -> Result<Array1<T>> {
    check_dim("cross_kernel_vector", x_train.ncols(), x.len())?;
    check_finite(x, "kernel argument")?;
    check_finite_2d(x_train, "training inputs")?;
    let xs = x.to_vec();
    Ok(x_train
        .axis_iter(Axis(0))
        .map(|row| match row.to_slice() {
            Some(r) => spec.of_sq_dist(sq_dist(r, &xs)),
            None => spec.of_sq_dist(sq_dist(&row.to_vec(), &xs)),
        })
        .collect())
}

/// Median of the pairwise squared distances between rows (all pairs `i < j`).
pub fn median_sq_dist<T: Real>(x: ArrayView2<T>) -> Result<T> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::Empty("median_sq_dist: fewer than two rows"));
    }
    let (xs, d) = (x.as_standard_layout(), x.ncols());
    let flat = xs.as_slice().expect("standard layout");
    let mut dists: Vec<T> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| (i + 1..n).map(move |j| sq_dist(row(flat, d, i), row(flat, d, j))))
        .collect();
    let mid = dists.len() / 2;
    dists.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Ok(dists[mid])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn gaussian_values() {
        let k = KernelSpec::<f64>::gaussian(0.01).unwrap();
        let x = array![1.0, 2.0];
        assert_eq!(eval_kernel(&k, x.view(), x.view()).unwrap(), 1.0);
        // squared distance 100
        let t = array![7.0, 10.0];
        let v = eval_kernel(&k, x.view(), t.view()).unwrap();
        assert!((v - 0.367_879_441_171_442_3).abs() < 1e-15);
    }

    #[test]
    fn imq_and_cauchy_values() {
        let imq = KernelSpec::<f64>::imq(5.0).unwrap();
        let x = array![0.0, 0.0];
        assert!((eval_kernel(&imq, x.view(), x.view()).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(imq.diagonal(), 0.2);
        let cauchy = KernelSpec::<f64>::cauchy(5.0).unwrap();
        let t = array![3.0, 4.0];
        assert!((eval_kernel(&cauchy, x.view(), t.view()).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn exponential_uses_plain_distance() {
        let k = KernelSpec::<f64>::exponential(2.0).unwrap();
        let x = array![0.0];
        let t = array![8.0];
        // exp(-8 / 4)
        let v = eval_kernel(&k, x.view(), t.view()).unwrap();
        assert!((v - (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(KernelSpec::<f64>::gaussian(0.0).is_err());
        assert!(KernelSpec::<f64>::cauchy(-1.0).is_err());
        assert!(KernelSpec::<f64>::gaussian(f64::NAN).is_err());
        let k = KernelSpec::<f64>::gaussian(1.0).unwrap();
        assert!(matches!(
            eval_kernel(&k, array![1.0, 2.0].view(), array![1.0].view()),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            eval_kernel(&k, array![f64::INFINITY].view(), array![1.0].view()),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(gram(&k, Array2::<f64>::zeros((0, 3)).view()), Err(Error::Empty(_))));
        assert!(cross_kernel_vector(&k, Array2::<f64>::zeros((2, 3)).view(), array![1.0].view()).is_err());
    }

    #[test]
    fn small_grams() {
        let k = KernelSpec::<f64>::gaussian(0.3).unwrap();
        let one = gram(&k, array![[0.5, 1.5]].view()).unwrap();
        assert_eq!(one, array![[1.0]]);
        let same = gram(&k, array![[0.5, 1.5], [0.5, 1.5]].view()).unwrap();
        assert_eq!(same, Array2::from_elem((2, 2), 1.0));
    }

    #[test]
    fn cross_vector_cauchy() {
        let k = KernelSpec::<f64>::cauchy(5.0).unwrap();
        let xs = array![[1.0, 1.0], [4.0, 5.0]];
        let v = cross_kernel_vector(&k, xs.view(), array![1.0, 1.0].view()).unwrap();
        assert_eq!(v[0], 1.0);
        assert!((v[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn json_shape() {
        let k = KernelSpec::<f64>::imq(5.0).unwrap();
        let s = serde_json::to_string(&k).unwrap();
        assert_eq!(s, r#"{"family":"imq","gamma":5.0}"#);
        let back: KernelSpec<f64> = serde_json::from_str(r#"{"family":"gaussian","gamma":0.01}"#).unwrap();
        assert_eq!(back, KernelSpec::<f64>::gaussian(0.01).unwrap());
        assert!(serde_json::from_str::<KernelSpec<f64>>(r#"{"family":"gaussian","gamma":-1}"#).is_err());
    }

    #[test]
    fn median_heuristic_matches_length_scale() {
        for family in KernelFamily::ALL {
            let spec = KernelSpec::from_median_heuristic(family, 4.0f64, 1.0).unwrap();
            let v = spec.of_sq_dist(4.0) / spec.diagonal();
            assert!(v > 0.2 && v < 0.75, "{family:?}: {v}");
        }
    }
}
