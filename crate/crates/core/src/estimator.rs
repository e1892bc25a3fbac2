//! Importance-weighted spectral-filter estimator in the vector-valued RKHS
//! induced by `k(x, t) * Id`.
//!
//! With `B = diag(β(x_1), ..., β(x_n))` and Gram matrix `K`, the estimator is
//!
//! ```text
//! f(x) = Σ_i √β_i y_i α_i(x),   α(x) = (1/n) g_λ((1/n) B^½ K B^½) B^½ k_{x,n}
//! ```
//!
//! Fitting folds everything except `k_{x,n}` into a `p × n` coefficient
//! matrix `C = Yᵀ B^½ (1/n) g_λ(M) B^½`, so a prediction is one kernel
//! vector and one matrix-vector product.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{check_dim, Error, Result};
use crate::kernels::{cross_gram, gram, KernelSpec};
use crate::linalg::symmetrize;
use crate::scalar::Real;
use crate::spectral::{clamped_spectrum, sym_eig, FilterSpec};

/// Anything that maps `d`-dimensional inputs to `p`-dimensional outputs.
pub trait Predictor<T: Real>: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    /// Predictions for each row of `x` (`t × d` in, `t × p` out).
    fn predict_batch(&self, x: ArrayView2<T>) -> Result<Array2<T>>;

    fn predict(&self, x: ArrayView1<T>) -> Result<Array1<T>> {
        check_dim("predict input", self.input_dim(), x.len())?;
        let row = x.insert_axis(Axis(0));
        Ok(self.predict_batch(row)?.row(0).to_owned())
    }
}

/// Labeled source sample, unlabeled target inputs and optionally the exact
/// importance weights of the source points.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftDataset<T> {
    xs: Array2<T>,
    y: Array2<T>,
    xt: Array2<T>,
    beta: Option<Array1<T>>,
}

impl<T: Real> ShiftDataset<T> {
    pub fn new(xs: Array2<T>, y: Array2<T>, xt: Array2<T>, beta: Option<Array1<T>>) -> Result<Self> {
        if xs.nrows() == 0 {
            return Err(Error::Empty("dataset has no source samples"));
        }
        check_dim("dataset outputs (rows)", xs.nrows(), y.nrows())?;
        check_dim("dataset target inputs (columns)", xs.ncols(), xt.ncols())?;
        if let Some(b) = &beta {
            check_beta(b.view(), xs.nrows())?;
        }
        Ok(ShiftDataset { xs, y, xt, beta })
    }

    pub fn xs(&self) -> ArrayView2<'_, T> {
        self.xs.view()
    }

    pub fn y(&self) -> ArrayView2<'_, T> {
        self.y.view()
    }

    pub fn xt(&self) -> ArrayView2<'_, T> {
        self.xt.view()
    }

    pub fn beta(&self) -> Option<ArrayView1<'_, T>> {
        self.beta.as_ref().map(|b| b.view())
    }

    pub fn n(&self) -> usize {
        self.xs.nrows()
    }

    pub fn m(&self) -> usize {
        self.xt.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.xs.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.y.ncols()
    }
}

pub(crate) fn check_beta<T: Real>(beta: ArrayView1<T>, n: usize) -> Result<()> {
    check_dim("importance weights", n, beta.len())?;
    if beta.iter().any(|&b| !(b >= T::zero()) || !b.is_finite()) {
        return Err(Error::invalid("importance weights must be finite and nonnegative"));
    }
    Ok(())
}

/// Result of [`fit`]: the training inputs, kernel and the folded coefficient
/// matrix `C` (`p × n`).
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel<T> {
    spec: KernelSpec<T>,
    filter: FilterSpec<T>,
    xs: Array2<T>,
    coef: Array2<T>,
    beta: Array1<T>,
}

impl<T: Real> FittedModel<T> {
    /// Reassembles a model from stored parts (e.g. a model directory).
    pub fn from_parts(
        spec: KernelSpec<T>,
        filter: FilterSpec<T>,
        xs: Array2<T>,
        coef: Array2<T>,
        beta: Array1<T>,
    ) -> Result<Self> {
        check_dim("coefficient columns", xs.nrows(), coef.ncols())?;
        check_beta(beta.view(), xs.nrows())?;
        Ok(FittedModel {
            spec,
            filter,
            xs,
            coef,
            beta,
        })
    }

    pub fn kernel(&self) -> &KernelSpec<T> {
        &self.spec
    }

    pub fn filter(&self) -> &FilterSpec<T> {
        &self.filter
    }

    pub fn xs(&self) -> ArrayView2<'_, T> {
        self.xs.view()
    }

    /// The `p × n` coefficient matrix.
    pub fn coef(&self) -> ArrayView2<'_, T> {
        self.coef.view()
    }

    pub fn beta(&self) -> ArrayView1<'_, T> {
        self.beta.view()
    }

    pub fn n(&self) -> usize {
        self.xs.nrows()
    }

    /// `(1/n) Σ β_i ‖f(x_i) - y_i‖²` over the dataset's source sample.
    pub fn weighted_empirical_risk(&self, ds: &ShiftDataset<T>, beta: ArrayView1<T>) -> Result<T> {
        weighted_empirical_risk(self, ds, beta)
    }
}

impl<T: Real> Predictor<T> for FittedModel<T> {
    fn input_dim(&self) -> usize {
        self.xs.ncols()
    }

    fn output_dim(&self) -> usize {
        self.coef.nrows()
    }

    fn predict_batch(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        check_dim("predict input", self.input_dim(), x.ncols())?;
        if x.nrows() == 0 {
            return Ok(Array2::zeros((0, self.output_dim())));
        }
        let kx = cross_gram(&self.spec, x, self.xs.view())?;
        Ok(kx.dot(&self.coef.t()))
    }
}

/// Eigendecomposition of the weighted Gram matrix `(1/n) B^½ K B^½`, shared
/// by every filter fitted on the same data.
struct WeightedSpectrum<T> {
    sqrt_beta: Array1<T>,
    values: Vec<T>,
    vectors: Array2<T>,
}

fn weighted_spectrum<T: Real>(
    xs: ArrayView2<T>,
    spec: &KernelSpec<T>,
    beta: ArrayView1<T>,
) -> Result<WeightedSpectrum<T>> {
    let n = xs.nrows();
    check_beta(beta, n)?;
    let k = gram(spec, xs)?;
    let sqrt_beta = beta.mapv(|b| b.sqrt());
    let inv_n = T::count(n).recip();
    let mut m = k;
    for ((i, j), v) in m.indexed_iter_mut() {
        *v = *v * sqrt_beta[i] * sqrt_beta[j] * inv_n;
    }
    let m = symmetrize(m.view());
    let eig = sym_eig(m.view())?;
    let values = clamped_spectrum(&eig)?;
    Ok(WeightedSpectrum {
        sqrt_beta,
        values,
        vectors: eig.vectors,
    })
}

fn coefficients<T: Real>(
    ws: &WeightedSpectrum<T>,
    y: ArrayView2<T>,
    filter: &FilterSpec<T>,
) -> Array2<T> {
    let n = ws.values.len();
    let inv_n = T::count(n).recip();
    // C = (Yᵀ B^½ V) diag(g(w) / n) (Vᵀ B^½)
    let mut yb = y.t().to_owned();
    for (mut col, &sb) in yb.columns_mut().into_iter().zip(&ws.sqrt_beta) {
        col.mapv_inplace(|v| v * sb);
    }
    let g: Array1<T> = ws.values.iter().map(|&w| filter.g(w) * inv_n).collect();
    let ybv = yb.dot(&ws.vectors) * &g;
    let mut c = ybv.dot(&ws.vectors.t());
    for (mut col, &sb) in c.columns_mut().into_iter().zip(&ws.sqrt_beta) {
        col.mapv_inplace(|v| v * sb);
    }
    c
}

/// Fits the weighted spectral-filter estimator on the source sample of `ds`.
pub fn fit<T: Real>(
    ds: &ShiftDataset<T>,
    spec: &KernelSpec<T>,
    filter: &FilterSpec<T>,
    beta: ArrayView1<T>,
) -> Result<FittedModel<T>> {
    let mut models = fit_path(ds, spec, std::slice::from_ref(filter), beta)?;
    Ok(models.remove(0))
}

/// Fits one model per filter, reusing a single eigendecomposition of the
/// weighted Gram matrix. Each result is identical to calling [`fit`].
pub fn fit_path<T: Real>(
    ds: &ShiftDataset<T>,
    spec: &KernelSpec<T>,
    filters: &[FilterSpec<T>],
    beta: ArrayView1<T>,
) -> Result<Vec<FittedModel<T>>> {
    let ws = weighted_spectrum(ds.xs(), spec, beta)?;
    Ok(filters
        .iter()
        .map(|filter| FittedModel {
            spec: *spec,
            filter: *filter,
            xs: ds.xs.clone(),
            coef: coefficients(&ws, ds.y(), filter),
            beta: beta.to_owned(),
        })
        .collect())
}

pub fn weighted_empirical_risk<T: Real>(
    model: &dyn Predictor<T>,
    ds: &ShiftDataset<T>,
    beta: ArrayView1<T>,
) -> Result<T> {
    check_beta(beta, ds.n())?;
    check_dim("model output", ds.output_dim(), model.output_dim())?;
    let pred = model.predict_batch(ds.xs())?;
    let mut total = T::zero();
    for ((p, y), &b) in pred.outer_iter().zip(ds.y().outer_iter()).zip(beta.iter()) {
        let r: T = p.iter().zip(y.iter()).map(|(&a, &c)| (a - c) * (a - c)).sum();
        total += b * r;
    }
    Ok(total / T::count(ds.n()))
}

/// Evaluates `f(x)` for the given inputs directly from the unfactored
/// representer formula (an `n × n` matrix function per call). Only meant as
/// a cross-check on small problems.
pub fn representer_predict<T: Real>(
    ds: &ShiftDataset<T>,
    spec: &KernelSpec<T>,
    filter: &FilterSpec<T>,
    beta: ArrayView1<T>,
    x: ArrayView2<T>,
) -> Result<Array2<T>> {
    let n = ds.n();
    let ws = weighted_spectrum(ds.xs(), spec, beta)?;
    let g: Array1<T> = ws.values.iter().map(|&w| filter.g(w)).collect();
    let gm = (&ws.vectors * &g).dot(&ws.vectors.t());
    let kx = cross_gram(spec, ds.xs(), x)?; // n × t
    let mut bk = kx;
    for (mut row, &sb) in bk.rows_mut().into_iter().zip(&ws.sqrt_beta) {
        row.mapv_inplace(|v| v * sb);
    }
    let alpha = gm.dot(&bk) / T::count(n); // n × t
    let mut out = Array2::zeros((x.nrows(), ds.output_dim()));
    for t in 0..x.nrows() {
        for i in 0..n {
            let w = ws.sqrt_beta[i] * alpha[[i, t]];
            let yi = ds.y().slice(s![i, ..]).to_owned();
            out.row_mut(t).scaled_add(w, &yi);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::FilterSpec;
    use ndarray::array;

    fn dataset(xs: Array2<f64>, y: Array2<f64>) -> ShiftDataset<f64> {
        let xt = xs.clone();
        ShiftDataset::new(xs, y, xt, None).unwrap()
    }

    #[test]
    fn single_point_tikhonov() {
        let lambda = 0.3;
        let ds = dataset(array![[0.2, -0.4]], array![[2.0, -1.0, 0.5]]);
        let k = KernelSpec::<f64>::gaussian(1.0).unwrap();
        let f = FilterSpec::tikhonov(lambda).unwrap();
        let m = fit(&ds, &k, &f, array![1.0].view()).unwrap();
        let want = array![2.0, -1.0, 0.5] / (1.0 + lambda);
        assert!((&m.coef().column(0).to_owned() - &want).iter().all(|v| v.abs() < 1e-15));
        let p = m.predict(array![0.2, -0.4].view()).unwrap();
        assert!((&p - &want).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn zero_weights_give_zero_model() {
        let ds = dataset(array![[0.0], [1.0], [2.5]], array![[1.0], [2.0], [3.0]]);
        let k = KernelSpec::gaussian(0.5).unwrap();
        let m = fit(&ds, &k, &FilterSpec::tikhonov(0.1).unwrap(), Array1::zeros(3).view()).unwrap();
        assert!(m.coef().iter().all(|&v| v == 0.0));
        let p = m.predict(array![0.7].view()).unwrap();
        assert_eq!(p, array![0.0]);
    }

    #[test]
    fn two_point_hand_oracle() {
        // Xs = (0, 1), Y = (1, -1), β = (1, 1), Gaussian γ = 1, Tikhonov λ = 0.1.
        // K = [[1, e⁻¹], [e⁻¹, 1]] has eigenvectors (1, ±1)/√2 with
        // eigenvalues 1 ± e⁻¹; M = K/2, so g(M) = Σ u uᵀ / ((1 ± e⁻¹)/2 + λ).
        let ds = dataset(array![[0.0], [1.0]], array![[1.0], [-1.0]]);
        let k = KernelSpec::gaussian(1.0).unwrap();
        let lambda = 0.1;
        let m = fit(&ds, &k, &FilterSpec::tikhonov(lambda).unwrap(), array![1.0, 1.0].view()).unwrap();
        let e = (-1.0f64).exp();
        let g_plus = 1.0 / ((1.0 + e) / 2.0 + lambda);
        let g_minus = 1.0 / ((1.0 - e) / 2.0 + lambda);
        // g(M) = ½[[g₊ + g₋, g₊ - g₋], [g₊ - g₋, g₊ + g₋]]; C = Yᵀ g(M) / 2
        let gm = [[0.5 * (g_plus + g_minus), 0.5 * (g_plus - g_minus)], [0.5 * (g_plus - g_minus), 0.5 * (g_plus + g_minus)]];
        let c0 = (1.0 * gm[0][0] - 1.0 * gm[1][0]) / 2.0;
        let c1 = (1.0 * gm[0][1] - 1.0 * gm[1][1]) / 2.0;
        assert!((m.coef()[[0, 0]] - c0).abs() < 1e-10);
        assert!((m.coef()[[0, 1]] - c1).abs() < 1e-10);
    }

    #[test]
    fn batch_matches_single() {
        let ds = dataset(array![[0.0, 1.0], [1.0, 0.5], [0.3, 0.3]], array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let k = KernelSpec::cauchy(1.5).unwrap();
        let m = fit(&ds, &k, &FilterSpec::iterated_tikhonov(3, 0.05).unwrap(), array![0.5, 1.0, 2.0].view()).unwrap();
        let x = array![[0.1, 0.2], [2.0, -1.0]];
        let b = m.predict_batch(x.view()).unwrap();
        for (i, row) in x.outer_iter().enumerate() {
            let p = m.predict(row).unwrap();
            assert_eq!(p, b.row(i));
        }
        let single = m.predict_batch(x.slice(s![0..1, ..])).unwrap();
        assert_eq!(single.row(0), b.row(0));
        let empty = m.predict_batch(Array2::zeros((0, 2)).view()).unwrap();
        assert_eq!(empty.dim(), (0, 2));
        assert!(m.predict(array![1.0].view()).is_err());
        assert!(m.predict_batch(Array2::zeros((2, 3)).view()).is_err());
    }

    #[test]
    fn matches_unfactored_formula() {
        let ds = dataset(
            array![[0.0, 1.0], [1.0, 0.5], [0.3, 0.3], [0.9, 0.9]],
            array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 2.0]],
        );
        let beta = array![0.5, 1.0, 2.0, 0.0];
        let x = array![[0.1, 0.2], [2.0, -1.0], [0.3, 0.3]];
        for f in [
            FilterSpec::tikhonov(0.01).unwrap(),
            FilterSpec::iterated_tikhonov(4, 0.05).unwrap(),
            FilterSpec::cutoff(0.02).unwrap(),
        ] {
            let k = KernelSpec::exponential(1.2).unwrap();
            let m = fit(&ds, &k, &f, beta.view()).unwrap();
            let want = representer_predict(&ds, &k, &f, beta.view(), x.view()).unwrap();
            let got = m.predict_batch(x.view()).unwrap();
            assert!((&got - &want).iter().all(|v| v.abs() < 1e-10), "{f:?}");
        }
    }

    #[test]
    fn risk_hand_arithmetic() {
        // residual norms² (1, 7) with β = (2, 0) → (1/2)(2·1 + 0·7) = 1
        struct Fixed;
        impl Predictor<f64> for Fixed {
            fn input_dim(&self) -> usize {
                1
            }
            fn output_dim(&self) -> usize {
                2
            }
            fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
                Ok(Array2::zeros((x.nrows(), 2)))
            }
        }
        let ds = dataset(array![[0.0], [1.0]], array![[1.0, 0.0], [2.0, f64::sqrt(3.0)]]);
        let r = weighted_empirical_risk(&Fixed, &ds, array![2.0, 0.0].view()).unwrap();
        assert!((r - 1.0).abs() < 1e-15);
        let r = weighted_empirical_risk(&Fixed, &ds, array![1.0, 1.0].view()).unwrap();
        assert!((r - 4.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_weights_and_shapes() {
        let ds = dataset(array![[0.0], [1.0]], array![[1.0], [2.0]]);
        let k = KernelSpec::gaussian(1.0).unwrap();
        let f = FilterSpec::tikhonov(0.1).unwrap();
        assert!(fit(&ds, &k, &f, array![1.0, -0.1].view()).is_err());
        assert!(fit(&ds, &k, &f, array![1.0].view()).is_err());
        assert!(ShiftDataset::new(array![[0.0]], array![[1.0], [2.0]], array![[0.0]], None).is_err());
        assert!(ShiftDataset::new(array![[0.0]], array![[1.0]], array![[0.0, 1.0]], None).is_err());
        assert!(ShiftDataset::<f64>::new(Array2::zeros((0, 1)), Array2::zeros((0, 1)), array![[0.0]], None).is_err());
    }
}
