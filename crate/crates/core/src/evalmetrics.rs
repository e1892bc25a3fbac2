//! Error metrics, the empirical effective dimension and log-log rate fits.

use ndarray::{ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::ensure_square;
use crate::scalar::Real;
use crate::spectral::{clamped_spectrum, sym_eig};

/// The three image metrics, reported in the order MSE, Rel. Err., PSNR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub rel_err: f64,
    /// `+inf` when the reconstruction is exact.
    pub psnr: f64,
    pub n_items: usize,
}

impl MetricReport {
    pub fn compute<T: Real>(pred: ArrayView2<T>, truth: ArrayView2<T>) -> Result<Self> {
        let mse = mse(pred, truth)?.as_f64();
        let rel_err = rel_err(pred, truth)?.as_f64();
        let psnr = match psnr(mse, 1.0) {
            Ok(v) => v,
            Err(Error::InfinitePsnr) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        Ok(MetricReport {
            mse,
            rel_err,
            psnr,
            n_items: pred.nrows(),
        })
    }
}

fn check_shapes<T>(pred: ArrayView2<T>, truth: ArrayView2<T>) -> Result<()> {
    check_dim("metric rows", truth.nrows(), pred.nrows())?;
    check_dim("metric columns", truth.ncols(), pred.ncols())?;
    if truth.is_empty() {
        return Err(Error::Empty("metric input"));
    }
    Ok(())
}

/// Mean of squared entry differences.
pub fn mse<T: Real>(pred: ArrayView2<T>, truth: ArrayView2<T>) -> Result<T> {
    check_shapes(pred, truth)?;
    let total: T = pred
        .iter()
        .zip(truth.iter())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(total / T::count(pred.len()))
}

/// Mean over rows of `‖pred_i − truth_i‖ / ‖truth_i‖`.
pub fn rel_err<T: Real>(pred: ArrayView2<T>, truth: ArrayView2<T>) -> Result<T> {
    check_shapes(pred, truth)?;
    let mut total = T::zero();
    for (p, t) in pred.axis_iter(Axis(0)).zip(truth.axis_iter(Axis(0))) {
        let tn = t.iter().map(|&v| v * v).sum::<T>().sqrt();
        if tn <= T::zero() {
            return Err(Error::invalid("relative error undefined for a zero-norm truth row"));
        }
        let dn = p.iter().zip(t.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>().sqrt();
        total += dn / tn;
    }
    Ok(total / T::count(pred.nrows()))
}

/// `10 log10(peak² / mse)`.
pub fn psnr(mse_value: f64, peak: f64) -> Result<f64> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::invalid(format!("PSNR peak must be positive, got {peak}")));
    }
    if mse_value == 0.0 {
        return Err(Error::InfinitePsnr);
    }
    if !(mse_value > 0.0 && mse_value.is_finite()) {
        return Err(Error::invalid(format!("PSNR needs a positive MSE, got {mse_value}")));
    }
    Ok(10.0 * (peak * peak / mse_value).log10())
}

/// `Σ w_i / (w_i + λ)` over the (clamped) eigenvalues `w_i` of `K / n`.
pub fn effective_dimension<T: Real>(k: ArrayView2<T>, lambda: T) -> Result<T> {
    let n = ensure_square(k, "effective_dimension")?;
    if !(lambda > T::zero() && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    let scaled = k.mapv(|v| v / T::count(n));
    let eig = sym_eig(scaled.view())?;
    Ok(clamped_spectrum(&eig)?.into_iter().map(|w| w / (w + lambda)).sum())
}

/// Least-squares slope of `log(error)` against `log(n)`.
pub fn rate_slope(ns: &[usize], errors: ArrayView1<f64>) -> Result<f64> {
    check_dim("rate_slope", ns.len(), errors.len())?;
    if ns.len() < 3 {
        return Err(Error::invalid("rate_slope needs at least three points"));
    }
    if ns.windows(2).any(|w| w[0] >= w[1]) || ns[0] == 0 {
        return Err(Error::invalid("sample sizes must be positive and strictly increasing"));
    }
    if errors.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::invalid("errors must be positive and finite"));
    }
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// Median of finite values (mean of the middle pair for even counts).
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1, Array2};

    #[test]
    fn mse_examples() {
        let t = array![[0.2f64, 0.4], [0.6, 0.8]];
        assert_eq!(mse(t.view(), t.view()).unwrap(), 0.0);
        let shifted = t.mapv(|v| v + 0.1);
        assert!((mse(shifted.view(), t.view()).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(mse(array![[0.0, 1.0]].view(), array![[1.0, 1.0]].view()).unwrap(), 0.5);
        assert!(mse(t.view(), array![[1.0]].view()).is_err());
    }

    #[test]
    fn rel_err_examples() {
        let t = array![[0.2f64, 0.4], [0.6, 0.8]];
        assert_eq!(rel_err(t.view(), t.view()).unwrap(), 0.0);
        assert!((rel_err((&t * 2.0).view(), t.view()).unwrap() - 1.0).abs() < 1e-15);
        let v = rel_err(array![[1.0, 0.0]].view(), array![[0.0, 1.0]].view()).unwrap();
        assert!((v - 2f64.sqrt()).abs() < 1e-15);
        assert!(rel_err(array![[1.0]].view(), array![[0.0]].view()).is_err());
    }

    #[test]
    fn psnr_examples() {
        assert!((psnr(0.0081, 1.0).unwrap() - 20.92).abs() < 0.005);
        assert!((psnr(0.006956, 1.0).unwrap() - 21.58).abs() < 0.005);
        assert_eq!(psnr(1.0, 1.0).unwrap(), 0.0);
        assert!(matches!(psnr(0.0, 1.0), Err(Error::InfinitePsnr)));
        assert!(psnr(-1.0, 1.0).is_err());
    }

    #[test]
    fn report_consistency() {
        let truth = array![[0.5, 0.5], [0.2, 0.1]];
        let pred = array![[0.4, 0.6], [0.2, 0.3]];
        let r = MetricReport::compute(pred.view(), truth.view()).unwrap();
        assert!((r.psnr + 10.0 * r.mse.log10()).abs() < 1e-12);
        assert_eq!(r.n_items, 2);
        let exact = MetricReport::compute(truth.view(), truth.view()).unwrap();
        assert!(exact.psnr.is_infinite());
    }

    #[test]
    fn effective_dimension_examples() {
        let n = 5;
        let k = Array2::<f64>::eye(n) * n as f64;
        assert!((effective_dimension(k.view(), 1.0).unwrap() - 2.5).abs() < 1e-12);
        assert!(effective_dimension(k.view(), 1e6).unwrap() <= n as f64 / 1e6);
        let k = array![[2.0f64, 0.0], [0.0, 0.2]];
        let v = effective_dimension(k.view(), 0.1).unwrap();
        assert!((v - (1.0 / 1.1 + 0.5)).abs() < 1e-12);
        assert!(effective_dimension(k.view(), 0.0).is_err());
        assert!(effective_dimension(array![[1.0, 0.0], [0.0, -1.0]].view(), 0.1).is_err());
    }

    #[test]
    fn rate_slope_examples() {
        let ns = [100, 400, 1600];
        let e: Array1<f64> = ns.iter().map(|&n| 3.0 * (n as f64).powf(-0.5)).collect();
        assert!((rate_slope(&ns, e.view()).unwrap() + 0.5).abs() < 1e-10);
        assert!(rate_slope(&ns, array![0.3, 0.3, 0.3].view()).unwrap().abs() < 1e-12);
        let s = rate_slope(&ns, array![1.0, 0.4, 0.2].view()).unwrap();
        assert!((s + 0.5805).abs() < 1e-3, "{s}");
        assert!(rate_slope(&ns[..2], array![1.0, 0.5].view()).is_err());
        assert!(rate_slope(&[100, 100, 400], array![1.0, 0.5, 0.2].view()).is_err());
        assert!(rate_slope(&ns, array![1.0, 0.0, 0.2].view()).is_err());
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[f64::NAN, 1.0]), Some(1.0));
        assert_eq!(median(&[]), None);
    }
}
