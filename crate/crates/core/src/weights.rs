//! Importance weights by kernel unconstrained least-squares importance
//! fitting (KuLSIF), with the quasi-optimality rule for its parameter α.
//!
//! For source inputs `x_1..x_n` and target inputs `x'_1..x'_m` the weights
//! at the source points solve `(K + α n I) β = F̄` with
//! `F̄_j = (n / m) Σ_i k(x'_i, x_j)`.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};

use crate::error::{check_dim, Error, Result};
use crate::kernels::{cross_gram, gram, KernelSpec};
use crate::linalg::{norm2, Cholesky};
use crate::scalar::Real;
use crate::spectral::sym_eig;

pub const DEFAULT_B_CAP: f64 = 1e6;

/// Estimated density ratio at the source points.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightEstimate<T> {
    /// Clipped to `[0, b_cap]`.
    pub beta: Array1<T>,
    pub alpha: T,
    /// Unclipped solution of the KuLSIF system.
    pub raw_beta: Array1<T>,
}

impl<T: Real> WeightEstimate<T> {
    pub fn from_raw(raw_beta: Array1<T>, alpha: T, b_cap: T) -> Self {
        let mut clipped_above = 0usize;
        let beta = raw_beta.mapv(|b| {
            if b > b_cap {
                clipped_above += 1;
                b_cap
            } else {
                b.max(T::zero())
            }
        });
        if clipped_above > 0 {
            log::warn!("{clipped_above} importance weights exceeded the cap {b_cap} and were clipped");
        }
        WeightEstimate {
            beta,
            alpha,
            raw_beta,
        }
    }

    pub fn mean(&self) -> T {
        self.beta.mean().unwrap_or_else(T::zero)
    }
}

fn check_inputs<T: Real>(xs: ArrayView2<T>, xt: ArrayView2<T>) -> Result<()> {
    if xs.nrows() == 0 || xt.nrows() == 0 {
        return Err(Error::Empty("KuLSIF needs at least one source and one target point"));
    }
    check_dim("KuLSIF target columns", xs.ncols(), xt.ncols())
}

/// `F̄_j = (n / m) Σ_i k(x'_i, x_j)`.
pub fn target_mean_embedding<T: Real>(
    spec: &KernelSpec<T>,
    xs: ArrayView2<T>,
    xt: ArrayView2<T>,
) -> Result<Array1<T>> {
    check_inputs(xs, xt)?;
    let (n, m) = (xs.nrows(), xt.nrows());
    let kt = cross_gram(spec, xs, xt)?;
    let scale = T::count(n) / T::count(m);
    Ok(kt.sum_axis(Axis(1)) * scale)
}

/// KuLSIF weights with the default cap of `1e6`.
pub fn kulsif_weights<T: Real>(
    spec: &KernelSpec<T>,
    xs: ArrayView2<T>,
    xt: ArrayView2<T>,
    alpha: T,
) -> Result<WeightEstimate<T>> {
    kulsif_weights_capped(spec, xs, xt, alpha, T::lit(DEFAULT_B_CAP))
}

pub fn kulsif_weights_capped<T: Real>(
    spec: &KernelSpec<T>,
    xs: ArrayView2<T>,
    xt: ArrayView2<T>,
    alpha: T,
    b_cap: T,
) -> Result<WeightEstimate<T>> {
    if !(alpha.is_finite() && alpha > T::zero()) {
        return Err(Error::invalid(format!("KuLSIF alpha must be positive, got {alpha}")));
    }
    if !(b_cap > T::zero()) {
        return Err(Error::invalid("weight cap must be positive"));
    }
    let f_bar = target_mean_embedding(spec, xs, xt)?;
    let n = xs.nrows();
    let mut a = gram(spec, xs)?;
    let shift = alpha * T::count(n);
    for i in 0..n {
        a[[i, i]] += shift;
    }
    let raw = Cholesky::factor(a.view())
        .map_err(|_| Error::Singular("KuLSIF system (K + αnI)"))?
        .solve_vec(f_bar.view())?;
    Ok(WeightEstimate::from_raw(raw, alpha, b_cap))
}

/// Geometric grid `4^{-j}`, `j = 0..9`.
pub fn default_alpha_grid<T: Real>() -> Vec<T> {
    (0..10).map(|j| T::lit(4f64.powi(-j))).collect()
}

fn check_grid<T: Real>(grid: &[T]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::invalid("quasi-optimality needs at least two grid values"));
    }
    if grid.iter().any(|&a| !(a.is_finite() && a > T::zero())) {
        return Err(Error::invalid("alpha grid values must be positive"));
    }
    if grid.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::invalid("alpha grid must be strictly decreasing"));
    }
    Ok(())
}

/// Unclipped KuLSIF solutions for every α of the grid, from one
/// eigendecomposition of `K`.
pub fn kulsif_path<T: Real>(
    spec: &KernelSpec<T>,
    xs: ArrayView2<T>,
    xt: ArrayView2<T>,
    grid: &[T],
) -> Result<Vec<Array1<T>>> {
    let f_bar = target_mean_embedding(spec, xs, xt)?;
    let n = xs.nrows();
    let k = gram(spec, xs)?;
    let eig = sym_eig(k.view())?;
    let proj = eig.vectors.t().dot(&f_bar);
    grid.iter()
        .map(|&alpha| {
            let shift = alpha * T::count(n);
            let coeffs: Array1<T> = proj
                .iter()
                .zip(eig.values.iter())
                .map(|(&p, &w)| {
                    let denom = w.max(T::zero()) + shift;
                    if denom > T::zero() {
                        Ok(p / denom)
                    } else {
                        Err(Error::Singular("KuLSIF system (K + αnI)"))
                    }
                })
                .collect::<Result<_>>()?;
            Ok(eig.vectors.dot(&coeffs))
        })
        .collect()
}

/// Index `j*` minimizing `‖β(α_{j+1}) - β(α_j)‖` over consecutive grid
/// pairs (lowest index on ties).
pub fn quasi_optimal_index<T: Real>(path: &[Array1<T>]) -> Result<usize> {
    if path.len() < 2 {
        return Err(Error::invalid("quasi-optimality needs at least two solutions"));
    }
    let mut best = 0usize;
    let mut best_diff = T::infinity();
    for (j, pair) in path.windows(2).enumerate() {
        let diff = norm2((&pair[1] - &pair[0]).view());
        if diff < best_diff {
            best_diff = diff;
            best = j;
        }
    }
    Ok(best)
}

/// Quasi-optimal α from a strictly decreasing grid.
pub fn select_alpha_quasi_opt<T: Real>(
    spec: &KernelSpec<T>,
    xs: ArrayView2<T>,
    xt: ArrayView2<T>,
    grid: &[T],
) -> Result<T> {
    check_grid(grid)?;
    let path = kulsif_path(spec, xs, xt, grid)?;
    Ok(grid[quasi_optimal_index(&path)?])
}

/// Selects α by quasi-optimality and returns the weights at that α.
pub fn kulsif_select<T: Real>(
    spec: &KernelSpec<T>,
    xs: ArrayView2<T>,
    xt: ArrayView2<T>,
    grid: &[T],
    b_cap: T,
) -> Result<WeightEstimate<T>> {
    let alpha = select_alpha_quasi_opt(spec, xs, xt, grid)?;
    kulsif_weights_capped(spec, xs, xt, alpha, b_cap)
}

/// Diagonal of `B^½`.
pub fn sqrt_weight_matrix<T: Real>(w: &WeightEstimate<T>) -> Array1<T> {
    sqrt_weights(w.beta.view())
}

pub fn sqrt_weights<T: Real>(beta: ArrayView1<T>) -> Array1<T> {
    beta.mapv(|b| b.max(T::zero()).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| StandardNormal.sample(rng))
    }

    #[test]
    fn scalar_case() {
        let k = KernelSpec::<f64>::gaussian(0.7).unwrap();
        let x = array![[0.3, -1.2]];
        for &alpha in &[0.1, 1.0, 3.5] {
            let w = kulsif_weights(&k, x.view(), x.view(), alpha).unwrap();
            assert!((w.raw_beta[0] - 1.0 / (1.0 + alpha)).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_points_get_equal_weights() {
        let k = KernelSpec::gaussian(0.7).unwrap();
        let x = array![[0.3], [0.3]];
        let w = kulsif_weights(&k, x.view(), x.view(), 0.2).unwrap();
        assert_eq!(w.raw_beta[0], w.raw_beta[1]);
    }

    #[test]
    fn system_residual_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs = normal_matrix(&mut rng, 40, 2);
        let xt = normal_matrix(&mut rng, 30, 2) + 0.5;
        let k = KernelSpec::gaussian(0.5).unwrap();
        let alpha = 0.01;
        let w = kulsif_weights(&k, xs.view(), xt.view(), alpha).unwrap();
        let f_bar = target_mean_embedding(&k, xs.view(), xt.view()).unwrap();
        let mut a = gram(&k, xs.view()).unwrap();
        for i in 0..40 {
            a[[i, i]] += alpha * 40.0;
        }
        let r = a.dot(&w.raw_beta) - &f_bar;
        assert!(norm2(r.view()) <= 1e-8 * norm2(f_bar.view()));
        // eigen path agrees with the direct solve
        let path = kulsif_path(&k, xs.view(), xt.view(), &[alpha]).unwrap();
        assert!(norm2((&path[0] - &w.raw_beta).view()) < 1e-9 * norm2(w.raw_beta.view()));
    }

    #[test]
    fn clipping_only_raises_negatives() {
        let raw = array![-0.5, 0.0, 0.7, 3.0, 12.0];
        let w = WeightEstimate::from_raw(raw.clone(), 0.1, 10.0);
        assert_eq!(w.beta, array![0.0, 0.0, 0.7, 3.0, 10.0]);
        assert_eq!(w.raw_beta, raw);
    }

    #[test]
    fn duplicated_target_leaves_weights_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs = normal_matrix(&mut rng, 20, 3);
        let xt = normal_matrix(&mut rng, 15, 3);
        let xt2 = ndarray::concatenate(Axis(0), &[xt.view(), xt.view()]).unwrap();
        let k = KernelSpec::cauchy(2.0).unwrap();
        let a = kulsif_weights(&k, xs.view(), xt.view(), 0.05).unwrap();
        let b = kulsif_weights(&k, xs.view(), xt2.view(), 0.05).unwrap();
        assert!(norm2((&a.raw_beta - &b.raw_beta).view()) < 1e-12 * norm2(a.raw_beta.view()));
    }

    #[test]
    fn grid_rules() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        let x = array![[0.0], [1.0], [2.0]];
        assert!(select_alpha_quasi_opt(&k, x.view(), x.view(), &[1.0]).is_err());
        assert!(select_alpha_quasi_opt(&k, x.view(), x.view(), &[0.1, 1.0]).is_err());
        assert!(select_alpha_quasi_opt(&k, x.view(), x.view(), &[1.0, 1.0]).is_err());
        assert_eq!(select_alpha_quasi_opt(&k, x.view(), x.view(), &[1.0, 0.5]).unwrap(), 1.0);
        // equal consecutive differences: first index wins
        let path = vec![array![0.0], array![1.0], array![2.0], array![3.0]];
        assert_eq!(quasi_optimal_index(&path).unwrap(), 0);
        let path = vec![array![0.0], array![2.0], array![2.5], array![2.6]];
        assert_eq!(quasi_optimal_index(&path).unwrap(), 2);
    }

    #[test]
    fn selected_alpha_beats_worst_member_without_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs = normal_matrix(&mut rng, 60, 2);
        let xt = normal_matrix(&mut rng, 60, 2);
        let k = KernelSpec::gaussian(0.5).unwrap();
        let grid = [1.0, 0.1, 0.01, 0.001];
        let chosen = kulsif_select(&k, xs.view(), xt.view(), &grid, 1e6).unwrap();
        let worst = grid
            .iter()
            .map(|&a| (kulsif_weights(&k, xs.view(), xt.view(), a).unwrap().mean() - 1.0).abs())
            .fold(0.0, f64::max);
        assert!((chosen.mean() - 1.0).abs() < worst);
    }

    #[test]
    fn sqrt_weights_exact() {
        let w = WeightEstimate::from_raw(array![4.0, 0.0], 1.0, 1e6);
        assert_eq!(sqrt_weight_matrix(&w), array![2.0, 0.0]);
        let w = WeightEstimate::from_raw(array![0.25, 2.25], 1.0, 1e6);
        assert_eq!(sqrt_weight_matrix(&w), array![0.5, 1.5]);
        let w = WeightEstimate::from_raw(Array1::<f64>::ones(4), 1.0, 1e6);
        assert_eq!(sqrt_weight_matrix(&w), Array1::<f64>::ones(4));
    }

    #[test]
    fn errors() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        let x = array![[0.0, 1.0]];
        assert!(kulsif_weights(&k, x.view(), array![[0.0]].view(), 0.1).is_err());
        assert!(kulsif_weights(&k, x.view(), x.view(), 0.0).is_err());
        assert!(kulsif_weights(&k, Array2::zeros((0, 2)).view(), x.view(), 0.1).is_err());
    }
}
