//! Synthetic covariate-shift problems with known regression function and
//! exact density ratio.
//!
//! The unit cube is cut into `K` slabs along the first coordinate. The
//! source `p_X` is uniform on the cube (slab weights `1/K`); the target
//! `q_X` reweights the slabs to `(1 − s)/K + s π_k` with `π_k ∝ k²`, so
//! `β = dq_X/dp_X` is piecewise constant with `β ≤ b_true = max_k K u_k`.
//! The regression function is a Gaussian kernel expansion
//! `f*(x) = Σ_j a_j exp(−γ‖x − z_j‖²) v_j`, hence lies in the hypothesis
//! space of the matching Gaussian kernel. Expectations of products of such
//! expansions under `q_X` are available in closed form (box integrals of
//! Gaussians), which gives exact population Gram matrices.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::estimator::{Predictor, ShiftDataset};
use crate::scalar::Real;

pub const SLABS: usize = 4;
pub const ANCHORS: usize = 10;
pub const DEFAULT_GENERATOR_GAMMA: f64 = 4.0;

const STREAM_PROBLEM: u64 = 0;
const STREAM_SOURCE: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_TARGET: u64 = 3;
const STREAM_EVAL: u64 = 4;

/// Generator for a purpose-specific stream of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `x ↦ Σ_j exp(−γ‖x − z_j‖²) c_j` with vector coefficients `c_j ∈ R^p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianExpansion {
    pub gamma: f64,
    /// One center per row (`J × d`).
    pub centers: Vec<Vec<f64>>,
    /// One coefficient vector per row (`J × p`).
    pub coefs: Vec<Vec<f64>>,
}

impl GaussianExpansion {
    pub fn new(gamma: f64, centers: Vec<Vec<f64>>, coefs: Vec<Vec<f64>>) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid("expansion bandwidth must be positive"));
        }
        check_dim("expansion terms", centers.len(), coefs.len())?;
        let first_c = centers.first().ok_or(Error::Empty("expansion without terms"))?;
        let (d, p) = (first_c.len(), coefs[0].len());
        if d == 0 || p == 0 {
            return Err(Error::invalid("expansion dimensions must be positive"));
        }
        for (z, c) in centers.iter().zip(&coefs) {
            check_dim("expansion center", d, z.len())?;
            check_dim("expansion coefficient", p, c.len())?;
        }
        Ok(GaussianExpansion { gamma, centers, coefs })
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn out_dim(&self) -> usize {
        self.coefs[0].len()
    }

    pub fn eval_f64(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.out_dim()];
        for (z, c) in self.centers.iter().zip(&self.coefs) {
            let d2: f64 = z.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            let k = (-self.gamma * d2).exp();
            for (o, &cv) in out.iter_mut().zip(c) {
                *o += k * cv;
            }
        }
        out
    }

    /// `self − other` as a single expansion (requires equal `gamma`).
    pub fn difference(&self, other: &GaussianExpansion) -> Result<GaussianExpansion> {
        if self.gamma != other.gamma {
            return Err(Error::invalid("difference of expansions needs a common bandwidth"));
        }
        let mut centers = self.centers.clone();
        centers.extend(other.centers.iter().cloned());
        let mut coefs = self.coefs.clone();
        coefs.extend(other.coefs.iter().map(|c| c.iter().map(|v| -v).collect()));
        GaussianExpansion::new(self.gamma, centers, coefs)
    }
}

impl<T: Real> Predictor<T> for GaussianExpansion {
    fn input_dim(&self) -> usize {
        self.dim()
    }

    fn output_dim(&self) -> usize {
        self.out_dim()
    }

    fn predict_batch(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        check_dim("expansion input", self.dim(), x.ncols())?;
        let mut out = Array2::zeros((x.nrows(), self.out_dim()));
        for (row, mut o) in x.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
            let xf: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
            for (dst, v) in o.iter_mut().zip(self.eval_f64(&xf)) {
                *dst = T::lit(v);
            }
        }
        Ok(out)
    }
}

/// `∫_lo^hi exp(−a(t − u)² − b(t − v)²) dt`.
fn gaussian_pair_integral(a: f64, u: f64, b: f64, v: f64, lo: f64, hi: f64) -> f64 {
    let s = a + b;
    let c = (a * u + b * v) / s;
    let scale = (-(a * b / s) * (u - v) * (u - v)).exp();
    let r = s.sqrt();
    scale * 0.5 * (std::f64::consts::PI / s).sqrt() * (libm::erf(r * (hi - c)) - libm::erf(r * (lo - c)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProblem {
    pub seed: u64,
    pub d: usize,
    pub p: usize,
    pub shift_strength: f64,
    pub noise_sd: f64,
    /// Slab probabilities under `p_X`.
    pub source_weights: Vec<f64>,
    /// Slab probabilities under `q_X`.
    pub target_weights: Vec<f64>,
    pub b_true: f64,
    pub fstar: GaussianExpansion,
}

impl SyntheticProblem {
    /// Draws `f*` for the given seed and dimensions.
    pub fn new(seed: u64, d: usize, p: usize, shift_strength: f64, noise_sd: f64) -> Result<Self> {
        if d == 0 || p == 0 {
            return Err(Error::invalid("synthetic dimensions d and p must be positive"));
        }
        if !(0.0..=1.0).contains(&shift_strength) {
            return Err(Error::invalid(format!("shift_strength must lie in [0, 1], got {shift_strength}")));
        }
        if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
            return Err(Error::invalid(format!("noise_sd must be non-negative, got {noise_sd}")));
        }
        let k = SLABS as f64;
        let source_weights = vec![1.0 / k; SLABS];
        let total: f64 = (0..SLABS).map(|j| (j * j) as f64).sum();
        let target_weights: Vec<f64> = (0..SLABS)
            .map(|j| (1.0 - shift_strength) / k + shift_strength * (j * j) as f64 / total)
            .collect();
        let b_true = target_weights
            .iter()
            .zip(&source_weights)
            .map(|(u, w)| u / w)
            .fold(0.0, f64::max);

        let mut rng = stream_rng(seed, STREAM_PROBLEM);
        let centers: Vec<Vec<f64>> = (0..ANCHORS).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
        let coefs: Vec<Vec<f64>> = (0..ANCHORS)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let v: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                v.into_iter().map(|x| a * x / norm).collect()
            })
            .collect();
        let fstar = GaussianExpansion::new(DEFAULT_GENERATOR_GAMMA, centers, coefs)?;
        Ok(SyntheticProblem {
            seed,
            d,
            p,
            shift_strength,
            noise_sd,
            source_weights,
            target_weights,
            b_true,
            fstar,
        })
    }

    fn slab_of(&self, x0: f64) -> Option<usize> {
        if !(0.0..=1.0).contains(&x0) {
            return None;
        }
        Some(((x0 * SLABS as f64) as usize).min(SLABS - 1))
    }

    /// Exact `dq_X/dp_X` at `x` (zero outside the cube).
    pub fn beta_exact(&self, x: &[f64]) -> f64 {
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return 0.0;
        }
        match self.slab_of(x[0]) {
            Some(k) => self.target_weights[k] / self.source_weights[k],
            None => 0.0,
        }
    }

    pub fn beta_exact_rows<T: Real>(&self, x: ArrayView2<T>) -> Array1<T> {
        x.axis_iter(Axis(0))
            .map(|r| {
                let v: Vec<f64> = r.iter().map(|t| t.as_f64()).collect();
                T::lit(self.beta_exact(&v))
            })
            .collect()
    }

    fn sample_slabs<T: Real, R: Rng + ?Sized>(&self, weights: &[f64], count: usize, rng: &mut R) -> Array2<T> {
        let mut out = Array2::zeros((count, self.d));
        for mut row in out.axis_iter_mut(Axis(0)) {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut slab = SLABS - 1;
            for (k, &w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    slab = k;
                    break;
                }
            }
            let within: f64 = rng.random();
            row[0] = T::lit((slab as f64 + within) / SLABS as f64);
            for j in 1..self.d {
                row[j] = T::lit(rng.random::<f64>());
            }
        }
        out
    }

    pub fn sample_source<T: Real, R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<T> {
        self.sample_slabs(&self.source_weights, n, rng)
    }

    pub fn sample_target<T: Real, R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Array2<T> {
        self.sample_slabs(&self.target_weights, m, rng)
    }

    /// Gaussian noise with its norm clipped to `3 · noise_sd · √p`.
    fn noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let e: Vec<f64> = (0..self.p)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                self.noise_sd * z
            })
            .collect();
        let cap = 3.0 * self.noise_sd * (self.p as f64).sqrt();
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > cap {
            e.into_iter().map(|v| v * cap / norm).collect()
        } else {
            e
        }
    }

    /// `E_q[exp(−a‖x − u‖²) exp(−b‖x − v‖²)]`.
    pub fn target_pair_moment(&self, a: f64, u: &[f64], b: f64, v: &[f64]) -> f64 {
        let rest: f64 = (1..self.d)
            .map(|j| gaussian_pair_integral(a, u[j], b, v[j], 0.0, 1.0))
            .product();
        let k = SLABS as f64;
        let first: f64 = self
            .target_weights
            .iter()
            .enumerate()
            .map(|(s, &w)| w * k * gaussian_pair_integral(a, u[0], b, v[0], s as f64 / k, (s + 1) as f64 / k))
            .sum();
        first * rest
    }

    /// Exact `E_q⟨f(x), g(x)⟩` for two Gaussian expansions.
    pub fn exact_inner_q(&self, f: &GaussianExpansion, g: &GaussianExpansion) -> Result<f64> {
        check_dim("expansion input", self.d, f.dim())?;
        check_dim("expansion input", self.d, g.dim())?;
        check_dim("expansion outputs", f.out_dim(), g.out_dim())?;
        let mut total = 0.0;
        for (zf, cf) in f.centers.iter().zip(&f.coefs) {
            for (zg, cg) in g.centers.iter().zip(&g.coefs) {
                let dot: f64 = cf.iter().zip(cg).map(|(a, b)| a * b).sum();
                if dot != 0.0 {
                    total += dot * self.target_pair_moment(f.gamma, zf, g.gamma, zg);
                }
            }
        }
        Ok(total)
    }

    /// Exact population Gram `G_jk = E_q⟨f_j, f_k⟩`.
    pub fn exact_gram_q(&self, members: &[GaussianExpansion]) -> Result<Array2<f64>> {
        let l = members.len();
        let mut g = Array2::zeros((l, l));
        for j in 0..l {
            for k in j..l {
                let v = self.exact_inner_q(&members[j], &members[k])?;
                g[[j, k]] = v;
                g[[k, j]] = v;
            }
        }
        Ok(g)
    }

    /// `E_q‖f*‖²`.
    pub fn fstar_sq_norm_q(&self) -> f64 {
        self.exact_inner_q(&self.fstar, &self.fstar).expect("f* matches the problem")
    }

    /// `f*` at each row of `x`.
    pub fn fstar_rows<T: Real>(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.fstar.predict_batch(x)
    }

    /// A dataset drawn with the streams of `self.seed`.
    pub fn draw<T: Real>(&self, n: usize, m: usize) -> Result<ShiftDataset<T>> {
        if n == 0 || m == 0 {
            return Err(Error::invalid("synthetic sample sizes must be positive"));
        }
        let xs: Array2<T> = self.sample_source(n, &mut stream_rng(self.seed, STREAM_SOURCE));
        let mut y = self.fstar_rows(xs.view())?;
        let mut noise_rng = stream_rng(self.seed, STREAM_NOISE);
        if self.noise_sd > 0.0 {
            for mut row in y.axis_iter_mut(Axis(0)) {
                for (v, e) in row.iter_mut().zip(self.noise(&mut noise_rng)) {
                    *v += T::lit(e);
                }
            }
        }
        let xt: Array2<T> = self.sample_target(m, &mut stream_rng(self.seed, STREAM_TARGET));
        let beta = self.beta_exact_rows(xs.view());
        ShiftDataset::new(xs, y, xt, Some(beta))
    }
}

/// Builds a problem and draws its dataset; deterministic in `seed`.
pub fn make_problem<T: Real>(
    seed: u64,
    n: usize,
    m: usize,
    d: usize,
    p: usize,
    shift_strength: f64,
    noise_sd: f64,
) -> Result<(SyntheticProblem, ShiftDataset<T>)> {
    let prob = SyntheticProblem::new(seed, d, p, shift_strength, noise_sd)?;
    let ds = prob.draw(n, m)?;
    Ok((prob, ds))
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_err: f64,
}

/// Mean of `‖predictor(x) − f*(x)‖²` over `n_mc` draws from `q_X`.
pub fn l2_target_sq_error<T: Real>(
    predictor: &dyn Predictor<T>,
    prob: &SyntheticProblem,
    n_mc: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_mc == 0 {
        return Err(Error::invalid("n_mc must be positive"));
    }
    check_dim("predictor input", prob.d, predictor.input_dim())?;
    check_dim("predictor output", prob.p, predictor.output_dim())?;
    let x: Array2<T> = prob.sample_target(n_mc, &mut stream_rng(seed, STREAM_EVAL));
    let pred = predictor.predict_batch(x.view())?;
    let truth = prob.fstar_rows(x.view())?;
    let sq: Vec<f64> = pred
        .axis_iter(Axis(0))
        .zip(truth.axis_iter(Axis(0)))
        .map(|(a, b)| a.iter().zip(b.iter()).map(|(&u, &v)| (u - v).as_f64().powi(2)).sum())
        .collect();
    let k = n_mc as f64;
    let mean = sq.iter().sum::<f64>() / k;
    let var = if n_mc > 1 {
        sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    Ok(McEstimate {
        value: mean,
        std_err: (var / k).sqrt(),
    })
}

/// `√(mean ‖predictor − f*‖²)` over `n_mc` target draws, with a delta-method
/// standard error.
pub fn l2_target_error_mc<T: Real>(
    predictor: &dyn Predictor<T>,
    prob: &SyntheticProblem,
    n_mc: usize,
    seed: u64,
) -> Result<McEstimate> {
    let sq = l2_target_sq_error(predictor, prob, n_mc, seed)?;
    let value = sq.value.sqrt();
    let std_err = if value > 0.0 { sq.std_err / (2.0 * value) } else { 0.0 };
    Ok(McEstimate { value, std_err })
}

pub fn l2_target_error<T: Real>(
    predictor: &dyn Predictor<T>,
    prob: &SyntheticProblem,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    Ok(l2_target_error_mc(predictor, prob, n_mc, seed)?.value)
}

/// Weighted empirical Gram of fixed members on a source sample,
/// `(1/n) Σ_i β(x_i) ⟨f_j(x_i), f_k(x_i)⟩`.
pub fn empirical_gram<T: Real>(
    members: &[GaussianExpansion],
    xs: ArrayView2<T>,
    beta: ArrayView1<T>,
) -> Result<Array2<T>> {
    let preds = members
        .iter()
        .map(|m| Predictor::<T>::predict_batch(m, xs))
        .collect::<Result<Vec<_>>>()?;
    let y = Array2::zeros((xs.nrows(), members.first().map_or(1, |m| m.out_dim())));
    let (g, _) = crate::aggregate::system_from_predictions(&preds, y.view(), beta)?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_shift_means_unit_ratio() {
        let prob = SyntheticProblem::new(1, 3, 2, 0.0, 0.1).unwrap();
        for x in [[0.1, 0.5, 0.9], [0.99, 0.0, 1.0], [0.3, 0.3, 0.3]] {
            assert!((prob.beta_exact(&x) - 1.0).abs() < 1e-15);
        }
        assert!((prob.b_true - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ratio_is_bounded_and_normalized() {
        let prob = SyntheticProblem::new(2, 2, 1, 0.8, 0.0).unwrap();
        let mut rng = stream_rng(7, 0);
        let x: Array2<f64> = prob.sample_source(20000, &mut rng);
        let b = prob.beta_exact_rows(x.view());
        assert!(b.iter().all(|&v| (0.0..=prob.b_true).contains(&v)));
        let mean = b.mean().unwrap();
        let se = b.std(1.0) / (b.len() as f64).sqrt();
        assert!((mean - 1.0).abs() <= 3.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn change_of_measure() {
        let prob = SyntheticProblem::new(3, 2, 1, 1.0, 0.0).unwrap();
        let loss = |x: ArrayView1<f64>| (3.0 * x[0]).sin().powi(2) + x[1];
        let xs: Array2<f64> = prob.sample_source(40000, &mut stream_rng(1, 9));
        let xt: Array2<f64> = prob.sample_target(40000, &mut stream_rng(2, 9));
        let wp: Array1<f64> = xs.axis_iter(Axis(0)).map(|r| prob.beta_exact(r.as_slice().unwrap()) * loss(r)).collect();
        let lq: Array1<f64> = xt.axis_iter(Axis(0)).map(loss).collect();
        let se = (wp.var(1.0) / 40000.0 + lq.var(1.0) / 40000.0).sqrt();
        assert!((wp.mean().unwrap() - lq.mean().unwrap()).abs() <= 3.0 * se);
    }

    #[test]
    fn noiseless_and_deterministic() {
        let (prob, ds) = make_problem::<f64>(5, 30, 20, 2, 3, 0.5, 0.0).unwrap();
        assert_eq!(ds.y().to_owned(), prob.fstar_rows(ds.xs()).unwrap());
        let (_, again) = make_problem::<f64>(5, 30, 20, 2, 3, 0.5, 0.0).unwrap();
        assert_eq!(ds, again);
        let (_, noisy) = make_problem::<f64>(5, 30, 20, 2, 3, 0.5, 0.2).unwrap();
        let (_, noisy2) = make_problem::<f64>(5, 30, 20, 2, 3, 0.5, 0.2).unwrap();
        assert_eq!(noisy, noisy2);
        let cap = 3.0 * 0.2 * 3f64.sqrt();
        let resid = &noisy.y() - &ds.y();
        assert!(resid.axis_iter(Axis(0)).all(|r| r.dot(&r).sqrt() <= cap + 1e-12));
        assert!(make_problem::<f64>(5, 0, 20, 2, 3, 0.5, 0.0).is_err());
        assert!(make_problem::<f64>(5, 3, 2, 0, 3, 0.5, 0.0).is_err());
        assert!(make_problem::<f64>(5, 3, 2, 2, 3, 1.5, 0.0).is_err());
    }

    #[test]
    fn fstar_has_zero_error() {
        let prob = SyntheticProblem::new(4, 2, 2, 0.5, 0.1).unwrap();
        let e = l2_target_error::<f64>(&prob.fstar, &prob, 500, 1).unwrap();
        assert!(e.abs() < 1e-12);
    }

    struct Zero(usize, usize);

    impl Predictor<f64> for Zero {
        fn input_dim(&self) -> usize {
            self.0
        }
        fn output_dim(&self) -> usize {
            self.1
        }
        fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
            Ok(Array2::zeros((x.nrows(), self.1)))
        }
    }

    #[test]
    fn zero_predictor_matches_exact_norm() {
        let prob = SyntheticProblem::new(6, 2, 3, 0.7, 0.0).unwrap();
        let exact = prob.fstar_sq_norm_q();
        let a = l2_target_sq_error(&Zero(2, 3), &prob, 20000, 11).unwrap();
        let b = l2_target_sq_error(&Zero(2, 3), &prob, 20000, 12).unwrap();
        assert!((a.value - exact).abs() <= 3.0 * a.std_err, "{} vs {exact}", a.value);
        let pooled = (a.std_err.powi(2) + b.std_err.powi(2)).sqrt();
        assert!((a.value - b.value).abs() <= 3.0 * pooled);
    }

    #[test]
    fn pair_integral_matches_quadrature() {
        let (a, u, b, v) = (3.0, 0.2, 5.0, 0.7);
        let exact = gaussian_pair_integral(a, u, b, v, 0.25, 0.5);
        let steps = 20000;
        let h = 0.25 / steps as f64;
        let quad: f64 = (0..steps)
            .map(|i| {
                let t = 0.25 + (i as f64 + 0.5) * h;
                (-a * (t - u) * (t - u) - b * (t - v) * (t - v)).exp() * h
            })
            .sum();
        assert!((exact - quad).abs() < 1e-9);
    }

    #[test]
    fn exact_gram_agrees_with_empirical() {
        let prob = SyntheticProblem::new(9, 2, 1, 0.6, 0.0).unwrap();
        let f = GaussianExpansion::new(4.0, vec![vec![0.3, 0.6]], vec![vec![1.0]]).unwrap();
        let g = GaussianExpansion::new(4.0, vec![vec![0.8, 0.1]], vec![vec![-0.5]]).unwrap();
        let exact = prob.exact_gram_q(&[f.clone(), g.clone()]).unwrap();
        let xt: Array2<f64> = prob.sample_target(50000, &mut stream_rng(3, 3));
        let emp = empirical_gram(&[f, g], xt.view(), Array1::ones(50000).view()).unwrap();
        assert!((&exact - &emp).iter().all(|v| v.abs() < 5e-3), "{exact} vs {emp}");
    }
}
