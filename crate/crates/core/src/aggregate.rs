//! Linear aggregation of fitted predictors.
//!
//! Given members `f_1..f_l`, the aggregate `Σ c_j f_j` uses the
//! coefficients solving `G̃ c = g̃`, where
//!
//! ```text
//! G̃_jk = (1/n) Σ_i β(x_i) ⟨f_j(x_i), f_k(x_i)⟩
//! g̃_j  = (1/n) Σ_i β(x_i) ⟨y_i, f_j(x_i)⟩
//! ```
//!
//! are importance-weighted empirical estimates of the target-domain Gram
//! matrix and cross moments. Members that make `G̃` ill-conditioned are
//! withdrawn greedily before solving. Applying the same procedure first
//! across regularization parameters for each kernel and then across the
//! kernels yields a multiple kernel learning scheme.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::estimator::{check_beta, fit_path, FittedModel, Predictor, ShiftDataset};
use crate::kernels::KernelSpec;
use crate::linalg::{ensure_symmetric, Cholesky};
use crate::scalar::Real;
use crate::spectral::{sym_eig, FilterFamily, FilterSpec};

pub const DEFAULT_COND_THRESHOLD: f64 = 1e8;

/// A member of an aggregate: a fitted model or a nested aggregate.
#[derive(Debug, Clone, PartialEq)]
pub enum Member<T> {
    Fitted(FittedModel<T>),
    Aggregate(AggregateModel<T>),
}

impl<T: Real> Predictor<T> for Member<T> {
    fn input_dim(&self) -> usize {
        match self {
            Member::Fitted(m) => m.input_dim(),
            Member::Aggregate(a) => a.input_dim(),
        }
    }

    fn output_dim(&self) -> usize {
        match self {
            Member::Fitted(m) => m.output_dim(),
            Member::Aggregate(a) => a.output_dim(),
        }
    }

    fn predict_batch(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        match self {
            Member::Fitted(m) => m.predict_batch(x),
            Member::Aggregate(a) => a.predict_batch(x),
        }
    }
}

impl<T> From<FittedModel<T>> for Member<T> {
    fn from(m: FittedModel<T>) -> Self {
        Member::Fitted(m)
    }
}

impl<T> From<AggregateModel<T>> for Member<T> {
    fn from(a: AggregateModel<T>) -> Self {
        Member::Aggregate(a)
    }
}

/// Coefficients and retained indices returned by [`solve_aggregation`].
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationSolution<T> {
    pub coeffs: Array1<T>,
    pub kept: Vec<usize>,
    pub cond: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateModel<T> {
    members: Vec<Member<T>>,
    coeffs: Array1<T>,
    kept: Vec<usize>,
    cond: T,
    input_dim: usize,
    output_dim: usize,
}

impl<T: Real> AggregateModel<T> {
    /// Builds an aggregate from explicit coefficients for the `kept` members.
    pub fn from_parts(members: Vec<Member<T>>, coeffs: Array1<T>, kept: Vec<usize>, cond: T) -> Result<Self> {
        let first = members.first().ok_or(Error::Empty("aggregate without members"))?;
        let (input_dim, output_dim) = (first.input_dim(), first.output_dim());
        for m in &members {
            check_dim("aggregate member input", input_dim, m.input_dim())?;
            check_dim("aggregate member output", output_dim, m.output_dim())?;
        }
        check_dim("aggregate coefficients", kept.len(), coeffs.len())?;
        if kept.iter().any(|&k| k >= members.len()) {
            return Err(Error::invalid("retained index out of range"));
        }
        Ok(AggregateModel {
            members,
            coeffs,
            kept,
            cond,
            input_dim,
            output_dim,
        })
    }

    pub fn members(&self) -> &[Member<T>] {
        &self.members
    }

    pub fn coeffs(&self) -> ArrayView1<'_, T> {
        self.coeffs.view()
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn cond(&self) -> T {
        self.cond
    }

    /// Coefficient attached to member `j` (zero when it was withdrawn).
    pub fn coeff_of(&self, j: usize) -> T {
        self.kept
            .iter()
            .position(|&k| k == j)
            .map_or_else(T::zero, |pos| self.coeffs[pos])
    }
}

impl<T: Real> Predictor<T> for AggregateModel<T> {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn predict_batch(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        check_dim("aggregate input", self.input_dim, x.ncols())?;
        let preds = self
            .kept
            .par_iter()
            .map(|&j| self.members[j].predict_batch(x))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Array2::zeros((x.nrows(), self.output_dim));
        for (p, &c) in preds.iter().zip(self.coeffs.iter()) {
            out.scaled_add(c, p);
        }
        Ok(out)
    }
}

/// `(G̃, g̃)` from member predictions at the source points (each `n × p`).
///
/// Only the upper triangle is accumulated, so `G̃` is exactly symmetric.
pub fn system_from_predictions<T: Real>(
    preds: &[Array2<T>],
    y: ArrayView2<T>,
    beta: ArrayView1<T>,
) -> Result<(Array2<T>, Array1<T>)> {
    let (n, p) = y.dim();
    check_beta(beta, n)?;
    for f in preds {
        check_dim("member prediction rows", n, f.nrows())?;
        check_dim("member prediction columns", p, f.ncols())?;
    }
    let l = preds.len();
    let inv_n = T::count(n).recip();
    let weighted_inner = |a: ArrayView2<T>, b: ArrayView2<T>| -> T {
        let mut total = T::zero();
        for ((ra, rb), &w) in a.outer_iter().zip(b.outer_iter()).zip(beta.iter()) {
            if w != T::zero() {
                let dot: T = ra.iter().zip(rb.iter()).map(|(&u, &v)| u * v).sum();
                total += w * dot;
            }
        }
        total * inv_n
    };
    let pairs: Vec<(usize, usize)> = (0..l).flat_map(|j| (j..l).map(move |k| (j, k))).collect();
    let entries: Vec<T> = pairs
        .par_iter()
        .map(|&(j, k)| weighted_inner(preds[j].view(), preds[k].view()))
        .collect();
    let mut g = Array2::zeros((l, l));
    for (&(j, k), &v) in pairs.iter().zip(&entries) {
        g[[j, k]] = v;
        g[[k, j]] = v;
    }
    let rhs: Array1<T> = preds.iter().map(|f| weighted_inner(y, f.view())).collect();
    Ok((g, rhs))
}

/// Assembles the aggregation system for `models` on the source sample.
pub fn build_system<T: Real>(
    models: &[&dyn Predictor<T>],
    ds: &ShiftDataset<T>,
    beta: ArrayView1<T>,
) -> Result<(Array2<T>, Array1<T>)> {
    if models.is_empty() {
        return Err(Error::Empty("aggregation without members"));
    }
    let d = ds.input_dim();
    let p = ds.output_dim();
    for m in models {
        check_dim("member input dimension", d, m.input_dim())?;
        check_dim("member output dimension", p, m.output_dim())?;
    }
    let preds = models
        .par_iter()
        .map(|m| m.predict_batch(ds.xs()))
        .collect::<Result<Vec<_>>>()?;
    system_from_predictions(&preds, ds.y(), beta)
}

fn submatrix<T: Real>(g: ArrayView2<T>, idx: &[usize]) -> Array2<T> {
    Array2::from_shape_fn((idx.len(), idx.len()), |(a, b)| g[[idx[a], idx[b]]])
}

/// `λ_max / λ_min` of a symmetric matrix; infinite unless it is positive
/// definite.
pub fn condition_number<T: Real>(g: ArrayView2<T>) -> Result<T> {
    let eig = sym_eig(g)?;
    let hi = eig.values[0];
    let lo = eig.values[eig.len() - 1];
    if lo > T::zero() && hi.is_finite() {
        Ok(hi / lo)
    } else {
        Ok(T::infinity())
    }
}

/// Withdraws members while `cond(G̃_kept)` exceeds `cond_threshold` (each
/// step drops the member whose removal lowers the condition number most,
/// lowest index on ties), then solves the retained system.
pub fn solve_aggregation<T: Real>(
    g: ArrayView2<T>,
    rhs: ArrayView1<T>,
    cond_threshold: T,
) -> Result<AggregationSolution<T>> {
    let l = g.nrows();
    if l == 0 {
        return Err(Error::Empty("aggregation system of size zero"));
    }
    check_dim("aggregation right-hand side", l, rhs.len())?;
    ensure_symmetric(g, T::tol(1e-10))?;
    if !(cond_threshold >= T::one()) {
        return Err(Error::invalid("condition threshold must be at least 1"));
    }

    let mut kept: Vec<usize> = (0..l).collect();
    let mut cond = condition_number(submatrix(g, &kept).view())?;
    while cond > cond_threshold {
        if kept.len() == 1 {
            return Err(Error::AggregationDegenerate);
        }
        let mut best: Option<(usize, T)> = None;
        for drop in 0..kept.len() {
            let trial: Vec<usize> = kept
                .iter()
                .enumerate()
                .filter(|&(pos, _)| pos != drop)
                .map(|(_, &j)| j)
                .collect();
            let c = condition_number(submatrix(g, &trial).view())?;
            if best.is_none_or(|(_, bc)| c < bc) {
                best = Some((drop, c));
            }
        }
        let (drop, c) = best.expect("at least two members");
        log::debug!("withdrawing aggregation member {} (cond -> {c:e})", kept[drop]);
        kept.remove(drop);
        cond = c;
    }

    let gk = submatrix(g, &kept);
    let rk: Array1<T> = kept.iter().map(|&j| rhs[j]).collect();
    let coeffs = match Cholesky::factor(gk.view()) {
        Ok(ch) => ch.solve_vec(rk.view())?,
        Err(_) => {
            let eig = sym_eig(gk.view())?;
            let proj = eig.vectors.t().dot(&rk);
            let scaled: Array1<T> = proj.iter().zip(eig.values.iter()).map(|(&p, &w)| p / w).collect();
            eig.vectors.dot(&scaled)
        }
    };
    Ok(AggregationSolution { coeffs, kept, cond })
}

/// Aggregates `members` using the source sample of `ds` weighted by `beta`.
pub fn aggregate<T: Real>(
    members: Vec<Member<T>>,
    ds: &ShiftDataset<T>,
    beta: ArrayView1<T>,
    cond_threshold: T,
) -> Result<AggregateModel<T>> {
    let refs: Vec<&dyn Predictor<T>> = members.iter().map(|m| m as &dyn Predictor<T>).collect();
    let (g, rhs) = build_system(&refs, ds, beta)?;
    let sol = solve_aggregation(g.view(), rhs.view(), cond_threshold)?;
    AggregateModel::from_parts(members, sol.coeffs, sol.kept, sol.cond)
}

/// Per-kernel aggregation over `lambda_grid`, followed by aggregation of the
/// per-kernel results. The returned model's members are the per-kernel
/// aggregates, in the order of `kernels`.
pub fn multi_kernel_learn<T: Real>(
    ds: &ShiftDataset<T>,
    kernels: &[KernelSpec<T>],
    lambda_grid: &[T],
    family: FilterFamily,
    beta: ArrayView1<T>,
    cond_threshold: T,
) -> Result<AggregateModel<T>> {
    let per_kernel = lambda_aggregates(ds, kernels, lambda_grid, family, beta, cond_threshold)?;
    aggregate(
        per_kernel.into_iter().map(Member::Aggregate).collect(),
        ds,
        beta,
        cond_threshold,
    )
}

/// First stage of [`multi_kernel_learn`]: one λ-aggregate per kernel.
pub fn lambda_aggregates<T: Real>(
    ds: &ShiftDataset<T>,
    kernels: &[KernelSpec<T>],
    lambda_grid: &[T],
    family: FilterFamily,
    beta: ArrayView1<T>,
    cond_threshold: T,
) -> Result<Vec<AggregateModel<T>>> {
    if kernels.is_empty() {
        return Err(Error::invalid("multiple kernel learning needs at least one kernel"));
    }
    if lambda_grid.is_empty() {
        return Err(Error::invalid("multiple kernel learning needs at least one lambda"));
    }
    let filters = lambda_grid
        .iter()
        .map(|&l| FilterSpec::new(family, l))
        .collect::<Result<Vec<_>>>()?;
    kernels
        .iter()
        .map(|spec| {
            let models = fit_path(ds, spec, &filters, beta)?;
            aggregate(
                models.into_iter().map(Member::Fitted).collect(),
                ds,
                beta,
                cond_threshold,
            )
        })
        .collect()
}
