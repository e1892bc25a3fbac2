//! Configuration-driven experiments: the λ sweep, two-stage kernel
//! aggregation and the synthetic rate diagnostic.
//!
//! In the imaging modes the inputs are flattened sinograms (one projection
//! after another) and the outputs flattened images (row-major). The source
//! pairs are clean; the target inputs are blurred either after the Radon
//! transform (`blur_sinogram`) or before it (`blur_faces`). Source and target
//! images are disjoint subsets of one corpus, split by a seeded shuffle.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate, lambda_aggregates, AggregateModel, Member, DEFAULT_COND_THRESHOLD};
use crate::error::{Error, Result, StageExt};
use crate::estimator::{fit, fit_path, Predictor, ShiftDataset};
use crate::evalmetrics::{median, rate_slope, MetricReport};
use crate::imaging::{blur, iradon, radon, read_pgm, shape_phantom, BlurKind, GrayImage, Sinogram};
use crate::kernels::{median_sq_dist, KernelFamily, KernelSpec};
use crate::spectral::{FilterFamily, FilterSpec};
use crate::synthetic::{l2_target_error, make_problem, stream_rng, SyntheticProblem};
use crate::weights::{default_alpha_grid, kulsif_select, DEFAULT_B_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    BlurSinogram,
    BlurFaces,
    Synthetic,
}

/// A kernel family with either a fixed bandwidth or one chosen by the median
/// heuristic on the source inputs (times `scale`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelChoice {
    pub family: KernelFamily,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl KernelChoice {
    pub fn resolve(&self, x: ArrayView2<f64>) -> Result<KernelSpec<f64>> {
        match self.gamma {
            Some(g) => KernelSpec::new(self.family, g),
            None => KernelSpec::from_median_heuristic(self.family, median_sq_dist(x)?, self.scale),
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(g) = self.gamma {
            KernelSpec::new(self.family, g).map_err(|e| Error::Config(format!("kernel: {e}")))?;
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("kernel scale must be positive, got {}", self.scale)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightsConfig {
    Kulsif {
        #[serde(default = "default_kulsif_kernel")]
        kernel: KernelChoice,
        #[serde(default = "default_alpha_grid")]
        alpha_grid: Vec<f64>,
        #[serde(default = "default_b_cap")]
        b_cap: f64,
    },
    /// Exact ratio (synthetic mode only).
    Exact,
    Uniform,
    /// One weight per source sample, read from a CSV column.
    File { path: PathBuf },
}

fn default_kulsif_kernel() -> KernelChoice {
    KernelChoice {
        family: KernelFamily::Gaussian,
        gamma: None,
        scale: 1.0,
    }
}

fn default_b_cap() -> f64 {
    DEFAULT_B_CAP
}

impl Default for WeightsConfig {
    fn default() -> Self {
        WeightsConfig::Kulsif {
            kernel: default_kulsif_kernel(),
            alpha_grid: default_alpha_grid(),
            b_cap: DEFAULT_B_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadonConfig {
    #[serde(default = "default_n_ang")]
    pub n_ang: usize,
    #[serde(default = "default_n_det")]
    pub n_det: usize,
}

fn default_n_ang() -> usize {
    85
}

fn default_n_det() -> usize {
    142
}

impl Default for RadonConfig {
    fn default() -> Self {
        RadonConfig {
            n_ang: default_n_ang(),
            n_det: default_n_det(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusConfig {
    /// Directory of PGM/PPM files of equal size.
    Dir(PathBuf),
    /// Procedurally generated face-like phantoms.
    Shapes { count: usize, size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_p")]
    pub p: usize,
    #[serde(default = "default_shift")]
    pub shift_strength: f64,
    #[serde(default = "default_noise")]
    pub noise_sd: f64,
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
    #[serde(default = "default_ns")]
    pub ns: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
}

fn default_d() -> usize {
    2
}
fn default_p() -> usize {
    3
}
fn default_shift() -> f64 {
    0.7
}
fn default_noise() -> f64 {
    0.2
}
fn default_n_mc() -> usize {
    4000
}
fn default_ns() -> Vec<usize> {
    vec![100, 400, 1600]
}
fn default_seeds() -> usize {
    10
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            d: default_d(),
            p: default_p(),
            shift_strength: default_shift(),
            noise_sd: default_noise(),
            n_mc: default_n_mc(),
            ns: default_ns(),
            seeds: default_seeds(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub family: FilterKind,
    #[serde(default)]
    pub m: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Tikhonov,
    IteratedTikhonov,
    Cutoff,
}

impl FilterConfig {
    pub fn family(&self) -> Result<FilterFamily> {
        match (self.family, self.m) {
            (FilterKind::Tikhonov, None) => Ok(FilterFamily::Tikhonov),
            (FilterKind::Cutoff, None) => Ok(FilterFamily::SpectralCutoff),
            (FilterKind::IteratedTikhonov, Some(m)) if m >= 1 => Ok(FilterFamily::IteratedTikhonov { m }),
            (FilterKind::IteratedTikhonov, _) => Err(Error::Config("iterated_tikhonov needs m >= 1".into())),
            (_, Some(_)) => Err(Error::Config("m is only valid for iterated_tikhonov".into())),
        }
    }
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            family: FilterKind::Tikhonov,
            m: None,
        }
    }
}

/// `λ_j = 10^{−j−1}`, `j = 1..6`.
pub fn default_lambda_grid() -> Vec<f64> {
    (1..=6).map(|j| 10f64.powi(-j - 1)).collect()
}

fn default_kernels() -> Vec<KernelChoice> {
    vec![KernelChoice {
        family: KernelFamily::Gaussian,
        gamma: None,
        scale: 1.0,
    }]
}

fn default_cond() -> f64 {
    DEFAULT_COND_THRESHOLD
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_n() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default = "default_blur")]
    pub blur: BlurKind,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_n")]
    pub m: usize,
    #[serde(default = "default_kernels")]
    pub kernels: Vec<KernelChoice>,
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub weights: WeightsConfig,
    #[serde(default)]
    pub radon: RadonConfig,
    #[serde(default)]
    pub corpus: Option<CorpusConfig>,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
    #[serde(default = "default_cond")]
    pub cond_threshold: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
}

fn default_blur() -> BlurKind {
    BlurKind::Gaussian
}

impl ExperimentConfig {
    /// Defaults for the given mode.
    pub fn new(mode: Mode) -> Self {
        serde_json::from_value(serde_json::json!({ "mode": mode })).expect("defaults are valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    /// Checks every field; the first problem found is returned as
    /// [`Error::Config`].
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n == 0 || self.m == 0 {
            return bad(format!("n and m must be at least 1 (n = {}, m = {})", self.n, self.m));
        }
        if self.kernels.is_empty() {
            return bad("kernels: at least one kernel is required".into());
        }
        for k in &self.kernels {
            k.validate()?;
        }
        if self.lambda_grid.is_empty() {
            return bad("lambda_grid must not be empty".into());
        }
        if self.lambda_grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return bad("lambda_grid values must be positive and finite".into());
        }
        if self.lambda_grid.windows(2).any(|w| !(w[1] < w[0])) {
            return bad("lambda_grid must be strictly decreasing".into());
        }
        self.filter.family()?;
        if !(self.cond_threshold >= 1.0) {
            return bad(format!("cond_threshold must be at least 1, got {}", self.cond_threshold));
        }
        if self.radon.n_ang == 0 || self.radon.n_det == 0 {
            return bad("radon.n_ang and radon.n_det must be positive".into());
        }
        match &self.weights {
            WeightsConfig::Kulsif {
                kernel,
                alpha_grid,
                b_cap,
            } => {
                kernel.validate()?;
                if alpha_grid.len() < 2 {
                    return bad("weights.alpha_grid needs at least two values".into());
                }
                if alpha_grid.iter().any(|&a| !(a > 0.0 && a.is_finite())) || alpha_grid.windows(2).any(|w| !(w[1] < w[0])) {
                    return bad("weights.alpha_grid must be positive and strictly decreasing".into());
                }
                if !(*b_cap > 0.0) {
                    return bad("weights.b_cap must be positive".into());
                }
            }
            WeightsConfig::Exact if self.mode != Mode::Synthetic => {
                return bad("exact weights are only available in synthetic mode".into());
            }
            _ => {}
        }
        match self.mode {
            Mode::Synthetic => {
                let s = &self.synthetic;
                if s.d == 0 || s.p == 0 {
                    return bad("synthetic.d and synthetic.p must be positive".into());
                }
                if !(0.0..=1.0).contains(&s.shift_strength) {
                    return bad("synthetic.shift_strength must lie in [0, 1]".into());
                }
                if !(s.noise_sd >= 0.0 && s.noise_sd.is_finite()) {
                    return bad("synthetic.noise_sd must be non-negative".into());
                }
                if s.n_mc == 0 || s.seeds == 0 {
                    return bad("synthetic.n_mc and synthetic.seeds must be positive".into());
                }
                if s.ns.is_empty() || s.ns.contains(&0) || s.ns.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("synthetic.ns must be positive and strictly increasing".into());
                }
            }
            Mode::BlurSinogram | Mode::BlurFaces => match &self.corpus {
                None => return bad("imaging modes need a corpus".into()),
                Some(CorpusConfig::Shapes { count, size }) => {
                    if *size < 9 {
                        return bad("corpus.shapes.size must be at least 9 (blur kernel size)".into());
                    }
                    if *count < self.n + self.m {
                        return bad(format!("corpus.shapes.count {count} is smaller than n + m = {}", self.n + self.m));
                    }
                }
                Some(CorpusConfig::Dir(_)) => {}
            },
        }
        Ok(())
    }

    fn filters(&self) -> Result<Vec<FilterSpec<f64>>> {
        let family = self.filter.family()?;
        self.lambda_grid.iter().map(|&l| FilterSpec::new(family, l)).collect()
    }
}

/// One line of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub rows: Vec<TableRow>,
    /// Direct filtered backprojection of the target sinograms (imaging
    /// modes only).
    pub baseline: Option<MetricReport>,
}

impl ExperimentTable {
    pub fn agg(&self) -> Option<&MetricReport> {
        self.rows.iter().rev().find(|r| r.label == "Agg.").map(|r| &r.report)
    }

    /// Aligned plain text in the column order MSE, Rel. Err., PSNR.
    pub fn to_text(&self, first_header: &str) -> String {
        let mut lines: Vec<(String, &MetricReport)> = self.rows.iter().map(|r| (r.label.clone(), &r.report)).collect();
        if let Some(b) = &self.baseline {
            lines.push(("iradon".into(), b));
        }
        let width = lines
            .iter()
            .map(|(l, _)| l.chars().count())
            .chain([first_header.chars().count()])
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(out, "{first_header:<width$}  {:>10}  {:>10}  {:>8}", "MSE", "Rel. Err.", "PSNR");
        for (label, r) in lines {
            let _ = writeln!(out, "{label:<width$}  {:>10.6}  {:>10.4}  {:>8.2}", r.mse, r.rel_err, r.psnr);
        }
        out
    }

    pub fn to_csv(&self, first_header: &str) -> String {
        let mut out = format!("{first_header},mse,rel_err,psnr\n");
        let rows = self.rows.iter().map(|r| (r.label.as_str(), &r.report));
        for (label, r) in rows.chain(self.baseline.iter().map(|b| ("iradon", b))) {
            let _ = writeln!(out, "{label},{},{},{}", r.mse, r.rel_err, r.psnr);
        }
        out
    }

    pub fn write(&self, dir: impl AsRef<Path>, stem: &str, first_header: &str) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{stem}.txt")), self.to_text(first_header))?;
        fs::write(dir.join(format!("{stem}.csv")), self.to_csv(first_header))?;
        Ok(())
    }
}

/// Source/target data of an experiment, with the ground truth for the
/// targets.
pub struct Prepared {
    pub dataset: ShiftDataset<f64>,
    pub truth: Array2<f64>,
    pub beta: Array1<f64>,
    /// Target sinograms and image shape (imaging modes).
    pub target_sinograms: Vec<Sinogram<f64>>,
    pub image_shape: Option<(usize, usize)>,
    pub problem: Option<SyntheticProblem>,
}

fn load_corpus(cfg: &ExperimentConfig) -> Result<Vec<GrayImage<f64>>> {
    match cfg.corpus.as_ref().ok_or_else(|| Error::Config("imaging modes need a corpus".into()))? {
        CorpusConfig::Shapes { count, size } => {
            let mut rng = stream_rng(cfg.seed, 100);
            (0..*count).map(|_| shape_phantom(*size, *size, &mut rng)).collect()
        }
        CorpusConfig::Dir(dir) => {
            let mut paths: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(|e| Error::Config(format!("corpus directory {}: {e}", dir.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.extension()
                        .and_then(|x| x.to_str())
                        .is_some_and(|x| matches!(x.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "pnm"))
                })
                .collect();
            paths.sort();
            if paths.len() < cfg.n + cfg.m {
                return Err(Error::Config(format!(
                    "corpus {} has {} images, need n + m = {}",
                    dir.display(),
                    paths.len(),
                    cfg.n + cfg.m
                )));
            }
            let images = paths.iter().map(read_pgm).collect::<Result<Vec<GrayImage<f64>>>>()?;
            let (h, w) = (images[0].height(), images[0].width());
            if images.iter().any(|im| im.height() != h || im.width() != w) {
                return Err(Error::invalid("corpus images must share one size"));
            }
            Ok(images)
        }
    }
}

fn rows_to_matrix(rows: Vec<Vec<f64>>) -> Result<Array2<f64>> {
    crate::imaging::stack_rows(&rows)
}

fn prepare_imaging(cfg: &ExperimentConfig) -> Result<Prepared> {
    let mut images = load_corpus(cfg).stage("corpus")?;
    let mut order: Vec<usize> = (0..images.len()).collect();
    order.shuffle(&mut stream_rng(cfg.seed, 101));
    let pick = |idx: &[usize], images: &mut Vec<GrayImage<f64>>| -> Vec<GrayImage<f64>> {
        idx.iter().map(|&i| std::mem::replace(&mut images[i], GrayImage::zeros(1, 1).expect("1x1"))).collect()
    };
    let source = pick(&order[..cfg.n], &mut images);
    let target = pick(&order[cfg.n..cfg.n + cfg.m], &mut images);
    let (h, w) = (source[0].height(), source[0].width());
    let RadonConfig { n_ang, n_det } = cfg.radon;

    let (src_x, src_y): (Vec<Vec<f64>>, Vec<Vec<f64>>) = source
        .par_iter()
        .map(|img| Ok((radon(img.pixels(), n_ang, n_det)?.to_vec(), img.to_vec())))
        .collect::<Result<Vec<_>>>()
        .stage("forward")?
        .into_iter()
        .unzip();
    let target_sinos: Vec<Sinogram<f64>> = target
        .par_iter()
        .map(|img| match cfg.mode {
            Mode::BlurFaces => radon(blur(img, cfg.blur)?.pixels(), n_ang, n_det),
            _ => {
                let s = radon(img.pixels(), n_ang, n_det)?;
                let blurred = crate::imaging::convolve2d(s.data(), cfg.blur.kernel::<f64>().view())?;
                Sinogram::new(blurred)
            }
        })
        .collect::<Result<_>>()
        .stage("forward")?;
    let xt = rows_to_matrix(target_sinos.iter().map(Sinogram::to_vec).collect())?;
    let truth = rows_to_matrix(target.iter().map(GrayImage::to_vec).collect())?;
    let dataset = ShiftDataset::new(rows_to_matrix(src_x)?, rows_to_matrix(src_y)?, xt, None)?;
    let beta = compute_weights(cfg, &dataset, None).stage("weights")?;
    Ok(Prepared {
        dataset,
        truth,
        beta,
        target_sinograms: target_sinos,
        image_shape: Some((h, w)),
        problem: None,
    })
}

fn prepare_synthetic(cfg: &ExperimentConfig) -> Result<Prepared> {
    let s = &cfg.synthetic;
    let (problem, dataset) =
        make_problem::<f64>(cfg.seed, cfg.n, cfg.m, s.d, s.p, s.shift_strength, s.noise_sd).stage("synthetic")?;
    let truth = problem.fstar_rows(dataset.xt())?;
    let beta = compute_weights(cfg, &dataset, Some(&problem)).stage("weights")?;
    Ok(Prepared {
        dataset,
        truth,
        beta,
        target_sinograms: Vec::new(),
        image_shape: None,
        problem: Some(problem),
    })
}

fn compute_weights(cfg: &ExperimentConfig, ds: &ShiftDataset<f64>, prob: Option<&SyntheticProblem>) -> Result<Array1<f64>> {
    match &cfg.weights {
        WeightsConfig::Kulsif {
            kernel,
            alpha_grid,
            b_cap,
        } => {
            let pooled = ndarray::concatenate(ndarray::Axis(0), &[ds.xs(), ds.xt()]).expect("equal widths");
            let spec = kernel.resolve(pooled.view())?;
            let w = kulsif_select(&spec, ds.xs(), ds.xt(), alpha_grid, *b_cap)?;
            log::info!("KuLSIF: alpha = {:e}, mean weight = {:.4}", w.alpha, w.mean());
            Ok(w.beta)
        }
        WeightsConfig::Exact => match (ds.beta(), prob) {
            (Some(b), _) => Ok(b.to_owned()),
            (None, Some(p)) => Ok(p.beta_exact_rows(ds.xs())),
            _ => Err(Error::Config("exact weights are only available in synthetic mode".into())),
        },
        WeightsConfig::Uniform => Ok(Array1::ones(ds.n())),
        WeightsConfig::File { path } => {
            let b: Array1<f64> = crate::io::read_vector_csv(path)?;
            crate::estimator::check_beta(b.view(), ds.n())?;
            Ok(b)
        }
    }
}

/// Loads the corpus or draws the synthetic problem, computes target inputs
/// and importance weights.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    match cfg.mode {
        Mode::Synthetic => prepare_synthetic(cfg),
        Mode::BlurSinogram | Mode::BlurFaces => prepare_imaging(cfg),
    }
}

impl Prepared {
    /// Predictions on the target inputs, clamped to `[0, 1]` in the imaging
    /// modes.
    pub fn predict_targets(&self, model: &dyn Predictor<f64>) -> Result<Array2<f64>> {
        let pred = model.predict_batch(self.dataset.xt())?;
        Ok(if self.image_shape.is_some() {
            pred.mapv(|v| v.clamp(0.0, 1.0))
        } else {
            pred
        })
    }

    pub fn report(&self, model: &dyn Predictor<f64>) -> Result<MetricReport> {
        MetricReport::compute(self.predict_targets(model)?.view(), self.truth.view())
    }

    /// Filtered backprojection of every target sinogram.
    pub fn baseline(&self) -> Result<Option<MetricReport>> {
        let Some((h, w)) = self.image_shape else {
            return Ok(None);
        };
        let rec = self
            .target_sinograms
            .par_iter()
            .map(|s| Ok(iradon(s, h, w)?.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(MetricReport::compute(rows_to_matrix(rec)?.view(), self.truth.view())?))
    }

    pub fn kernel(&self, choice: &KernelChoice) -> Result<KernelSpec<f64>> {
        choice.resolve(self.dataset.xs())
    }
}

fn lambda_label(l: f64) -> String {
    format!("λ = {l:.0e}")
}

/// One row per λ (in grid order) and a final `Agg.` row. Uses the first
/// configured kernel.
pub fn run_lambda_sweep(cfg: &ExperimentConfig) -> Result<ExperimentTable> {
    let prep = prepare(cfg)?;
    lambda_sweep_on(cfg, &prep)
}

pub fn lambda_sweep_on(cfg: &ExperimentConfig, prep: &Prepared) -> Result<ExperimentTable> {
    let spec = prep.kernel(&cfg.kernels[0]).stage("kernel")?;
    let filters = cfg.filters()?;
    let models = fit_path(&prep.dataset, &spec, &filters, prep.beta.view()).stage("fit")?;
    let mut rows = models
        .par_iter()
        .zip(&cfg.lambda_grid)
        .map(|(m, &l)| {
            Ok(TableRow {
                label: lambda_label(l),
                report: prep.report(m)?,
            })
        })
        .collect::<Result<Vec<_>>>()
        .stage("predict")?;
    let agg = aggregate(
        models.into_iter().map(Member::Fitted).collect(),
        &prep.dataset,
        prep.beta.view(),
        cfg.cond_threshold,
    )
    .stage("aggregate")?;
    rows.push(TableRow {
        label: "Agg.".into(),
        report: prep.report(&agg).stage("predict")?,
    });
    Ok(ExperimentTable {
        rows,
        baseline: prep.baseline().stage("baseline")?,
    })
}

/// Per-kernel λ-aggregates and their aggregate, with the model itself.
pub fn kernel_aggregation_on(
    cfg: &ExperimentConfig,
    prep: &Prepared,
) -> Result<(ExperimentTable, AggregateModel<f64>)> {
    let specs = cfg
        .kernels
        .iter()
        .map(|k| prep.kernel(k))
        .collect::<Result<Vec<_>>>()
        .stage("kernel")?;
    let family = cfg.filter.family()?;
    let stage1 = lambda_aggregates(
        &prep.dataset,
        &specs,
        &cfg.lambda_grid,
        family,
        prep.beta.view(),
        cfg.cond_threshold,
    )
    .stage("aggregate")?;
    let mut rows = stage1
        .par_iter()
        .zip(&specs)
        .map(|(a, s)| {
            Ok(TableRow {
                label: s.family().name().to_string(),
                report: prep.report(a)?,
            })
        })
        .collect::<Result<Vec<_>>>()
        .stage("predict")?;
    let final_model = aggregate(
        stage1.into_iter().map(Member::Aggregate).collect(),
        &prep.dataset,
        prep.beta.view(),
        cfg.cond_threshold,
    )
    .stage("aggregate")?;
    rows.push(TableRow {
        label: "Agg.".into(),
        report: prep.report(&final_model).stage("predict")?,
    });
    let table = ExperimentTable {
        rows,
        baseline: prep.baseline().stage("baseline")?,
    };
    Ok((table, final_model))
}

/// One row per kernel (its λ-aggregate) and a final `Agg.` row.
pub fn run_kernel_aggregation(cfg: &ExperimentConfig) -> Result<ExperimentTable> {
    let prep = prepare(cfg)?;
    Ok(kernel_aggregation_on(cfg, &prep)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub ns: Vec<usize>,
    /// `errors[s][i]`: L2 target error for seed `s` at `ns[i]`.
    pub errors: Vec<Vec<f64>>,
    /// Per-seed slopes; NaN where the errors vanish.
    pub slopes: Vec<f64>,
    pub median_slope: f64,
    pub degenerate: bool,
}

/// Errors below this are treated as an exact fit, for which no slope exists.
const DEGENERATE_ERROR: f64 = 1e-12;

/// Fits log-log slopes of `error(seed, n)` per seed and reports their median.
pub fn rate_check_with<F>(ns: &[usize], seeds: &[u64], error: F) -> Result<RateReport>
where
    F: Fn(u64, usize) -> Result<f64> + Sync,
{
    if ns.len() < 3 {
        return Err(Error::Config("rate check needs at least three sample sizes".into()));
    }
    let errors = seeds
        .par_iter()
        .map(|&s| ns.iter().map(|&n| error(s, n)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let slopes: Vec<f64> = errors
        .iter()
        .map(|e| {
            if e.iter().any(|&v| v <= DEGENERATE_ERROR) {
                Ok(f64::NAN)
            } else {
                rate_slope(ns, Array1::from(e.clone()).view())
            }
        })
        .collect::<Result<_>>()?;
    let median_slope = median(&slopes).unwrap_or(f64::NAN);
    Ok(RateReport {
        ns: ns.to_vec(),
        errors,
        slopes,
        median_slope,
        degenerate: median_slope.is_nan(),
    })
}

/// L2 target error of the estimator with `λ = n^{−2/3}` on synthetic data,
/// for seeds `cfg.seed .. cfg.seed + synthetic.seeds`.
pub fn run_rate_check(cfg: &ExperimentConfig) -> Result<RateReport> {
    cfg.validate()?;
    if cfg.mode != Mode::Synthetic {
        return Err(Error::Config("the rate check needs synthetic mode".into()));
    }
    let s = cfg.synthetic.clone();
    let seeds: Vec<u64> = (0..s.seeds as u64).map(|k| cfg.seed + k).collect();
    let family = cfg.filter.family()?;
    rate_check_with(&s.ns, &seeds, |seed, n| {
        let mut local = cfg.clone();
        local.seed = seed;
        local.n = n;
        local.m = n;
        let prep = prepare(&local)?;
        let prob = prep.problem.as_ref().expect("synthetic mode");
        let spec = prep.kernel(&cfg.kernels[0])?;
        let filter = FilterSpec::new(family, (n as f64).powf(-2.0 / 3.0))?;
        let model = fit(&prep.dataset, &spec, &filter, prep.beta.view()).stage("fit")?;
        l2_target_error(&model, prob, s.n_mc, seed.wrapping_add(1 << 32))
    })
}

impl RateReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:>6}", "seed");
        for n in &self.ns {
            let _ = write!(out, "  {:>12}", format!("n={n}"));
        }
        let _ = writeln!(out, "  {:>8}", "slope");
        for (k, (e, s)) in self.errors.iter().zip(&self.slopes).enumerate() {
            let _ = write!(out, "{k:>6}");
            for v in e {
                let _ = write!(out, "  {v:>12.6}");
            }
            let _ = writeln!(out, "  {s:>8.4}");
        }
        if self.degenerate {
            let _ = writeln!(out, "median slope: NaN (degenerate: errors vanish)");
        } else {
            let _ = writeln!(out, "median slope: {:.4}", self.median_slope);
        }
        out
    }
}
