use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::{Array1, Array2};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use shiftkernel::aggregate::{build_system, solve_aggregation, DEFAULT_COND_THRESHOLD};
use shiftkernel::evalmetrics::MetricReport;
use shiftkernel::experiment::{
    run_kernel_aggregation, run_lambda_sweep, run_rate_check, ExperimentConfig, ExperimentTable, KernelChoice,
    TableRow,
};
use shiftkernel::imaging::{self, BlurKind};
use shiftkernel::io;
use shiftkernel::synthetic::SyntheticProblem;
use shiftkernel::weights::{default_alpha_grid, kulsif_select, DEFAULT_B_CAP};
use shiftkernel::{
    AggregateModel, Error, FilterFamily, FilterSpec, KernelFamily, Member, Predictor, Result, ShiftDataset,
};

#[derive(Parser, Debug)]
#[command(name = "shiftkernel", version, about = "Kernel regression under covariate shift")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a synthetic covariate-shift dataset.
    Synth(SynthArgs),
    /// Radon transform of an image.
    Radon(RadonArgs),
    /// Filtered backprojection of a sinogram.
    Iradon(IradonArgs),
    /// Blur an image or a sinogram.
    Blur(BlurArgs),
    /// Estimate importance weights with KuLSIF.
    Kulsif(KulsifArgs),
    /// Fit one estimator on a dataset directory.
    Fit(FitArgs),
    /// Predict with a stored model.
    Predict(PredictArgs),
    /// Aggregate stored models.
    Aggregate(AggregateArgs),
    /// Compare predictions with ground truth.
    Metrics(MetricsArgs),
    /// Lambda sweep with a final aggregate.
    Sweep,
    /// Two-stage aggregation over lambdas and kernels.
    Mkl,
    /// Empirical convergence rate on synthetic problems.
    Ratecheck,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    m: usize,
    #[arg(long, default_value_t = 2)]
    d: usize,
    #[arg(long, default_value_t = 3)]
    p: usize,
    #[arg(long, default_value_t = 0.7)]
    shift: f64,
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
}

#[derive(Args, Debug)]
struct RadonArgs {
    /// PGM or PPM image.
    input: PathBuf,
    #[arg(long, default_value_t = 60)]
    n_ang: usize,
    #[arg(long, default_value_t = 95)]
    n_det: usize,
}

#[derive(Args, Debug)]
struct IradonArgs {
    /// Sinogram CSV (detectors × angles).
    input: PathBuf,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
}

#[derive(Args, Debug)]
struct BlurArgs {
    /// PGM/PPM image, or a sinogram CSV.
    input: PathBuf,
    #[arg(long, default_value = "gaussian", value_parser = parse_name::<BlurKind>)]
    kind: BlurKind,
}

#[derive(Args, Debug)]
struct KernelArgs {
    #[arg(long, default_value = "gaussian", value_parser = parse_name::<KernelFamily>)]
    kernel: KernelFamily,
    /// Fixed bandwidth; the median heuristic is used when absent.
    #[arg(long)]
    gamma: Option<f64>,
    /// Multiplier for the median heuristic.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
}

impl KernelArgs {
    fn choice(&self) -> KernelChoice {
        KernelChoice {
            family: self.kernel,
            gamma: self.gamma,
            scale: self.scale,
        }
    }
}

#[derive(Args, Debug)]
struct KulsifArgs {
    /// Source inputs (CSV, one row per sample).
    #[arg(long)]
    source: PathBuf,
    /// Target inputs.
    #[arg(long)]
    target: PathBuf,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Candidate regularization values; defaults to 4^{-j}, j = 0..9.
    #[arg(long, value_delimiter = ',')]
    alpha: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_B_CAP)]
    b_cap: f64,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Dataset directory with Xs.csv, Y.csv, Xt.csv and optionally beta.csv.
    #[arg(long)]
    data: PathBuf,
    /// Weights CSV; overrides beta.csv of the dataset.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Ignore any stored weights and use β ≡ 1.
    #[arg(long, conflicts_with = "weights")]
    unweighted: bool,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long, default_value = "tikhonov", value_parser = ["tikhonov", "iterated_tikhonov", "cutoff"])]
    filter: String,
    /// Iterations for iterated Tikhonov.
    #[arg(long, default_value_t = 2)]
    iterations: u32,
    #[arg(long)]
    lambda: f64,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Inputs CSV.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args, Debug)]
struct AggregateArgs {
    /// JSON file `{"models": [dir, ...]}`; relative paths are resolved
    /// against the manifest's directory.
    #[arg(long)]
    manifest: PathBuf,
    /// Inputs used to build the aggregation system.
    #[arg(long)]
    x: PathBuf,
    /// Outputs paired with `--x`.
    #[arg(long)]
    y: PathBuf,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_COND_THRESHOLD)]
    cond_threshold: f64,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    /// Predictions: a CSV (one item per row) or a directory of PGM images.
    #[arg(long)]
    pred: PathBuf,
    /// Ground truth in the same layout.
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    models: Vec<PathBuf>,
}

fn parse_name<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase())).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(2),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}

struct Context {
    config: Option<ExperimentConfig>,
    seed: Option<u64>,
    out: PathBuf,
}

impl Context {
    fn out_file(&self, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out)?;
        Ok(self.out.join(name))
    }

    /// The experiment configuration with command-line overrides applied.
    fn experiment(&self) -> Result<ExperimentConfig> {
        let mut cfg = self
            .config
            .clone()
            .ok_or_else(|| Error::Config("this subcommand needs --config".into()))?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.output_dir = self.out.clone();
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let config = cli.config.as_ref().map(ExperimentConfig::load).transpose()?;
    let out = cli
        .out
        .clone()
        .or_else(|| config.as_ref().map(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    let ctx = Context {
        config,
        seed: cli.seed,
        out,
    };
    match cli.command {
        Command::Synth(a) => synth(&ctx, a),
        Command::Radon(a) => radon(&ctx, a),
        Command::Iradon(a) => iradon(&ctx, a),
        Command::Blur(a) => blur(&ctx, a),
        Command::Kulsif(a) => kulsif(&ctx, a),
        Command::Fit(a) => fit(&ctx, a),
        Command::Predict(a) => predict(&ctx, a),
        Command::Aggregate(a) => aggregate(&ctx, a),
        Command::Metrics(a) => metrics(&ctx, a),
        Command::Sweep => {
            let cfg = ctx.experiment()?;
            emit_table(&cfg.output_dir, "sweep", "λ", &run_lambda_sweep(&cfg)?)
        }
        Command::Mkl => {
            let cfg = ctx.experiment()?;
            emit_table(&cfg.output_dir, "mkl", "Kernel", &run_kernel_aggregation(&cfg)?)
        }
        Command::Ratecheck => {
            let cfg = ctx.experiment()?;
            let report = run_rate_check(&cfg)?;
            fs::create_dir_all(&cfg.output_dir)?;
            fs::write(cfg.output_dir.join("ratecheck.json"), serde_json::to_string_pretty(&report)?)?;
            let text = report.to_text();
            fs::write(cfg.output_dir.join("ratecheck.txt"), &text)?;
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_table(dir: &Path, stem: &str, header: &str, table: &ExperimentTable) -> Result<()> {
    table.write(dir, stem, header)?;
    print!("{}", table.to_text(header));
    Ok(())
}

#[derive(Serialize)]
struct ProblemRecord<'a> {
    seed: u64,
    n: usize,
    m: usize,
    problem: &'a SyntheticProblem,
}

fn synth(ctx: &Context, a: SynthArgs) -> Result<()> {
    let seed = ctx.seed.or(ctx.config.as_ref().map(|c| c.seed)).unwrap_or(0);
    let (n, m, d, p, shift, noise) = match &ctx.config {
        Some(c) => {
            let s = &c.synthetic;
            (c.n, c.m, s.d, s.p, s.shift_strength, s.noise_sd)
        }
        None => (a.n, a.m, a.d, a.p, a.shift, a.noise),
    };
    if n == 0 || m == 0 {
        return Err(Error::Config("--n and --m must be at least 1".into()));
    }
    let prob = SyntheticProblem::new(seed, d, p, shift, noise).map_err(as_config)?;
    let ds: ShiftDataset<f64> = prob.draw(n, m)?;
    io::save_dataset(&ctx.out, &ds)?;
    let record = ProblemRecord {
        seed,
        n,
        m,
        problem: &prob,
    };
    fs::write(ctx.out_file("problem.json")?, serde_json::to_string_pretty(&record)?)?;
    println!("wrote {} source and {} target samples to {}", n, m, ctx.out.display());
    Ok(())
}

fn as_config(e: Error) -> Error {
    match e {
        Error::InvalidParameter(msg) => Error::Config(msg),
        other => other,
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "output".into(), |s| s.to_string_lossy().into_owned())
}

fn radon(ctx: &Context, a: RadonArgs) -> Result<()> {
    if a.n_ang == 0 || a.n_det == 0 {
        return Err(Error::Config("--n-ang and --n-det must be at least 1".into()));
    }
    let img = imaging::read_pgm::<f64>(&a.input)?;
    let sino = imaging::radon(img.pixels(), a.n_ang, a.n_det)?;
    let path = ctx.out_file(&format!("{}_sinogram.csv", stem(&a.input)))?;
    io::write_sinogram(&path, &sino)?;
    println!("{}", path.display());
    Ok(())
}

fn iradon(ctx: &Context, a: IradonArgs) -> Result<()> {
    if a.height == 0 || a.width == 0 {
        return Err(Error::Config("--height and --width must be at least 1".into()));
    }
    let sino = io::read_sinogram::<f64>(&a.input)?;
    let img = imaging::iradon(&sino, a.height, a.width)?;
    let path = ctx.out_file(&format!("{}_iradon.pgm", stem(&a.input)))?;
    imaging::write_pgm(&img, &path)?;
    println!("{}", path.display());
    Ok(())
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn blur(ctx: &Context, a: BlurArgs) -> Result<()> {
    let path = if is_csv(&a.input) {
        let sino = io::read_sinogram::<f64>(&a.input)?;
        let blurred = imaging::convolve2d(sino.data(), a.kind.kernel::<f64>().view())?;
        let path = ctx.out_file(&format!("{}_blurred.csv", stem(&a.input)))?;
        io::write_sinogram(&path, &imaging::Sinogram::new(blurred)?)?;
        path
    } else {
        let img = imaging::read_pgm::<f64>(&a.input)?;
        let path = ctx.out_file(&format!("{}_blurred.pgm", stem(&a.input)))?;
        imaging::write_pgm(&imaging::blur(&img, a.kind)?, &path)?;
        path
    };
    println!("{}", path.display());
    Ok(())
}

fn kulsif(ctx: &Context, a: KulsifArgs) -> Result<()> {
    let xs: Array2<f64> = io::read_matrix_csv(&a.source)?;
    let xt: Array2<f64> = io::read_matrix_csv(&a.target)?;
    let grid = if a.alpha.is_empty() { default_alpha_grid() } else { a.alpha.clone() };
    let spec = a.kernel.choice().resolve(xs.view()).map_err(as_config)?;
    let est = kulsif_select(&spec, xs.view(), xt.view(), &grid, a.b_cap).map_err(as_config)?;
    io::write_vector_csv(ctx.out_file("beta.csv")?, est.beta.view())?;
    println!("alpha = {}", est.alpha);
    Ok(())
}

fn filter_family(name: &str, iterations: u32) -> Result<FilterFamily> {
    match name {
        "tikhonov" => Ok(FilterFamily::Tikhonov),
        "cutoff" => Ok(FilterFamily::SpectralCutoff),
        "iterated_tikhonov" if iterations >= 1 => Ok(FilterFamily::IteratedTikhonov { m: iterations }),
        "iterated_tikhonov" => Err(Error::Config("--iterations must be at least 1".into())),
        other => Err(Error::Config(format!("unknown filter {other:?}"))),
    }
}

fn fit(ctx: &Context, a: FitArgs) -> Result<()> {
    let ds: ShiftDataset<f64> = io::load_dataset(&a.data)?;
    let beta: Array1<f64> = match (&a.weights, a.unweighted, ds.beta()) {
        (Some(path), _, _) => io::read_vector_csv(path)?,
        (None, false, Some(b)) => b.to_owned(),
        _ => Array1::ones(ds.n()),
    };
    let filter = FilterSpec::new(filter_family(&a.filter, a.iterations)?, a.lambda).map_err(as_config)?;
    let spec = a.kernel.choice().resolve(ds.xs()).map_err(as_config)?;
    let model = shiftkernel::estimator::fit(&ds, &spec, &filter, beta.view())?;
    io::save_fitted(&ctx.out, &model)?;
    println!("saved model to {}", ctx.out.display());
    Ok(())
}

fn predict(ctx: &Context, a: PredictArgs) -> Result<()> {
    let model: Member<f64> = io::load_member(&a.model)?;
    let x: Array2<f64> = io::read_matrix_csv(&a.input)?;
    let pred = model.predict_batch(x.view())?;
    let path = ctx.out_file("predictions.csv")?;
    io::write_matrix_csv(&path, pred.view())?;
    println!("{}", path.display());
    Ok(())
}

fn aggregate(ctx: &Context, a: AggregateArgs) -> Result<()> {
    let text = fs::read_to_string(&a.manifest)?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Config(format!("manifest: {e}")))?;
    if manifest.models.is_empty() {
        return Err(Error::Config("manifest lists no models".into()));
    }
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let members = manifest
        .models
        .iter()
        .map(|p| io::load_member::<f64>(base.join(p)))
        .collect::<Result<Vec<_>>>()?;
    let x: Array2<f64> = io::read_matrix_csv(&a.x)?;
    let y: Array2<f64> = io::read_matrix_csv(&a.y)?;
    let beta: Array1<f64> = match &a.weights {
        Some(p) => io::read_vector_csv(p)?,
        None => Array1::ones(x.nrows()),
    };
    // The aggregation system only reads the source sample.
    let ds = ShiftDataset::new(x.clone(), y, x, None)?;
    let refs: Vec<&dyn Predictor<f64>> = members.iter().map(|m| m as &dyn Predictor<f64>).collect();
    let (g, rhs) = build_system(&refs, &ds, beta.view())?;
    let sol = solve_aggregation(g.view(), rhs.view(), a.cond_threshold).map_err(as_config)?;
    let model = AggregateModel::from_parts(members, sol.coeffs, sol.kept, sol.cond)?;
    io::save_aggregate(ctx.out.join("model"), &model)?;
    let coeffs = serde_json::to_string_pretty(&io::coeffs_file(&model))?;
    fs::write(ctx.out_file("coeffs.json")?, &coeffs)?;
    println!("{coeffs}");
    Ok(())
}

/// A CSV matrix, or the PGM/PPM images of a directory flattened row-major in
/// file-name order.
fn load_items(path: &Path) -> Result<Array2<f64>> {
    if !path.is_dir() {
        return io::read_matrix_csv(path);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("ppm"))
        })
        .collect();
    if files.is_empty() {
        let csv = path.join("predictions.csv");
        if csv.exists() {
            return io::read_matrix_csv(csv);
        }
        return Err(Error::Config(format!("{} has no images or predictions.csv", path.display())));
    }
    files.sort();
    let rows = files
        .iter()
        .map(|f| imaging::read_pgm::<f64>(f).map(|img| img.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    imaging::stack_rows(&rows)
}

fn metrics(ctx: &Context, a: MetricsArgs) -> Result<()> {
    let pred = load_items(&a.pred)?;
    let truth = load_items(&a.truth)?;
    let report = MetricReport::compute(pred.view(), truth.view())?;
    fs::write(ctx.out_file("metrics.json")?, serde_json::to_string_pretty(&report)?)?;
    let table = ExperimentTable {
        rows: vec![TableRow {
            label: stem(&a.pred),
            report,
        }],
        baseline: None,
    };
    println!("{}", serde_json::to_string(&report)?);
    print!("{}", table.to_text("Prediction"));
    Ok(())
}
