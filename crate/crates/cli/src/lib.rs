//! `lca` command-line front end.
//!
//! Every subcommand validates its inputs and computes all results before it
//! writes any output file; files are written atomically. Exit codes: 0 on
//! success, 2 for usage and I/O errors, 3 for numerically degenerate data.

use std::ffi::OsString;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use lca_core::colorspace::{baseline_variance_report, Method};
use lca_core::imaging::{
    feature_dim, features_to_image, image_features, load_image, save_image, write_atomic, DifferenceImage, ImageBuffer,
    Metrics, SsimMode,
};
use lca_core::old::{apply_coefficient, orthogonality_report, train, train_penalty_baseline, variance_report};
use lca_core::synth::synth_pair;
use lca_core::{DifferenceDataset, Matrix, OldModel, OptimConfig, PerturbMode, StepSize, VarianceReport};

pub mod pairs;

pub use pairs::{discover_pairs, read_manifest, ImagePair};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "LCA_THREADS";

/// A failure with its process exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn io(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn degenerate(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<lca_core::Error> for CliError {
    fn from(e: lca_core::Error) -> Self {
        if e.is_degenerate() {
            Self::degenerate(e.to_string())
        } else {
            Self::io(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn context(what: impl fmt::Display) -> impl FnOnce(lca_core::Error) -> CliError {
    move |e| {
        let base = CliError::from(e);
        CliError { message: format!("{what}: {}", base.message), ..base }
    }
}

#[derive(Debug, Parser)]
#[command(name = "lca", version, about = "Orthogonal luminance decoupling on the Stiefel manifold")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a decoupler on image pairs.
    Train(TrainArgs),
    /// Variance shares of OLD and baseline decompositions for one pair.
    Analyze(AnalyzeArgs),
    /// Scale the principal or residual component of an image.
    Apply(ApplyArgs),
    /// PSNR, SSIM and histogram matching score between two images.
    Metrics(MetricsArgs),
    /// Orthogonality error and Gram grid of a model's decoder.
    OrthoCheck(OrthoCheckArgs),
    /// Write a synthetic exposure pair.
    SynthPair(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Optimizer {
    Geometric,
    Penalty,
}

impl Optimizer {
    fn name(self) -> &'static str {
        match self {
            Optimizer::Geometric => "geometric",
            Optimizer::Penalty => "penalty",
        }
    }
}

fn parse_step(s: &str) -> Result<StepSize, String> {
    s.parse().map_err(|e: lca_core::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<PerturbMode, String> {
    s.parse().map_err(|e: lca_core::Error| e.to_string())
}

/// Optimization settings shared by `train` and `analyze`.
#[derive(Debug, Clone, Args)]
pub struct OptimArgs {
    /// Latent dimension k (number of luminance-related components).
    #[arg(short = 'k', long = "latent-dim", default_value_t = 1)]
    pub latent_dim: usize,
    /// Patch size p; features have 3·p² entries.
    #[arg(long = "patch", default_value_t = 1)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 5000)]
    pub max_iters: usize,
    /// Step size: `auto` (1/L) or a positive number.
    #[arg(long, default_value = "auto", value_parser = parse_step)]
    pub step: StepSize,
    #[arg(long, default_value_t = 1e-8)]
    pub grad_tol: f64,
    /// Mini-batch size (full batch when omitted).
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Fail if the loss rises during training.
    #[arg(long)]
    pub strict: bool,
}

impl Default for OptimArgs {
    fn default() -> Self {
        Self {
            latent_dim: 1,
            patch_size: 1,
            seed: 42,
            max_iters: 5000,
            step: StepSize::Auto,
            grad_tol: 1e-8,
            batch_size: None,
            strict: false,
        }
    }
}

impl OptimArgs {
    fn config(&self) -> CliResult<OptimConfig> {
        let cfg = OptimConfig {
            step_size: self.step,
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            seed: self.seed,
            batch_size: self.batch_size,
            strict_descent: self.strict,
        };
        cfg.validate().map_err(|e| CliError::io(e.to_string()))?;
        Ok(cfg)
    }

    fn check_dims(&self, channels: usize) -> CliResult<usize> {
        if self.patch_size == 0 {
            return Err(CliError::io("--patch must be positive"));
        }
        let c = feature_dim(channels, self.patch_size);
        if self.latent_dim == 0 || self.latent_dim >= c {
            return Err(CliError::io(format!(
                "--latent-dim must satisfy 1 <= k < {c} for {channels}-channel images with patch size {}",
                self.patch_size
            )));
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Directory of `<stem>.in.<ext>` / `<stem>.gt.<ext>` pairs.
    pub pairs_dir: Option<PathBuf>,
    /// File listing `input gt` pairs; takes precedence over the directory.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, value_enum, default_value_t = Optimizer::Geometric)]
    pub optimizer: Optimizer,
    /// Penalty weight for `--optimizer penalty`.
    #[arg(long, default_value_t = 10.0)]
    pub mu: f64,
    /// Subtract the mean difference before training.
    #[arg(long)]
    pub center: bool,
    /// Model file to write.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Descent trace CSV (default: `<model stem>.trace.csv` beside the model).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Comma-separated list of ycbcr, hsv, lab, retinex, fourier, old, or `all`.
    #[arg(long, default_value = "all")]
    pub methods: String,
    /// Use this model for the OLD rows instead of training one.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Train the in-line OLD model on uncentered differences.
    #[arg(long)]
    pub uncentered: bool,
    /// CSV output (stdout when omitted).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Also write a JSON document with one panel per method.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ApplyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: f64,
    /// `principal` or `residual`.
    #[arg(long, default_value = "principal", value_parser = parse_mode)]
    pub mode: PerturbMode,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct MetricsArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    /// Average SSIM over color channels instead of using luma.
    #[arg(long)]
    pub per_channel: bool,
    /// Write the document here as well as to stdout.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OrthoCheckArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Grid CSV output (stdout when omitted).
    #[arg(long)]
    pub grid: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ImageKind {
    Png,
    Ppm,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "synth")]
    pub stem: String,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    #[arg(long, default_value_t = 1.4)]
    pub gain: f64,
    #[arg(long, default_value_t = 1.2)]
    pub gamma: f64,
    #[arg(long, value_enum, default_value_t = ImageKind::Png)]
    pub format: ImageKind,
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Results go to stdout, diagnostics to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match with_thread_limit(|| execute(&cli.command)) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("lca: {e}");
            e.code
        }
    }
}

fn with_thread_limit<T: Send>(f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    match std::env::var(THREADS_ENV) {
        Err(_) => f(),
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| CliError::io(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::io(format!("cannot start thread pool: {e}")))?;
            pool.install(f)
        }
    }
}

/// Runs one command and returns its stdout text.
pub fn execute(command: &Command) -> CliResult<String> {
    match command {
        Command::Train(a) => cmd_train(a).map(|s| s.to_string()),
        Command::Analyze(a) => cmd_analyze(a).map(|r| r.stdout),
        Command::Apply(a) => cmd_apply(a).map(|p| format!("wrote {}\n", p.display())),
        Command::Metrics(a) => cmd_metrics(a).map(|m| m.to_json() + "\n"),
        Command::OrthoCheck(a) => cmd_ortho_check(a).map(|r| r.stdout),
        Command::SynthPair(a) => {
            cmd_synth_pair(a).map(|(i, g)| format!("wrote {}\nwrote {}\n", i.display(), g.display()))
        }
    }
}

fn check_output_path(path: &Path) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !dir.is_dir() {
        return Err(CliError::io(format!("output directory {} does not exist", dir.display())));
    }
    if path.is_dir() {
        return Err(CliError::io(format!("output path {} is a directory", path.display())));
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    write_atomic(path, text.as_bytes()).map_err(context(path.display()))
}

fn load(path: &Path) -> CliResult<ImageBuffer> {
    load_image(path).map_err(context(path.display()))
}

fn load_pair(pair: &ImagePair) -> CliResult<(ImageBuffer, ImageBuffer)> {
    let (input, gt) = rayon::join(|| load(&pair.input), || load(&pair.gt));
    let (input, gt) = (input?, gt?);
    if !input.same_shape(&gt) {
        return Err(CliError::io(format!(
            "{} is {}x{}x{} but {} is {}x{}x{}",
            pair.input.display(),
            input.width(),
            input.height(),
            input.channels(),
            pair.gt.display(),
            gt.width(),
            gt.height(),
            gt.channels()
        )));
    }
    Ok((input, gt))
}

fn concat_columns(parts: &[Matrix]) -> CliResult<Matrix> {
    let rows = parts[0].rows();
    let n: usize = parts.iter().map(Matrix::cols).sum();
    let mut data = vec![0.0; rows * n];
    let mut offset = 0;
    for m in parts {
        for i in 0..rows {
            data[i * n + offset..i * n + offset + m.cols()].copy_from_slice(m.row(i));
        }
        offset += m.cols();
    }
    Ok(Matrix::new(rows, n, data)?)
}

/// Result of `train`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub model_path: PathBuf,
    pub trace_path: PathBuf,
    pub pairs: usize,
    pub samples: usize,
    pub iterations: usize,
    pub final_loss: f64,
    pub ortho_error: f64,
}

impl fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model: {}", self.model_path.display())?;
        writeln!(f, "trace: {}", self.trace_path.display())?;
        writeln!(f, "pairs: {}", self.pairs)?;
        writeln!(f, "samples: {}", self.samples)?;
        writeln!(f, "iterations: {}", self.iterations)?;
        writeln!(f, "final_loss: {:e}", self.final_loss)?;
        writeln!(f, "ortho_error: {:e}", self.ortho_error)
    }
}

fn default_trace_path(model: &Path) -> PathBuf {
    let mut name = model.file_stem().map(OsString::from).unwrap_or_else(|| OsString::from("model"));
    name.push(".trace.csv");
    model.with_file_name(name)
}

/// Trains on every pair and writes the model file and descent trace.
pub fn cmd_train(args: &TrainArgs) -> CliResult<TrainSummary> {
    let pairs = match (&args.manifest, &args.pairs_dir) {
        (Some(m), _) => read_manifest(m)?,
        (None, Some(d)) => discover_pairs(d)?,
        (None, None) => return Err(CliError::io("give a pairs directory or --manifest")),
    };
    let cfg = args.optim.config()?;
    if args.optimizer == Optimizer::Penalty && !(args.mu.is_finite() && args.mu >= 0.0) {
        return Err(CliError::io(format!("--mu must be finite and >= 0, got {}", args.mu)));
    }
    let trace_path = args.trace.clone().unwrap_or_else(|| default_trace_path(&args.out));
    check_output_path(&args.out)?;
    check_output_path(&trace_path)?;

    let images: Vec<(ImageBuffer, ImageBuffer)> = pairs.par_iter().map(load_pair).collect::<CliResult<_>>()?;
    let channels = images[0].0.channels();
    if let Some((i, _)) = images.iter().enumerate().find(|(_, (img, _))| img.channels() != channels) {
        return Err(CliError::io(format!("{} has a different channel count", pairs[i].input.display())));
    }
    args.optim.check_dims(channels)?;
    let features: Vec<Matrix> = images
        .par_iter()
        .zip(&pairs)
        .map(|((input, gt), pair)| {
            let diff = DifferenceImage::new(gt, input).map_err(context(&pair.stem))?;
            Ok(diff.to_dataset(args.optim.patch_size).map_err(context(pair.input.display()))?.samples().clone())
        })
        .collect::<CliResult<_>>()?;
    let data = DifferenceDataset::new(concat_columns(&features)?)?.with_centering(args.center);

    let k = args.optim.latent_dim;
    let (text, trace, ortho_error) = match args.optimizer {
        Optimizer::Geometric => {
            let (model, trace) = train(&data, k, &cfg)?;
            (model.to_model_file(Optimizer::Geometric.name()), trace, model.w_dec().orthogonality_error())
        }
        Optimizer::Penalty => {
            let (model, trace) = train_penalty_baseline(&data, k, args.mu, &cfg)?;
            (model.to_model_file(), trace, model.orthogonality_error())
        }
    };
    write_text(&args.out, &text)?;
    write_text(&trace_path, &trace.to_csv())?;
    Ok(TrainSummary {
        model_path: args.out.clone(),
        trace_path,
        pairs: pairs.len(),
        samples: data.len(),
        iterations: trace.len(),
        final_loss: trace.final_loss(),
        ortho_error,
    })
}

/// One requested analysis method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalysisMethod {
    Baseline(Method),
    Old,
}

/// Parses a comma-separated method list; `all` expands to every baseline
/// followed by OLD.
pub fn parse_methods(list: &str) -> CliResult<Vec<AnalysisMethod>> {
    let mut out = Vec::new();
    let mut push = |m: AnalysisMethod| {
        if !out.contains(&m) {
            out.push(m);
        }
    };
    for token in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match token.to_ascii_lowercase().as_str() {
            "all" => {
                Method::ALL.into_iter().for_each(|m| push(AnalysisMethod::Baseline(m)));
                push(AnalysisMethod::Old);
            }
            "old" => push(AnalysisMethod::Old),
            other => {
                push(AnalysisMethod::Baseline(other.parse().map_err(|e: lca_core::Error| CliError::io(e.to_string()))?))
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::io("--methods lists no methods"));
    }
    Ok(out)
}

/// Result of `analyze`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeReport {
    pub reports: Vec<VarianceReport>,
    pub csv: String,
    pub stdout: String,
}

/// Variance shares of the requested decompositions of `gt − input`.
///
/// The in-line OLD model is trained on mean-centered differences unless
/// `--uncentered` is given, since the shares are centered statistics.
pub fn cmd_analyze(args: &AnalyzeArgs) -> CliResult<AnalyzeReport> {
    let methods = parse_methods(&args.methods)?;
    let cfg = args.optim.config()?;
    for p in args.out.iter().chain(&args.json) {
        check_output_path(p)?;
    }
    let model = args
        .model
        .as_ref()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(format!("{}: {e}", p.display())))?;
            OldModel::from_model_file(&text).map_err(context(p.display()))
        })
        .transpose()?;
    let pair = ImagePair { stem: "analyze".into(), input: args.input.clone(), gt: args.gt.clone() };
    let (input, gt) = load_pair(&pair)?;
    let diff = DifferenceImage::new(&gt, &input)?;

    let reports: Vec<VarianceReport> = methods
        .par_iter()
        .map(|m| match m {
            AnalysisMethod::Baseline(b) => Ok(baseline_variance_report(*b, &diff)?),
            AnalysisMethod::Old => old_report(args, model.as_ref(), &diff, &cfg),
        })
        .collect::<CliResult<_>>()?;
    for r in &reports {
        r.check()?;
    }
    let csv = VarianceReport::to_csv(&reports);
    if let Some(p) = &args.out {
        write_text(p, &csv)?;
    }
    if let Some(p) = &args.json {
        write_text(p, &(VarianceReport::to_json(&reports) + "\n"))?;
    }
    let stdout = if args.out.is_none() { csv.clone() } else { String::new() };
    Ok(AnalyzeReport { reports, csv, stdout })
}

fn patch_for(c: usize, channels: usize) -> CliResult<usize> {
    let p = (1..=c).find(|p| feature_dim(channels, *p) >= c).unwrap_or(0);
    if p == 0 || feature_dim(channels, p) != c {
        return Err(CliError::io(format!("model dimension c={c} does not fit {channels}-channel patches")));
    }
    Ok(p)
}

fn old_report(
    args: &AnalyzeArgs,
    model: Option<&OldModel>,
    diff: &DifferenceImage,
    cfg: &OptimConfig,
) -> CliResult<VarianceReport> {
    match model {
        Some(m) => {
            let p = patch_for(m.c(), diff.channels())?;
            let data = diff.to_dataset(p)?;
            Ok(variance_report(m, &data)?)
        }
        None => {
            args.optim.check_dims(diff.channels())?;
            let data = diff.to_dataset(args.optim.patch_size)?.with_centering(!args.uncentered);
            let (m, _) = train(&data, args.optim.latent_dim, cfg)?;
            Ok(variance_report(&m, &data)?)
        }
    }
}

fn read_model(path: &Path) -> CliResult<OldModel> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    OldModel::from_model_file(&text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

/// Writes `image` with one component scaled by `alpha`.
pub fn cmd_apply(args: &ApplyArgs) -> CliResult<PathBuf> {
    if !args.alpha.is_finite() {
        return Err(CliError::io("--alpha must be finite"));
    }
    check_output_path(&args.out)?;
    let model = read_model(&args.model)?;
    let img = load(&args.image)?;
    let p = patch_for(model.c(), img.channels())?;
    let features = image_features(&img, p)?;
    let out = apply_coefficient(&model, &features, args.alpha, args.mode)?;
    let result = features_to_image(&out, &img, p)?;
    save_image(&result, &args.out).map_err(context(args.out.display()))?;
    Ok(args.out.clone())
}

/// PSNR, SSIM and histogram matching score.
pub fn cmd_metrics(args: &MetricsArgs) -> CliResult<Metrics> {
    if let Some(p) = &args.out {
        check_output_path(p)?;
    }
    let (a, b) = rayon::join(|| load(&args.a), || load(&args.b));
    let (a, b) = (a?, b?);
    if !a.same_shape(&b) {
        return Err(CliError::io(format!("{} and {} differ in shape", args.a.display(), args.b.display())));
    }
    let mode = if args.per_channel { SsimMode::PerChannel } else { SsimMode::Luma };
    let metrics = Metrics {
        psnr: lca_core::imaging::psnr(&a, &b)?,
        ssim: lca_core::imaging::ssim_with(&a, &b, mode)?,
        hist_match: lca_core::imaging::histogram_match_score(&a, &b)?,
    };
    if let Some(p) = &args.out {
        write_text(p, &(metrics.to_json() + "\n"))?;
    }
    Ok(metrics)
}

/// Result of `ortho-check`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoReport {
    pub error: f64,
    pub grid: Matrix,
    pub grid_csv: String,
    pub stdout: String,
}

/// `W̃ᵀW̃` as CSV with a `col_1,…,col_k` header.
pub fn grid_csv(grid: &Matrix) -> String {
    let header: Vec<String> = (1..=grid.cols()).map(|j| format!("col_{j}")).collect();
    let mut out = header.join(",") + "\n";
    for i in 0..grid.rows() {
        let row: Vec<String> = grid.row(i).iter().map(|v| format!("{v:.17e}")).collect();
        out += &(row.join(",") + "\n");
    }
    out
}

/// Reports the decoder's orthogonality error and Gram grid.
pub fn cmd_ortho_check(args: &OrthoCheckArgs) -> CliResult<OrthoReport> {
    if let Some(p) = &args.grid {
        check_output_path(p)?;
    }
    let model = read_model(&args.model)?;
    let (grid, error) = orthogonality_report(&model);
    let csv = grid_csv(&grid);
    let mut stdout = String::new();
    let _ = writeln!(stdout, "ortho_error: {error:e}");
    match &args.grid {
        Some(p) => write_text(p, &csv)?,
        None => stdout.push_str(&csv),
    }
    Ok(OrthoReport { error, grid, grid_csv: csv, stdout })
}

/// Writes `<stem>.in.<ext>` and `<stem>.gt.<ext>` into `out_dir`.
pub fn cmd_synth_pair(args: &SynthArgs) -> CliResult<(PathBuf, PathBuf)> {
    if !args.out_dir.is_dir() {
        return Err(CliError::io(format!("{} is not a directory", args.out_dir.display())));
    }
    if args.stem.is_empty() || args.stem.contains(std::path::is_separator) {
        return Err(CliError::io("--stem must be a plain file name"));
    }
    let ext = match args.format {
        ImageKind::Png => "png",
        ImageKind::Ppm => "ppm",
    };
    let (input, gt) = synth_pair(args.width, args.height, args.gain, args.gamma)?;
    let in_path = args.out_dir.join(format!("{}.in.{ext}", args.stem));
    let gt_path = args.out_dir.join(format!("{}.gt.{ext}", args.stem));
    save_image(&input, &in_path).map_err(context(in_path.display()))?;
    save_image(&gt, &gt_path).map_err(context(gt_path.display()))?;
    Ok((in_path, gt_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_lists() {
        assert_eq!(parse_methods("all").unwrap().len(), 6);
        assert_eq!(
            parse_methods("ycbcr, old,ycbcr").unwrap(),
            vec![AnalysisMethod::Baseline(Method::YCbCr), AnalysisMethod::Old]
        );
        assert_eq!(parse_methods("xyz").unwrap_err().code, 2);
        assert!(parse_methods(" , ").is_err());
    }

    #[test]
    fn patch_inference() {
        assert_eq!(patch_for(3, 3).unwrap(), 1);
        assert_eq!(patch_for(12, 3).unwrap(), 2);
        assert_eq!(patch_for(9, 1).unwrap(), 3);
        assert!(patch_for(5, 3).is_err());
    }

    #[test]
    fn core_errors_map_to_exit_codes() {
        assert_eq!(CliError::from(lca_core::Error::DegenerateData("x".into())).code, 3);
        assert_eq!(CliError::from(lca_core::Error::ShapeMismatch("x".into())).code, 2);
    }

    #[test]
    fn trace_path_defaults_next_to_model() {
        assert_eq!(default_trace_path(Path::new("out/m.json")), PathBuf::from("out/m.trace.csv"));
    }

    #[test]
    fn grid_layout() {
        let csv = grid_csv(&Matrix::identity(2));
        assert!(csv.starts_with("col_1,col_2\n1.0"));
        assert_eq!(csv.lines().count(), 3);
    }
}
