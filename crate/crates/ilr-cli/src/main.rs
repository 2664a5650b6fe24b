//! `ilr`: dataset generation, training, sequential training, evaluation,
//! batch prediction, and plot-ready curve emission for the mixture of local
//! regressors.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/file error, 3 numerical or
//! invariant failure.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use ilr_core::data::{
    chirp_batches, cubic, load_csv, save_csv, sinc_hetero, sine_gaps, step, two_link_arm, Dataset,
};
use ilr_core::metrics::evaluate;
use ilr_core::model::DEFAULT_ACTIVE_THRESHOLD;
use ilr_core::vbem::{fit, sequential_update};
use ilr_core::{
    Error, FeatureMap, FitConfig, GatingPriorKind, Hyperparams, InitKind, MixturePosterior,
    ModelDims, PredictOptions, Predictor,
};

#[derive(Parser)]
#[command(
    name = "ilr",
    version,
    about = "Infinite mixture of Bayesian local polynomial regressors",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark dataset as CSV
    Generate(GenerateArgs),
    /// Fit a model to a CSV dataset and write it as JSON
    Train(TrainArgs),
    /// Fit the first batch, then apply Bayesian sequential updates
    TrainSeq(TrainSeqArgs),
    /// Evaluate a saved model on a CSV test set
    Eval(EvalArgs),
    /// Batch predictions for a CSV of query inputs
    Predict(PredictArgs),
    /// Emit plot-ready prediction curves over a 1-D grid
    Curves(CurvesArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    /// Heteroscedastic sinc on [-10, 10]
    Sinc,
    /// Sine with two unobserved input gaps
    SineGaps,
    /// Piecewise-constant step function
    Step,
    /// Piecewise cubic polynomials
    Cubic,
    /// Down-chirp; batches partition x left to right
    Chirp,
    /// Two-link arm inverse dynamics (6 inputs, 2 torques)
    Arm,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Random,
    Kmeans,
}

#[derive(Clone, Copy, ValueEnum)]
enum GatingArg {
    StickBreaking,
    Dirichlet,
}

#[derive(Args)]
struct GenerateArgs {
    /// Which benchmark generator to run
    #[arg(long, value_enum)]
    dataset: DatasetArg,
    /// Number of rows (per batch for chirp, total otherwise)
    #[arg(long)]
    n: usize,
    /// Generator seed [default: 0]
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Split into this many localized batch files <out>.b<i>.csv [default: 1]
    #[arg(long, default_value_t = 1)]
    batches: usize,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

/// Training knobs shared by `train` and `train-seq`. Every flag here may
/// also be given in a `--config` file under the same key; flags win.
#[derive(Args)]
struct TrainOpts {
    /// Gate input dimension m_x
    #[arg(long)]
    mx: usize,
    /// Target dimension d
    #[arg(long = "d")]
    d: usize,
    /// Per-dimension polynomial feature degree [default: 1]
    #[arg(long)]
    degree: Option<usize>,
    /// Truncation level K_max [default: 25]
    #[arg(long)]
    kmax: Option<usize>,
    /// Concentration of the gating prior [default: 1.0]
    #[arg(long)]
    alpha: Option<f64>,
    /// Gating prior family [default: stick-breaking]
    #[arg(long, value_enum)]
    gating: Option<GatingArg>,
    /// Master seed for initialization and restarts [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Iteration cap per restart [default: 200]
    #[arg(long)]
    max_iters: Option<usize>,
    /// Relative ELBO change declaring convergence [default: 1e-6]
    #[arg(long)]
    elbo_rel_tol: Option<f64>,
    /// Responsibility initialization [default: kmeans]
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    /// Number of restarts, best ELBO kept [default: 10]
    #[arg(long)]
    restarts: Option<usize>,
    /// Stochastic minibatch size, 0 = full batch [default: 0]
    #[arg(long)]
    minibatch: Option<usize>,
    /// Stochastic step-size offset tau [default: 1.0]
    #[arg(long)]
    step_tau: Option<f64>,
    /// Stochastic step-size decay kappa in (0.5, 1] [default: 0.7]
    #[arg(long)]
    step_kappa: Option<f64>,
    /// Omit the output-dimension factor on the E-step feature quadratic
    /// [default: false]
    #[arg(long)]
    unscaled_feature_quadratic: Option<bool>,
    /// Standardize inputs and targets before fitting [default: true]
    #[arg(long)]
    standardize: Option<bool>,
    /// Flat key=value file with the keys above; flags win over file values
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training CSV with mx input columns then d target columns
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    opts: TrainOpts,
    /// Output model JSON path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainSeqArgs {
    /// Batch CSVs in arrival order, each mx input then d target columns
    #[arg(long, num_args = 1.., required = true)]
    data: Vec<PathBuf>,
    #[command(flatten)]
    opts: TrainOpts,
    /// Output model JSON path
    #[arg(long)]
    out: PathBuf,
    /// CSV receiving one accumulated-data NMSE row per batch
    #[arg(long)]
    curve: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Saved model JSON
    #[arg(long)]
    model: PathBuf,
    /// Test CSV with the model's input columns then target columns
    #[arg(long)]
    data: PathBuf,
    /// Occupancy threshold for counting active components [default: 1.0]
    #[arg(long)]
    threshold: Option<f64>,
    /// Seed recorded in the report [default: 0]
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print the report as JSON instead of the aligned table
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct PredictArgs {
    /// Saved model JSON
    #[arg(long)]
    model: PathBuf,
    /// Query CSV: input columns only, or inputs plus targets to also score
    /// per-row predictive log-density
    #[arg(long)]
    data: PathBuf,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CurvesArgs {
    /// Saved model JSON (1-D input models only)
    #[arg(long)]
    model: PathBuf,
    /// Grid as lo:hi:count, e.g. -10:10:200
    #[arg(long, allow_hyphen_values = true)]
    grid: String,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Lib(e) => match e {
                Error::InvalidArgument(_) => 1,
                Error::Data(_)
                | Error::Io(_)
                | Error::MalformedPayload(_)
                | Error::VersionMismatch { .. } => 2,
                Error::Numerical(_) | Error::InvariantViolation(_) => 3,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) => m.clone(),
            Failure::Lib(e) => e.to_string(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::TrainSeq(a) => cmd_train_seq(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Curves(a) => cmd_curves(a),
    }
}

// ---------------------------------------------------------------- config --

const CONFIG_KEYS: &[&str] = &[
    "degree",
    "kmax",
    "alpha",
    "gating",
    "seed",
    "max-iters",
    "elbo-rel-tol",
    "init",
    "restarts",
    "minibatch",
    "step-tau",
    "step-kappa",
    "unscaled-feature-quadratic",
    "standardize",
];

fn parse_config(path: &Path) -> Result<HashMap<String, String>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Lib(Error::data(format!("cannot read {}: {e}", path.display()))))?;
    let mut map = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(usage(format!(
                "{}: line {}: expected key=value",
                path.display(),
                lineno + 1
            )));
        };
        let key = key.trim().to_string();
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(usage(format!(
                "{}: unknown config key '{key}' (known: {})",
                path.display(),
                CONFIG_KEYS.join(", ")
            )));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

/// Flag value if given, else the config-file value, else the default.
fn pick<T: FromStr + Copy>(
    flag: Option<T>,
    file: &HashMap<String, String>,
    key: &str,
    default: T,
) -> Result<T, Failure> {
    if let Some(v) = flag {
        return Ok(v);
    }
    match file.get(key) {
        Some(raw) => raw
            .parse()
            .map_err(|_| usage(format!("config key '{key}': cannot parse '{raw}'"))),
        None => Ok(default),
    }
}

fn pick_enum<T: Copy>(
    flag: Option<T>,
    file: &HashMap<String, String>,
    key: &str,
    default: T,
    parse: impl Fn(&str) -> Option<T>,
    expect: &str,
) -> Result<T, Failure> {
    if let Some(v) = flag {
        return Ok(v);
    }
    match file.get(key) {
        Some(raw) => parse(raw)
            .ok_or_else(|| usage(format!("config key '{key}': expected {expect}, got '{raw}'"))),
        None => Ok(default),
    }
}

struct Resolved {
    hyper: Hyperparams,
    fmap: FeatureMap,
    cfg: FitConfig,
}

fn resolve(opts: &TrainOpts) -> Result<Resolved, Failure> {
    let file = match &opts.config {
        Some(p) => parse_config(p)?,
        None => HashMap::new(),
    };
    let degree = pick(opts.degree, &file, "degree", 1)?;
    let kmax = pick(opts.kmax, &file, "kmax", 25)?;
    let alpha = pick(opts.alpha, &file, "alpha", 1.0)?;
    let gating = pick_enum(
        opts.gating,
        &file,
        "gating",
        GatingArg::StickBreaking,
        |s| match s {
            "stick-breaking" => Some(GatingArg::StickBreaking),
            "dirichlet" => Some(GatingArg::Dirichlet),
            _ => None,
        },
        "stick-breaking | dirichlet",
    )?;
    let init = pick_enum(
        opts.init,
        &file,
        "init",
        InitArg::Kmeans,
        |s| match s {
            "random" => Some(InitArg::Random),
            "kmeans" => Some(InitArg::Kmeans),
            _ => None,
        },
        "random | kmeans",
    )?;
    let defaults = FitConfig::default();
    let cfg = FitConfig {
        max_iters: pick(opts.max_iters, &file, "max-iters", defaults.max_iters)?,
        elbo_rel_tol: pick(opts.elbo_rel_tol, &file, "elbo-rel-tol", defaults.elbo_rel_tol)?,
        seed: pick(opts.seed, &file, "seed", defaults.seed)?,
        init: match init {
            InitArg::Random => InitKind::Random,
            InitArg::Kmeans => InitKind::KMeans,
        },
        restarts: pick(opts.restarts, &file, "restarts", defaults.restarts)?,
        minibatch: pick(opts.minibatch, &file, "minibatch", defaults.minibatch)?,
        step_tau: pick(opts.step_tau, &file, "step-tau", defaults.step_tau)?,
        step_kappa: pick(opts.step_kappa, &file, "step-kappa", defaults.step_kappa)?,
        unscaled_feature_quadratic: pick(
            opts.unscaled_feature_quadratic,
            &file,
            "unscaled-feature-quadratic",
            defaults.unscaled_feature_quadratic,
        )?,
        standardize: pick(opts.standardize, &file, "standardize", defaults.standardize)?,
    };
    let fmap = if degree == 1 {
        FeatureMap::affine(opts.mx)?
    } else {
        FeatureMap::polynomial(opts.mx, degree)?
    };
    let dims = ModelDims {
        input_dim: opts.mx,
        feature_dim: fmap.output_dim(),
        output_dim: opts.d,
    };
    let hyper = Hyperparams::default_for(
        dims,
        kmax,
        match gating {
            GatingArg::StickBreaking => GatingPriorKind::StickBreaking,
            GatingArg::Dirichlet => GatingPriorKind::FiniteDirichlet,
        },
        alpha,
    )?;
    Ok(Resolved { hyper, fmap, cfg })
}

// -------------------------------------------------------------- generate --

fn cmd_generate(a: GenerateArgs) -> Result<(), Failure> {
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    if a.batches == 0 {
        return Err(usage("--batches must be at least 1"));
    }
    let sets: Vec<Dataset> = match a.dataset {
        DatasetArg::Chirp => chirp_batches(a.batches, a.n, a.seed),
        DatasetArg::Sinc => split_localized(sinc_hetero(a.n, a.seed), a.batches, true)?,
        DatasetArg::SineGaps => split_localized(sine_gaps(a.n, a.seed), a.batches, true)?,
        DatasetArg::Step => split_localized(step(a.n, a.seed), a.batches, true)?,
        DatasetArg::Cubic => split_localized(cubic(a.n, a.seed), a.batches, true)?,
        // Arm rows are trajectory-ordered, so plain chunks are localized.
        DatasetArg::Arm => split_localized(two_link_arm(a.n, a.seed), a.batches, false)?,
    };
    if sets.len() == 1 {
        save_csv(&sets[0], &a.out)?;
        println!("wrote {} ({} rows)", a.out.display(), sets[0].len());
    } else {
        for (i, ds) in sets.iter().enumerate() {
            let path = batch_path(&a.out, i);
            save_csv(ds, &path)?;
            println!("wrote {} ({} rows)", path.display(), ds.len());
        }
    }
    Ok(())
}

/// `out.csv` -> `out.b<i>.csv`.
fn batch_path(out: &Path, i: usize) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("batch");
    let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    out.with_file_name(format!("{stem}.b{i}.{ext}"))
}

/// Splits into `batches` contiguous chunks, sorting by the first input
/// column first when asked, so each chunk covers a localized input region.
fn split_localized(ds: Dataset, batches: usize, sort_by_x: bool) -> Result<Vec<Dataset>, Failure> {
    if batches == 1 {
        return Ok(vec![ds]);
    }
    if batches > ds.len() {
        return Err(usage(format!(
            "--batches {batches} exceeds the {} generated rows",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    if sort_by_x {
        order.sort_by(|&i, &j| ds.inputs[(i, 0)].partial_cmp(&ds.inputs[(j, 0)]).unwrap());
    }
    let n = ds.len();
    let base = n / batches;
    let extra = n % batches;
    let mut out = Vec::with_capacity(batches);
    let mut start = 0usize;
    for b in 0..batches {
        let len = base + usize::from(b < extra);
        let rows = &order[start..start + len];
        start += len;
        let inputs = DMatrix::from_fn(rows.len(), ds.input_dim(), |i, j| ds.inputs[(rows[i], j)]);
        let targets =
            DMatrix::from_fn(rows.len(), ds.output_dim(), |i, j| ds.targets[(rows[i], j)]);
        out.push(Dataset::new(inputs, targets, format!("{}_b{b}", ds.name))?);
    }
    Ok(out)
}

// ----------------------------------------------------------------- train --

fn train_summary(model: &MixturePosterior, rows: usize) -> String {
    format!(
        "fit {} rows: {} active components, final ELBO {:.6}, {} iterations, converged {}",
        rows,
        model.active_components(DEFAULT_ACTIVE_THRESHOLD),
        model.fit_meta.final_elbo,
        model.fit_meta.iterations,
        model.fit_meta.converged
    )
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let res = resolve(&a.opts)?;
    let ds = load_csv(&a.data, a.opts.mx, a.opts.d)?;
    let model = fit(&ds, &res.fmap, &res.hyper, &res.cfg)?;
    model.save(&a.out)?;
    println!("{}", train_summary(&model, ds.len()));
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_train_seq(a: TrainSeqArgs) -> Result<(), Failure> {
    let res = resolve(&a.opts)?;
    let mut batches = Vec::with_capacity(a.data.len());
    for path in &a.data {
        batches.push(load_csv(path, a.opts.mx, a.opts.d)?);
    }
    let mut curve = String::from("batch,n_seen,nmse,active_components\n");
    let mut model = fit(&batches[0], &res.fmap, &res.hyper, &res.cfg)?;
    let mut seen: Vec<Dataset> = vec![batches[0].clone()];
    for b in 0..batches.len() {
        if b > 0 {
            model = sequential_update(&model, &batches[b], &res.cfg)?;
            seen.push(batches[b].clone());
        }
        let union = Dataset::concat(&seen)?;
        let report = evaluate(&model, &union, DEFAULT_ACTIVE_THRESHOLD, res.cfg.seed)?;
        writeln!(curve, "{},{},{},{}", b, union.len(), report.nmse, report.active_components)
            .expect("string write");
        println!("batch {b}: accumulated NMSE {:.6} over {} rows", report.nmse, union.len());
    }
    std::fs::write(&a.curve, curve)
        .map_err(|e| Error::data(format!("cannot write {}: {e}", a.curve.display())))?;
    model.save(&a.out)?;
    println!("wrote {} and {}", a.out.display(), a.curve.display());
    Ok(())
}

// ---------------------------------------------------------- eval/predict --

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    let model = MixturePosterior::load(&a.model)?;
    let dims = model.dims();
    let ds = load_csv(&a.data, dims.input_dim, dims.output_dim)?;
    let threshold = a.threshold.unwrap_or(DEFAULT_ACTIVE_THRESHOLD);
    let report = evaluate(&model, &ds, threshold, a.seed)?;
    if a.json {
        println!("{}", report.to_json()?);
    } else {
        println!("{report}");
    }
    Ok(())
}

/// Reads a query CSV whose rows are either inputs only or inputs followed by
/// targets; anything else is rejected with the line count that disagrees.
fn read_queries(
    path: &Path,
    mx: usize,
    d: usize,
) -> Result<(DMatrix<f64>, Option<DMatrix<f64>>), Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Lib(Error::data(format!("cannot read {}: {e}", path.display()))))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: Result<Vec<f64>, _> =
            line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        match parsed {
            Err(_) if lineno == 1 => continue, // header
            Err(_) => {
                return Err(Failure::Lib(Error::data(format!(
                    "{}: line {lineno}: non-numeric value",
                    path.display()
                ))));
            }
            Ok(vals) => {
                if vals.iter().any(|v| !v.is_finite()) {
                    return Err(Failure::Lib(Error::data(format!(
                        "{}: line {lineno}: non-finite value",
                        path.display()
                    ))));
                }
                match width {
                    None => width = Some(vals.len()),
                    Some(w) if w != vals.len() => {
                        return Err(Failure::Lib(Error::data(format!(
                            "{}: line {lineno}: expected {w} fields, found {}",
                            path.display(),
                            vals.len()
                        ))));
                    }
                    _ => {}
                }
                rows.push(vals);
            }
        }
    }
    let Some(width) = width else {
        return Err(Failure::Lib(Error::data(format!("{}: no data rows", path.display()))));
    };
    let with_targets = if width == mx {
        false
    } else if width == mx + d {
        true
    } else {
        return Err(Failure::Lib(Error::data(format!(
            "{}: rows have {width} fields; the model expects {mx} inputs \
             (optionally plus {d} targets)",
            path.display()
        ))));
    };
    let n = rows.len();
    let inputs = DMatrix::from_fn(n, mx, |i, j| rows[i][j]);
    let targets = with_targets.then(|| DMatrix::from_fn(n, d, |i, j| rows[i][mx + j]));
    Ok((inputs, targets))
}

fn cmd_predict(a: PredictArgs) -> Result<(), Failure> {
    let model = MixturePosterior::load(&a.model)?;
    let dims = model.dims();
    let (inputs, targets) = read_queries(&a.data, dims.input_dim, dims.output_dim)?;
    let predictor = Predictor::new(&model, PredictOptions::default())?;
    let preds = predictor.predict_batch(&inputs, targets.as_ref())?;

    let d = dims.output_dim;
    let mut out = String::new();
    for field in ["mean", "mode", "std"] {
        for j in 0..d {
            let _ = write!(out, "{field}_{j},");
        }
    }
    if targets.is_some() {
        out.push_str("log_density\n");
    } else {
        out.pop();
        out.push('\n');
    }
    for p in &preds {
        let std = p.std();
        for j in 0..d {
            let _ = write!(out, "{},", p.mean[j]);
        }
        for j in 0..d {
            let _ = write!(out, "{},", p.mode[j]);
        }
        for j in 0..d {
            let _ = write!(out, "{},", std[j]);
        }
        match p.log_density {
            Some(ld) => {
                let _ = writeln!(out, "{ld}");
            }
            None => {
                out.pop();
                out.push('\n');
            }
        }
    }
    std::fs::write(&a.out, out)
        .map_err(|e| Error::data(format!("cannot write {}: {e}", a.out.display())))?;
    println!("wrote {} ({} rows)", a.out.display(), preds.len());
    Ok(())
}

// ---------------------------------------------------------------- curves --

fn parse_grid(spec: &str) -> Result<(f64, f64, usize), Failure> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || usage(format!("--grid '{spec}': expected lo:hi:count, e.g. 0:6.283:200"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let count: usize = parts[2].parse().map_err(|_| bad())?;
    if !lo.is_finite() || !hi.is_finite() || hi <= lo || count < 2 {
        return Err(usage(format!(
            "--grid '{spec}': need finite lo < hi and count >= 2"
        )));
    }
    Ok((lo, hi, count))
}

fn cmd_curves(a: CurvesArgs) -> Result<(), Failure> {
    let model = MixturePosterior::load(&a.model)?;
    let dims = model.dims();
    if dims.input_dim != 1 {
        return Err(usage(format!(
            "curves requires a 1-D input model, this one takes {} inputs; use `ilr predict`",
            dims.input_dim
        )));
    }
    let (lo, hi, count) = parse_grid(&a.grid)?;
    let predictor = Predictor::new(&model, PredictOptions::default())?;

    let d = dims.output_dim;
    let k = model.k_max();
    let mut out = String::from("x");
    for field in ["mean", "mode", "std"] {
        if d == 1 {
            let _ = write!(out, ",{field}");
        } else {
            for j in 0..d {
                let _ = write!(out, ",{field}_{j}");
            }
        }
    }
    for kk in 0..k {
        let _ = write!(out, ",w_{kk}");
    }
    out.push('\n');

    for i in 0..count {
        let x = lo + (hi - lo) * i as f64 / (count - 1) as f64;
        let pred = predictor.predict(&nalgebra::DVector::from_element(1, x))?;
        let std = pred.std();
        let _ = write!(out, "{x}");
        for j in 0..d {
            let _ = write!(out, ",{}", pred.mean[j]);
        }
        for j in 0..d {
            let _ = write!(out, ",{}", pred.mode[j]);
        }
        for j in 0..d {
            let _ = write!(out, ",{}", std[j]);
        }
        for w in &pred.weights {
            let _ = write!(out, ",{w}");
        }
        out.push('\n');
    }
    std::fs::write(&a.out, out)
        .map_err(|e| Error::data(format!("cannot write {}: {e}", a.out.display())))?;
    println!("wrote {} ({count} rows)", a.out.display());
    Ok(())
}
