//! `survsens` command-line tool: sensitivity analyses on trial CSV files,
//! Monte Carlo calibration runs and bootstrap timing.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use survsens::data::{derive_reason, load_csv, tmax_info, TrialDataset};
use survsens::estimands::{EstimandKind, EstimandSpec};
use survsens::imputation::{SensitivityConfig, SensitivityModel};
use survsens::inference::{
    analyze_detailed, naive_bootstrap, AnalysisOptions, AnalysisReport, WeightDist, SCHEMA_VERSION,
};
use survsens::rng;
use survsens::simulation::{generate_trial, run_monte_carlo, McOptions, McTarget, SimDesign};
use survsens::step::{Continuity, StepFunction};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("invalid value for {flag}: {message}")]
    Usage { flag: &'static str, message: String },
    #[error(transparent)]
    Core(#[from] survsens::Error),
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    fn usage(flag: &'static str, message: impl Into<String>) -> Self {
        CliError::Usage {
            flag,
            message: message.into(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage { .. } => 2,
            _ => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "survsens", version, about = "Sensitivity analysis for survival treatment effects")]
struct Cli {
    /// Worker threads (0 = all cores). Never changes numerical output.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit, impute and report point estimates with Rubin and wild-bootstrap inference.
    Analyze(AnalyzeArgs),
    /// Monte Carlo calibration on a built-in simulation design.
    Simulate(SimulateArgs),
    /// Time the wild bootstrap against the resampling bootstrap.
    Bench(BenchArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum EstimandArg {
    SurvDiff,
    RmstDiff,
    WrmstDiff,
    RmtlRatio,
    QuantileDiff,
}

impl From<EstimandArg> for EstimandKind {
    fn from(e: EstimandArg) -> Self {
        match e {
            EstimandArg::SurvDiff => EstimandKind::SurvDiffAt,
            EstimandArg::RmstDiff => EstimandKind::RmstDiff,
            EstimandArg::WrmstDiff => EstimandKind::WeightedRmstDiff,
            EstimandArg::RmtlRatio => EstimandKind::RmtlRatio,
            EstimandArg::QuantileDiff => EstimandKind::QuantileDiff,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModelArg {
    Delta,
    Control,
}

impl From<ModelArg> for SensitivityModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Delta => SensitivityModel::DeltaAdjusted,
            ModelArg::Control => SensitivityModel::ControlBased,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum WeightsArg {
    Normal,
    Mammen,
    Rademacher,
}

impl From<WeightsArg> for WeightDist {
    fn from(w: WeightsArg) -> Self {
        match w {
            WeightsArg::Normal => WeightDist::Normal,
            WeightsArg::Mammen => WeightDist::Mammen,
            WeightsArg::Rademacher => WeightDist::Rademacher,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum DesignArg {
    Sim1,
    Sim2,
}

impl DesignArg {
    fn design(self, n: usize, model: ModelArg) -> SimDesign {
        let d = match self {
            DesignArg::Sim1 => SimDesign::sim1(n),
            DesignArg::Sim2 => SimDesign::sim2(n),
        };
        match model {
            ModelArg::Delta => d,
            ModelArg::Control => d.control_based(),
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum TargetArg {
    Contrast,
    Treated,
    Control,
}

/// Input file and covariate selection.
#[derive(Args, Debug)]
struct InputArgs {
    /// Trial CSV with columns id,arm,time,event,reason and the covariates.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Comma-separated covariate column names.
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    /// Classify censored rows with time >= this value as administrative, the rest as dropouts.
    #[arg(long, allow_negative_numbers = true)]
    admin_after: Option<f64>,
}

/// Estimand and sensitivity-model flags shared by `analyze` and `bench`.
#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "rmst-diff")]
    estimand: EstimandArg,
    /// Horizon (or quantile level for quantile-diff).
    #[arg(long, allow_negative_numbers = true)]
    tau: f64,
    /// CSV with columns time,weight defining a right-continuous weight (wrmst-diff only).
    #[arg(long)]
    weight_fn: Option<PathBuf>,
    /// Density bandwidth for quantile-diff.
    #[arg(long, allow_negative_numbers = true)]
    bandwidth: Option<f64>,
    #[arg(long, value_enum, default_value = "delta")]
    model: ModelArg,
    /// Hazard multiplier for treated dropouts; repeat for several analyses.
    #[arg(long = "delta", default_values_t = [1.0], allow_negative_numbers = true)]
    deltas: Vec<f64>,
    /// Hazard multiplier for control dropouts.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    control_delta: f64,
    /// Number of imputations.
    #[arg(long, default_value_t = 10)]
    m: usize,
    /// Bootstrap replicates.
    #[arg(long = "B", default_value_t = 100)]
    b: usize,
    #[arg(long, value_enum, default_value = "normal")]
    weights: WeightsArg,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
    alpha: f64,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Write imputed times as CSV (one file per delta when several are given).
    #[arg(long)]
    dump_imputations: Option<PathBuf>,
    /// Output path; `.csv` selects flat CSV rows, anything else JSON. Default: JSON on stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    design: DesignArg,
    /// Subjects per arm.
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    m: usize,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    #[arg(long = "B", default_value_t = 100)]
    b: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "delta")]
    model: ModelArg,
    /// Draws for the simulation-based truth.
    #[arg(long, default_value_t = 1_000_000)]
    oracle_draws: usize,
    /// Which quantity the CSV rows summarize.
    #[arg(long, value_enum, default_value = "contrast")]
    target: TargetArg,
    /// Output CSV path. Default: stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Generate the data from a built-in design instead of reading --input.
    #[arg(long, value_enum, conflicts_with = "input")]
    design: Option<DesignArg>,
    /// Subjects per arm for --design.
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Serialize)]
struct AnalyzeOutput<'a> {
    schema_version: u32,
    input: Option<&'a Path>,
    reports: &'a [AnalysisReport],
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::usage("--threads", e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Analyze(args) => analyze(args),
        Command::Simulate(args) => simulate(args),
        Command::Bench(args) => bench(args),
    })
}

fn load_input(args: &InputArgs) -> CliResult<TrialDataset> {
    let path = args
        .input
        .as_ref()
        .ok_or_else(|| CliError::usage("--input", "an input CSV is required"))?;
    let data = load_csv(path, &args.covariates).map_err(|e| match e {
        survsens::Error::MissingColumn(c) => {
            CliError::usage("--covariates", format!("column `{c}` not found in {}", path.display()))
        }
        other => CliError::Core(other),
    })?;
    match args.admin_after {
        Some(a) if !(a > 0.0 && a.is_finite()) => {
            Err(CliError::usage("--admin-after", format!("must be positive, got {a}")))
        }
        Some(a) => Ok(derive_reason(&data, a)?),
        None => Ok(data),
    }
}

fn read_weight_fn(path: &Path) -> CliResult<StepFunction> {
    let bad = |m: String| CliError::usage("--weight-fn", format!("{}: {m}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let mut knots = Vec::new();
    let mut values = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let num = |k: usize| {
            row.get(k)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| bad(format!("expected two numeric columns time,weight, got `{}`", row.iter().collect::<Vec<_>>().join(","))))
        };
        knots.push(num(0)?);
        values.push(num(1)?);
    }
    let first = *values.first().ok_or_else(|| bad("no rows".into()))?;
    StepFunction::new(knots, values, first, Continuity::Right).map_err(|e| bad(e.to_string()))
}

/// Build and validate the estimand and one configuration per delta.
fn build_specs(
    args: &ModelArgs,
    data: &TrialDataset,
) -> CliResult<(EstimandSpec, Vec<SensitivityConfig>, AnalysisOptions)> {
    let kind = EstimandKind::from(args.estimand);
    let weight_fn = match (&args.weight_fn, kind) {
        (Some(p), EstimandKind::WeightedRmstDiff) => Some(read_weight_fn(p)?),
        (Some(_), _) => return Err(CliError::usage("--weight-fn", "only valid with --estimand wrmst-diff")),
        (None, EstimandKind::WeightedRmstDiff) => {
            return Err(CliError::usage("--weight-fn", "required by --estimand wrmst-diff"))
        }
        (None, _) => None,
    };
    if args.bandwidth.is_some() && kind != EstimandKind::QuantileDiff {
        return Err(CliError::usage("--bandwidth", "only valid with --estimand quantile-diff"));
    }
    let spec = EstimandSpec {
        kind,
        tau: args.tau,
        weight_fn,
        bandwidth: args.bandwidth,
    };

    let t_tilde_max = tmax_info(data)?.t_tilde_max;
    if let Err(e) = spec.validate(t_tilde_max) {
        let flag = match &spec {
            s if s.weight_fn.as_ref().is_some_and(|w| w.values().iter().any(|&v| v < 0.0)) => "--weight-fn",
            s if s.bandwidth.is_some_and(|h| !(h > 0.0 && h.is_finite())) => "--bandwidth",
            _ => "--tau",
        };
        let message = match e {
            survsens::Error::InvalidSpec(m) => m,
            other => other.to_string(),
        };
        return Err(CliError::usage(flag, message));
    }
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::usage("--alpha", format!("must lie in (0, 1), got {}", args.alpha)));
    }
    if args.b < 2 {
        return Err(CliError::usage("--B", format!("must be at least 2, got {}", args.b)));
    }
    if args.m < 2 {
        return Err(CliError::usage("--m", format!("must be at least 2, got {}", args.m)));
    }
    if !(args.control_delta > 0.0 && args.control_delta.is_finite()) {
        return Err(CliError::usage(
            "--control-delta",
            format!("must be positive, got {}", args.control_delta),
        ));
    }
    let configs = args
        .deltas
        .iter()
        .map(|&d| {
            if !(d > 0.0 && d.is_finite()) {
                return Err(CliError::usage("--delta", format!("must be positive, got {d}")));
            }
            Ok(SensitivityConfig {
                model: args.model.into(),
                delta_treated: d,
                delta_control: args.control_delta,
                m: args.m,
                seed: args.seed,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let opts = AnalysisOptions {
        b: args.b,
        alpha: args.alpha,
        weights: args.weights.into(),
    };
    Ok((spec, configs, opts))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn dump_path(base: &Path, delta: f64, several: bool) -> PathBuf {
    if !several {
        return base.to_path_buf();
    }
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("imputations");
    let ext = base.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    base.with_file_name(format!("{stem}_delta{delta}.{ext}"))
}

fn analyze(args: AnalyzeArgs) -> CliResult<()> {
    let data = load_input(&args.input)?;
    let (spec, configs, opts) = build_specs(&args.model, &data)?;
    let mut reports = Vec::with_capacity(configs.len());
    for config in &configs {
        let run = analyze_detailed(&data, &spec, config, &opts)?;
        if let Some(base) = &args.dump_imputations {
            let path = dump_path(base, config.delta_treated, configs.len() > 1);
            let mut w = create(&path)?;
            run.imputed.write_csv(&mut w)?;
            w.flush()?;
        }
        for warning in &run.report.warnings {
            eprintln!("warning: {warning}");
        }
        reports.push(run.report);
    }

    let is_csv = args
        .out
        .as_ref()
        .and_then(|p| p.extension())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let mut out: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    if is_csv {
        let mut wtr = csv::Writer::from_writer(&mut out);
        wtr.write_record(AnalysisReport::CSV_HEADER)?;
        for r in &reports {
            wtr.write_record(r.csv_row())?;
        }
        wtr.flush()?;
    } else {
        let doc = AnalyzeOutput {
            schema_version: SCHEMA_VERSION,
            input: args.input.input.as_deref(),
            reports: &reports,
        };
        serde_json::to_writer_pretty(&mut out, &doc)?;
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn simulate(args: SimulateArgs) -> CliResult<()> {
    if args.n < 10 {
        return Err(CliError::usage("--n", format!("need at least 10 subjects per arm, got {}", args.n)));
    }
    if args.m < 2 {
        return Err(CliError::usage("--m", format!("must be at least 2, got {}", args.m)));
    }
    if args.b < 2 {
        return Err(CliError::usage("--B", format!("must be at least 2, got {}", args.b)));
    }
    if args.reps < 2 {
        return Err(CliError::usage("--reps", format!("must be at least 2, got {}", args.reps)));
    }
    if args.oracle_draws < 1000 {
        return Err(CliError::usage(
            "--oracle-draws",
            format!("must be at least 1000, got {}", args.oracle_draws),
        ));
    }
    let design = args.design.design(args.n, args.model);
    let opts = McOptions {
        reps: args.reps,
        m: args.m,
        b: args.b,
        seed: args.seed,
        oracle_draws: args.oracle_draws,
    };
    let report = run_monte_carlo(&design, &opts)?;
    let target = match args.target {
        TargetArg::Contrast => McTarget::Contrast,
        TargetArg::Treated => McTarget::Treated,
        TargetArg::Control => McTarget::Control,
    };
    let failures: usize = report.rows.iter().map(|r| r.failures).sum();
    if failures > 0 {
        eprintln!("warning: {failures} analyses failed and were excluded");
    }
    eprintln!(
        "truth: contrast {:.6} (se {:.2e}), treated {:.6}, control {:.6}",
        report.truth.value, report.truth.se, report.truth.treated, report.truth.control
    );
    match &args.out {
        Some(p) => {
            let mut w = create(p)?;
            report.write_csv(target, &mut w)?;
            w.flush()?;
        }
        None => report.write_csv(target, io::stdout().lock())?,
    }
    Ok(())
}

fn bench(args: BenchArgs) -> CliResult<()> {
    let data = match args.design {
        Some(d) => {
            let design = d.design(args.n, args.model.model);
            let mut r = rng::stream(args.model.seed, rng::domain::TRIAL, 0, 0);
            generate_trial(&design, &mut r)?
        }
        None => load_input(&args.input)?,
    };
    let (spec, configs, opts) = build_specs(&args.model, &data)?;
    let config = configs[0];

    let start = Instant::now();
    let run = analyze_detailed(&data, &spec, &config, &opts)?;
    let wild = start.elapsed().as_secs_f64();
    let naive = naive_bootstrap(&data, &spec, &config, opts.b, config.seed)?;

    println!("B = {}, m = {}", opts.b, config.m);
    println!(
        "wild bootstrap (full analysis): {wild:.3} s, se {:.6}",
        run.report.se_wb
    );
    println!(
        "naive bootstrap: {:.3} s, se {:.6} ({} failed resamples)",
        naive.wall_time,
        naive.variance.sqrt(),
        naive.failures
    );
    println!("ratio naive / wild: {:.2}", naive.wall_time / wild);
    Ok(())
}
