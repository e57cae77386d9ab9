use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use panel_clusters::art::{ArtOptions, OrbitChoice, Scaling, StatisticForm};
use panel_clusters::bcl::{BclSelection, BclThreshold};
use panel_clusters::cce::CceVariant;
use panel_clusters::clustering::{discover_clusters, ClusterAssignment, ThresholdConfig};
use panel_clusters::inference::{InferenceContext, LinearRestriction, MethodOptions, MethodRegistry};
use panel_clusters::longrun::KernelSpec;
use panel_clusters::montecarlo::{
    run_size_power, write_table, DgpConfig, ExperimentConfig, ExperimentMethod, TuningMode,
};
use panel_clusters::panel::{load_panel_path, DataSchema, PanelData};
use panel_clusters::tuning::{cross_validate, CvTarget, TuningGrid};
use panel_clusters::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "panelclust", version, about = "Cluster discovery and inference for panel regressions")]
struct Cli {
    /// error, warn, info, debug or trace
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the cluster structure of a panel
    Discover(DiscoverArgs),
    /// Choose bandwidth and threshold by block cross-validation
    Tune(TuneArgs),
    /// Test a linear restriction r'beta = lambda
    Infer(InferArgs),
    /// Run a Monte Carlo experiment
    Simulate(SimulateArgs),
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Delimited panel file, one row per (unit, period)
    #[arg(long)]
    input: PathBuf,
    /// Column names: unit,time,outcome,covariates..
    #[arg(long, default_value = "unit,time,y")]
    schema: String,
    /// Add a constant regressor
    #[arg(long)]
    intercept: bool,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
}

impl InputArgs {
    fn load(&self) -> Result<PanelData> {
        let schema = DataSchema::from_spec(&self.schema, self.intercept)?;
        if !self.delimiter.is_ascii() {
            return Err(Error::InvalidConfig(format!("delimiter `{}` is not ASCII", self.delimiter)));
        }
        let panel = load_panel_path(&self.input, &schema, self.delimiter as u8)?;
        info!(
            "loaded {}: N={} T={} p={}",
            self.input.display(),
            panel.n_units(),
            panel.n_periods(),
            panel.n_covariates()
        );
        Ok(panel)
    }
}

#[derive(Debug, Clone, Copy)]
enum Auto<T> {
    Auto,
    Value(T),
}

impl<T: Copy> Auto<T> {
    fn value(self) -> Option<T> {
        match self {
            Auto::Auto => None,
            Auto::Value(v) => Some(v),
        }
    }
}

fn parse_bandwidth(s: &str) -> std::result::Result<Auto<usize>, String> {
    if s == "auto" {
        return Ok(Auto::Auto);
    }
    s.parse::<usize>()
        .map(Auto::Value)
        .map_err(|_| format!("`{s}` is neither `auto` nor a non-negative integer"))
}

fn parse_eta(s: &str) -> std::result::Result<Auto<f64>, String> {
    if s == "auto" {
        return Ok(Auto::Auto);
    }
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is neither `auto` nor a number"))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(format!("threshold {v} is outside [0, 1]"));
    }
    Ok(Auto::Value(v))
}

fn parse_alpha(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if !(v > 0.0 && v < 1.0) {
        return Err(format!("alpha {v} is outside (0, 1)"));
    }
    Ok(v)
}

#[derive(Debug, Clone)]
struct MethodList(Vec<ExperimentMethod>);

fn parse_methods(s: &str) -> std::result::Result<MethodList, String> {
    let m = ExperimentMethod::parse_list(s).map_err(|e| e.to_string())?;
    if m.is_empty() {
        return Err("no methods given".into());
    }
    Ok(MethodList(m))
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Tuning {
    Cv,
    Fixed,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum CvTargetArg {
    Signed,
    Correlation,
}

impl From<CvTargetArg> for CvTarget {
    fn from(t: CvTargetArg) -> Self {
        match t {
            CvTargetArg::Signed => CvTarget::SignedCorrelation,
            CvTargetArg::Correlation => CvTarget::Correlation,
        }
    }
}

#[derive(Args, Debug)]
struct TuningArgs {
    /// HAC bandwidth, or `auto` to cross-validate
    #[arg(long, default_value = "auto", value_parser = parse_bandwidth)]
    bandwidth: Auto<usize>,
    /// Correlation threshold in [0, 1], or `auto` to cross-validate
    #[arg(long, default_value = "auto", value_parser = parse_eta)]
    eta: Auto<f64>,
    /// `fixed` requires numeric --bandwidth and --eta
    #[arg(long, value_enum, default_value = "cv")]
    tuning: Tuning,
    /// Matrix compared across blocks during cross-validation
    #[arg(long, value_enum, default_value = "signed")]
    cv_target: CvTargetArg,
}

struct Resolved {
    bandwidth: usize,
    eta_tilde: f64,
}

impl TuningArgs {
    fn check(&self) -> std::result::Result<(), String> {
        if self.tuning == Tuning::Fixed && (self.bandwidth.value().is_none() || self.eta.value().is_none()) {
            return Err("--tuning fixed needs numeric --bandwidth and --eta".into());
        }
        Ok(())
    }

    fn resolve(&self, panel: &PanelData) -> Result<Resolved> {
        if let (Some(bandwidth), Some(eta_tilde)) = (self.bandwidth.value(), self.eta.value()) {
            return Ok(Resolved { bandwidth, eta_tilde });
        }
        let default = TuningGrid::default_for(panel.n_periods())?;
        let grid = TuningGrid::new(
            self.bandwidth.value().map_or(default.bandwidths, |l| vec![l]),
            self.eta.value().map_or(default.thresholds, |e| vec![e]),
        )?;
        let cv = cross_validate(panel, &grid, self.cv_target.into())?;
        Ok(Resolved {
            bandwidth: cv.best_bandwidth,
            eta_tilde: cv.best_threshold,
        })
    }
}

#[derive(Args, Debug)]
struct DiscoverArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Cluster assignment file (unit,cluster)
    #[arg(long, default_value = "clusters.csv")]
    out: PathBuf,
    /// Also write the long-run correlation matrix here
    #[arg(long)]
    dump_matrix: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TuneArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum, default_value = "signed")]
    cv_target: CvTargetArg,
    /// Write the full cross-validation surface here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum MethodArg {
    Art,
    Cce,
    Bcl,
}

impl MethodArg {
    fn name(self) -> &'static str {
        match self {
            MethodArg::Art => "art",
            MethodArg::Cce => "cce",
            MethodArg::Bcl => "bcl",
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum VariantArg {
    Sandwich,
    Meat,
}

impl From<VariantArg> for CceVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Sandwich => CceVariant::Sandwich,
            VariantArg::Meat => CceVariant::MeatOnly,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ScalingArg {
    SqrtN,
    Unscaled,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum FormArg {
    Literal,
    StandardT,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum SelectionArg {
    Signed,
    Magnitude,
}

#[derive(Args, Debug)]
struct MethodFlags {
    /// Reject only when the statistic exceeds the critical value
    #[arg(long)]
    deterministic: bool,
    /// Sample this many sign changes instead of enumerating them
    #[arg(long)]
    orbit: Option<usize>,
    #[arg(long, value_enum, default_value = "sqrt-n")]
    scaling: ScalingArg,
    #[arg(long, value_enum, default_value = "literal")]
    form: FormArg,
    #[arg(long, value_enum, default_value = "sandwich")]
    variant: VariantArg,
    /// BCL threshold constant
    #[arg(long, default_value_t = panel_clusters::bcl::DEFAULT_BCL_CONSTANT)]
    bcl_const: f64,
    #[arg(long, value_enum, default_value = "signed")]
    bcl_selection: SelectionArg,
}

impl MethodFlags {
    fn options(&self, deterministic_default: bool) -> Result<MethodOptions> {
        if let Some(b) = self.orbit {
            if b < 2 {
                return Err(Error::InvalidConfig(format!("--orbit {b} must be at least 2")));
            }
        }
        Ok(MethodOptions {
            art: ArtOptions {
                scaling: match self.scaling {
                    ScalingArg::SqrtN => Scaling::SqrtN,
                    ScalingArg::Unscaled => Scaling::Unscaled,
                },
                form: match self.form {
                    FormArg::Literal => StatisticForm::Literal,
                    FormArg::StandardT => StatisticForm::StandardT,
                },
                orbit: self.orbit.map_or(OrbitChoice::Auto, OrbitChoice::Sampled),
                deterministic: self.deterministic || deterministic_default,
                seed: 0,
            },
            cce: self.variant.into(),
            bcl: BclThreshold::new(
                self.bcl_const,
                match self.bcl_selection {
                    SelectionArg::Signed => BclSelection::Signed,
                    SelectionArg::Magnitude => BclSelection::Magnitude,
                },
            )?,
        })
    }
}

#[derive(Args, Debug)]
struct InferArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    #[arg(long, value_enum, default_value = "art")]
    method: MethodArg,
    /// Restriction vector, comma separated
    #[arg(long, allow_hyphen_values = true)]
    r: String,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    lambda: f64,
    #[arg(long, default_value = "0.1", value_parser = parse_alpha)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use this cluster assignment (unit,cluster) instead of discovering one
    #[arg(long)]
    clusters: Option<PathBuf>,
    #[command(flatten)]
    flags: MethodFlags,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// True number of clusters
    #[arg(long, default_value_t = 5)]
    q: usize,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    t: usize,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value = "0.1", value_parser = parse_alpha)]
    alpha: f64,
    /// Hypothesised intercept
    #[arg(long, default_value_t = 1.0)]
    beta0: f64,
    /// True intercept
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 0.2)]
    rho: f64,
    #[arg(long, default_value_t = 0.2)]
    phi: f64,
    /// Comma separated: art, cce, bcl, or art_oracle, art_discovered, cce_oracle, cce_discovered
    #[arg(long, default_value = "art,cce,bcl", value_parser = parse_methods)]
    methods: MethodList,
    #[command(flatten)]
    tuning: TuningArgs,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Randomize ART at the critical value instead of the conservative rule
    #[arg(long)]
    randomized: bool,
    /// Output table; standard output when absent
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    flags: MethodFlags,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn cmd_discover(args: &DiscoverArgs) -> Result<()> {
    let panel = args.input.load()?;
    let tuned = args.tuning.resolve(&panel)?;
    info!(
        "discover: bandwidth={} eta_tilde={} tuning={:?} cv_target={:?} out={}",
        tuned.bandwidth,
        tuned.eta_tilde,
        args.tuning.tuning,
        args.tuning.cv_target,
        args.out.display()
    );
    let (clusters, matrix) = discover_clusters(
        &panel,
        KernelSpec::bartlett(tuned.bandwidth),
        &ThresholdConfig::new(tuned.eta_tilde)?,
    )?;
    let mut w = create(&args.out)?;
    clusters.write_delimited(panel.unit_ids(), &mut w)?;
    w.flush()?;
    if let Some(path) = &args.dump_matrix {
        let mut w = create(path)?;
        matrix.write_corr(&mut w)?;
        w.flush()?;
    }
    let sizes: Vec<String> = clusters.sizes().iter().map(|s| s.to_string()).collect();
    println!("bandwidth={}", tuned.bandwidth);
    println!("eta_tilde={}", tuned.eta_tilde);
    println!("q_hat={}", clusters.q_hat());
    println!("sizes={}", sizes.join(","));
    Ok(())
}

fn cmd_tune(args: &TuneArgs) -> Result<()> {
    let panel = args.input.load()?;
    let grid = TuningGrid::default_for(panel.n_periods())?;
    info!(
        "tune: bandwidths={:?} thresholds={} cv_target={:?}",
        grid.bandwidths,
        grid.thresholds.len(),
        args.cv_target
    );
    let cv = cross_validate(&panel, &grid, args.cv_target.into())?;
    if let Some(path) = &args.out {
        let mut w = create(path)?;
        cv.write_surface(&mut w)?;
        w.flush()?;
    }
    println!("bandwidth={}", cv.best_bandwidth);
    println!("eta_tilde={}", cv.best_threshold);
    println!("score={}", cv.best_score());
    Ok(())
}

fn cmd_infer(args: &InferArgs) -> Result<()> {
    let panel = args.input.load()?;
    let restriction = LinearRestriction::parse(&args.r, args.lambda)?;
    restriction.check_dim(panel.n_covariates())?;
    let options = args.flags.options(false)?;
    let registry = MethodRegistry::configured(&options);
    let method = registry.get(args.method.name())?;
    let tuned = args.tuning.resolve(&panel)?;
    let kernel = KernelSpec::bartlett(tuned.bandwidth);
    let clusters = match &args.clusters {
        Some(path) => ClusterAssignment::read_delimited(File::open(path)?, panel.unit_ids())?,
        None if method.uses_clusters() => {
            discover_clusters(&panel, kernel, &ThresholdConfig::new(tuned.eta_tilde)?)?.0
        }
        None => ClusterAssignment::singletons(panel.n_units()),
    };
    info!(
        "infer: method={} r={:?} lambda={} alpha={} seed={} bandwidth={} eta_tilde={} q_hat={} options={:?}",
        method.name(),
        restriction.r,
        restriction.lambda,
        args.alpha,
        args.seed,
        tuned.bandwidth,
        tuned.eta_tilde,
        clusters.q_hat(),
        options
    );
    let ctx = InferenceContext {
        panel: &panel,
        clusters: &clusters,
        restriction: &restriction,
        alpha: args.alpha,
        kernel,
        seed: args.seed,
    };
    print!("{}", method.run(&ctx)?);
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let dgp = DgpConfig {
        q: args.q,
        n_units: args.n,
        n_periods: args.t,
        rho: args.rho,
        phi: args.phi,
        beta: args.beta,
        seed: args.seed,
    };
    let mut config = ExperimentConfig::new(dgp, args.reps);
    config.alpha = args.alpha;
    config.beta_null = args.beta0;
    config.methods = args.methods.0.clone();
    config.workers = args.workers;
    config.options = args.flags.options(!args.randomized)?;
    config.tuning = match args.tuning.tuning {
        Tuning::Cv => TuningMode::Cv(args.tuning.cv_target.into()),
        Tuning::Fixed => TuningMode::Fixed {
            bandwidth: args.tuning.bandwidth.value().unwrap_or_default(),
            eta_tilde: args.tuning.eta.value().unwrap_or_default(),
        },
    };
    info!("simulate: options={:?}", config.options);
    let summary = run_size_power(&config)?;
    match &args.out {
        Some(path) => {
            let mut w = create(path)?;
            write_table(&[summary], &mut w)?;
            w.flush()?;
        }
        None => write_table(&[summary], io::stdout().lock())?,
    }
    Ok(())
}

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).format_timestamp(None).init();

    let checked = match &cli.command {
        Command::Discover(a) => a.tuning.check(),
        Command::Infer(a) => a.tuning.check(),
        Command::Simulate(a) => a.tuning.check(),
        Command::Tune(_) => Ok(()),
    };
    if let Err(msg) = checked {
        return usage_error(&msg);
    }

    let outcome = match &cli.command {
        Command::Discover(a) => cmd_discover(a),
        Command::Tune(a) => cmd_tune(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
