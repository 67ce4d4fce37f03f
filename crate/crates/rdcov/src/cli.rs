//! Command-line interface.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rdcov_core::{BandwidthConfig, EstimatorKind, Kernel, Regularization, VarianceMethod, VarianceOptions};
use serde::Serialize;

use crate::dgp::DgpSpec;
use crate::error::{Error, Result};
use crate::io::{self, Columns, Loaded};
use crate::report::{self, AnalysisOptions, BandwidthMode, Format};
use crate::study::{self, BandwidthChoice, StudyConfig, StudyReport};

#[derive(Debug, Parser)]
#[command(name = "rdcov", version, about = "Covariate-adjusted regression discontinuity estimation and inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Point estimates and robust bias-corrected confidence intervals,
    /// with and without covariate adjustment.
    Estimate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        analysis: AnalysisArgs,
        /// Further estimators to report as point estimates only
        /// (interacted, demeaned_common, ...).
        #[arg(long, value_delimiter = ',')]
        also: Vec<String>,
    },
    /// Data-driven bandwidths with the pilot trace.
    Bandwidth {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
    /// Covariate balance tests at the cutoff.
    Placebo {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
    /// Data checks: support, side counts, collinearity.
    Validate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value_t = FormatArg::Table)]
        format: FormatArg,
    },
    /// Monte Carlo study on a simulation design.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub outcome: String,
    /// Running variable.
    #[arg(long)]
    pub score: String,
    /// Comma-separated covariate columns.
    #[arg(long, value_delimiter = ',')]
    pub covs: Vec<String>,
    /// Cluster id column.
    #[arg(long)]
    pub cluster: Option<String>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub cutoff: f64,
}

impl DataArgs {
    fn load(&self) -> Result<Loaded> {
        let columns = Columns {
            outcome: self.outcome.clone(),
            score: self.score.clone(),
            covariates: self.covs.iter().filter(|c| !c.is_empty()).cloned().collect(),
            cluster: self.cluster.clone(),
        };
        io::load_csv(&self.data, &columns, self.cutoff)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    #[value(alias = "triangular")]
    Tri,
    #[value(alias = "uniform")]
    Uni,
    #[value(alias = "epanechnikov")]
    Epa,
}

impl From<KernelArg> for Kernel {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Tri => Kernel::Triangular,
            KernelArg::Uni => Kernel::Uniform,
            KernelArg::Epa => Kernel::Epanechnikov,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BwSelect {
    Mserd,
    Cerrd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegularizationArg {
    Always,
    NearZero,
}

impl From<RegularizationArg> for Regularization {
    fn from(r: RegularizationArg) -> Self {
        match r {
            RegularizationArg::Always => Regularization::Always,
            RegularizationArg::NearZero => Regularization::NearZero,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VceArg {
    Nn,
    Hc0,
    Hc1,
    Hc2,
    Hc3,
    Cluster,
}

impl From<VceArg> for VarianceMethod {
    fn from(v: VceArg) -> Self {
        match v {
            VceArg::Nn => VarianceMethod::Nn,
            VceArg::Hc0 => VarianceMethod::Hc0,
            VceArg::Hc1 => VarianceMethod::Hc1,
            VceArg::Hc2 => VarianceMethod::Hc2,
            VceArg::Hc3 => VarianceMethod::Hc3,
            VceArg::Cluster => VarianceMethod::Cluster,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Table,
    Json,
    Csv,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Table => Format::Table,
            FormatArg::Json => Format::Json,
            FormatArg::Csv => Format::Csv,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct AnalysisArgs {
    #[arg(long, value_enum, default_value_t = KernelArg::Tri)]
    pub kernel: KernelArg,
    /// Local polynomial order.
    #[arg(long, default_value_t = 1)]
    pub p: usize,
    /// Manual main bandwidth; excludes --bwselect.
    #[arg(long)]
    pub h: Option<f64>,
    /// Manual bias bandwidth (defaults to h); requires --h.
    #[arg(long)]
    pub b: Option<f64>,
    /// Bandwidth selector [default: mserd].
    #[arg(long, value_enum)]
    pub bwselect: Option<BwSelect>,
    /// Use b = h in the selected bandwidths.
    #[arg(long)]
    pub b_equals_h: bool,
    /// When the selector adds the variance of the estimated bias to its
    /// square: in every stage, or only when the bias is nearly zero.
    #[arg(long, value_enum, default_value_t = RegularizationArg::Always)]
    pub regularization: RegularizationArg,
    #[arg(long, value_enum, default_value_t = VceArg::Nn)]
    pub vce: VceArg,
    /// Neighbors for the nearest-neighbor variance.
    #[arg(long, default_value_t = 3)]
    pub nn_neighbors: usize,
    /// Apply the G/(G-1) small-sample factor to cluster-robust variances.
    #[arg(long)]
    pub cluster_dof: bool,
    /// Confidence level.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, value_enum, default_value_t = FormatArg::Table)]
    pub format: FormatArg,
}

impl AnalysisArgs {
    /// Checks flag combinations; `has_cluster` tells whether a cluster
    /// column is available.
    pub fn options(&self, has_cluster: bool) -> Result<AnalysisOptions> {
        if self.h.is_some() && self.bwselect.is_some() {
            return Err(Error::Config("--h sets a manual bandwidth and cannot be combined with --bwselect".into()));
        }
        if self.b.is_some() && self.h.is_none() {
            return Err(Error::Config("--b requires --h".into()));
        }
        if self.b_equals_h && self.b.is_some() {
            return Err(Error::Config("--b-equals-h cannot be combined with --b".into()));
        }
        if self.vce == VceArg::Cluster && !has_cluster {
            return Err(Error::Config("--vce cluster requires --cluster".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("--level must be in (0, 1), got {}", self.level)));
        }
        if self.nn_neighbors == 0 {
            return Err(Error::Config("--nn-neighbors must be at least 1".into()));
        }
        let variance = VarianceOptions {
            method: self.vce.into(),
            nn_neighbors: self.nn_neighbors,
            cluster_dof_correction: self.cluster_dof,
        };
        let bandwidth = match self.h {
            Some(h) => BandwidthMode::Manual { h, b: self.b },
            None => BandwidthMode::Select { cer: self.bwselect == Some(BwSelect::Cerrd) },
        };
        Ok(AnalysisOptions {
            kernel: self.kernel.into(),
            p: self.p,
            level: self.level,
            bandwidth,
            bandwidth_config: BandwidthConfig {
                force_b_equals_h: self.b_equals_h,
                regularization: self.regularization.into(),
                variance,
                ..Default::default()
            },
            variance,
        })
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// DGP config file (TOML); defaults to the built-in design.
    #[arg(long, conflicts_with = "model")]
    pub config: Option<PathBuf>,
    /// Built-in design 1-4: irrelevant covariate, default, zero residual
    /// correlation, doubled residual correlation.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub model: Option<u8>,
    /// Overrides the design's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 500)]
    pub reps: usize,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Estimators to compare.
    #[arg(long, value_delimiter = ',', default_value = "standard,covadj")]
    pub methods: Vec<String>,
    /// Write one draw (replication 0, or --replication) to this CSV and exit.
    #[arg(long)]
    pub draw: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub replication: u64,
    /// Instead of a study, compare estimator means with their probability
    /// limits at these sample sizes.
    #[arg(long, value_delimiter = ',')]
    pub plim: Vec<usize>,
    /// Bandwidth constant c in h = c n^(-1/5) for --plim.
    #[arg(long, default_value_t = 1.0)]
    pub h_constant: f64,
    /// Print the design (TOML) with its population quantities and exit.
    #[arg(long)]
    pub show_config: bool,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
}

fn parse_kinds(names: &[String]) -> Result<Vec<EstimatorKind>> {
    names
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<EstimatorKind>().map_err(|e| Error::Config(e.to_string())))
        .collect()
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|source| Error::Io { path: PathBuf::from("<stdout>"), source })
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn render<T: Serialize>(
    value: &T,
    format: Format,
    table: impl FnOnce(&T) -> String,
    csv: impl FnOnce(&T) -> Result<String>,
) -> Result<String> {
    match format {
        Format::Table => Ok(table(value)),
        Format::Json => json(value),
        Format::Csv => csv(value),
    }
}

impl Command {
    /// Output format requested on the command line, used for error output.
    pub fn format(&self) -> Format {
        match self {
            Command::Estimate { analysis, .. }
            | Command::Bandwidth { analysis, .. }
            | Command::Placebo { analysis, .. } => analysis.format.into(),
            Command::Validate { format, .. } => (*format).into(),
            Command::Simulate(s) => s.analysis.format.into(),
        }
    }
}

/// Runs a parsed command, writing the report to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Estimate { data, analysis, also } => {
            let opts = analysis.options(data.cluster.is_some())?;
            let extra = parse_kinds(also)?;
            let loaded = data.load()?;
            let r = report::estimate_report(&loaded.dataset, &opts, &extra, Some(loaded.summary()))?;
            write_out(out, &render(&r, opts_format(analysis), |r| r.to_table(), |r| r.to_csv())?)
        }
        Command::Bandwidth { data, analysis } => {
            let opts = analysis.options(data.cluster.is_some())?;
            let loaded = data.load()?;
            let r = report::bandwidth_report(&loaded.dataset, &opts, Some(loaded.summary()))?;
            write_out(out, &render(&r, opts_format(analysis), |r| r.to_table(), |r| r.to_csv())?)
        }
        Command::Placebo { data, analysis } => {
            let opts = analysis.options(data.cluster.is_some())?;
            let loaded = data.load()?;
            let r = report::placebo_report(&loaded.dataset, &opts, Some(loaded.summary()))?;
            write_out(out, &render(&r, opts_format(analysis), |r| r.to_table(), |r| r.to_csv())?)
        }
        Command::Validate { data, format } => {
            let loaded = data.load()?;
            let r = report::validate_report(&loaded.dataset, Some(loaded.summary()));
            write_out(out, &render(&r, (*format).into(), |r| r.to_table(), |r| r.to_csv())?)
        }
        Command::Simulate(args) => simulate(args, out),
    }
}

fn opts_format(a: &AnalysisArgs) -> Format {
    a.format.into()
}

fn load_design(args: &SimulateArgs) -> Result<DgpSpec> {
    let mut dgp = match (&args.config, args.model) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.clone(), source })?;
            DgpSpec::from_toml(&text)?
        }
        (None, Some(k)) => DgpSpec::model(k)?,
        (None, None) => DgpSpec::default_design(),
    };
    if let Some(seed) = args.seed {
        dgp.seed = seed;
    }
    dgp.validate()?;
    Ok(dgp)
}

#[derive(Serialize)]
struct Population {
    tau: f64,
    tau_z: Vec<f64>,
    gamma_y: Vec<f64>,
    limits: Vec<(EstimatorKind, f64)>,
}

fn simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let dgp = load_design(args)?;
    let format: Format = args.analysis.format.into();
    if args.show_config {
        let pop = Population {
            tau: dgp.tau(),
            tau_z: dgp.tau_z(),
            gamma_y: dgp.gamma_y(),
            limits: EstimatorKind::ALL.iter().map(|&k| (k, dgp.probability_limit(k))).collect(),
        };
        let text = match format {
            Format::Json => json(&serde_json::json!({ "design": &dgp, "population": pop }))?,
            _ => {
                let mut s = dgp.to_toml();
                s.push_str(&format!("\n# tau = {}\n# tau_z = {:?}\n# gamma_y = {:?}\n", pop.tau, pop.tau_z, pop.gamma_y));
                for (k, v) in &pop.limits {
                    s.push_str(&format!("# limit {k} = {v}\n"));
                }
                s
            }
        };
        return write_out(out, &text);
    }
    if let Some(path) = &args.draw {
        let data = dgp.draw(args.n, args.replication)?;
        io::write_csv(path, &data)?;
        return write_out(out, &format!("wrote {} rows to {}\n", data.n(), path.display()));
    }
    if !args.plim.is_empty() {
        let kinds: Vec<EstimatorKind> = if dgp.d() == 0 { vec![EstimatorKind::Standard] } else { EstimatorKind::ALL.to_vec() };
        let r = study::plim_check(&dgp, &kinds, &args.plim, args.reps, args.h_constant, args.workers)?;
        let text = render(&r, format, |r| r.to_table(), |r| to_csv(&r.rows))?;
        return write_out(out, &text);
    }

    let analysis = &args.analysis;
    let opts = analysis.options(dgp.clusters.is_some())?;
    let methods = parse_kinds(&args.methods)?;
    let mut config = StudyConfig::new(args.n, args.reps);
    config.methods = methods;
    config.kernel = opts.kernel;
    config.p = opts.p;
    config.level = opts.level;
    config.variance = opts.variance;
    config.bandwidth_config = opts.bandwidth_config;
    config.bandwidth = match opts.bandwidth {
        BandwidthMode::Select { cer } => BandwidthChoice::Selected { cer },
        BandwidthMode::Manual { h, b } => BandwidthChoice::Fixed { h, b: b.unwrap_or(h) },
    };
    let r = study::run_study(&dgp, &config, args.workers)?;
    write_out(out, &render(&r, format, StudyReport::to_table, |r| to_csv(&r.methods))?)
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    #[derive(Serialize)]
    struct Flat<'a, T> {
        #[serde(flatten)]
        row: &'a T,
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for (i, r) in rows.iter().enumerate() {
        // nested values (lists) are written as JSON strings
        let value = serde_json::to_value(Flat { row: r })?;
        let obj = value.as_object().expect("rows serialize as objects");
        if i == 0 {
            w.write_record(obj.keys()).map_err(|e| Error::Config(format!("csv output: {e}")))?;
        }
        let cells: Vec<String> = obj
            .values()
            .map(|v| match v {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Null => String::new(),
                other => other.to_string(),
            })
            .collect();
        w.write_record(&cells).map_err(|e| Error::Config(format!("csv output: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv output: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    exit_code: u8,
    message: String,
}

/// Machine-readable rendering of an error for the given format.
pub fn error_message(err: &Error, format: Format) -> String {
    match format {
        Format::Json => {
            let body = ErrorBody { code: err.code(), exit_code: err.exit_code(), message: err.to_string() };
            serde_json::json!({ "error": body }).to_string()
        }
        _ => format!("error[{}]: {}", err.code(), err),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
/// Reports go to `out`, errors to `err`.
pub fn main_with(args: impl IntoIterator<Item = std::ffi::OsString>, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() { write!(err, "{}", e.render()) } else { write!(out, "{}", e.render()) };
            return code;
        }
    };
    match run(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{}", error_message(&e, cli.command.format()));
            e.exit_code()
        }
    }
}
