//! Command-line interface of the `sfield` binary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::basis::BasisKind;
use crate::error::{Error, Result};
use crate::io::{
    filters_to_csv, ingest_csv, parse_dims, sample_to_csv, spectrum_to_csv, IngestOptions,
};
use crate::normtest::VariancePolicy;
use crate::pipeline::{
    estimate_spectrum, run_pipeline, TestConfig, DEFAULT_VAR_THRESHOLD, DEFAULT_WEIGHT_THRESHOLD,
};
use crate::sfpca::{eigendecompose_field, BoundaryMode};
use crate::simulate::{
    replication_rng, run_mc_study, seeded_operators, simulate_sar, Distribution, InnovationSpec,
    McStudyConfig, DEFAULT_BASIS_DIM, DEFAULT_BURNIN, DEFAULT_NORMS, DEFAULT_SEED,
};
use crate::spectral::WeightKind;

/// Exit status for a failed run.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Io(_) => 1,
        Error::Parse { .. } => 3,
        Error::InvalidInput(_) | Error::InvalidConfig(_) | Error::Domain(_) => 4,
        Error::Numerical(_) => 5,
        Error::Stage { .. } => unreachable!("root() strips stage labels"),
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "sfield",
    version,
    about = "Normality test for spatially indexed functional data"
)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a field from the spatial autoregression and write it as CSV.
    Simulate(SimulateArgs),
    /// Run the normality test on a CSV sample.
    Test(AnalyzeArgs),
    /// Estimate rejection rates by Monte Carlo.
    McStudy(McStudyArgs),
    /// Write the spectral density estimate and its eigenvalues.
    Spectrum(AnalyzeArgs),
    /// Write the SFPC filter coefficients.
    Filters(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Grid size, e.g. 25,25.
    #[arg(long)]
    pub dims: String,
    #[arg(long, default_value_t = DEFAULT_BASIS_DIM)]
    pub k: usize,
    /// gaussian or su(tau,kappa).
    #[arg(long, default_value = "gaussian")]
    pub distribution: String,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_BURNIN)]
    pub burnin: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Sample CSV.
    pub input: PathBuf,
    /// Grid size if the file has no `# dims=` header.
    #[arg(long)]
    pub dims: Option<String>,
    /// fourier or bspline.
    #[arg(long)]
    pub basis: Option<String>,
    /// Basis dimension (needed for raw curves).
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args, Clone)]
pub struct TuningArgs {
    /// Window sizes, one value or one per dimension.
    #[arg(long)]
    pub q: Option<String>,
    /// Frequency nodes per dimension (odd).
    #[arg(long)]
    pub grid_t: Option<usize>,
    /// Filter truncation lag.
    #[arg(long)]
    pub l: Option<usize>,
    /// Lag range of the score autocovariances.
    #[arg(long)]
    pub l_prime: Option<usize>,
    /// Number of levels.
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_VAR_THRESHOLD)]
    pub var_threshold: f64,
    #[arg(long, default_value_t = DEFAULT_WEIGHT_THRESHOLD)]
    pub weight_threshold: f64,
    /// Use only locations where the whole filter fits.
    #[arg(long)]
    pub strict_boundary: bool,
    /// Fail instead of flooring a non-positive skewness variance.
    #[arg(long)]
    pub strict_variance: bool,
    /// bartlett or bartlett-product.
    #[arg(long, default_value = "bartlett")]
    pub weight: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Format written to --out.
    #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
    pub format: OutputFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct McStudyArgs {
    /// TOML study description.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Grid size; repeat for several grids.
    #[arg(long)]
    pub dims: Vec<String>,
    /// Distribution; repeat for several.
    #[arg(long)]
    pub distribution: Vec<String>,
    /// Number of levels; repeat for several.
    #[arg(long)]
    pub p: Vec<usize>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl TuningArgs {
    pub fn to_config(&self, ndim: usize) -> Result<TestConfig> {
        let q = match &self.q {
            None => None,
            Some(s) => {
                let v = s
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::InvalidConfig(format!("bad window size '{t}'")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(if v.len() == 1 { vec![v[0]; ndim] } else { v })
            }
        };
        for (name, v) in [
            ("var-threshold", self.var_threshold),
            ("weight-threshold", self.weight_threshold),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "--{name} must lie in (0, 1], got {v}"
                )));
            }
        }
        Ok(TestConfig {
            q,
            grid_t: self.grid_t,
            l: self.l,
            l_prime: self.l_prime,
            p: self.p,
            var_threshold: self.var_threshold,
            weight_threshold: self.weight_threshold,
            boundary: if self.strict_boundary {
                BoundaryMode::Strict
            } else {
                BoundaryMode::Omit
            },
            variance_policy: if self.strict_variance {
                VariancePolicy::Strict
            } else {
                VariancePolicy::Floor
            },
            weight_kind: self.weight.parse::<WeightKind>()?,
        })
    }
}

impl InputArgs {
    fn options(&self) -> Result<IngestOptions> {
        Ok(IngestOptions {
            dims: self.dims.as_deref().map(parse_dims).transpose()?,
            basis: self
                .basis
                .as_deref()
                .map(str::parse::<BasisKind>)
                .transpose()?,
            k: self.k,
        })
    }
}

/// Writes `text` to `out` if given and returns what goes to stdout.
fn emit(out: &Option<PathBuf>, text: String) -> Result<String> {
    match out {
        Some(path) => write_file(path, &text).map(|_| String::new()),
        None => Ok(text),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    info!("wrote {}", path.display());
    Ok(())
}

/// Runs a parsed command line, writing reports to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.threads {
        Some(0) => Err(Error::InvalidConfig("--threads must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
            let text = pool.install(|| dispatch(cli.command))?;
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
        None => {
            let text = dispatch(cli.command)?;
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn dispatch(command: Command) -> Result<String> {
    match command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Test(a) => cmd_test(&a),
        Command::McStudy(a) => cmd_mc_study(&a),
        Command::Spectrum(a) => cmd_spectrum(&a),
        Command::Filters(a) => cmd_filters(&a),
    }
}

fn cmd_simulate(a: &SimulateArgs) -> Result<String> {
    let dims = parse_dims(&a.dims)?;
    let dist: Distribution = a.distribution.parse()?;
    let ops = seeded_operators(a.seed, a.k, DEFAULT_NORMS)?;
    let spec = InnovationSpec::new(dist, a.k)?;
    let sample = simulate_sar(
        &dims,
        &ops,
        &spec,
        a.burnin,
        &mut replication_rng(a.seed, 0, 0),
    )?;
    emit(&a.out, sample_to_csv(&sample))
}

fn cmd_test(a: &AnalyzeArgs) -> Result<String> {
    let sample = ingest_csv(&a.input.input, &a.input.options()?)?;
    let cfg = a.tuning.to_config(sample.dims().len())?;
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "--alpha must lie in (0, 1), got {}",
            a.alpha
        )));
    }
    let report = run_pipeline(&sample, &cfg)?.report;
    let mut table = report.to_table();
    table.push_str(&format!(
        "decision at alpha={}: {}\n",
        a.alpha,
        if report.p_value < a.alpha {
            "reject normality"
        } else {
            "do not reject"
        }
    ));
    if let Some(path) = &a.out {
        let text = match a.format {
            OutputFormat::Table => table.clone(),
            OutputFormat::Csv => report.to_csv(),
            OutputFormat::Json => report.to_json_lines(),
        };
        write_file(path, &text)?;
    }
    Ok(table)
}

fn cmd_spectrum(a: &AnalyzeArgs) -> Result<String> {
    let sample = ingest_csv(&a.input.input, &a.input.options()?)?;
    let cfg = a.tuning.to_config(sample.dims().len())?;
    let spec = estimate_spectrum(&sample, &cfg)?;
    let eig = eigendecompose_field(&spec, 1)?;
    emit(&a.out, spectrum_to_csv(&spec, &eig))
}

fn cmd_filters(a: &AnalyzeArgs) -> Result<String> {
    let sample = ingest_csv(&a.input.input, &a.input.options()?)?;
    let cfg = a.tuning.to_config(sample.dims().len())?;
    let out = run_pipeline(&sample, &cfg)?;
    emit(&a.out, filters_to_csv(&out.filters))
}

fn cmd_mc_study(a: &McStudyArgs) -> Result<String> {
    let mut cfg = match &a.config {
        Some(path) => McStudyConfig::from_toml_str(&fs::read_to_string(path)?)?,
        None => McStudyConfig::default(),
    };
    if !a.dims.is_empty() {
        cfg.dims = a
            .dims
            .iter()
            .map(|d| parse_dims(d))
            .collect::<Result<_>>()?;
    }
    if !a.distribution.is_empty() {
        cfg.distributions = a
            .distribution
            .iter()
            .map(|d| d.parse())
            .collect::<Result<_>>()?;
    }
    if !a.p.is_empty() {
        cfg.p_values = a.p.clone();
    }
    if let Some(r) = a.replications {
        cfg.replications = r;
    }
    if let Some(al) = a.alpha {
        cfg.alpha = al;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let table = run_mc_study(&cfg)?;
    emit(&a.out, table.to_csv())
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let mut stdout = std::io::stdout().lock();
    match run(cli, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
