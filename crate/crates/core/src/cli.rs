//! Command-line front end.
//!
//! Exit codes: 0 pass, 1 hypothesis failure, 2 parse/usage error,
//! 3 construction inconsistent.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bounds::series::DEFAULT_CAP;
use crate::certificate::{self, Certificate, Settings};
use crate::constructor::FixedPointMethod;
use crate::document::Document;
use crate::error::Error;
use crate::generate::{generate, GenOptions};
use crate::system::{Mode, TimeWindow, Tolerances};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_HYPOTHESIS: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_INCONSISTENT: i32 = 3;
pub const THREADS_ENV: &str = "DICHOTOMY_LAB_THREADS";
pub const MIN_SERIES_CAP: usize = 10;

#[derive(Debug, Parser)]
#[command(name = "dichotomy-lab", version, about = "Dichotomy verification and robustness certificates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check splitting, dichotomy and robustness hypotheses.
    Certify(RunArgs),
    /// Certify, then build the perturbed dichotomy and verify its identities.
    Construct(ConstructArgs),
    /// Closed-form smallness threshold for the declared envelope.
    Corollary(RunArgs),
    /// Emit a random system that admits its declared dichotomy.
    Gen(GenArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Defaults to standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[arg(long, default_value_t = 1e-9)]
    pub tol_proj: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub tol_split: f64,
    #[arg(long, default_value_t = 1e-12)]
    pub tol_inv: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub tol_dichotomy: f64,
    #[arg(long, default_value_t = 1e-12)]
    pub tol_fp: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol_identity: f64,
    #[arg(long, default_value_t = DEFAULT_CAP)]
    pub series_cap: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Direct,
    Picard,
    Both,
}

#[derive(Debug, Args)]
pub struct ConstructArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum, default_value_t = Method::Direct)]
    pub method: Method,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    #[value(name = "Z")]
    Z,
    #[value(name = "N")]
    N,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long)]
    pub stable_dim: Option<usize>,
    #[arg(long, value_enum, default_value_t = ModeArg::Z)]
    pub mode: ModeArg,
    /// Ignored in N mode, where windows start at 1.
    #[arg(long, default_value_t = -8, allow_hyphen_values = true)]
    pub min: i64,
    #[arg(long, default_value_t = 8)]
    pub max: i64,
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
    /// Requested max{λ,μ} of the attached perturbation.
    #[arg(long, default_value_t = 0.0)]
    pub target: f64,
}

/// Exit code for an error that stopped a pipeline.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::ConstructionInconsistent { .. }
        | Error::CertificateMismatch(_)
        | Error::IterationCapExceeded { .. }
        | Error::SingularFixedPointSystem { .. } => EXIT_INCONSISTENT,
        Error::SingularKernelRestriction { .. }
        | Error::KernelRankMismatch { .. }
        | Error::NonContraction { .. }
        | Error::DivergedSeries(_) => EXIT_HYPOTHESIS,
        _ => EXIT_PARSE,
    }
}

impl RunArgs {
    fn settings(&self, method: FixedPointMethod) -> Result<Settings, Error> {
        let tols = [
            ("--tol-proj", self.tol_proj),
            ("--tol-split", self.tol_split),
            ("--tol-inv", self.tol_inv),
            ("--tol-dichotomy", self.tol_dichotomy),
            ("--tol-fp", self.tol_fp),
            ("--tol-identity", self.tol_identity),
        ];
        for (flag, v) in tols {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{flag} must be positive, got {v}")));
            }
        }
        if self.series_cap < MIN_SERIES_CAP {
            return Err(Error::InvalidParameter(format!(
                "--series-cap must be at least {MIN_SERIES_CAP}, got {}",
                self.series_cap
            )));
        }
        Ok(Settings {
            tolerances: Tolerances {
                proj: self.tol_proj,
                split: self.tol_split,
                inv: self.tol_inv,
                dichotomy: self.tol_dichotomy,
                fixed_point: self.tol_fp,
                identity: self.tol_identity,
                ..Tolerances::default()
            },
            series_cap: self.series_cap,
            method,
        })
    }
}

fn write_output(path: Option<&PathBuf>, text: &str) -> Result<(), Error> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

fn run_pipeline(
    args: &RunArgs,
    method: FixedPointMethod,
    pipeline: fn(&crate::document::Loaded, &Settings) -> crate::Result<Certificate>,
) -> Result<i32, Error> {
    let settings = args.settings(method)?;
    let loaded = Document::read(&args.input)?.load()?;
    let cert = pipeline(&loaded, &settings)?;
    let text = match args.format {
        Format::Json => cert.to_json(),
        Format::Text => cert.to_text(),
    };
    write_output(args.output.as_ref(), &text)?;
    for f in &cert.failed {
        eprintln!("failed condition: {f}");
    }
    Ok(cert.exit_code())
}

fn run_gen(args: &GenArgs) -> Result<i32, Error> {
    let window = match args.mode {
        ModeArg::Z => TimeWindow::new(args.min, args.max, Mode::FullLine)?,
        ModeArg::N => TimeWindow::half_line(args.max)?,
    };
    let mut opts = GenOptions::new(args.seed, args.dim, window);
    opts.stable_dim = args.stable_dim;
    opts.eps = args.eps;
    opts.target = args.target;
    let generated = generate(&opts)?;
    write_output(args.output.as_ref(), &generated.document().to_json())?;
    Ok(EXIT_PASS)
}

fn configure_threads() -> Result<(), Error> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidParameter(format!("{THREADS_ENV} must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
}

pub fn execute(cli: &Cli) -> i32 {
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Certify(args) => run_pipeline(args, FixedPointMethod::Direct, certificate::certify),
        Command::Construct(args) => {
            let method = match args.method {
                Method::Direct => FixedPointMethod::Direct,
                Method::Picard => FixedPointMethod::Picard,
                Method::Both => FixedPointMethod::Both,
            };
            run_pipeline(&args.run, method, certificate::construct)
        }
        Command::Corollary(args) => run_pipeline(args, FixedPointMethod::Direct, certificate::corollary),
        Command::Gen(args) => run_gen(args),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_PARSE
            } else {
                EXIT_PASS
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn short_series_cap_is_a_usage_error() {
        let cli = Cli::try_parse_from([
            "dichotomy-lab",
            "certify",
            "--input",
            "missing.json",
            "--series-cap",
            "5",
        ])
        .unwrap();
        assert_eq!(execute(&cli), EXIT_PARSE);
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(exit_code_for(&Error::NonContraction { max: 2.0 }), EXIT_HYPOTHESIS);
        assert_eq!(exit_code_for(&Error::Document("x".into())), EXIT_PARSE);
        assert_eq!(exit_code_for(&Error::CertificateMismatch("x".into())), EXIT_INCONSISTENT);
    }
}
