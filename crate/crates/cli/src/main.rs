//! `veclens`: sweep the element-assembly kernels over vector sizes and
//! variants, and analyze the resulting traces.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or input error.

mod config;
mod fsio;
mod report;
mod sweep;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use config::Settings;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error(transparent)]
    Trace(#[from] veclens_core::tracefmt::TraceError),
    #[error(transparent)]
    Metrics(#[from] veclens_core::metrics::MetricsError),
    #[error(transparent)]
    Kernel(#[from] veclens_core::kernels::KernelError),
}

impl CliError {
    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "veclens",
    version,
    about = "Long-vector emulation sweeps and vectorization metrics"
)]
struct Cli {
    /// Config file of `key = value` lines; defaults to $VECLENS_CONFIG.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the variant x vector-size grid, verify outputs and write traces.
    Sweep(SweepArgs),
    /// Per-phase metrics and phase weights of one trace file.
    Analyze(AnalyzeArgs),
    /// Per-phase cycle ratios and metric deltas between two sweep outputs.
    Compare(CompareArgs),
    /// Least-squares fit over columns of a summary.csv.
    Regress(RegressArgs),
    /// Convert a binary trace to CSV.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Comma-separated vector sizes.
    #[arg(long, value_name = "LIST")]
    sizes: Option<String>,
    /// Comma-separated variants, or `all`.
    #[arg(long, value_name = "LIST")]
    variants: Option<String>,
    #[arg(short, long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Concurrent runs.
    #[arg(short, long)]
    jobs: Option<usize>,
    /// Write one record per instruction instead of per-phase counters.
    #[arg(long)]
    full_traces: bool,
    #[arg(long)]
    nelem: Option<usize>,
    /// Mesh seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Explicit scheme: no elemental matrices.
    #[arg(long)]
    explicit: bool,
    /// Any config key, e.g. `--set l1_size=65536`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    trace: PathBuf,
    /// Comma-separated phases to report.
    #[arg(long, value_name = "LIST")]
    phases: Option<String>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Debug, Args)]
struct CompareArgs {
    run_a: PathBuf,
    run_b: PathBuf,
    /// Take rows of this variant from A and match them on (size, phase).
    #[arg(long)]
    a_variant: Option<String>,
    /// Take rows of this variant from B.
    #[arg(long)]
    b_variant: Option<String>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Exit 1 when any phase of A is slower than in B.
    #[arg(long)]
    fail_on_regression: bool,
}

#[derive(Debug, Args)]
struct RegressArgs {
    summary: PathBuf,
    #[arg(long)]
    dependent: String,
    /// Comma-separated regressor columns.
    #[arg(long, value_name = "LIST")]
    independent: String,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    phase: Option<u8>,
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    trace: PathBuf,
    /// Destination file; stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn sweep_settings(config: Option<&std::path::Path>, a: &SweepArgs) -> Result<Settings, CliError> {
    let mut s = Settings::load(config)?;
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        s.apply(k, v)?;
    }
    if let Some(v) = &a.sizes {
        s.apply("sizes", v)?;
    }
    if let Some(v) = &a.variants {
        s.apply("variants", v)?;
    }
    if let Some(v) = &a.out {
        s.out = v.clone();
    }
    if let Some(v) = a.jobs {
        s.jobs = v;
    }
    if a.full_traces {
        s.full_traces = true;
    }
    if let Some(v) = a.nelem {
        s.kernel.nelem = v;
    }
    if let Some(v) = a.seed {
        s.kernel.seed = v;
    }
    if a.explicit {
        s.kernel.semi_implicit = false;
    }
    s.validate()?;
    Ok(s)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Sweep(a) => sweep::cmd_sweep(&sweep_settings(config, &a)?),
        Command::Analyze(a) => {
            let phases = a
                .phases
                .as_deref()
                .map(|p| config::parse_list("--phases", p))
                .transpose()?;
            report::cmd_analyze(&a.trace, phases.as_deref(), a.format)
        }
        Command::Compare(a) => report::cmd_compare(&report::CompareOptions {
            run_a: a.run_a,
            run_b: a.run_b,
            a_variant: a.a_variant,
            b_variant: a.b_variant,
            format: a.format,
            fail_on_regression: a.fail_on_regression,
        }),
        Command::Regress(a) => {
            let independent: Vec<String> = a
                .independent
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            report::cmd_regress(&report::RegressOptions {
                summary: a.summary,
                dependent: a.dependent,
                independent,
                variant: a.variant,
                phase: a.phase,
                size: a.size,
            })
        }
        Command::Export(a) => report::cmd_export(&a.trace, a.out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("veclens: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Verification("x".into()).exit_code(), 1);
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
        let io = CliError::io("reading")(std::io::Error::other("boom"));
        assert_eq!(io.exit_code(), 2);
    }

    #[test]
    fn parses_sweep_flags() {
        let cli = Cli::try_parse_from([
            "veclens",
            "sweep",
            "--sizes",
            "16,240",
            "--explicit",
            "--set",
            "lanes=4",
        ])
        .unwrap();
        let Command::Sweep(a) = cli.command else { panic!() };
        let s = sweep_settings(None, &a).unwrap();
        assert_eq!(s.sizes, vec![16, 240]);
        assert!(!s.kernel.semi_implicit);
        assert_eq!(s.cost.lanes, 4);
    }
}
