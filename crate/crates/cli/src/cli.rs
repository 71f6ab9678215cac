//! Argument parsing and dispatch for the `podtpi` binary.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.
//! Errors go to standard error as one JSON line.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use podtpi::toxmodel::McmcConfig;

use crate::commands::{read_metrics_csv, simulate, write_decision_table, write_report_csv, write_report_text};
use crate::error::{CliError, CliResult};
use crate::service::{serve, ServiceConfig};
use crate::tally::TallyFile;

#[derive(Debug, Parser)]
#[command(name = "podtpi", version, about = "Probability-of-decision dose finding with pending outcomes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the complete-data decision for every (n, m) as CSV.
    DecisionTable {
        /// Target toxicity probability.
        #[arg(long)]
        pt: f64,
        /// Half-width of the equivalence interval (both sides).
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
        /// Lower half-width; defaults to --eps.
        #[arg(long)]
        eps1: Option<f64>,
        /// Upper half-width; defaults to --eps.
        #[arg(long)]
        eps2: Option<f64>,
        /// Largest number of patients tabulated.
        #[arg(long, default_value_t = 18)]
        nmax: u32,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an operating-characteristics campaign from a TOML config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for metrics.csv / metrics.json.
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Compare metrics files produced by `simulate`.
    Report {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Include per-scenario rows, not only the averages.
        #[arg(long)]
        scenarios: bool,
    },
    /// Serve the trial-conduct HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Directory holding one subdirectory per trial.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Bearer token required on every request.
        #[arg(long, env = "PODTPI_TOKEN", hide_env_values = true)]
        token: Option<String>,
        #[arg(long)]
        n_iter: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
    },
    /// Evaluate one decision from a tally file and print the audit record.
    Whatif {
        #[arg(long)]
        input: PathBuf,
        /// Overrides the seed stored in the file.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let err = CliError::Usage(e.kind().to_string() + ": " + first_line(&e.to_string()));
            eprintln!("{}", err.to_json_line());
            return err.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("{}", err.to_json_line());
            err.exit_code()
        }
    }
}

fn first_line(s: &str) -> &str {
    let s = s.trim_start_matches("error: ");
    s.lines().next().unwrap_or(s)
}

fn execute(command: Command) -> CliResult<()> {
    let stdout = std::io::stdout();
    match command {
        Command::DecisionTable {
            pt,
            eps,
            eps1,
            eps2,
            nmax,
            out,
        } => {
            let (e1, e2) = (eps1.unwrap_or(eps), eps2.unwrap_or(eps));
            match out {
                Some(path) => {
                    let mut f = std::fs::File::create(&path)?;
                    write_decision_table(&mut f, pt, e1, e2, nmax)
                }
                None => write_decision_table(&mut stdout.lock(), pt, e1, e2, nmax),
            }
        }
        Command::Simulate { config, out } => {
            let written = simulate(&config, &out, &mut stdout.lock())?;
            eprintln!(
                "{}",
                serde_json::json!({
                    "metrics_csv": written.metrics_csv,
                    "metrics_json": written.metrics_json,
                    "trials_csv": written.trials_csv,
                })
            );
            Ok(())
        }
        Command::Report {
            metrics,
            format,
            scenarios,
        } => {
            let mut rows = Vec::new();
            for path in &metrics {
                rows.extend(read_metrics_csv(path, scenarios)?);
            }
            let mut out = stdout.lock();
            match format {
                Format::Text => write_report_text(&mut out, "operating characteristics", &rows),
                Format::Csv => write_report_csv(&mut out, &rows),
            }
        }
        Command::Serve {
            addr,
            data_dir,
            token,
            n_iter,
            burn_in,
        } => {
            let mut mcmc = McmcConfig::default();
            if let Some(n) = n_iter {
                mcmc.n_iter = n;
            }
            if let Some(b) = burn_in {
                mcmc.burn_in = b;
            }
            mcmc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let config = ServiceConfig {
                data_dir,
                token: token.filter(|t| !t.is_empty()),
                mcmc,
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(addr, config))?;
            Ok(())
        }
        Command::Whatif { input, seed } => {
            let text = std::fs::read_to_string(&input)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", input.display())))?;
            let record = TallyFile::parse(&text)?.evaluate(seed)?;
            let mut out = stdout.lock();
            serde_json::to_writer_pretty(&mut out, &record)?;
            writeln!(out)?;
            Ok(())
        }
    }
}
