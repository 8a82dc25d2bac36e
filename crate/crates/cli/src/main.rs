use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use netsurv::copulas::CopulaFamily;
use netsurv::marginals::Family;

mod commands;
mod error;
mod output;

use error::CliError;

/// Net survival under dependent competing risks.
///
/// Exit codes: 0 success, 1 other failure, 2 parse error, 3 life-table
/// coverage error, 4 optimization failure.
#[derive(Debug, Parser)]
#[command(name = "netsurv", version)]
struct Cli {
    /// Worker threads for fitting and simulation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory receiving CSV, text and manifest files.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse life tables and report their coverage, optionally against a cohort.
    CheckTables {
        #[command(flatten)]
        tables: TableArgs,
        #[arg(long)]
        cohort: Option<PathBuf>,
    },
    /// Fit the net-survival margin under one assumed copula.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "gumbel")]
        copula: CopulaFamily,
        #[arg(long, default_value_t = 0.0)]
        tau: f64,
    },
    /// Refit over a list of Kendall's tau values.
    Sensitivity {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "gumbel")]
        copula: CopulaFamily,
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75")]
        taus: Vec<f64>,
        /// Also fit each age band at diagnosis separately.
        #[arg(long)]
        by_age_groups: bool,
    },
    /// Pohar-Perme estimate next to the parametric fit under independence.
    Compare {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Run a simulation study described by a TOML file.
    Simulate {
        /// Study file.
        config: PathBuf,
    },
}

#[derive(Debug, Args)]
struct TableArgs {
    /// HMD-format female life table.
    #[arg(long)]
    table_f: Option<PathBuf>,
    /// HMD-format male life table.
    #[arg(long)]
    table_m: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Cohort CSV with header id,age,sex,diag_year,time,status.
    #[arg(long)]
    cohort: PathBuf,
    #[command(flatten)]
    tables: TableArgs,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, default_value = "weibull")]
    family: Family,
    #[arg(long, value_delimiter = ',', default_value = "2,5,10,15")]
    times: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Optimizer starts per fit.
    #[arg(long, default_value_t = 8)]
    starts: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Other(format!("thread pool: {e}")))?;
    }
    let out = cli.out_dir.as_deref();
    match cli.command {
        Command::CheckTables { tables, cohort } => commands::check_tables(&tables, cohort.as_deref()),
        Command::Fit { data, model, copula, tau } => commands::fit(&data, &model, copula, tau, out),
        Command::Sensitivity {
            data,
            model,
            copula,
            taus,
            by_age_groups,
        } => commands::sensitivity(&data, &model, copula, &taus, by_age_groups, out),
        Command::Compare { data, model } => commands::compare(&data, &model, out),
        Command::Simulate { config } => commands::simulate(&config, out),
    }
}
