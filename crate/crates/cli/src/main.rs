mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Conversion;
use config::RunConfig;
use dpaudit::gdp::AttackCounts;
use exit::CliError;

#[derive(Parser)]
#[command(name = "dpaudit", version, about = "Empirical privacy audits of private in-context learning")]
struct Cli {
    /// Log progress (-v) or debug detail (-vv) to stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration.
    config: PathBuf,
    /// Override a config key, e.g. `--set audit.n_sample=1000`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Collect clean responses for both contexts and write them as records.
    Collect(ConfigArgs),
    /// Run a full audit and write the JSON report and a CSV row.
    Audit(ConfigArgs),
    /// Tabulate the analytic Gaussian vote channel.
    Simulate(ConfigArgs),
    /// Convert between μ, (ε, δ) and attack counts.
    #[command(allow_negative_numbers = true)]
    Convert(ConvertArgs),
    /// Print the JSON schema of the run configuration.
    Schema,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long, conflicts_with_all = ["eps", "tp"])]
    mu: Option<f64>,
    #[arg(long, conflicts_with = "tp")]
    eps: Option<f64>,
    #[arg(long, default_value_t = dpaudit::gdp::DEFAULT_DELTA_TARGET)]
    delta: f64,
    #[arg(long, requires_all = ["fp", "fn_", "tn"])]
    tp: Option<u64>,
    #[arg(long)]
    fp: Option<u64>,
    #[arg(long = "fn")]
    fn_: Option<u64>,
    #[arg(long)]
    tn: Option<u64>,
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
}

impl ConvertArgs {
    fn conversion(&self) -> Result<Conversion, CliError> {
        let delta = self.delta;
        match (self.mu, self.eps, self.tp, self.fp, self.fn_, self.tn) {
            (Some(mu), None, None, ..) => Ok(Conversion::Mu { mu, delta }),
            (None, Some(eps), None, ..) => Ok(Conversion::Eps { eps, delta }),
            (None, None, Some(tp), Some(fp), Some(fn_), Some(tn)) => Ok(Conversion::Counts {
                counts: AttackCounts::new(tp, fp, fn_, tn).map_err(CliError::config)?,
                confidence: self.confidence,
                delta,
            }),
            _ => Err(CliError::Config(
                "give exactly one of --mu, --eps, or --tp/--fp/--fn/--tn".into(),
            )),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Collect(a) => commands::cmd_collect(&RunConfig::load(&a.config, &a.overrides)?),
        Command::Audit(a) => commands::cmd_audit(&RunConfig::load(&a.config, &a.overrides)?),
        Command::Simulate(a) => commands::cmd_simulate(&RunConfig::load(&a.config, &a.overrides)?),
        Command::Convert(a) => commands::cmd_convert(&a.conversion()?),
        Command::Schema => {
            println!("{}", config::schema_json());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dpaudit: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
