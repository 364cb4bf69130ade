//! `reviewq`: ingest, enrich, analyze and model advisory review data.

mod analyze;
mod config;
mod model;
mod out;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};

use config::{GlobalArgs, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "reviewq",
    version,
    about = "Advisory review pipeline: ingest, enrich, analyze, fit and simulate"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Analysis {
    Roles,
    Flow,
    Latency,
    Order,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LambdaArg {
    DateWindow,
    GapTrim,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DifferenceArg {
    Absolute,
    Signed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Population with known role totals and role combinations.
    Credits,
    /// Repository-advisory origin split for the flow diagram.
    Flow,
    /// Lognormal time-to-review cohorts for GRA and NVD advisories.
    Latency,
    /// Advisories from a queue simulation.
    Queue,
    /// Queue with no NVD path and a fast reviewer: review order equals patch order.
    Fifo,
    /// Complete enriched world with user and repository sidecars.
    World,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

fn probability(s: &str) -> Result<f64, String> {
    let p: f64 = s.trim().parse().map_err(|e| format!("`{s}`: {e}"))?;
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(format!("{p} is outside [0, 1]"))
    }
}

pub fn parse_date(s: &str) -> Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| format!("`{s}` is not a YYYY-MM-DD date: {e}"))
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fetch global advisories into the dataset file.
    Ingest {
        /// Keep advisories published on or after this date.
        #[arg(long, value_parser = parse_date)]
        since: Option<NaiveDate>,
        /// Query the live APIs instead of the fixture directory.
        #[arg(long)]
        live: bool,
        /// With --live, also store every response as a fixture here.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Add GRA, NVD, ecosystem and patch timestamps plus user and repository metadata.
    Enrich {
        #[arg(long)]
        live: bool,
        #[arg(long)]
        record: Option<PathBuf>,
        /// Skip user profiles and repository metadata.
        #[arg(long)]
        skip_social: bool,
    },
    /// Run one analysis over the dataset.
    Analyze {
        #[arg(value_enum)]
        which: Analysis,
        /// User profiles (JSON lines); defaults to users.jsonl beside the dataset.
        #[arg(long)]
        users: Option<PathBuf>,
        /// Repository metadata (JSON lines); defaults to repos.jsonl beside the dataset.
        #[arg(long)]
        repos: Option<PathBuf>,
    },
    /// Estimate queue parameters from advisories patched after the cutoff.
    Fit {
        /// Where to write the parameters.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "date-window")]
        lambda_method: LambdaArg,
    },
    /// Simulate the queue and export the rank scatter.
    Simulate {
        #[arg(long)]
        params: Option<PathBuf>,
        /// Arrivals per replication.
        #[arg(long, value_parser = positive, default_value = "5000")]
        n: usize,
        #[arg(long, value_parser = positive, default_value = "1")]
        replications: usize,
    },
    /// Compare real and simulated rank displacement.
    Validate {
        #[arg(long)]
        params: Option<PathBuf>,
        /// Simulated arrivals; defaults to the number of real advisories compared.
        #[arg(long, value_parser = positive)]
        n: Option<usize>,
        #[arg(long, value_enum, default_value = "absolute")]
        difference: DifferenceArg,
        /// Contiguous batches averaged before the test; 0 compares per-advisory values.
        #[arg(long, default_value = "10")]
        batches: usize,
    },
    /// Mean review time for other NVD-first shares.
    Whatif {
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long = "p-list", visible_alias = "p", value_delimiter = ',', required = true, value_parser = probability)]
        p_list: Vec<f64>,
    },
    /// Ingest (when fixtures are given), enrich, run every analysis and the model.
    Report {
        #[arg(long = "p-list", visible_alias = "p", value_delimiter = ',', value_parser = probability)]
        p_list: Vec<f64>,
    },
    /// Write a synthetic fixture tree that the ingest and enrich commands can replay.
    GenFixtures {
        /// Reviewed advisories.
        #[arg(long, value_parser = positive, default_value = "2000")]
        n: usize,
        #[arg(long, default_value = "200")]
        unreviewed: usize,
        /// Also write the enriched dataset the fixtures encode.
        #[arg(long)]
        expected: Option<PathBuf>,
    },
    /// Write a synthetic dataset directly.
    Synth {
        #[arg(value_enum)]
        kind: SynthKind,
        #[arg(long, value_parser = positive)]
        n: Option<usize>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::resolve(&cli.global)?;
    let mut out = out::Out::new(&cfg.output_dir);
    match cli.command {
        Command::Ingest { since, live, record } => pipeline::ingest(&cfg, &mut out, since, live, record.as_deref()),
        Command::Enrich {
            live,
            record,
            skip_social,
        } => pipeline::enrich(&cfg, &mut out, live, record.as_deref(), skip_social),
        Command::Analyze { which, users, repos } => {
            let data = pipeline::Inputs::load(&cfg, users.as_deref(), repos.as_deref())?;
            analyze::run(&cfg, &mut out, which, &data)
        }
        Command::Fit { params, lambda_method } => {
            let data = pipeline::Inputs::load_records(&cfg)?;
            model::fit(
                &cfg,
                &mut out,
                &data,
                &cfg.params_path(params.as_deref()),
                lambda_method,
            )
            .map(|_| ())
        }
        Command::Simulate {
            params,
            n,
            replications,
        } => model::simulate(&cfg, &mut out, &cfg.params_path(params.as_deref()), n, replications),
        Command::Validate {
            params,
            n,
            difference,
            batches,
        } => {
            let data = pipeline::Inputs::load_records(&cfg)?;
            model::validate(
                &cfg,
                &mut out,
                &data,
                &cfg.params_path(params.as_deref()),
                n,
                difference,
                batches,
            )
        }
        Command::Whatif { params, p_list } => model::whatif(&mut out, &cfg.params_path(params.as_deref()), &p_list),
        Command::Report { p_list } => pipeline::report(&cfg, &mut out, &p_list),
        Command::GenFixtures {
            n,
            unreviewed,
            expected,
        } => pipeline::gen_fixtures(&cfg, &mut out, n, unreviewed, expected.as_deref()),
        Command::Synth { kind, n } => pipeline::synth(&cfg, &mut out, kind, n),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.global.quiet, cli.global.verbose) {
        (true, _) => "error",
        (false, 0) => "warn",
        (false, 1) => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
