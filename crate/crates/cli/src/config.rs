//! Run configuration: an optional TOML file overridden by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use chrono::NaiveDate;
use clap::Args;
use serde::Deserialize;

use reviewq::ingest::IngestConfig;
use reviewq::model::{default_cutoff, Timestamp};
use reviewq::par::Execution;

use crate::parse_date;

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// TOML run configuration; flags take precedence over its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset file (JSON lines). Default: <out>/dataset/advisories.jsonl.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Recorded HTTP fixtures to replay instead of live requests.
    #[arg(long, global = true)]
    pub fixtures: Option<PathBuf>,
    /// Output directory. Default: reviewq-out.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Start of the stable-pipeline window (YYYY-MM-DD). Default: 2022-06-01.
    #[arg(long, global = true, value_parser = parse_date)]
    pub cutoff: Option<NaiveDate>,
    /// Seed for every random draw. Default: 1.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only errors on stderr.
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    dataset: Option<PathBuf>,
    fixtures: Option<PathBuf>,
    out: Option<PathBuf>,
    cutoff: Option<String>,
    seed: Option<u64>,
    ingest: Option<IngestConfig>,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub dataset_path: PathBuf,
    pub fixture_dir: Option<PathBuf>,
    pub cutoff: Timestamp,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub ingest: IngestConfig,
    pub exec: Execution,
}

impl RunConfig {
    pub fn resolve(args: &GlobalArgs) -> anyhow::Result<Self> {
        let file = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                toml::from_str::<FileConfig>(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => FileConfig::default(),
        };
        let cutoff = match (args.cutoff, &file.cutoff) {
            (Some(d), _) => Timestamp::midnight(d),
            (None, Some(s)) => Timestamp::midnight(parse_date(s).map_err(anyhow::Error::msg).context("config cutoff")?),
            (None, None) => default_cutoff(),
        };
        let ingest = file.ingest.unwrap_or_default();
        if let Err(reason) = ingest.validate() {
            bail!("config [ingest]: {reason}");
        }
        let output_dir = args
            .out
            .clone()
            .or(file.out)
            .unwrap_or_else(|| PathBuf::from("reviewq-out"));
        let dataset_path = args
            .dataset
            .clone()
            .or(file.dataset)
            .unwrap_or_else(|| output_dir.join("dataset").join("advisories.jsonl"));
        Ok(RunConfig {
            dataset_path,
            fixture_dir: args.fixtures.clone().or(file.fixtures),
            cutoff,
            output_dir,
            seed: args.seed.or(file.seed).unwrap_or(1),
            ingest,
            exec: if args.sequential {
                Execution::Sequential
            } else {
                Execution::default()
            },
        })
    }

    /// A file next to the dataset.
    pub fn sidecar(&self, name: &str) -> PathBuf {
        self.dataset_path.parent().unwrap_or(Path::new(".")).join(name)
    }

    pub fn params_path(&self, given: Option<&Path>) -> PathBuf {
        given
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.output_dir.join("model").join("queue_params.toml"))
    }

    pub fn cutoff_label(&self) -> String {
        self.cutoff.date().format("%Y-%m-%d").to_string()
    }
}
