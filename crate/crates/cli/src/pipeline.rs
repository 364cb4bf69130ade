//! Dataset production: ingestion, enrichment, synthetic data and the full
//! report run.

use std::path::Path;

use anyhow::{bail, Context};
use chrono::NaiveDate;
use log::warn;
use serde_json::json;

use reviewq::ingest::{fetch_global_advisories, Client, Enricher, RecordingTransport, Transport};
use reviewq::model::{synthetic_ghsa_id, AdvisoryRecord, RepoMetadata, Source, Timestamp, UserProfile};
use reviewq::queue::{simulate, traces_to_records, QueueParams};
use reviewq::store::{load_dataset, load_jsonl, save_dataset, save_jsonl};
use reviewq::synth::{self, LognormalLag, World, WorldOptions};

use crate::config::RunConfig;
use crate::out::Out;
use crate::{analyze, model, Analysis, LambdaArg, SynthKind};

/// Dataset plus optional user and repository sidecars.
pub struct Inputs {
    pub records: Vec<AdvisoryRecord>,
    pub users: Option<Vec<UserProfile>>,
    pub repos: Option<Vec<RepoMetadata>>,
}

impl Inputs {
    pub fn load_records(cfg: &RunConfig) -> anyhow::Result<Vec<AdvisoryRecord>> {
        let path = &cfg.dataset_path;
        if !path.is_file() {
            bail!(
                "dataset {} does not exist; run `reviewq ingest` first or pass --dataset",
                path.display()
            );
        }
        let loaded = load_dataset(path)?;
        if !loaded.report.is_empty() {
            warn!(
                "{} invalid line(s) in {} skipped:\n{}",
                loaded.report.rejections.len(),
                path.display(),
                loaded.report
            );
        }
        Ok(loaded.records)
    }

    pub fn load(cfg: &RunConfig, users: Option<&Path>, repos: Option<&Path>) -> anyhow::Result<Self> {
        fn sidecar<T: serde::de::DeserializeOwned>(
            given: Option<&Path>,
            default: &Path,
        ) -> anyhow::Result<Option<Vec<T>>> {
            match given {
                Some(p) => Ok(Some(load_jsonl(p)?)),
                None if default.is_file() => Ok(Some(load_jsonl(default)?)),
                None => Ok(None),
            }
        }
        Ok(Inputs {
            records: Self::load_records(cfg)?,
            users: sidecar(users, &cfg.sidecar("users.jsonl"))?,
            repos: sidecar(repos, &cfg.sidecar("repos.jsonl"))?,
        })
    }
}

fn client(cfg: &RunConfig, live: bool, record: Option<&Path>) -> anyhow::Result<Client> {
    if live {
        let transport: Box<dyn Transport> = cfg.ingest.live_transport()?;
        let transport: Box<dyn Transport> = match record {
            Some(dir) => Box::new(RecordingTransport::new(transport, dir)),
            None => transport,
        };
        return Ok(Client::new(transport, cfg.ingest.clone()));
    }
    if record.is_some() {
        bail!("--record only applies to live runs");
    }
    match &cfg.fixture_dir {
        Some(dir) if dir.is_dir() => Ok(Client::replay(dir, cfg.ingest.clone())),
        Some(dir) => bail!("fixture directory {} does not exist", dir.display()),
        None => bail!("no data source: pass --fixtures DIR to replay recorded responses, or --live"),
    }
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_dataset(records: &[AdvisoryRecord], path: &Path) -> anyhow::Result<()> {
    ensure_parent(path)?;
    save_dataset(records, path)?;
    Ok(())
}

pub fn ingest(
    cfg: &RunConfig,
    out: &mut Out,
    since: Option<NaiveDate>,
    live: bool,
    record: Option<&Path>,
) -> anyhow::Result<()> {
    let client = client(cfg, live, record)?;
    let fetched = fetch_global_advisories(&client, since.map(Timestamp::midnight))?;
    let now = Timestamp::from_datetime(chrono::Utc::now());
    let mut records = Vec::with_capacity(fetched.len());
    let mut rejected = 0;
    for r in fetched {
        match r.validate(now) {
            Ok(()) => records.push(r),
            Err(reason) => {
                warn!("dropping {}: {reason}", r.ghsa_id);
                rejected += 1;
            }
        }
    }
    write_dataset(&records, &cfg.dataset_path)?;
    let reviewed = records.iter().filter(|r| r.reviewed).count();
    let summary = json!({
        "advisories": records.len(),
        "reviewed": reviewed,
        "unreviewed": records.len() - reviewed,
        "rejected": rejected,
        "since": since.map(|d| d.to_string()),
    });
    std::fs::write(
        cfg.sidecar("ingest_summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    out.say(format!(
        "ingested {} advisories ({reviewed} reviewed, {} unreviewed, {rejected} rejected)",
        records.len(),
        records.len() - reviewed,
    ));
    log::info!("dataset written to {}", cfg.dataset_path.display());
    Ok(())
}

pub fn enrich(
    cfg: &RunConfig,
    out: &mut Out,
    live: bool,
    record: Option<&Path>,
    skip_social: bool,
) -> anyhow::Result<()> {
    let records = Inputs::load_records(cfg)?;
    let enricher = Enricher::new(client(cfg, live, record)?);
    let (records, mut report) = enricher.enrich_records(&records);
    write_dataset(&records, &cfg.dataset_path)?;
    if !skip_social {
        let (users, repos, social) = enricher.enrich_social(&records);
        save_jsonl(&users, &cfg.sidecar("users.jsonl"))?;
        save_jsonl(&repos, &cfg.sidecar("repos.jsonl"))?;
        report.merge(social);
    }
    std::fs::write(
        cfg.sidecar("enrichment_report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    out.say(format!(
        "enriched {} advisories: {} GRA, {} NVD, {} ecosystem and {} patch timestamps added; {} profiles, {} repositories; {} failure(s), {} multi-match(es)",
        records.len(),
        report.gra_timestamps_added,
        report.nvd_timestamps_filled,
        report.ecosystem_timestamps_added.values().sum::<u64>(),
        report.patched_at_resolved,
        report.user_profiles_fetched,
        report.repo_metadata_fetched,
        report.total_failures(),
        report.multi_matches.len(),
    ));
    Ok(())
}

pub fn report(cfg: &RunConfig, out: &mut Out, p_list: &[f64]) -> anyhow::Result<()> {
    let mut cfg = cfg.clone();
    if cfg.fixture_dir.is_some() {
        cfg.dataset_path = cfg.output_dir.join("dataset").join("advisories.jsonl");
        ingest(&cfg, out, None, false, None)?;
        enrich(&cfg, out, false, None, false)?;
    }
    let data = Inputs::load(&cfg, None, None)?;
    for which in [Analysis::Roles, Analysis::Flow, Analysis::Latency, Analysis::Order] {
        analyze::run(&cfg, out, which, &data)?;
    }
    let params_path = cfg.params_path(None);
    let params = model::fit(&cfg, out, &data.records, &params_path, LambdaArg::DateWindow)?;
    let n_real = model::recent_items(&cfg, &data.records).len();
    model::simulate(&cfg, out, &params_path, n_real.max(1), 1)?;
    model::validate(
        &cfg,
        out,
        &data.records,
        &params_path,
        None,
        crate::DifferenceArg::Absolute,
        10,
    )?;
    let default_sweep: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let mut sweep = if p_list.is_empty() {
        default_sweep
    } else {
        p_list.to_vec()
    };
    if !sweep.contains(&params.p) {
        sweep.push(params.p);
    }
    model::whatif(out, &params_path, &sweep)?;
    let path = out.path("", "summary.txt")?;
    std::fs::write(&path, out.summary().join("\n") + "\n")?;
    Ok(())
}

pub fn gen_fixtures(
    cfg: &RunConfig,
    out: &mut Out,
    n: usize,
    unreviewed: usize,
    expected: Option<&Path>,
) -> anyhow::Result<()> {
    let world = World::generate(&world_options(cfg, n, unreviewed));
    let dir = out.root().to_path_buf();
    let files = synth::write_fixture_tree(&dir, &world, &cfg.ingest)?;
    if let Some(path) = expected {
        write_dataset(&world.records, path)?;
        let side = |name: &str| path.parent().unwrap_or(Path::new(".")).join(name);
        save_jsonl(&world.profiles, &side("users.jsonl"))?;
        save_jsonl(&world.repos, &side("repos.jsonl"))?;
    }
    out.say(format!(
        "wrote {files} fixture files for {} advisories, {} users and {} repositories under {}",
        world.records.len(),
        world.profiles.len(),
        world.repos.len(),
        dir.display()
    ));
    Ok(())
}

fn renumber(records: &mut [AdvisoryRecord]) {
    for (i, r) in records.iter_mut().enumerate() {
        r.ghsa_id = synthetic_ghsa_id(i as u64);
    }
}

pub fn synth(cfg: &RunConfig, out: &mut Out, kind: SynthKind, n: Option<usize>) -> anyhow::Result<()> {
    let seed = cfg.seed;
    let records = match kind {
        SynthKind::Credits => synth::credits_population().records,
        SynthKind::Flow => synth::flow_fixture(5230, 268, 8),
        SynthKind::Latency => {
            let n = n.unwrap_or(10_000);
            let mut recs = synth::latency_fixture(
                n,
                LognormalLag {
                    median_days: 0.45,
                    sigma: 0.6,
                },
                Source::Gra,
                cfg.cutoff,
                seed,
            );
            recs.extend(synth::latency_fixture(
                n,
                LognormalLag {
                    median_days: 0.84,
                    sigma: 0.4,
                },
                Source::Nvd,
                cfg.cutoff,
                seed.wrapping_add(1),
            ));
            renumber(&mut recs);
            recs
        }
        SynthKind::Queue => {
            let params = QueueParams::new(3.413, 4.0, 0.05, 0.474)?;
            traces_to_records(&simulate(&params, n.unwrap_or(4404), seed), cfg.cutoff)
        }
        SynthKind::Fifo => {
            let params = QueueParams::new(1.0, 50.0, 1.0, 0.0)?;
            traces_to_records(&simulate(&params, n.unwrap_or(1000), seed), cfg.cutoff)
        }
        SynthKind::World => {
            let world = World::generate(&world_options(
                cfg,
                n.unwrap_or(2000),
                WorldOptions::default().unreviewed,
            ));
            ensure_parent(&cfg.dataset_path)?;
            save_jsonl(&world.profiles, &cfg.sidecar("users.jsonl"))?;
            save_jsonl(&world.repos, &cfg.sidecar("repos.jsonl"))?;
            world.records
        }
    };
    write_dataset(&records, &cfg.dataset_path)?;
    out.say(format!(
        "wrote {} synthetic advisories to {}",
        records.len(),
        cfg.dataset_path.display()
    ));
    Ok(())
}

/// World whose arrivals straddle the cutoff, so both eras have data at any size.
fn world_options(cfg: &RunConfig, reviewed: usize, unreviewed: usize) -> WorldOptions {
    let base = WorldOptions::default();
    let half_span_days = reviewed as f64 / base.params.lambda / 2.0;
    WorldOptions {
        reviewed,
        unreviewed,
        seed: cfg.seed,
        origin: cfg.cutoff.plus_seconds(-(half_span_days * 86_400.0).round() as i64),
        ..base
    }
}
