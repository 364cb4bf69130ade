//! The four descriptive analyses and their tables and figure data.

use anyhow::Context;
use serde_json::{json, Value};

use reviewq::credits::{self, RepoMetric};
use reviewq::flow::{self, Platform};
use reviewq::latency::{self, LagKind, LatencyGroup, LatencySample, TimeWindow, DEFAULT_PERCENTILES};
use reviewq::model::{AdvisoryRecord, Source};
use reviewq::order::{self, TieBreak};
use reviewq::stats;

use crate::config::RunConfig;
use crate::out::{f4, opt4, Out};
use crate::pipeline::Inputs;
use crate::Analysis;

const TABLES: &str = "tables";
const FIGURES: &str = "figures";

/// Share-within threshold for the review-speed headline, in days.
const FAST_REVIEW_DAYS: f64 = 5.0;
const RANDOM_BASELINE_REPS: usize = 200;

pub fn run(cfg: &RunConfig, out: &mut Out, which: Analysis, data: &Inputs) -> anyhow::Result<()> {
    match which {
        Analysis::Roles => roles(cfg, out, data),
        Analysis::Flow => flow(cfg, out, &data.records),
        Analysis::Latency => latency(cfg, out, &data.records),
        Analysis::Order => order(cfg, out, &data.records),
    }
    .with_context(|| format!("{which:?} analysis"))
}

fn error_value(e: impl std::fmt::Display) -> Value {
    json!({ "error": e.to_string() })
}

fn roles(cfg: &RunConfig, out: &mut Out, data: &Inputs) -> anyhow::Result<()> {
    let records = &data.records;
    let freq = credits::role_frequencies(records);
    let rows: Vec<Vec<String>> = freq
        .iter()
        .map(|(r, n)| vec![r.as_str().into(), n.to_string()])
        .collect();
    out.csv(TABLES, "table2_role_frequencies.csv", &["role", "occurrences"], &rows)?;

    let spec = credits::specialization_table(records);
    let mut rows = Vec::new();
    for row in &spec {
        for (rank, (set, users)) in row.top_combinations.iter().enumerate() {
            rows.push(vec![
                row.role_count.to_string(),
                row.user_count.to_string(),
                (rank + 1).to_string(),
                credits::role_set_name(set),
                users.to_string(),
            ]);
        }
    }
    out.csv(
        TABLES,
        "table3_role_combinations.csv",
        &["role_count", "users", "rank", "combination", "combination_users"],
        &rows,
    )?;
    let credited_users: u64 = spec.iter().map(|r| r.user_count).sum();
    out.say(format!(
        "roles: {} credits from {credited_users} users",
        freq.values().sum::<u64>()
    ));

    match &data.users {
        Some(profiles) => {
            let rows: Vec<Vec<String>> = credits::popularity_by_role(records, profiles)
                .iter()
                .map(|r| {
                    vec![
                        r.role.as_str().into(),
                        r.occurrences.to_string(),
                        r.missing_profiles.to_string(),
                        f4(r.stars.mean),
                        f4(r.stars.median),
                        f4(r.stars.std),
                        f4(r.followers.mean),
                        f4(r.followers.median),
                        f4(r.followers.std),
                    ]
                })
                .collect();
            out.csv(
                TABLES,
                "table4_popularity_by_role.csv",
                &[
                    "role",
                    "occurrences",
                    "missing_profiles",
                    "stars_mean",
                    "stars_median",
                    "stars_std",
                    "followers_mean",
                    "followers_median",
                    "followers_std",
                ],
                &rows,
            )?;
        }
        None => log::warn!("no user profiles; skipping the popularity-by-role table (run `reviewq enrich`)"),
    }

    experience(cfg, out, records)?;

    match &data.repos {
        Some(repos) => repo_metrics(out, repos)?,
        None => log::warn!("no repository metadata; skipping the repository comparison (run `reviewq enrich`)"),
    }
    Ok(())
}

fn experience(cfg: &RunConfig, out: &mut Out, records: &[AdvisoryRecord]) -> anyhow::Result<()> {
    let events = credits::reviewer_experience(records, cfg.cutoff);
    let rows: Vec<Vec<String>> = events
        .iter()
        .map(|e| {
            vec![
                e.reviewer_login.clone(),
                e.ghsa_id.clone(),
                e.review_time.to_string(),
                e.prior_review_count.to_string(),
                e.is_gra.to_string(),
            ]
        })
        .collect();
    out.csv(
        FIGURES,
        "fig3_reviewer_experience.csv",
        &[
            "reviewer_login",
            "ghsa_id",
            "review_time",
            "prior_review_count",
            "is_gra",
        ],
        &rows,
    )?;
    let values = |gra: Option<bool>| -> Vec<f64> {
        events
            .iter()
            .filter(|e| gra.is_none_or(|g| e.is_gra == g))
            .map(|e| e.prior_review_count as f64)
            .collect()
    };
    let (all, gra, other) = (values(None), values(Some(true)), values(Some(false)));
    for (name, v) in [("all", &all), ("gra", &gra), ("other", &other)] {
        let rows: Vec<Vec<String>> = match stats::ecdf(v) {
            Ok(curve) => curve.points().map(|(x, f)| vec![x.to_string(), f4(f)]).collect(),
            Err(_) => Vec::new(),
        };
        out.csv(
            FIGURES,
            &format!("fig3_experience_ecdf_{name}.csv"),
            &["value", "cumulative_fraction"],
            &rows,
        )?;
    }
    let test = match stats::mann_whitney(&gra, &other) {
        Ok(r) => serde_json::to_value(r)?,
        Err(e) => error_value(e),
    };
    out.json(
        FIGURES,
        "fig3_experience_tests.json",
        &json!({
            "since": cfg.cutoff_label(),
            "events": events.len(),
            "gra_vs_other_prior_reviews": test,
        }),
    )?;
    Ok(())
}

fn repo_metrics(out: &mut Out, repos: &[reviewq::model::RepoMetadata]) -> anyhow::Result<()> {
    let rows: Vec<Vec<String>> = repos
        .iter()
        .map(|r| {
            vec![
                r.slug.clone(),
                r.gra_linked.to_string(),
                r.stars.to_string(),
                r.open_issues.to_string(),
                opt4(r.security_policy_score),
                opt4(r.maintained_score),
            ]
        })
        .collect();
    out.csv(
        FIGURES,
        "fig2_repo_metrics.csv",
        &[
            "repo",
            "gra_linked",
            "stars",
            "open_issues",
            "security_policy",
            "maintained",
        ],
        &rows,
    )?;
    let mut tests = serde_json::Map::new();
    for metric in RepoMetric::ALL {
        let v = match credits::compare_repo_groups(repos, metric) {
            Ok(r) => serde_json::to_value(r)?,
            Err(e) => error_value(e),
        };
        tests.insert(metric.as_str().into(), v);
    }
    let (gra_share, other_share) = credits::security_policy_shares(repos);
    out.json(
        FIGURES,
        "fig2_repo_group_tests.json",
        &json!({
            "tests": tests,
            "security_policy_share": { "gra_linked": gra_share, "not_gra_linked": other_share },
        }),
    )?;
    Ok(())
}

fn flow(cfg: &RunConfig, out: &mut Out, records: &[AdvisoryRecord]) -> anyhow::Result<()> {
    let monthly = flow::reviews_per_month(records);
    let mut rows = Vec::new();
    for (month, counts) in &monthly {
        for source in Source::ALL {
            rows.push(vec![
                month.to_string(),
                source.to_string(),
                counts.get(source).to_string(),
            ]);
        }
    }
    out.csv(
        FIGURES,
        "fig4_reviews_per_month.csv",
        &["month", "source", "count"],
        &rows,
    )?;
    let totals = flow::source_totals(&monthly);

    let sankey = flow::build_sankey(records, cfg.exec);
    let rows: Vec<Vec<String>> = sankey
        .links
        .iter()
        .map(|l| {
            vec![
                l.level.to_string(),
                l.from.to_string(),
                l.to.to_string(),
                l.weight.to_string(),
            ]
        })
        .collect();
    out.csv(
        FIGURES,
        "fig6_sankey_links.csv",
        &["level", "from", "to", "weight"],
        &rows,
    )?;
    out.json(FIGURES, "fig6_sankey.json", &sankey.to_json())?;
    out.jsonl(FIGURES, "fig6_long_chains.jsonl", &sankey.long_chains)?;

    let gra_origin = sankey.origin_share(Platform::Gra);
    out.json(
        TABLES,
        "flow_summary.json",
        &json!({
            "reviewed_by_source": totals,
            "reviewed_total": totals.total(),
            "qualifying_advisories": sankey.qualifying_advisories,
            "level_weights": { "1": sankey.level_weight(1), "2": sankey.level_weight(2) },
            "gra_origin_share": gra_origin,
            "long_chains": sankey.long_chains.len(),
        }),
    )?;
    out.say(format!(
        "flow: {} reviewed ({} gra, {} nvd, {} other); {} advisories in the flow diagram; gra_origin_share {}",
        totals.total(),
        totals.gra,
        totals.nvd,
        totals.other,
        sankey.qualifying_advisories,
        gra_origin.map(f4).unwrap_or_else(|| "n/a".into())
    ));
    Ok(())
}

fn percentile_rows(samples: &[LatencySample], groups: &[LatencyGroup]) -> Vec<Vec<String>> {
    groups
        .iter()
        .map(|g| {
            let mut row = vec![g.label.clone()];
            match latency::percentile_table(samples, std::slice::from_ref(g), &DEFAULT_PERCENTILES) {
                Ok(t) => {
                    row.push(t[0].n.to_string());
                    row.extend(t[0].values.iter().map(|(_, v)| f4(*v)));
                }
                Err(_) => {
                    row.push("0".into());
                    row.extend(DEFAULT_PERCENTILES.iter().map(|_| String::new()));
                }
            }
            row
        })
        .collect()
}

fn percentile_header() -> Vec<String> {
    let mut h = vec!["group".to_string(), "n".to_string()];
    h.extend(DEFAULT_PERCENTILES.iter().map(|q| format!("p{q}")));
    h
}

fn comparisons(
    samples: &[LatencySample],
    pairs: &[(Source, Source)],
    windows: &[(&str, TimeWindow)],
) -> anyhow::Result<Vec<Value>> {
    let mut tests = Vec::new();
    for (label, window) in windows {
        for &(a, b) in pairs {
            let v = match latency::compare_sources(samples, a, b, *window, true) {
                Ok(c) => serde_json::to_value(c)?,
                Err(e) => json!({
                    "group_a": a,
                    "group_b": b,
                    "window": window,
                    "outliers_removed": true,
                    "error": e.to_string(),
                }),
            };
            let mut v = v;
            v["window_label"] = json!(label);
            tests.push(v);
        }
    }
    Ok(tests)
}

fn latency(cfg: &RunConfig, out: &mut Out, records: &[AdvisoryRecord]) -> anyhow::Result<()> {
    let header = percentile_header();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let since = format!("since {}", cfg.cutoff_label());
    let after = TimeWindow::from(cfg.cutoff);

    let ttr = latency::collect_samples(records, LagKind::TimeToReview);
    let groups = LatencyGroup::standard(cfg.cutoff);
    out.csv(
        TABLES,
        "table5_time_to_review.csv",
        &header,
        &percentile_rows(&ttr, &groups),
    )?;
    let pairs = [
        (Source::Gra, Source::Nvd),
        (Source::Gra, Source::Other),
        (Source::Nvd, Source::Other),
    ];
    let tests = comparisons(&ttr, &pairs, &[("all", TimeWindow::all()), (&since, after)])?;
    out.json(TABLES, "table6_time_to_review_tests.json", &tests)?;

    let ptr = latency::collect_samples(records, LagKind::PatchToReview);
    let month = cfg.cutoff.month();
    let patch_groups = vec![
        LatencyGroup::new(format!("All reviewed since {month}"), &Source::ALL, after),
        LatencyGroup::new(format!("GRA since {month}"), &[Source::Gra], after),
        LatencyGroup::new(format!("NVD since {month}"), &[Source::Nvd], after),
        LatencyGroup::new(format!("Other since {month}"), &[Source::Other], after),
    ];
    out.csv(
        TABLES,
        "table7_patch_to_review.csv",
        &header,
        &percentile_rows(&ptr, &patch_groups),
    )?;
    let tests = comparisons(&ptr, &pairs, &[(&since, after)])?;
    out.json(TABLES, "table7_patch_to_review_tests.json", &tests)?;

    let rows: Vec<Vec<String>> = latency::monthly_median_lag(&ttr)
        .into_iter()
        .map(|((m, s), v)| vec![m.to_string(), s.to_string(), f4(v)])
        .collect();
    out.csv(
        FIGURES,
        "fig5_monthly_median_review_time.csv",
        &["month", "source", "median_days"],
        &rows,
    )?;

    let recent: Vec<LatencySample> = ttr.iter().filter(|s| after.contains(s.publish_time)).cloned().collect();
    let mut shares = serde_json::Map::new();
    for source in Source::ALL {
        let v = latency::share_within(&recent, source, FAST_REVIEW_DAYS).ok();
        shares.insert(source.as_str().into(), json!(v));
    }
    out.json(
        TABLES,
        "review_shares.json",
        &json!({ "threshold_days": FAST_REVIEW_DAYS, "since": cfg.cutoff_label(), "share_within": shares }),
    )?;
    let median = |s: Source| {
        let lags = LatencyGroup::new("", &[s], after).lags(&ttr);
        stats::median(&lags).ok().map(f4).unwrap_or_else(|| "n/a".into())
    };
    out.say(format!(
        "latency: {} time-to-review samples; median days {since}: gra {}, nvd {}",
        ttr.len(),
        median(Source::Gra),
        median(Source::Nvd)
    ));
    Ok(())
}

fn order(cfg: &RunConfig, out: &mut Out, records: &[AdvisoryRecord]) -> anyhow::Result<()> {
    let mut assessment = serde_json::Map::new();
    for (file, label, window) in [
        ("fig8a_rank_scatter.csv", "all", TimeWindow::all()),
        ("fig8b_rank_scatter.csv", "since_cutoff", TimeWindow::from(cfg.cutoff)),
    ] {
        let items = order::rank_items(records, window);
        let rows = order::scatter_rows(&items, TieBreak::Identifier);
        let path = out.path(FIGURES, file)?;
        order::write_scatter(&rows, std::fs::File::create(&path)?)?;
        let (perm, _) = order::rank_pairs(&items, TieBreak::Identifier);
        let value = match order::fifo_assessment(&perm) {
            Some(s) => {
                let baseline = order::random_lis_fractions(s.n, RANDOM_BASELINE_REPS, cfg.seed, cfg.exec);
                json!({
                    "stats": s,
                    "random_baseline": {
                        "replications": RANDOM_BASELINE_REPS,
                        "seed": cfg.seed,
                        "mean": stats::mean(&baseline).ok(),
                        "max": baseline.iter().copied().fold(f64::NAN, f64::max),
                    },
                })
            }
            None => json!(null),
        };
        if label == "since_cutoff" {
            match value["stats"]["lis_fraction"].as_f64() {
                Some(f) => out.say(format!("lis_fraction {f:.4}")),
                None => out.say("lis_fraction n/a (no advisories with patch and review times since the cutoff)"),
            }
        }
        assessment.insert(label.into(), value);
    }
    assessment.insert("since".into(), json!(cfg.cutoff_label()));
    out.json(TABLES, "fifo_assessment.json", &assessment)?;
    Ok(())
}
