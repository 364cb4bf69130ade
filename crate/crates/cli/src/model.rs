//! Queue model commands: fit, simulate, validate and what-if.

use std::path::Path;

use anyhow::{bail, Context};
use serde_json::json;

use reviewq::latency::TimeWindow;
use reviewq::model::AdvisoryRecord;
use reviewq::order::{self, RankItem, TieBreak};
use reviewq::queue::{
    estimate_params, mean_review_time, sim_scatter_rows, simulate_replications, trace_mean_review_time,
    transition_summary, validate_against, what_if, FitOptions, LambdaMethod, QueueError, QueueParams, RankDifference,
    ValidationOptions,
};

use crate::config::RunConfig;
use crate::out::{f4, Out};
use crate::{DifferenceArg, LambdaArg};

const MODEL: &str = "model";

/// Advisories patched since the cutoff with a review time: the stable-era
/// population the model is fitted to and validated against.
pub fn recent_items(cfg: &RunConfig, records: &[AdvisoryRecord]) -> Vec<RankItem> {
    order::rank_items(records, TimeWindow::from(cfg.cutoff))
}

fn load_params(path: &Path) -> anyhow::Result<QueueParams> {
    QueueParams::load_file(path).context("run `reviewq fit` first or pass --params")
}

pub fn fit(
    cfg: &RunConfig,
    out: &mut Out,
    records: &[AdvisoryRecord],
    params_path: &Path,
    method: LambdaArg,
) -> anyhow::Result<QueueParams> {
    out.json(MODEL, "fig9a_transitions.json", &transition_summary(records))?;

    let window = TimeWindow::from(cfg.cutoff);
    let recent: Vec<AdvisoryRecord> = records
        .iter()
        .filter(|r| r.patched_at.is_some_and(|t| window.contains(t)))
        .cloned()
        .collect();
    let opts = FitOptions {
        lambda_method: match method {
            LambdaArg::DateWindow => LambdaMethod::DateWindow,
            LambdaArg::GapTrim => LambdaMethod::GapTrim,
        },
        ..FitOptions::default()
    };
    let result = estimate_params(&recent, &opts)?;
    out.json(MODEL, "fit.json", &result)?;
    let params = match result.params() {
        Ok(p) => p,
        Err(QueueError::Mu2Absent) => {
            log::warn!("no NVD-first advisories since the cutoff; the NVD stage is unused (mu2 = inf)");
            QueueParams::new(result.lambda, result.mu1, f64::INFINITY, result.p)?
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(dir) = params_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    params
        .save_file(params_path)
        .with_context(|| format!("writing {}", params_path.display()))?;
    out.say(format!(
        "fit: lambda {} mu1 {} mu2 {} p {} from {} advisories; mean review time {} days",
        f4(params.lambda),
        f4(params.mu1),
        f4(params.mu2),
        f4(params.p),
        result.n_records,
        f4(mean_review_time(&params)?)
    ));
    Ok(params)
}

pub fn simulate(
    cfg: &RunConfig,
    out: &mut Out,
    params_path: &Path,
    n: usize,
    replications: usize,
) -> anyhow::Result<()> {
    let params = load_params(params_path)?;
    let seeds: Vec<u64> = (0..replications as u64).map(|k| cfg.seed.wrapping_add(k)).collect();
    let runs = simulate_replications(&params, n, &seeds, cfg.exec);
    let path = out.path(MODEL, "fig8c_model_scatter.csv")?;
    order::write_scatter(&sim_scatter_rows(&runs[0]), std::fs::File::create(&path)?)?;
    let means: Vec<Option<f64>> = runs.iter().map(|r| trace_mean_review_time(r)).collect();
    let lis: Vec<f64> = runs
        .iter()
        .map(|r| {
            let mut sorted: Vec<(usize, usize)> = r.iter().map(|t| (t.arrival_rank, t.review_rank)).collect();
            sorted.sort();
            let perm: Vec<usize> = sorted.into_iter().map(|(_, rr)| rr).collect();
            order::lis_length(&perm) as f64 / perm.len() as f64
        })
        .collect();
    let analytic = mean_review_time(&params)?;
    out.json(
        MODEL,
        "simulation.json",
        &json!({
            "params": params,
            "load": params.load(),
            "n": n,
            "seeds": seeds,
            "analytic_mean_review_time_days": analytic,
            "simulated_mean_review_time_days": means,
            "lis_fraction": lis,
        }),
    )?;
    let mean_of_means = means.iter().flatten().sum::<f64>() / means.len() as f64;
    out.say(format!(
        "simulate: {replications} x {n} arrivals; mean review time {} days (analytic {}); model lis_fraction {}",
        f4(mean_of_means),
        f4(analytic),
        f4(lis[0])
    ));
    Ok(())
}

pub fn validate(
    cfg: &RunConfig,
    out: &mut Out,
    records: &[AdvisoryRecord],
    params_path: &Path,
    n: Option<usize>,
    difference: DifferenceArg,
    batches: usize,
) -> anyhow::Result<()> {
    let params = load_params(params_path)?;
    let items = recent_items(cfg, records);
    if items.is_empty() {
        bail!("no advisories with patch and review times since {}", cfg.cutoff_label());
    }
    let (perm, _) = order::rank_pairs(&items, TieBreak::Identifier);
    let real: Vec<(usize, usize)> = perm.iter().enumerate().map(|(i, &r)| (i + 1, r)).collect();
    let n_sim = n.unwrap_or(real.len());
    let sim = simulate_replications(&params, n_sim, &[cfg.seed], cfg.exec).remove(0);
    let opts = ValidationOptions {
        difference: match difference {
            DifferenceArg::Absolute => RankDifference::Absolute,
            DifferenceArg::Signed => RankDifference::Signed,
        },
        batches: (batches > 0).then_some(batches),
    };
    let result = validate_against(&real, &sim, &opts)?;
    out.json(
        MODEL,
        "validation.json",
        &json!({ "params": params, "seed": cfg.seed, "result": result }),
    )?;
    let verdict = if result.p_value > 0.05 {
        "no significant difference"
    } else {
        "significant difference"
    };
    out.say(format!(
        "validate: p_value {} ({verdict} at 0.05); mean displacement real {} sim {}",
        f4(result.p_value),
        f4(result.mean_real),
        f4(result.mean_sim)
    ));
    Ok(())
}

pub fn whatif(out: &mut Out, params_path: &Path, p_list: &[f64]) -> anyhow::Result<()> {
    let params = load_params(params_path)?;
    let table = what_if(&params, p_list)?;
    let rows: Vec<Vec<String>> = table.iter().map(|(p, t)| vec![f4(*p), f4(*t)]).collect();
    out.csv(MODEL, "whatif.csv", &["p", "mean_review_time_days"], &rows)?;
    for (p, t) in table {
        out.say(format!("whatif p={p:.3} mean_review_time_days={t:.1}"));
    }
    Ok(())
}
