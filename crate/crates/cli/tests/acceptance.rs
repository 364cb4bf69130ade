//! Acceptance criteria 1 to 10. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. Tolerances are fixed below.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reviewq::credits::{reviewer_experience, role_frequencies, specialization_table, RoleSet};
use reviewq::flow::{build_sankey, flow_tuples, Platform, PlatformEvent};
use reviewq::latency::{
    collect_samples, percentile_table, share_within, time_to_review, LagKind, LatencyGroup, TimeWindow,
};
use reviewq::model::{epoch_floor, synthetic_ghsa_id, AdvisoryRecord, Source, Timestamp};
use reviewq::order::{fifo_assessment, lis_length, random_lis_fractions};
use reviewq::par::Execution;
use reviewq::queue::{
    estimate_params, mean_review_time, simulate, trace_mean_review_time, traces_to_records, validate_against,
    FitOptions, QueueParams, SimTrace, ValidationOptions,
};
use reviewq::stats::{mann_whitney, prob_first_smaller, welch_t_test};
use reviewq::synth::{
    credits_population, expected_top_combinations, flow_fixture, latency_fixture, share_fixture, LognormalLag,
    ROLE_OCCURRENCES, TOP_COMBINATIONS, USERS_BY_ROLE_COUNT,
};

// criterion 1
const T_REF: f64 = 129.0;
const T_REF_TOL: f64 = 0.5;
const T_P10: f64 = 66.7;
const T_P10_TOL: f64 = 0.2;
// criterion 2
const SIM_N: usize = 50_000;
const SIM_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const SIM_REL_TOL: f64 = 0.05;
// criterion 3
const FIT_N: usize = 100_000;
const FIT_SEED: u64 = 7;
const FIT_RATE_TOL: f64 = 0.02;
const FIT_SERVICE_TOL: f64 = 0.05;
// criterion 4
const LIS_N: usize = 4404;
const LIS_REPS: usize = 200;
const LIS_BAND: (f64, f64) = (0.025, 0.032);
// criterion 5
const RBC_EXACT: f64 = 1e-12;
const PROB_TOL: f64 = 0.001;
// criterion 6
const ORIGIN_SHARE: f64 = 0.95;
const ORIGIN_SHARE_TOL: f64 = 0.001;
// criterion 7
const QUANTILE_N: usize = 10_000;
const QUANTILE_REL_TOL: f64 = 0.03;
const SHARE: f64 = 0.954;
const SHARE_TOL: f64 = 0.0005;
// criterion 10
const VALIDATION_N: usize = 4404;
const FIXTURE_SEED: u64 = 10;
const SIM_SEED: u64 = 11;
const MATCHED_MIN_P: f64 = 0.05;
const MISROUTED_MAX_P: f64 = 0.01;

fn calibrated_params() -> QueueParams {
    QueueParams::new(3.413, 3.433, 0.006, 0.474).unwrap()
}

fn rel(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs()
}

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_closed_form() -> Outcome {
    let t = mean_review_time(&calibrated_params()).map_err(|e| e.to_string())?;
    let t10 = mean_review_time(&calibrated_params().with_p(0.10)).map_err(|e| e.to_string())?;
    check(
        (t - T_REF).abs() <= T_REF_TOL && (t10 - T_P10).abs() <= T_P10_TOL,
        format!("T(p=0.474) = {t:.3}, T(p=0.10) = {t10:.3}"),
    )
}

fn c2_simulation_agreement() -> Outcome {
    let params = calibrated_params();
    let analytic = mean_review_time(&params).unwrap();
    let devs: Vec<f64> = SIM_SEEDS
        .iter()
        .map(|&s| (trace_mean_review_time(&simulate(&params, SIM_N, s)).unwrap() - analytic) / analytic)
        .collect();
    let text = devs.iter().map(|d| format!("{:+.3}", d)).collect::<Vec<_>>().join(" ");
    check(
        devs.iter().all(|d| d.abs() <= SIM_REL_TOL),
        format!(
            "relative deviation from {analytic:.1} d per seed: {text} (load {:.4})",
            params.load()
        ),
    )
}

fn c3_fit_round_trip() -> Outcome {
    let truth = QueueParams::new(3.413, 4.0, 0.05, 0.474).unwrap();
    let origin = Timestamp::parse("2022-06-01T00:00:00Z").unwrap();
    let records = traces_to_records(&simulate(&truth, FIT_N, FIT_SEED), origin);
    let fit = estimate_params(&records, &FitOptions::default()).map_err(|e| e.to_string())?;
    let mu2 = fit.mu2.ok_or("mu2 absent")?;
    let errs = [
        rel(fit.lambda, truth.lambda),
        rel(fit.p, truth.p),
        rel(fit.mu1, truth.mu1),
        rel(mu2, truth.mu2),
    ];
    check(
        errs[0] <= FIT_RATE_TOL && errs[1] <= FIT_RATE_TOL && errs[2] <= FIT_SERVICE_TOL && errs[3] <= FIT_SERVICE_TOL,
        format!(
            "relative errors lambda {:.4} p {:.4} mu1 {:.4} mu2 {:.4}",
            errs[0], errs[1], errs[2], errs[3]
        ),
    )
}

fn lis_quadratic(seq: &[usize]) -> usize {
    let mut best = vec![1; seq.len()];
    for i in 0..seq.len() {
        for j in 0..i {
            if seq[j] < seq[i] {
                best[i] = best[i].max(best[j] + 1);
            }
        }
    }
    best.into_iter().max().unwrap_or(0)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n);
            out.push(q);
        }
    }
    out
}

fn review_perm(traces: &[SimTrace]) -> Vec<usize> {
    let mut pairs: Vec<(usize, usize)> = traces.iter().map(|t| (t.arrival_rank, t.review_rank)).collect();
    pairs.sort();
    pairs.into_iter().map(|(_, r)| r).collect()
}

fn c4_fifo() -> Outcome {
    let mut mismatches = 0;
    let mut checked = 0;
    for n in 0..=8 {
        for p in permutations(n) {
            checked += 1;
            mismatches += usize::from(lis_length(&p) != lis_quadratic(&p));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let n = rng.random_range(1..=500);
        let mut p: Vec<usize> = (1..=n).collect();
        p.shuffle(&mut rng);
        checked += 1;
        mismatches += usize::from(lis_length(&p) != lis_quadratic(&p));
    }
    let fractions = random_lis_fractions(LIS_N, LIS_REPS, 1, Execution::default());
    let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
    let fifo = fifo_assessment(&review_perm(&simulate(&calibrated_params().with_p(0.0), 5000, 1)))
        .unwrap()
        .lis_fraction;
    check(
        mismatches == 0 && (LIS_BAND.0..=LIS_BAND.1).contains(&mean) && fifo == 1.0,
        format!("(a) {mismatches} oracle mismatches over {checked} permutations; (b) mean random lis_fraction {mean:.4}; (c) p=0 lis_fraction {fifo}"),
    )
}

fn c5_stats() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let n = rng.random_range(1..=50);
            (0..n).map(|_| rng.random_range(0..20) as f64).collect()
        };
        let (x, y) = (draw(&mut rng), draw(&mut rng));
        let mut u = 0.0;
        for a in &x {
            for b in &y {
                u += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
        let oracle = 1.0 - 2.0 * u / (x.len() * y.len()) as f64;
        let got = mann_whitney(&x, &y).map_err(|e| e.to_string())?.rbc;
        worst = worst.max((got - oracle).abs());
    }
    let prob = prob_first_smaller(0.202);
    let sample: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
    let (_, welch_p) = welch_t_test(&sample, &sample).map_err(|e| e.to_string())?;
    check(
        worst <= RBC_EXACT && (prob - 0.601).abs() <= PROB_TOL && welch_p == 1.0,
        format!("max |rbc - pairwise oracle| {worst:.2e}; prob_first_smaller(0.202) = {prob:.4}; Welch p on identical samples {welch_p}"),
    )
}

fn ev(p: Platform, day: u32) -> PlatformEvent {
    PlatformEvent {
        date: chrono::NaiveDate::from_ymd_opt(2023, 3, day).unwrap(),
        platform: p,
    }
}

fn tuple_set(seq: &mut [PlatformEvent]) -> Vec<(Platform, Platform)> {
    seq.sort();
    let mut v: Vec<_> = flow_tuples(seq).into_iter().map(|t| (t.from, t.to)).collect();
    v.sort();
    v
}

fn c6_flow() -> Outcome {
    use Platform::{Ghsa, Gra, Nvd};
    let distinct = tuple_set(&mut [ev(Gra, 1), ev(Nvd, 2), ev(Ghsa, 3)]) == vec![(Gra, Nvd), (Nvd, Ghsa)];
    let simultaneous = tuple_set(&mut [ev(Gra, 1), ev(Ghsa, 1)]).is_empty();
    let mut later_want = vec![(Ghsa, Nvd), (Gra, Nvd)];
    later_want.sort();
    let later = tuple_set(&mut [ev(Ghsa, 1), ev(Gra, 1), ev(Nvd, 2)]) == later_want;
    let mut earlier_want = vec![(Nvd, Ghsa), (Nvd, Gra)];
    earlier_want.sort();
    let earlier = tuple_set(&mut [ev(Gra, 2), ev(Ghsa, 2), ev(Nvd, 1)]) == earlier_want;
    let share = build_sankey(&flow_fixture(5230, 268, 8), Execution::default())
        .origin_share(Platform::Gra)
        .unwrap_or(f64::NAN);
    check(
        distinct && simultaneous && later && earlier && (share - ORIGIN_SHARE).abs() <= ORIGIN_SHARE_TOL,
        format!("worked sequences distinct {distinct}, simultaneous {simultaneous}, later {later}, earlier {earlier}; GRA origin share {share:.4}"),
    )
}

fn c7_latency() -> Outcome {
    let t0 = Timestamp::parse("2023-01-01T00:00:00Z").unwrap();
    let mut negative = AdvisoryRecord::bare(synthetic_ghsa_id(1));
    negative.reviewed = true;
    negative.published_at = Some(t0.plus_seconds(86_400));
    negative.github_reviewed_at = Some(t0);
    let filtered =
        time_to_review(&negative).is_none() && collect_samples(&[negative], LagKind::TimeToReview).is_empty();

    let lag = LognormalLag {
        median_days: 0.84,
        sigma: 0.4,
    };
    let samples = collect_samples(
        &latency_fixture(QUANTILE_N, lag, Source::Nvd, t0, 7),
        LagKind::TimeToReview,
    );
    let qs = [10.0, 25.0, 50.0, 75.0, 90.0, 95.0];
    let group = LatencyGroup::new("nvd", &[Source::Nvd], TimeWindow::all());
    let table = percentile_table(&samples, &[group], &qs).map_err(|e| e.to_string())?;
    let worst = table[0]
        .values
        .iter()
        .map(|&(q, v)| rel(v, lag.quantile(q / 100.0)))
        .fold(0.0, f64::max);

    let share_samples = collect_samples(&share_fixture(4151, 4350, 5.0), LagKind::TimeToReview);
    let share = share_within(&share_samples, Source::Gra, 5.0).map_err(|e| e.to_string())?;
    check(
        filtered && worst <= QUANTILE_REL_TOL && (share - SHARE).abs() <= SHARE_TOL,
        format!(
            "negative lag filtered {filtered}; worst quantile relative error {worst:.4}; share within 5 d {share:.4}"
        ),
    )
}

fn c8_credits() -> Outcome {
    let pop = credits_population();
    let freq = role_frequencies(&pop.records);
    let freq_ok = ROLE_OCCURRENCES.iter().all(|(role, n)| freq[role] == *n);
    let table = specialization_table(&pop.records);
    let counts = pop.combination_counts();
    let mut table_ok = table.len() == USERS_BY_ROLE_COUNT.len();
    for (row, (size, users)) in table.iter().zip(USERS_BY_ROLE_COUNT) {
        table_ok &= row.role_count == size && row.user_count == users;
        table_ok &= row.top_combinations == expected_top_combinations(&counts[&size]);
        if size > 1 {
            table_ok &= row.top_combinations.iter().all(|(set, n)| {
                TOP_COMBINATIONS
                    .iter()
                    .any(|(roles, m)| m == n && roles.iter().copied().collect::<RoleSet>() == *set)
            });
        }
    }
    let mut last: BTreeMap<String, u64> = BTreeMap::new();
    let mut steps_ok = true;
    let events = reviewer_experience(&pop.records, epoch_floor());
    for e in &events {
        let expected = last.get(&e.reviewer_login).map_or(0, |n| n + 1);
        steps_ok &= e.prior_review_count == expected;
        last.insert(e.reviewer_login.clone(), e.prior_review_count);
    }
    let reviewers: BTreeSet<&str> = events.iter().map(|e| e.reviewer_login.as_str()).collect();
    check(
        freq_ok && table_ok && steps_ok,
        format!(
            "role totals exact {freq_ok}; specialization table exact {table_ok}; {} experience events over {} reviewers step by one {steps_ok}",
            events.len(),
            reviewers.len()
        ),
    )
}

fn reviewq(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_reviewq"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "reviewq {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn tree(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let key = path.strip_prefix(root).unwrap().display().to_string();
                files.insert(key, std::fs::read(&path).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(files)
}

fn c9_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    reviewq(
        &["gen-fixtures", "--out", "fixtures", "--n", "1500", "--seed", "3", "-q"],
        dir,
    )?;
    for run in ["run1", "run2"] {
        reviewq(
            &["report", "--fixtures", "fixtures", "--out", run, "--seed", "3", "-q"],
            dir,
        )?;
    }
    let (a, b) = (tree(&dir.join("run1"))?, tree(&dir.join("run2"))?);
    let differing: Vec<&String> = a.keys().chain(b.keys()).filter(|k| a.get(*k) != b.get(*k)).collect();
    check(
        !a.is_empty() && differing.is_empty(),
        format!("{} files per run; differing: {differing:?}", a.len()),
    )
}

fn c10_validation() -> Outcome {
    let origin = Timestamp::parse("2022-06-01T00:00:00Z").unwrap();
    let fixture_params = calibrated_params().with_p(0.1);
    let fixture = simulate(&fixture_params, VALIDATION_N, FIXTURE_SEED);
    let real: Vec<(usize, usize)> = fixture.iter().map(|t| (t.arrival_rank, t.review_rank)).collect();
    let fitted = estimate_params(&traces_to_records(&fixture, origin), &FitOptions::default())
        .and_then(|f| f.params())
        .map_err(|e| e.to_string())?;
    let opts = ValidationOptions::default();
    let matched =
        validate_against(&real, &simulate(&fitted, VALIDATION_N, SIM_SEED), &opts).map_err(|e| e.to_string())?;
    let misrouted = fixture_params.with_p(1.0 - fixture_params.p);
    let wrong =
        validate_against(&real, &simulate(&misrouted, VALIDATION_N, SIM_SEED), &opts).map_err(|e| e.to_string())?;
    check(
        matched.p_value > MATCHED_MIN_P && wrong.p_value < MISROUTED_MAX_P,
        format!(
            "matched p = {:.4} (fitted p {:.3}); misrouted p = {:.2e} (p {:.1})",
            matched.p_value, fitted.p, wrong.p_value, misrouted.p
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("closed-form mean review time", c1_closed_form),
        ("simulation matches closed form", c2_simulation_agreement),
        ("simulate-then-fit round trip", c3_fit_round_trip),
        ("FIFO diagnostics", c4_fifo),
        ("statistics oracles", c5_stats),
        ("flow construction", c6_flow),
        ("latency rules", c7_latency),
        ("credits analysis", c8_credits),
        ("end-to-end determinism", c9_determinism),
        ("validation discriminates", c10_validation),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        match f() {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                println!("criterion {n:>2} FAIL  {name}: {detail}");
                failed.push(n);
            }
        }
    }
    if !failed.is_empty() {
        println!("acceptance: {} of 10 failed: {failed:?}", failed.len());
        std::process::exit(1);
    }
    println!("acceptance: all 10 passed");
}
