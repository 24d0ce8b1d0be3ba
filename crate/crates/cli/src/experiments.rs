//! The harness commands. Each returns a [`Report`]: a CSV table whose last
//! rows aggregate the per-trial rows, plus a JSON summary for the sidecar.

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use vm_auction::allocate::{allocate, AllocateOptions};
use vm_auction::analysis::lemma1_ratio;
use vm_auction::baseline::{greedy_allocate, BASELINE_NAME};
use vm_auction::ingest::{synthetic_tasks, write_tasks};
use vm_auction::model::AuctionInstance;
use vm_auction::oracle::{brute_force_optimal, DEFAULT_ORACLE_LIMIT};
use vm_auction::payments::{marginal_seed, run_auction, AuctionOutcome};
use vm_auction::perturb::draw_thetas;
use vm_auction::rng::{derive_seed, stream, StreamTag};
use vm_auction::solver::{pareto_front, solve_exact, SolverOptions};
use vm_auction::synth::{random_instance, SynthConfig};
use vm_auction::AuctionError;

use crate::output::{fmt_f64, fmt_opt, mean, mean_se, Table};
use crate::{allocate_counting, user_satisfaction, ExperimentSpec, HarnessError, InstanceSource, Result};

#[derive(Debug, Clone)]
pub struct Report {
    pub table: Table,
    pub summary: Value,
}

/// Optimum of the unperturbed instance: by enumeration when small enough,
/// otherwise by the exact solver.
pub fn reference_optimum(instance: &AuctionInstance, front_cap: usize) -> Result<f64> {
    if instance.bid_count() <= DEFAULT_ORACLE_LIMIT {
        return Ok(brute_force_optimal(&instance.problem(), DEFAULT_ORACLE_LIMIT)?.1);
    }
    let opts = SolverOptions { front_cap, ..Default::default() };
    Ok(solve_exact(&instance.problem(), opts)?.welfare)
}

fn sample_seed(trial_seed: u64, sample: usize) -> u64 {
    if sample == 0 {
        trial_seed
    } else {
        derive_seed(trial_seed, StreamTag::Trial, sample as u64)
    }
}

/// `samples` allocation runs of one trial: mean welfare, mean satisfaction,
/// invalid-distribution count.
fn sample_runs(
    spec: &ExperimentSpec,
    instance: &AuctionInstance,
    trial_seed: u64,
    samples: usize,
) -> Result<(f64, f64, usize)> {
    let opts = spec.allocate_options();
    let (mut welfare, mut satisfaction, mut invalid) = (0.0, 0.0, 0);
    for s in 0..samples {
        let (run, bad) = allocate_counting(instance, spec.epsilon, sample_seed(trial_seed, s), &opts, spec.max_attempts)?;
        welfare += instance.social_welfare(&run.allocation);
        satisfaction += user_satisfaction(instance, &run.allocation);
        invalid += bad;
    }
    Ok((welfare / samples as f64, satisfaction / samples as f64, invalid))
}

fn check_samples(samples: usize) -> Result<()> {
    if samples == 0 {
        return Err(HarnessError::Usage("samples must be positive".into()));
    }
    Ok(())
}

/// Column means over the trial rows; the first column becomes "mean" and
/// `blank` columns are left empty.
fn mean_row(table: &Table, blank: &[&str]) -> Vec<String> {
    table
        .header
        .iter()
        .enumerate()
        .map(|(c, name)| {
            if c == 0 {
                "mean".to_string()
            } else if blank.contains(&name.as_str()) {
                String::new()
            } else {
                let vals: Vec<f64> = table.rows.iter().filter_map(|r| r[c].parse::<f64>().ok()).collect();
                if vals.is_empty() {
                    String::new()
                } else {
                    fmt_f64(mean(vals))
                }
            }
        })
        .collect()
}

pub struct RatioRow {
    pub trial: usize,
    pub seed: u64,
    pub bids: usize,
    pub opt: f64,
    pub welfare: f64,
    pub ratio: Option<f64>,
    pub perturbed_opt_ratio: Option<f64>,
    pub small_bid: bool,
    pub invalid_dist_count: usize,
}

pub fn ratio_rows(spec: &ExperimentSpec, samples: usize) -> Result<Vec<RatioRow>> {
    spec.validate()?;
    check_samples(samples)?;
    spec.run_trials(|trial, seed| {
        let inst = spec.instance(seed)?;
        let opt = reference_optimum(&inst, spec.front_cap)?;
        let (welfare, _, invalid) = sample_runs(spec, &inst, seed, samples)?;
        let theta = draw_thetas(spec.epsilon, inst.bid_count(), inst.constraint_count(), seed)?;
        let solver = SolverOptions { front_cap: spec.front_cap, ..Default::default() };
        let lemma = lemma1_ratio(&inst, spec.epsilon, &theta, solver)?;
        Ok(RatioRow {
            trial,
            seed,
            bids: inst.bid_count(),
            opt,
            welfare,
            ratio: (opt > 0.0).then(|| welfare / opt),
            perturbed_opt_ratio: lemma.ratio,
            small_bid: inst.check_small_bid(spec.epsilon)?.passes,
            invalid_dist_count: invalid,
        })
    })
}

pub fn eval_ratio(spec: &ExperimentSpec, samples: usize) -> Result<Report> {
    let rows = ratio_rows(spec, samples)?;
    let mut table = Table::new(&[
        "trial",
        "seed",
        "bids",
        "ratio",
        "welfare",
        "opt",
        "perturbed_opt_ratio",
        "small_bid",
        "invalid_dist_count",
    ]);
    for r in &rows {
        table.push(vec![
            r.trial.to_string(),
            r.seed.to_string(),
            r.bids.to_string(),
            fmt_opt(r.ratio),
            fmt_f64(r.welfare),
            fmt_f64(r.opt),
            fmt_opt(r.perturbed_opt_ratio),
            u8::from(r.small_bid).to_string(),
            r.invalid_dist_count.to_string(),
        ]);
    }
    let agg = mean_row(&table, &["seed"]);
    table.push(agg);
    let summary = json!({
        "samples_per_trial": samples,
        "mean_ratio": mean(rows.iter().filter_map(|r| r.ratio)),
        "min_perturbed_opt_ratio": rows.iter().filter_map(|r| r.perturbed_opt_ratio).fold(f64::INFINITY, f64::min),
        "theoretical_ratio": 1.0 - spec.epsilon,
        "invalid_dist_total": rows.iter().map(|r| r.invalid_dist_count).sum::<usize>(),
        "trials_passing_small_bid": rows.iter().filter(|r| r.small_bid).count(),
    });
    Ok(Report { table, summary })
}

pub fn eval_welfare(spec: &ExperimentSpec, samples: usize) -> Result<Report> {
    spec.validate()?;
    check_samples(samples)?;
    let rows = spec.run_trials(|trial, seed| {
        let inst = spec.instance(seed)?;
        let (welfare, _, invalid) = sample_runs(spec, &inst, seed, samples)?;
        let (run, _) = allocate_counting(&inst, spec.epsilon, seed, &spec.allocate_options(), spec.max_attempts)?;
        let expected: f64 = run.expected_allocation().iter().zip(inst.prices()).map(|(y, b)| y * b).sum();
        Ok(vec![
            trial.to_string(),
            seed.to_string(),
            inst.bid_count().to_string(),
            inst.user_count().to_string(),
            fmt_f64(welfare),
            fmt_f64(expected),
            invalid.to_string(),
        ])
    })?;
    let mut table =
        Table::new(&["trial", "seed", "bids", "users", "welfare", "expected_welfare", "invalid_dist_count"]);
    rows.into_iter().for_each(|r| table.push(r));
    let agg = mean_row(&table, &["seed"]);
    let summary = json!({ "samples_per_trial": samples, "mean_welfare": agg[4].parse::<f64>().ok() });
    table.push(agg);
    Ok(Report { table, summary })
}

pub fn eval_satisfaction(spec: &ExperimentSpec, samples: usize) -> Result<Report> {
    spec.validate()?;
    check_samples(samples)?;
    let rows = spec.run_trials(|trial, seed| {
        let inst = spec.instance(seed)?;
        let (_, satisfaction, invalid) = sample_runs(spec, &inst, seed, samples)?;
        Ok(vec![
            trial.to_string(),
            seed.to_string(),
            inst.user_count().to_string(),
            fmt_f64(satisfaction * inst.user_count() as f64),
            fmt_f64(satisfaction),
            invalid.to_string(),
        ])
    })?;
    let mut table = Table::new(&["trial", "seed", "users", "winning_users", "satisfaction", "invalid_dist_count"]);
    rows.into_iter().for_each(|r| table.push(r));
    let agg = mean_row(&table, &["seed"]);
    let summary = json!({ "samples_per_trial": samples, "mean_satisfaction": agg[4].parse::<f64>().ok() });
    table.push(agg);
    Ok(Report { table, summary })
}

pub struct CompareRow {
    pub trial: usize,
    pub seed: u64,
    pub bids: usize,
    pub users: usize,
    pub welfare: f64,
    pub baseline_welfare: f64,
    pub satisfaction: f64,
    pub baseline_satisfaction: f64,
    pub invalid_dist_count: usize,
}

pub fn compare_rows(spec: &ExperimentSpec, samples: usize) -> Result<Vec<CompareRow>> {
    spec.validate()?;
    check_samples(samples)?;
    spec.run_trials(|trial, seed| {
        let inst = spec.instance(seed)?;
        let (welfare, satisfaction, invalid) = sample_runs(spec, &inst, seed, samples)?;
        let greedy = greedy_allocate(&inst);
        Ok(CompareRow {
            trial,
            seed,
            bids: inst.bid_count(),
            users: inst.user_count(),
            welfare,
            baseline_welfare: inst.social_welfare(&greedy),
            satisfaction,
            baseline_satisfaction: user_satisfaction(&inst, &greedy),
            invalid_dist_count: invalid,
        })
    })
}

pub fn compare_baseline(spec: &ExperimentSpec, samples: usize) -> Result<Report> {
    let rows = compare_rows(spec, samples)?;
    let mut table = Table::new(&[
        "trial",
        "seed",
        "bids",
        "users",
        "rpaa_welfare",
        "pdaa_proxy_welfare",
        "rpaa_satisfaction",
        "pdaa_proxy_satisfaction",
        "invalid_dist_count",
    ]);
    for r in &rows {
        table.push(vec![
            r.trial.to_string(),
            r.seed.to_string(),
            r.bids.to_string(),
            r.users.to_string(),
            fmt_f64(r.welfare),
            fmt_f64(r.baseline_welfare),
            fmt_f64(r.satisfaction),
            fmt_f64(r.baseline_satisfaction),
            r.invalid_dist_count.to_string(),
        ]);
    }
    let agg = mean_row(&table, &["seed"]);
    table.push(agg);
    let summary = json!({
        "baseline": BASELINE_NAME,
        "samples_per_trial": samples,
        "mean_welfare": mean(rows.iter().map(|r| r.welfare)),
        "mean_baseline_welfare": mean(rows.iter().map(|r| r.baseline_welfare)),
        "mean_satisfaction": mean(rows.iter().map(|r| r.satisfaction)),
        "mean_baseline_satisfaction": mean(rows.iter().map(|r| r.baseline_satisfaction)),
    });
    Ok(Report { table, summary })
}

/// One full auction on a given instance.
pub fn run_once(instance: &AuctionInstance, epsilon: f64, seed: u64, options: &AllocateOptions) -> Result<(Report, AuctionOutcome)> {
    let outcome = run_auction(instance, epsilon, seed, options)?;
    let mut bytes = Vec::new();
    outcome.write_csv(instance, &mut bytes)?;
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let header: Vec<&str> = vec!["bid_id", "user_id", "price", "won", "payment_realized", "payment_charged", "seed"];
    let mut table = Table::new(&header);
    for r in reader.records() {
        table.push(r?.iter().map(str::to_string).collect());
    }
    let summary = json!({
        "welfare": instance.social_welfare(&outcome.allocation),
        "revenue": outcome.revenue(),
        "satisfaction": user_satisfaction(instance, &outcome.allocation),
        "excluded_bids": outcome.trace.excluded_bids,
        "renormalized": outcome.trace.distribution.as_ref().map(|d| d.renormalized),
    });
    Ok((Report { table, summary }, outcome))
}

/// The instance `gen` writes: the one trial 0 of `spec` would use.
pub fn generate(spec: &ExperimentSpec) -> Result<AuctionInstance> {
    spec.validate()?;
    spec.instance(spec.trial_seed(0))
}

/// Synthetic task CSV matching what trial 0 of a trace-source spec ingests.
pub fn generate_tasks_csv(spec: &ExperimentSpec) -> Result<Vec<u8>> {
    let jobs = if spec.trace_jobs == 0 { 2 * spec.users } else { spec.trace_jobs };
    let tasks = synthetic_tasks(jobs, 4, &mut stream(spec.trial_seed(0), StreamTag::Instance, 0));
    let mut out = Vec::new();
    write_tasks(&tasks, &mut out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeSpec {
    pub bidder: usize,
    /// True value; the bid's current price when absent.
    pub valuation: Option<f64>,
    /// Misreports as multiples of the valuation.
    pub grid: Vec<f64>,
    pub samples: usize,
}

impl ProbeSpec {
    /// Ten evenly spaced multipliers from 0.25 to 2.
    pub fn default_grid() -> Vec<f64> {
        (0..10).map(|k| 0.25 + 1.75 * k as f64 / 9.0).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmEstimate {
    /// `None` for the truthful arm.
    pub multiplier: Option<f64>,
    pub report: f64,
    pub mean_utility: f64,
    pub stderr: f64,
    /// `sqrt(se_truthful^2 + se_arm^2)`.
    pub combined_se: f64,
    /// Truthful mean minus this arm's mean.
    pub gap: f64,
    /// Truthful arm not beaten by more than 3 combined standard errors.
    pub within_tolerance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeResult {
    pub valuation: f64,
    pub arms: Vec<ArmEstimate>,
    pub truthful_maximal: bool,
}

/// Estimates `E[v y_i - p_i]` for the truthful report and every misreport.
/// Sample `s` uses the same seed in every arm, and the marginal run (which
/// ignores bid `i`'s report) is shared across arms.
pub fn probe_instance(
    instance: &AuctionInstance,
    epsilon: f64,
    seed: u64,
    probe: &ProbeSpec,
    options: &AllocateOptions,
) -> Result<ProbeResult> {
    let i = probe.bidder;
    if i >= instance.bid_count() {
        return Err(HarnessError::Usage(format!("bidder {i} does not exist")));
    }
    if probe.grid.is_empty() || probe.samples < 2 {
        return Err(HarnessError::Usage("the probe needs a nonempty grid and at least 2 samples".into()));
    }
    let v = probe.valuation.unwrap_or(instance.prices()[i]);
    let reports: Vec<f64> = std::iter::once(v).chain(probe.grid.iter().map(|m| m * v)).collect();
    let arms: Vec<AuctionInstance> = reports.iter().map(|&r| instance.with_price(i, r)).collect();
    let without = instance.with_price(i, 0.0);
    let mut utilities = vec![Vec::with_capacity(probe.samples); arms.len()];
    for s in 0..probe.samples {
        let s_seed = derive_seed(seed, StreamTag::Arm, s as u64);
        let marginal = allocate(&without, epsilon, marginal_seed(s_seed, i), options)
            .map_err(|e| AuctionError::Marginal { bid: i, source: Box::new(e) })?;
        let m = without.social_welfare(&marginal.allocation);
        for (arm, u) in arms.iter().zip(utilities.iter_mut()) {
            let y = allocate(arm, epsilon, s_seed, options)?.allocation;
            let others: f64 = y.winners().filter(|&j| j != i).map(|j| instance.prices()[j]).sum();
            u.push(if y.get(i) { v } else { 0.0 } + others - m);
        }
    }
    let stats: Vec<(f64, f64)> = utilities.iter().map(|u| mean_se(u)).collect();
    let (truth_mean, truth_se) = stats[0];
    let estimates: Vec<ArmEstimate> = stats
        .iter()
        .enumerate()
        .map(|(a, &(m, se))| {
            let combined = (truth_se * truth_se + se * se).sqrt();
            ArmEstimate {
                multiplier: (a > 0).then(|| probe.grid[a - 1]),
                report: reports[a],
                mean_utility: m,
                stderr: se,
                combined_se: combined,
                gap: truth_mean - m,
                within_tolerance: truth_mean >= m - 3.0 * combined,
            }
        })
        .collect();
    let truthful_maximal = estimates.iter().all(|e| e.within_tolerance);
    Ok(ProbeResult { valuation: v, arms: estimates, truthful_maximal })
}

/// Random instance for the probe: `bids` bids over `max(1, bids / 2)` users,
/// redrawn until every bid fits on its own. No bid is then excluded and at
/// most half the bids win at once, which keeps the distribution valid.
pub fn probe_default_instance(bids: usize, resources: usize, datacenters: usize, seed: u64) -> Result<AuctionInstance> {
    let cfg = SynthConfig { bids, users: (bids / 2).max(1), resources, datacenters, ..Default::default() };
    let mut rng = stream(seed, StreamTag::Instance, 0);
    loop {
        let inst = random_instance(&cfg, &mut rng)?;
        if (0..bids).all(|i| inst.problem().fits_alone(i)) {
            return Ok(inst);
        }
    }
}

pub fn probe_report(result: &ProbeResult) -> Report {
    let mut table = Table::new(&[
        "arm",
        "multiplier",
        "report",
        "mean_utility",
        "stderr",
        "combined_se",
        "gap",
        "within_3se",
    ]);
    for (a, e) in result.arms.iter().enumerate() {
        table.push(vec![
            if a == 0 { "truthful".to_string() } else { a.to_string() },
            fmt_opt(e.multiplier),
            fmt_f64(e.report),
            fmt_f64(e.mean_utility),
            fmt_f64(e.stderr),
            fmt_f64(e.combined_se),
            fmt_f64(e.gap),
            u8::from(e.within_tolerance).to_string(),
        ]);
    }
    let agg = mean_row(&table, &["multiplier", "report", "within_3se"]);
    table.push(agg);
    let summary = json!({ "valuation": result.valuation, "truthful_maximal": result.truthful_maximal });
    Report { table, summary }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSpec {
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub resources: usize,
    pub datacenters: usize,
    pub epsilon: f64,
    /// Each capacity holds this many average bids (uniform in the range).
    pub capacity_bids: (f64, f64),
    pub seed: u64,
    pub jobs: usize,
    pub front_cap: usize,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            sizes: vec![20, 40, 80, 160],
            trials: 50,
            resources: 2,
            datacenters: 1,
            epsilon: 0.05,
            capacity_bids: (2.0, 4.0),
            seed: 0,
            jobs: 0,
            front_cap: crate::HARNESS_FRONT_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub trial: usize,
    pub seed: u64,
    pub front_size: usize,
    pub max_stage_size: usize,
    pub work: u64,
    /// `work / (KD * N * |P(N)|^2)`.
    pub work_ratio: f64,
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSummary {
    pub mean_front: Vec<(usize, f64)>,
    /// Least-squares slope of log mean front size against log N.
    pub loglog_slope: f64,
    pub max_work_ratio: f64,
    pub nonmonotone_runs: usize,
    pub runs: usize,
}

pub fn loglog_slope(points: &[(usize, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (mx, my) = (mean(xs.iter().copied()), mean(ys.iter().copied()));
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

pub fn bench_rows(spec: &BenchSpec) -> Result<(Vec<BenchRow>, BenchSummary)> {
    vm_auction::model::validate_epsilon(spec.epsilon)?;
    if spec.sizes.is_empty() || spec.trials == 0 || spec.sizes.contains(&0) {
        return Err(HarnessError::Usage("bench needs positive sizes and trials".into()));
    }
    let kd = spec.resources * spec.datacenters;
    let jobs: Vec<(usize, usize, usize)> = spec
        .sizes
        .iter()
        .enumerate()
        .flat_map(|(k, &n)| (0..spec.trials).map(move |t| (k * spec.trials + t, n, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(spec.jobs).build()?;
    let rows: Vec<BenchRow> = pool.install(|| {
        jobs.par_iter()
            .map(|&(index, n, trial)| -> Result<BenchRow> {
                let seed = derive_seed(spec.seed, StreamTag::Trial, index as u64);
                let cfg = SynthConfig {
                    bids: n,
                    users: n,
                    resources: spec.resources,
                    datacenters: spec.datacenters,
                    capacity_fraction: (spec.capacity_bids.0 / n as f64, spec.capacity_bids.1 / n as f64),
                    ..Default::default()
                };
                let inst = random_instance(&cfg, &mut stream(seed, StreamTag::Instance, 0))?;
                let theta = draw_thetas(spec.epsilon, n, kd, seed)?;
                let perturbed = vm_auction::perturb::perturb_instance(&inst, &theta);
                let run = pareto_front(&perturbed.problem(), SolverOptions { front_cap: spec.front_cap, ..Default::default() })?;
                let p = run.front.len() as f64;
                Ok(BenchRow {
                    n,
                    trial,
                    seed,
                    front_size: run.front.len(),
                    max_stage_size: run.stage_sizes.iter().copied().max().unwrap_or(1),
                    work: run.work,
                    work_ratio: run.work as f64 / (kd as f64 * n as f64 * p * p),
                    monotone: run.stage_sizes_nondecreasing(),
                })
            })
            .collect::<Result<Vec<BenchRow>>>()
    })?;
    let mean_front: Vec<(usize, f64)> = spec
        .sizes
        .iter()
        .map(|&n| (n, mean(rows.iter().filter(|r| r.n == n).map(|r| r.front_size as f64))))
        .collect();
    let summary = BenchSummary {
        loglog_slope: if mean_front.len() > 1 { loglog_slope(&mean_front) } else { f64::NAN },
        mean_front,
        max_work_ratio: rows.iter().map(|r| r.work_ratio).fold(0.0, f64::max),
        nonmonotone_runs: rows.iter().filter(|r| !r.monotone).count(),
        runs: rows.len(),
    };
    Ok((rows, summary))
}

pub fn bench_front(spec: &BenchSpec) -> Result<Report> {
    let (rows, summary) = bench_rows(spec)?;
    let mut table =
        Table::new(&["n", "trial", "seed", "front_size", "max_stage_size", "work", "work_ratio", "monotone"]);
    for r in &rows {
        table.push(vec![
            r.n.to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            r.front_size.to_string(),
            r.max_stage_size.to_string(),
            r.work.to_string(),
            fmt_f64(r.work_ratio),
            u8::from(r.monotone).to_string(),
        ]);
    }
    for &n in &spec.sizes {
        let of_n: Vec<&BenchRow> = rows.iter().filter(|r| r.n == n).collect();
        let m = |f: &dyn Fn(&BenchRow) -> f64| fmt_f64(mean(of_n.iter().map(|r| f(r))));
        table.push(vec![
            n.to_string(),
            "mean".to_string(),
            String::new(),
            m(&|r| r.front_size as f64),
            m(&|r| r.max_stage_size as f64),
            m(&|r| r.work as f64),
            m(&|r| r.work_ratio),
            m(&|r| f64::from(u8::from(r.monotone))),
        ]);
    }
    Ok(Report { table, summary: serde_json::to_value(&summary)? })
}

/// Instance source label for metadata.
pub fn source_label(source: &InstanceSource) -> &'static str {
    match source {
        InstanceSource::Trace { .. } => "trace",
        InstanceSource::Random => "random",
        InstanceSource::SmallBid => "small-bid",
    }
}
