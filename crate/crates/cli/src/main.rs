use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use vm_auction::allocate::DistributionPolicy;
use vm_auction::schema::{read_instance, write_instance};
use vm_auction_cli::experiments::{self, BenchSpec, ProbeSpec, Report};
use vm_auction_cli::output::{sidecar_path, write_artifacts};
use vm_auction_cli::{ExperimentSpec, HarnessError, InstanceSource, Result, EXIT_OK, HARNESS_FRONT_CAP};

#[derive(Parser)]
#[command(name = "vm-auction", version, about = "Randomized VM provisioning auction and its experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the instance of trial 0 as JSON.
    Gen(GenArgs),
    /// Run one auction on an instance file.
    Run(RunArgs),
    /// Expected welfare against the optimum.
    EvalRatio(EvalArgs),
    /// Realized and expected social welfare.
    EvalWelfare(EvalArgs),
    /// Share of users winning at least one bid.
    EvalSatisfaction(EvalArgs),
    /// Welfare and satisfaction against the greedy baseline.
    CompareBaseline(EvalArgs),
    /// Mean utility of truthful and misreported bids.
    ProbeTruthfulness(ProbeArgs),
    /// Pareto front growth of the exact solver.
    BenchFront(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Reject,
    Renormalize,
}

impl Common {
    fn epsilon(&self) -> f64 {
        self.epsilon.unwrap_or(DEFAULT_EPSILON)
    }
}

const DEFAULT_EPSILON: f64 = 0.05;

impl From<Policy> for DistributionPolicy {
    fn from(p: Policy) -> Self {
        match p {
            Policy::Reject => DistributionPolicy::Reject,
            Policy::Renormalize => DistributionPolicy::Renormalize,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Trace,
    Random,
    SmallBid,
}

#[derive(Args)]
struct Common {
    /// Defaults to 0.05, or to the instance file's value for `run`.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long, value_enum, default_value_t = Policy::Reject)]
    policy: Policy,
    #[arg(long, default_value_t = HARNESS_FRONT_CAP)]
    front_cap: usize,
    /// Output CSV; defaults to `<command>.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InstanceArgs {
    #[arg(long, value_enum, default_value_t = Source::Trace)]
    source: Source,
    /// Task CSV (job_id,cpu,ram,disk) for the trace source.
    #[arg(long)]
    tasks: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    users: usize,
    #[arg(long, default_value_t = 4)]
    max_bids_per_user: usize,
    #[arg(long, default_value_t = 8)]
    datacenters: usize,
    #[arg(long, default_value_t = 3)]
    resources: usize,
    /// Jobs in the synthetic trace; 0 means twice the users.
    #[arg(long, default_value_t = 0)]
    trace_jobs: usize,
    #[arg(long, default_value_t = 1000)]
    vm_types: usize,
    /// Allocation attempts per sample before giving up on invalid distributions.
    #[arg(long, default_value_t = 20)]
    max_attempts: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// Allocation samples per trial.
    #[arg(long, default_value_t = 1)]
    samples: usize,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "instance.json")]
    out: PathBuf,
    /// Also write the synthetic task trace behind the instance.
    #[arg(long)]
    tasks_out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Instance JSON.
    instance: PathBuf,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    common: Common,
    /// Instance JSON; a random instance when absent.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    bidder: usize,
    /// True value of the bid; its price when absent.
    #[arg(long)]
    valuation: Option<f64>,
    /// Misreport multipliers, comma separated.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 5)]
    bids: usize,
    #[arg(long, default_value_t = 1)]
    resources: usize,
    #[arg(long, default_value_t = 1)]
    datacenters: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', default_value = "20,40,80,160")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 2)]
    resources: usize,
    #[arg(long, default_value_t = 1)]
    datacenters: usize,
}

fn spec_from(common: &Common, inst: &InstanceArgs, trials: usize) -> ExperimentSpec {
    ExperimentSpec {
        epsilon: common.epsilon(),
        users: inst.users,
        max_bids_per_user: inst.max_bids_per_user,
        datacenters: inst.datacenters,
        resources: inst.resources,
        trials,
        seed: common.seed,
        jobs: common.jobs,
        policy: common.policy.into(),
        max_attempts: inst.max_attempts,
        front_cap: common.front_cap,
        source: match inst.source {
            Source::Trace => InstanceSource::Trace { tasks: inst.tasks.clone() },
            Source::Random => InstanceSource::Random,
            Source::SmallBid => InstanceSource::SmallBid,
        },
        trace_jobs: inst.trace_jobs,
        vm_types: inst.vm_types,
        ..Default::default()
    }
}

fn out_path(common: &Common, command: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(format!("{command}.csv")))
}

fn emit<C: serde::Serialize>(path: &Path, command: &str, seed: u64, config: &C, report: &Report) -> Result<()> {
    let sidecar = write_artifacts(path, &report.table, command, seed, config, &report.summary)?;
    eprintln!("wrote {} and {}", path.display(), sidecar.display());
    println!("{}", serde_json::to_string(&report.summary)?);
    Ok(())
}

fn eval(name: &str, args: &EvalArgs, f: fn(&ExperimentSpec, usize) -> Result<Report>) -> Result<()> {
    let spec = spec_from(&args.common, &args.instance, args.trials);
    let report = f(&spec, args.samples)?;
    let config = json!({ "spec": spec, "samples": args.samples });
    emit(&out_path(&args.common, name), name, spec.seed, &config, &report)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => {
            let common = Common {
                epsilon: Some(a.epsilon),
                seed: a.seed,
                jobs: 1,
                policy: Policy::Reject,
                front_cap: HARNESS_FRONT_CAP,
                out: None,
            };
            let spec = spec_from(&common, &a.instance, 1);
            let inst = experiments::generate(&spec)?;
            write_instance(&a.out, &inst, Some(spec.epsilon))?;
            eprintln!("wrote {}", a.out.display());
            if let Some(path) = &a.tasks_out {
                if !matches!(spec.source, InstanceSource::Trace { tasks: None }) {
                    return Err(HarnessError::Usage("--tasks-out needs the synthetic trace source".into()));
                }
                std::fs::write(path, experiments::generate_tasks_csv(&spec)?)?;
                eprintln!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Run(a) => {
            let (inst, file_eps) = read_instance(&a.instance)?;
            let eps = a.common.epsilon.or(file_eps).unwrap_or(DEFAULT_EPSILON);
            let mut opts = vm_auction::AllocateOptions { policy: a.common.policy.into(), ..Default::default() };
            opts.solver.front_cap = a.common.front_cap;
            let (report, outcome) = experiments::run_once(&inst, eps, a.common.seed, &opts)?;
            let path = out_path(&a.common, "run");
            let config = json!({ "instance": a.instance, "epsilon": eps });
            emit(&path, "run", a.common.seed, &config, &report)?;
            let trace_path = sidecar_path(&path).with_file_name(format!(
                "{}.trace.json",
                path.file_stem().unwrap_or_default().to_string_lossy()
            ));
            let trace = json!({ "trace": outcome.trace, "marginal_traces": outcome.marginal_traces });
            std::fs::write(&trace_path, serde_json::to_string_pretty(&trace)? + "\n")?;
            Ok(())
        }
        Command::EvalRatio(a) => eval("eval-ratio", &a, experiments::eval_ratio),
        Command::EvalWelfare(a) => eval("eval-welfare", &a, experiments::eval_welfare),
        Command::EvalSatisfaction(a) => eval("eval-satisfaction", &a, experiments::eval_satisfaction),
        Command::CompareBaseline(a) => eval("compare-baseline", &a, experiments::compare_baseline),
        Command::ProbeTruthfulness(a) => {
            let inst = match &a.instance {
                Some(p) => read_instance(p)?.0,
                None => experiments::probe_default_instance(a.bids, a.resources, a.datacenters, a.common.seed)?,
            };
            let probe = ProbeSpec {
                bidder: a.bidder,
                valuation: a.valuation,
                grid: a.grid.clone().unwrap_or_else(ProbeSpec::default_grid),
                samples: a.samples,
            };
            let mut opts = vm_auction::AllocateOptions { policy: a.common.policy.into(), ..Default::default() };
            opts.solver.front_cap = a.common.front_cap;
            let result = experiments::probe_instance(&inst, a.common.epsilon(), a.common.seed, &probe, &opts)?;
            let report = experiments::probe_report(&result);
            let config = json!({ "probe": probe, "epsilon": a.common.epsilon(), "instance": a.instance });
            emit(&out_path(&a.common, "probe-truthfulness"), "probe-truthfulness", a.common.seed, &config, &report)
        }
        Command::BenchFront(a) => {
            let spec = BenchSpec {
                sizes: a.sizes.clone(),
                trials: a.trials,
                resources: a.resources,
                datacenters: a.datacenters,
                epsilon: a.common.epsilon(),
                seed: a.common.seed,
                jobs: a.common.jobs,
                front_cap: a.common.front_cap,
                ..Default::default()
            };
            let report = experiments::bench_front(&spec)?;
            emit(&out_path(&a.common, "bench-front"), "bench-front", spec.seed, &spec, &report)
        }
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
