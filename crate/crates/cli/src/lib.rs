//! Experiment harness behind the `vm-auction` binary.
//!
//! Every command draws all of its randomness from one master seed: trial `t`
//! uses `derive_seed(seed, Trial, t)` for both its instance and its auction
//! runs, so tables are reproducible regardless of the number of worker
//! threads.

pub mod experiments;
pub mod output;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;
use vm_auction::allocate::{allocate, AllocateOptions, AllocationRun, DistributionPolicy};
use vm_auction::ingest::{build_instance, parse_tasks, synthetic_tasks, IngestConfig};
use vm_auction::model::{Allocation, AuctionInstance};
use vm_auction::rng::{derive_seed, stream, StreamTag};
use vm_auction::synth::{random_instance, small_bid_instance, SynthConfig};
use vm_auction::AuctionError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INGEST: i32 = 3;
pub const EXIT_SOLVER_CAP: i32 = 4;
pub const EXIT_DISTRIBUTION: i32 = 5;

/// Front-size cap used by the harness. Much lower than the library default
/// so that oversized instances fail fast instead of exhausting memory.
pub const HARNESS_FRONT_CAP: usize = 200_000;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Auction(#[from] AuctionError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => EXIT_USAGE,
            HarnessError::Io(_) | HarnessError::Csv(_) | HarnessError::Json(_) => EXIT_INGEST,
            HarnessError::Pool(_) => EXIT_FAILURE,
            HarnessError::Auction(e) => match e.root() {
                AuctionError::Parameter(_) => EXIT_USAGE,
                AuctionError::Schema(_) | AuctionError::Ingest(_) | AuctionError::Io(_) | AuctionError::Json(_) => {
                    EXIT_INGEST
                }
                AuctionError::FrontCap { .. } => EXIT_SOLVER_CAP,
                AuctionError::InvalidDistribution { .. } => EXIT_DISTRIBUTION,
                _ => EXIT_FAILURE,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Where trial instances come from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceSource {
    /// Task trace turned into bids; synthetic tasks when no file is given.
    Trace { tasks: Option<PathBuf> },
    /// Uniform random prices and demands; `users * max_bids_per_user` bids
    /// spread over the users at random, each user holding at least one.
    Random,
    /// Like `Random` with capacities large enough to pass the small-bid check.
    SmallBid,
}

/// Settings shared by all experiment commands.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub epsilon: f64,
    pub users: usize,
    pub max_bids_per_user: usize,
    pub datacenters: usize,
    pub resources: usize,
    pub trials: usize,
    pub seed: u64,
    /// Worker threads; 0 lets rayon decide.
    pub jobs: usize,
    pub policy: DistributionPolicy,
    /// Extra allocation attempts after an invalid distribution, each with a
    /// fresh seed. Every failed attempt is counted.
    pub max_attempts: usize,
    pub front_cap: usize,
    pub source: InstanceSource,
    /// Jobs in the synthetic task trace.
    pub trace_jobs: usize,
    pub vm_types: usize,
    pub unit_prices: Vec<f64>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            users: 500,
            max_bids_per_user: 4,
            datacenters: 8,
            resources: 3,
            trials: 50,
            seed: 0,
            jobs: 0,
            policy: DistributionPolicy::Reject,
            max_attempts: 20,
            front_cap: HARNESS_FRONT_CAP,
            source: InstanceSource::Trace { tasks: None },
            trace_jobs: 0,
            vm_types: 1000,
            unit_prices: IngestConfig::default().unit_prices,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        vm_auction::model::validate_epsilon(self.epsilon)?;
        if self.users == 0 || self.max_bids_per_user == 0 || self.datacenters == 0 || self.resources == 0 {
            return Err(HarnessError::Usage("users, max bids, datacenters and resources must be positive".into()));
        }
        if self.max_attempts == 0 {
            return Err(HarnessError::Usage("max attempts must be positive".into()));
        }
        if matches!(self.source, InstanceSource::Trace { .. }) && self.resources != vm_auction::ingest::RESOURCES {
            return Err(HarnessError::Usage("trace instances always have 3 resources (cpu, ram, disk)".into()));
        }
        Ok(())
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        derive_seed(self.seed, StreamTag::Trial, trial as u64)
    }

    pub fn allocate_options(&self) -> AllocateOptions {
        let mut opts = AllocateOptions { policy: self.policy, ..Default::default() };
        opts.solver.front_cap = self.front_cap;
        opts
    }

    fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            bids: self.users * self.max_bids_per_user,
            users: self.users,
            resources: self.resources,
            datacenters: self.datacenters,
            ..Default::default()
        }
    }

    fn ingest_config(&self, seed: u64) -> IngestConfig {
        IngestConfig {
            users: self.users,
            max_bids_per_user: self.max_bids_per_user,
            datacenters: self.datacenters,
            unit_prices: self.unit_prices.clone(),
            vm_types: self.vm_types,
            seed,
            ..Default::default()
        }
    }

    /// The instance of one trial.
    pub fn instance(&self, trial_seed: u64) -> Result<AuctionInstance> {
        let mut rng = stream(trial_seed, StreamTag::Instance, 0);
        Ok(match &self.source {
            InstanceSource::Random => random_instance(&self.synth_config(), &mut rng)?,
            InstanceSource::SmallBid => small_bid_instance(&self.synth_config(), self.epsilon, (1.0, 2.0), &mut rng)?,
            InstanceSource::Trace { tasks } => {
                let tasks = match tasks {
                    Some(path) => parse_tasks(path)?.records,
                    None => {
                        let jobs = if self.trace_jobs == 0 { 2 * self.users } else { self.trace_jobs };
                        synthetic_tasks(jobs, 4, &mut rng)
                    }
                };
                build_instance(&tasks, &self.ingest_config(trial_seed))?
            }
        })
    }

    /// Runs `f(trial, trial_seed)` for every trial on the worker pool;
    /// results come back in trial order.
    pub fn run_trials<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, u64) -> Result<T> + Sync,
    {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(self.jobs).build()?;
        pool.install(|| (0..self.trials).into_par_iter().map(|t| f(t, self.trial_seed(t))).collect())
    }
}

/// One allocation, retried with fresh seeds while the distribution is
/// invalid. Returns the run and the number of invalid attempts.
pub fn allocate_counting(
    instance: &AuctionInstance,
    epsilon: f64,
    seed: u64,
    options: &AllocateOptions,
    max_attempts: usize,
) -> Result<(AllocationRun, usize)> {
    let mut invalid = 0;
    loop {
        let attempt_seed = if invalid == 0 { seed } else { derive_seed(seed, StreamTag::Retry, invalid as u64) };
        match allocate(instance, epsilon, attempt_seed, options) {
            Ok(run) => return Ok((run, invalid)),
            Err(e) if matches!(e.root(), AuctionError::InvalidDistribution { .. }) => {
                invalid += 1;
                if invalid >= max_attempts {
                    return Err(e.into());
                }
            }
            Err(e) => return Err(e.into()),
        }
    }
}

/// Share of users winning at least one bid. An instance without users
/// counts as 0.
pub fn user_satisfaction(instance: &AuctionInstance, allocation: &Allocation) -> f64 {
    if instance.user_count() == 0 {
        return 0.0;
    }
    let mut won = vec![false; instance.user_count()];
    for i in allocation.winners() {
        won[instance.bid_user()[i]] = true;
    }
    won.iter().filter(|w| **w).count() as f64 / instance.user_count() as f64
}

/// Per-trial satisfaction and its mean.
pub fn eval_user_satisfaction(outcomes: &[(&AuctionInstance, &Allocation)]) -> (Vec<f64>, f64) {
    let per: Vec<f64> = outcomes.iter().map(|(i, a)| user_satisfaction(i, a)).collect();
    let m = output::mean(per.iter().copied());
    (per, m)
}
