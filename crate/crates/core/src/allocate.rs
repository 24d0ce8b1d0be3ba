//! Randomized `(1 - eps)`-approximate allocation.
//!
//! One run draws theta, solves the perturbed problem exactly for `x_p`, and
//! samples the final allocation from
//!
//! ```text
//! Pr[x_p] = 1 - eps/2
//! Pr[l_i] = sum_j theta0_j x_p[j] / N        for every bid i
//! Pr[0]   = eps/2 - sum_j theta0_j x_p[j]
//! ```
//!
//! whose mean is `P^T x_p`. `Pr[0]` is negative whenever the basis mass
//! exceeds `eps/2`; by default that is reported as an error.
//!
//! Bids that do not fit the capacities on their own are removed before the
//! run (their `l_i` would not be a feasible allocation); the trace lists them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AuctionError, Result};
use crate::model::{validate_epsilon, Allocation, AuctionInstance};
use crate::perturb::{draw_thetas, perturb_instance, ThetaDraw};
use crate::rng::{stream, StreamTag};
use crate::solver::{solve_exact, SolverOptions};

/// What to do when the zero allocation would get negative probability.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistributionPolicy {
    #[default]
    Reject,
    /// Scale the basis probabilities down so that `Pr[0] = 0`. This departs
    /// from the published distribution and is flagged in the trace.
    Renormalize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub enum ThetaMode {
    #[default]
    Random,
    /// theta = 0 everywhere.
    Zero,
    /// Replay a recorded draw. Its shape must match the bids that survive
    /// the individual-feasibility filter.
    Fixed(ThetaDraw),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum SamplingMode {
    #[default]
    Random,
    /// Always return `x_p`.
    ForcePerturbedOptimum,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AllocateOptions {
    pub theta: ThetaMode,
    pub sampling: SamplingMode,
    pub policy: DistributionPolicy,
    pub solver: SolverOptions,
}

impl AllocateOptions {
    /// theta = 0 and the sample pinned to `x_p`.
    pub fn derandomized() -> Self {
        Self { theta: ThetaMode::Zero, sampling: SamplingMode::ForcePerturbedOptimum, ..Self::default() }
    }
}

/// Finite-support distribution over `x_p`, the basis allocations and zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationDistribution {
    pub x_p: Allocation,
    pub p_perturbed_optimum: f64,
    pub p_basis: f64,
    pub p_zero: f64,
    pub renormalized: bool,
}

/// Which support member a sample landed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampledOutcome {
    PerturbedOptimum,
    Basis(usize),
    Zero,
}

impl AllocationDistribution {
    pub fn bids(&self) -> usize {
        self.x_p.len()
    }

    /// Support in order `x_p, l_0, ..., l_{N-1}, 0` with probabilities.
    pub fn support(&self) -> impl Iterator<Item = (SampledOutcome, f64)> + '_ {
        std::iter::once((SampledOutcome::PerturbedOptimum, self.p_perturbed_optimum))
            .chain((0..self.bids()).map(|i| (SampledOutcome::Basis(i), self.p_basis)))
            .chain(std::iter::once((SampledOutcome::Zero, self.p_zero)))
    }

    pub fn total_mass(&self) -> f64 {
        self.support().map(|(_, p)| p).sum()
    }

    pub fn realize(&self, outcome: SampledOutcome) -> Allocation {
        match outcome {
            SampledOutcome::PerturbedOptimum => self.x_p.clone(),
            SampledOutcome::Basis(i) => Allocation::unit(self.bids(), i),
            SampledOutcome::Zero => Allocation::zeros(self.bids()),
        }
    }

    /// Inverse-CDF draw using one uniform from `rng`.
    pub fn sample_outcome<R: Rng + ?Sized>(&self, rng: &mut R) -> SampledOutcome {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last_positive = SampledOutcome::PerturbedOptimum;
        for (outcome, p) in self.support() {
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last_positive = outcome;
            if u < acc {
                return outcome;
            }
        }
        last_positive
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Allocation {
        self.realize(self.sample_outcome(rng))
    }
}

/// Builds the sampling distribution for `x_p`. `instance` must be the
/// (unperturbed) instance theta was drawn for; every basis allocation is
/// checked against it.
pub fn build_distribution(
    x_p: &Allocation,
    theta: &ThetaDraw,
    instance: &AuctionInstance,
    policy: DistributionPolicy,
) -> Result<AllocationDistribution> {
    let n = instance.bid_count();
    assert_eq!(x_p.len(), n, "x_p length does not match the instance");
    assert_eq!(theta.bids(), n, "theta does not match the instance");
    let problem = instance.problem();
    if let Some(bid) = (0..n).find(|&i| !problem.fits_alone(i)) {
        return Err(AuctionError::InfeasibleBasis { bid });
    }
    let eps = theta.epsilon();
    let mass = theta.basis_mass(x_p);
    let p_perturbed_optimum = 1.0 - eps / 2.0;
    if mass <= eps / 2.0 {
        return Ok(AllocationDistribution {
            x_p: x_p.clone(),
            p_perturbed_optimum,
            p_basis: mass / n as f64,
            p_zero: eps / 2.0 - mass,
            renormalized: false,
        });
    }
    match policy {
        DistributionPolicy::Reject => {
            Err(AuctionError::InvalidDistribution { remainder: eps / 2.0 - mass, basis_mass: mass })
        }
        DistributionPolicy::Renormalize => Ok(AllocationDistribution {
            x_p: x_p.clone(),
            p_perturbed_optimum,
            p_basis: eps / 2.0 / n as f64,
            p_zero: 0.0,
            renormalized: true,
        }),
    }
}

/// Audit record of one allocation run. Bid indices refer to the full
/// instance; `theta`, `distribution` and `sampled` refer to the retained bids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationTrace {
    pub seed: u64,
    pub epsilon: f64,
    pub retained_bids: Vec<usize>,
    pub excluded_bids: Vec<usize>,
    pub theta: Option<ThetaDraw>,
    pub x_p: Option<Allocation>,
    pub perturbed_welfare: Option<f64>,
    pub front_size: Option<usize>,
    pub distribution: Option<AllocationDistribution>,
    pub sampled: Option<SampledOutcome>,
}

#[derive(Debug, Clone)]
pub struct AllocationRun {
    pub allocation: Allocation,
    pub trace: AllocationTrace,
}

impl AllocationRun {
    /// `E[y]` in full-instance coordinates, computed from the distribution.
    pub fn expected_allocation(&self) -> Vec<f64> {
        let n = self.allocation.len();
        let mut out = vec![0.0; n];
        if let Some(dist) = &self.trace.distribution {
            for (outcome, p) in dist.support() {
                for j in dist.realize(outcome).winners() {
                    out[self.trace.retained_bids[j]] += p;
                }
            }
        }
        out
    }
}

fn wrap(err: AuctionError, trace: &AllocationTrace) -> AuctionError {
    AuctionError::Allocation { source: Box::new(err), trace: Box::new(trace.clone()) }
}

/// One run of the randomized allocation. theta and the final sample come
/// from disjoint streams of `seed`.
pub fn allocate(
    instance: &AuctionInstance,
    epsilon: f64,
    seed: u64,
    options: &AllocateOptions,
) -> Result<AllocationRun> {
    validate_epsilon(epsilon)?;
    let n = instance.bid_count();
    let problem = instance.problem();
    let (retained_bids, excluded_bids): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| problem.fits_alone(i));
    let mut trace = AllocationTrace {
        seed,
        epsilon,
        retained_bids,
        excluded_bids,
        theta: None,
        x_p: None,
        perturbed_welfare: None,
        front_size: None,
        distribution: None,
        sampled: None,
    };
    if trace.retained_bids.is_empty() {
        return Ok(AllocationRun { allocation: Allocation::zeros(n), trace });
    }

    let reduced =
        if trace.excluded_bids.is_empty() { None } else { Some(instance.subset(&trace.retained_bids)) };
    let reduced = reduced.as_ref().unwrap_or(instance);
    let m = reduced.bid_count();
    let kd = reduced.constraint_count();

    let theta = match &options.theta {
        ThetaMode::Random => draw_thetas(epsilon, m, kd, seed)?,
        ThetaMode::Zero => ThetaDraw::zero(epsilon, m, kd)?,
        ThetaMode::Fixed(t) => {
            if t.bids() != m || t.constraints() != kd || t.epsilon() != epsilon {
                return Err(AuctionError::Parameter(format!(
                    "replayed theta is {}x{} with eps {}, run needs {kd}x{m} with eps {epsilon}",
                    t.constraints(),
                    t.bids(),
                    t.epsilon()
                )));
            }
            t.clone()
        }
    };
    trace.theta = Some(theta.clone());

    let perturbed = perturb_instance(reduced, &theta);
    let solution = solve_exact(&perturbed.problem(), options.solver).map_err(|e| wrap(e, &trace))?;
    trace.x_p = Some(solution.allocation.clone());
    trace.perturbed_welfare = Some(solution.welfare);
    trace.front_size = Some(solution.front_size);

    let dist = build_distribution(&solution.allocation, &theta, reduced, options.policy)
        .map_err(|e| wrap(e, &trace))?;
    let outcome = match options.sampling {
        SamplingMode::Random => dist.sample_outcome(&mut stream(seed, StreamTag::Sample, 0)),
        SamplingMode::ForcePerturbedOptimum => SampledOutcome::PerturbedOptimum,
    };
    let reduced_y = dist.realize(outcome);
    trace.distribution = Some(dist);
    trace.sampled = Some(outcome);

    let mut allocation = Allocation::zeros(n);
    for j in reduced_y.winners() {
        allocation.set(trace.retained_bids[j], true);
    }
    Ok(AllocationRun { allocation, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn two_bid_instance() -> AuctionInstance {
        AuctionInstance::builder(1, 1)
            .capacities(vec![10.0])
            .bid("a", 5.0, &[4.0])
            .bid("b", 4.0, &[4.0])
            .build()
            .unwrap()
    }

    #[test]
    fn distribution_examples() {
        let inst = two_bid_instance();
        let theta = ThetaDraw::from_rows(0.1, vec![vec![0.05, 0.05]]).unwrap();
        let d = build_distribution(&Allocation::from_bits(&[1, 0]), &theta, &inst, DistributionPolicy::Reject).unwrap();
        assert!((d.p_perturbed_optimum - 0.95).abs() < 1e-15);
        assert!((d.p_basis - 0.025).abs() < 1e-15);
        assert!(d.p_zero.abs() < 1e-15);
        assert!((d.total_mass() - 1.0).abs() < 1e-12);

        let z = build_distribution(&Allocation::zeros(2), &theta, &inst, DistributionPolicy::Reject).unwrap();
        assert_eq!(z.p_basis, 0.0);
        assert!((z.p_zero - 0.05).abs() < 1e-15);

        let err = build_distribution(&Allocation::from_bits(&[1, 1]), &theta, &inst, DistributionPolicy::Reject)
            .unwrap_err();
        match err {
            AuctionError::InvalidDistribution { remainder, basis_mass } => {
                assert!((remainder + 0.05).abs() < 1e-12);
                assert!((basis_mass - 0.1).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn renormalize_policy_is_flagged() {
        let inst = two_bid_instance();
        let theta = ThetaDraw::from_rows(0.1, vec![vec![0.05, 0.05]]).unwrap();
        let d = build_distribution(&Allocation::from_bits(&[1, 1]), &theta, &inst, DistributionPolicy::Renormalize)
            .unwrap();
        assert!(d.renormalized);
        assert_eq!(d.p_zero, 0.0);
        assert!((d.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_basis_is_reported() {
        let inst = AuctionInstance::builder(1, 1)
            .capacities(vec![3.0])
            .bid("a", 5.0, &[2.0])
            .bid("b", 4.0, &[4.0])
            .build()
            .unwrap();
        let theta = ThetaDraw::zero(0.1, 2, 1).unwrap();
        let err = build_distribution(&Allocation::zeros(2), &theta, &inst, DistributionPolicy::Reject).unwrap_err();
        assert!(matches!(err, AuctionError::InfeasibleBasis { bid: 1 }));
    }

    #[test]
    fn degenerate_distribution_always_returns_xp() {
        let d = AllocationDistribution {
            x_p: Allocation::from_bits(&[0, 1]),
            p_perturbed_optimum: 1.0,
            p_basis: 0.0,
            p_zero: 0.0,
            renormalized: false,
        };
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..1000 {
            assert_eq!(d.sample(&mut rng), Allocation::from_bits(&[0, 1]));
        }
    }

    #[test]
    fn single_feasible_bid_zero_theta() {
        let inst = AuctionInstance::builder(1, 1).capacities(vec![1.0]).bid("a", 2.0, &[1.0]).build().unwrap();
        let opts = AllocateOptions { theta: ThetaMode::Zero, ..Default::default() };
        let mut ones = 0;
        for seed in 0..2000 {
            let run = allocate(&inst, 0.2, seed, &opts).unwrap();
            let dist = run.trace.distribution.as_ref().unwrap();
            assert_eq!(dist.x_p, Allocation::from_bits(&[1]));
            assert!((dist.p_perturbed_optimum - 0.9).abs() < 1e-15);
            assert!((dist.p_zero - 0.1).abs() < 1e-15);
            ones += usize::from(run.allocation.get(0));
        }
        // Binomial(2000, 0.9): mean 1800, sd 13.4.
        assert!((1740..=1860).contains(&ones), "{ones}");
    }

    #[test]
    fn empty_instance_allocates_nothing() {
        let inst = AuctionInstance::builder(1, 1).capacities(vec![1.0]).build().unwrap();
        let run = allocate(&inst, 0.05, 1, &AllocateOptions::default()).unwrap();
        assert!(run.allocation.is_empty());
    }

    #[test]
    fn individually_infeasible_bids_are_excluded() {
        let inst = AuctionInstance::builder(1, 1)
            .capacities(vec![5.0])
            .bid("a", 9.0, &[6.0])
            .bid("b", 1.0, &[1.0])
            .build()
            .unwrap();
        let opts = AllocateOptions { policy: DistributionPolicy::Renormalize, ..Default::default() };
        let run = allocate(&inst, 0.05, 8, &opts).unwrap();
        assert_eq!(run.trace.excluded_bids, vec![0]);
        assert_eq!(run.trace.retained_bids, vec![1]);
        assert!(!run.allocation.get(0));
        assert_eq!(run.trace.theta.as_ref().unwrap().bids(), 1);
    }

    #[test]
    fn same_seed_same_run() {
        let inst = two_bid_instance();
        let a = allocate(&inst, 0.05, 77, &AllocateOptions::default()).unwrap();
        let b = allocate(&inst, 0.05, 77, &AllocateOptions::default()).unwrap();
        assert_eq!(a.allocation, b.allocation);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn rejects_bad_epsilon() {
        let inst = two_bid_instance();
        assert!(matches!(allocate(&inst, 1.5, 1, &AllocateOptions::default()), Err(AuctionError::Parameter(_))));
    }

    #[test]
    fn invalid_distribution_keeps_trace() {
        // Three bids that all win; with theta at its ceiling the basis mass
        // is eps > eps/2.
        let inst = AuctionInstance::builder(1, 1)
            .capacities(vec![10.0])
            .bid("a", 1.0, &[1.0])
            .bid("b", 1.0, &[1.0])
            .bid("c", 1.0, &[1.0])
            .build()
            .unwrap();
        let theta = ThetaDraw::from_rows(0.3, vec![vec![0.09, 0.09, 0.09]]).unwrap();
        let opts = AllocateOptions { theta: ThetaMode::Fixed(theta), ..Default::default() };
        let err = allocate(&inst, 0.3, 1, &opts).unwrap_err();
        match &err {
            AuctionError::Allocation { trace, .. } => {
                assert_eq!(trace.x_p.as_ref().unwrap(), &Allocation::from_bits(&[1, 1, 1]));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(err.root(), AuctionError::InvalidDistribution { .. }));
    }

    #[test]
    fn trace_serializes() {
        let opts = AllocateOptions { policy: DistributionPolicy::Renormalize, ..Default::default() };
        let run = allocate(&two_bid_instance(), 0.05, 5, &opts).unwrap();
        let json = serde_json::to_string(&run.trace).unwrap();
        let back: AllocationTrace = serde_json::from_str(&json).unwrap();
        assert_eq!(back, run.trace);
    }
}
