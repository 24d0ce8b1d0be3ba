//! Measurable side of the near-optimality argument: repairing the original
//! optimum for the perturbed constraints by dropping bids in sorted order,
//! and the ratio of perturbed to original optimum.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{validate_epsilon, Allocation, AuctionInstance};
use crate::perturb::{perturb_instance, PerturbedInstance, ThetaDraw};
use crate::solver::{solve_exact, SolverOptions};

/// Bids removed while repairing one violated constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRound {
    pub constraint: usize,
    pub dropped: Vec<usize>,
    /// Perturbed demand on `constraint` removed in this round.
    pub dropped_demand: f64,
    /// Perturbed price removed in this round.
    pub dropped_price: f64,
    /// Largest unperturbed demand of any bid on `constraint`.
    pub max_base_demand: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairReport {
    pub x_minus: Allocation,
    /// Constraints violated by the input under perturbed demands, in the
    /// order they were repaired.
    pub violated: Vec<usize>,
    pub rounds: Vec<DropRound>,
    /// Dropped perturbed welfare over the input's perturbed welfare.
    pub dropped_welfare_fraction: f64,
    pub welfare_retained_fraction: f64,
}

/// Makes `x_star` feasible for the perturbed constraints. Violated
/// constraints are repaired in index order; within a round the accepted bids
/// are dropped by increasing `b_hat / R_hat_j` (ties to the lower index)
/// until the constraint holds. Drops are cumulative across rounds.
pub fn drop_on_sort(x_star: &Allocation, perturbed: &PerturbedInstance<'_>) -> RepairReport {
    let problem = perturbed.problem();
    let kd = problem.constraint_count();
    let mut x = x_star.clone();
    let usage = problem.usage(&x);
    let violated: Vec<usize> = (0..kd).filter(|&j| usage[j] > problem.capacities[j]).collect();

    let mut rounds = Vec::with_capacity(violated.len());
    for &j in &violated {
        let mut load = problem.usage(&x)[j];
        let mut order: Vec<usize> = x.winners().collect();
        let density = |i: usize| {
            let r = problem.demand.get(i, j);
            if r > 0.0 {
                problem.prices[i] / r
            } else {
                f64::INFINITY
            }
        };
        order.sort_by(|&a, &b| density(a).total_cmp(&density(b)).then(a.cmp(&b)));
        let mut round = DropRound {
            constraint: j,
            dropped: Vec::new(),
            dropped_demand: 0.0,
            dropped_price: 0.0,
            max_base_demand: (0..perturbed.base.bid_count())
                .map(|i| perturbed.base.demand().get(i, j))
                .fold(0.0, f64::max),
        };
        for i in order {
            if load <= problem.capacities[j] {
                break;
            }
            x.set(i, false);
            let r = problem.demand.get(i, j);
            load -= r;
            round.dropped.push(i);
            round.dropped_demand += r;
            round.dropped_price += problem.prices[i];
        }
        // float cancellation in `load` cannot leave the set infeasible
        while problem.usage(&x)[j] > problem.capacities[j] {
            let Some(i) = x.winners().min_by(|&a, &b| density(a).total_cmp(&density(b)).then(a.cmp(&b))) else {
                break;
            };
            x.set(i, false);
            round.dropped.push(i);
            round.dropped_demand += problem.demand.get(i, j);
            round.dropped_price += problem.prices[i];
        }
        rounds.push(round);
    }

    let total = problem.welfare(x_star);
    let dropped: f64 = rounds.iter().map(|r| r.dropped_price).sum();
    let dropped_welfare_fraction = if total > 0.0 { dropped / total } else { 0.0 };
    RepairReport {
        x_minus: x,
        violated,
        rounds,
        dropped_welfare_fraction,
        welfare_retained_fraction: 1.0 - dropped_welfare_fraction,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimumRatio {
    /// Optimum of the perturbed problem.
    pub popt: f64,
    /// Optimum of the original problem.
    pub opt: f64,
    /// `popt / opt`, undefined when `opt = 0`.
    pub ratio: Option<f64>,
}

pub fn lemma1_ratio(
    instance: &AuctionInstance,
    epsilon: f64,
    theta: &ThetaDraw,
    options: SolverOptions,
) -> Result<OptimumRatio> {
    validate_epsilon(epsilon)?;
    let perturbed = perturb_instance(instance, theta);
    let popt = solve_exact(&perturbed.problem(), options)?.welfare;
    let opt = solve_exact(&instance.problem(), options)?.welfare;
    Ok(OptimumRatio { popt, opt, ratio: (opt > 0.0).then(|| popt / opt) })
}
