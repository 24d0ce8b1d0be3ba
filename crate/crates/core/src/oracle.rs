//! Exhaustive reference implementations for small instances.
//!
//! Nothing here calls into the solver: subsets are enumerated directly and
//! feasibility, welfare and dominance are re-derived inline.

use crate::allocate::AllocationDistribution;
use crate::error::{AuctionError, Result};
use crate::model::{Allocation, FractionalAllocation, PackingProblem};

pub const DEFAULT_ORACLE_LIMIT: usize = 20;

struct Point {
    bits: u64,
    welfare: f64,
    usage: Vec<f64>,
    used: Vec<bool>,
}

fn check_limit(n: usize, limit: usize) -> Result<()> {
    if n > limit || n >= 64 {
        return Err(AuctionError::OracleLimit { bids: n, limit });
    }
    Ok(())
}

// Bit `n - 1 - i` of the mask is x_i, so increasing masks are increasing
// in lexicographic order of (x_0, x_1, ...).
fn mask_to_allocation(mask: u64, n: usize) -> Allocation {
    Allocation::from((0..n).map(|i| mask >> (n - 1 - i) & 1 == 1).collect::<Vec<_>>())
}

fn evaluate(problem: &PackingProblem<'_>, mask: u64, prefix: usize) -> Option<Point> {
    let n = prefix;
    let mut welfare = 0.0;
    let mut usage = vec![0.0; problem.capacities.len()];
    let mut used = vec![false; problem.user_count];
    for i in 0..n {
        if mask >> (n - 1 - i) & 1 == 0 {
            continue;
        }
        let w = problem.bid_user[i];
        if used[w] {
            return None;
        }
        used[w] = true;
        welfare += problem.prices[i];
        for (j, u) in usage.iter_mut().enumerate() {
            *u += problem.demand.get(i, j);
        }
    }
    if usage.iter().zip(problem.capacities).any(|(u, c)| u > c) {
        return None;
    }
    Some(Point { bits: mask, welfare, usage, used })
}

fn feasible_points(problem: &PackingProblem<'_>, prefix: usize) -> Vec<Point> {
    (0..1u64 << prefix).filter_map(|mask| evaluate(problem, mask, prefix)).collect()
}

/// Best feasible allocation by full enumeration; ties go to the
/// lexicographically smallest allocation.
pub fn brute_force_optimal(problem: &PackingProblem<'_>, limit: usize) -> Result<(Allocation, f64)> {
    let n = problem.prices.len();
    check_limit(n, limit)?;
    let mut best: Option<(u64, f64)> = None;
    for mask in 0..1u64 << n {
        if let Some(p) = evaluate(problem, mask, n) {
            if best.is_none_or(|(_, w)| p.welfare > w) {
                best = Some((mask, p.welfare));
            }
        }
    }
    let (mask, welfare) = best.expect("the empty allocation is always feasible");
    Ok((mask_to_allocation(mask, n), welfare))
}

/// Non-dominated feasible allocations. Exact duplicates in (welfare, usage)
/// are represented by their lexicographically smallest member.
pub fn brute_force_pareto(problem: &PackingProblem<'_>, limit: usize) -> Result<Vec<Allocation>> {
    let n = problem.prices.len();
    check_limit(n, limit)?;
    brute_force_stage_front(problem, n, limit)
}

/// The front over the first `stage` bids, where one prefix may only replace
/// another if it also leaves at least the same users free among those that
/// still have bids after `stage`. At `stage = N` this is plain Pareto
/// dominance.
pub fn brute_force_stage_front(problem: &PackingProblem<'_>, stage: usize, limit: usize) -> Result<Vec<Allocation>> {
    let n = problem.prices.len();
    check_limit(n, limit)?;
    assert!(stage <= n, "stage beyond the last bid");
    let mut later = vec![false; problem.user_count];
    for &w in &problem.bid_user[stage..] {
        later[w] = true;
    }
    let points = feasible_points(problem, stage);
    let covers = |a: &Point, b: &Point| -> bool {
        // a at least as good as b everywhere that matters for the future
        a.welfare >= b.welfare
            && a.usage.iter().zip(&b.usage).all(|(x, y)| x <= y)
            && (0..problem.user_count).all(|w| !(later[w] && a.used[w] && !b.used[w]))
    };
    let strictly_better = |a: &Point, b: &Point| -> bool {
        a.welfare > b.welfare || a.usage.iter().zip(&b.usage).any(|(x, y)| x < y)
    };
    let mut front = Vec::new();
    for b in &points {
        // equal welfare and usage: the lexicographically smaller prefix wins
        let pruned = points
            .iter()
            .any(|a| a.bits != b.bits && covers(a, b) && (strictly_better(a, b) || a.bits < b.bits));
        if pruned {
            continue;
        }
        front.push(mask_to_allocation(b.bits, stage));
    }
    Ok(front)
}

/// `E[y]` summed exactly over the finite support.
pub fn exact_expected_allocation(dist: &AllocationDistribution) -> FractionalAllocation {
    let mut out = vec![0.0; dist.bids()];
    for (outcome, p) in dist.support() {
        for i in dist.realize(outcome).winners() {
            out[i] += p;
        }
    }
    FractionalAllocation(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AuctionInstance;

    fn example_a() -> AuctionInstance {
        AuctionInstance::builder(1, 1)
            .capacities(vec![10.0])
            .bid("u1", 5.0, &[4.0])
            .bid("u2", 4.0, &[6.0])
            .bid("u3", 3.0, &[5.0])
            .build()
            .unwrap()
    }

    #[test]
    fn optimal_examples() {
        let empty = AuctionInstance::builder(1, 1).capacities(vec![1.0]).build().unwrap();
        assert_eq!(brute_force_optimal(&empty.problem(), 20).unwrap(), (Allocation::zeros(0), 0.0));

        let (x, w) = brute_force_optimal(&example_a().problem(), 20).unwrap();
        assert_eq!(x, Allocation::from_bits(&[1, 1, 0]));
        assert_eq!(w, 9.0);

        let big = AuctionInstance::builder(1, 1).capacities(vec![1.0]).bid("a", 5.0, &[2.0]).build().unwrap();
        assert_eq!(brute_force_optimal(&big.problem(), 20).unwrap(), (Allocation::zeros(1), 0.0));
    }

    #[test]
    fn optimal_ties_prefer_lexicographically_smallest() {
        let inst = AuctionInstance::builder(1, 1)
            .capacities(vec![1.0])
            .bid("a", 3.0, &[1.0])
            .bid("b", 3.0, &[1.0])
            .build()
            .unwrap();
        assert_eq!(brute_force_optimal(&inst.problem(), 20).unwrap().0, Allocation::from_bits(&[0, 1]));
    }

    #[test]
    fn pareto_examples() {
        let one = AuctionInstance::builder(1, 1).capacities(vec![2.0]).bid("a", 1.0, &[1.0]).build().unwrap();
        let mut f = brute_force_pareto(&one.problem(), 20).unwrap();
        f.sort();
        assert_eq!(f, vec![Allocation::from_bits(&[0]), Allocation::from_bits(&[1])]);

        let mut f = brute_force_pareto(&example_a().problem(), 20).unwrap();
        f.sort();
        let mut want: Vec<_> =
            [[0, 0, 0], [1, 0, 0], [1, 0, 1], [1, 1, 0]].iter().map(|b| Allocation::from_bits(b)).collect();
        want.sort();
        assert_eq!(f, want);

        let same = AuctionInstance::builder(1, 1)
            .capacities(vec![10.0])
            .bid("w", 2.0, &[1.0])
            .bid("w", 2.0, &[1.0])
            .bid("w", 2.0, &[1.0])
            .build()
            .unwrap();
        assert!(brute_force_pareto(&same.problem(), 20).unwrap().len() <= 2);
    }

    #[test]
    fn refuses_large_instances() {
        let mut b = AuctionInstance::builder(1, 1).capacities(vec![1.0]);
        for i in 0..21 {
            b = b.bid(format!("u{i}"), 1.0, &[0.1]);
        }
        let inst = b.build().unwrap();
        assert!(matches!(brute_force_optimal(&inst.problem(), 20), Err(AuctionError::OracleLimit { bids: 21, .. })));
        assert!(brute_force_pareto(&inst.problem(), 20).is_err());
    }

    #[test]
    fn expected_allocation_examples() {
        let degenerate = AllocationDistribution {
            x_p: Allocation::from_bits(&[1, 0, 1]),
            p_perturbed_optimum: 1.0,
            p_basis: 0.0,
            p_zero: 0.0,
            renormalized: false,
        };
        assert_eq!(exact_expected_allocation(&degenerate).0, vec![1.0, 0.0, 1.0]);

        let two = AllocationDistribution {
            x_p: Allocation::from_bits(&[1, 0]),
            p_perturbed_optimum: 0.95,
            p_basis: 0.025,
            p_zero: 0.0,
            renormalized: false,
        };
        let e = exact_expected_allocation(&two).0;
        assert!((e[0] - 0.975).abs() < 1e-15);
        assert!((e[1] - 0.025).abs() < 1e-15);
    }
}
