//! Exact winner determination by dynamic-programming enumeration of Pareto
//! optimal allocations.
//!
//! Stage `i` holds every non-dominated feasible allocation of the first `i`
//! bids. Stage `i + 1` is built from the two extensions of each stage-`i`
//! entry (reject / accept bid `i + 1`) followed by a pairwise pruning pass.
//!
//! Pruning compares welfare and per-constraint usage as in the usual Pareto
//! dominance, and additionally requires the pruning entry's set of *open*
//! winning users (users that already won and still have later bids) to be a
//! subset of the pruned entry's. Without that condition an entry can be
//! discarded in favour of one that has used up a user whose later bid belongs
//! to the optimum. After the last bid no user is open, so the final front is
//! exactly the set of non-dominated feasible allocations.
//!
//! Entries equal in welfare, usage and open users are duplicates; the one with
//! the lexicographically smallest allocation vector is kept.

use std::cmp::Ordering;
use std::io::Write;

use crate::error::{AuctionError, Result};
use crate::model::{Allocation, PackingProblem};

pub const DEFAULT_FRONT_CAP: usize = 5_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolverOptions {
    /// Abort with [`AuctionError::FrontCap`] once a stage exceeds this size.
    pub front_cap: usize,
    /// Recompute every cached welfare and usage from scratch after each stage.
    pub verify_sums: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { front_cap: DEFAULT_FRONT_CAP, verify_sums: false }
    }
}

/// Fixed-width bit set used for allocation prefixes and user sets.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct BitSet(Vec<u64>);

impl BitSet {
    pub fn new(bits: usize) -> Self {
        Self(vec![0; bits.div_ceil(64)])
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    pub fn clear(&mut self, i: usize) {
        self.0[i / 64] &= !(1 << (i % 64));
    }

    pub fn is_subset(&self, other: &BitSet) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a & !b == 0)
    }

    /// Lexicographic order of `(bit 0, bit 1, ...)` with `0 < 1`.
    pub fn lex_cmp(&self, other: &BitSet) -> Ordering {
        for (a, b) in self.0.iter().zip(&other.0) {
            let diff = a ^ b;
            if diff != 0 {
                let bit = diff.trailing_zeros();
                return if a >> bit & 1 == 0 { Ordering::Less } else { Ordering::Greater };
            }
        }
        Ordering::Equal
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().flat_map(|(w, word)| {
            let mut word = *word;
            std::iter::from_fn(move || {
                if word == 0 {
                    return None;
                }
                let b = word.trailing_zeros() as usize;
                word &= word - 1;
                Some(w * 64 + b)
            })
        })
    }
}

/// One allocation prefix with cached welfare and usage.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoEntry {
    x: BitSet,
    welfare: f64,
    usage: Vec<f64>,
    open_users: BitSet,
}

impl ParetoEntry {
    pub fn new(welfare: f64, usage: Vec<f64>) -> Self {
        Self { x: BitSet::new(0), welfare, usage, open_users: BitSet::new(0) }
    }

    pub fn welfare(&self) -> f64 {
        self.welfare
    }

    pub fn usage(&self) -> &[f64] {
        &self.usage
    }

    pub fn accepts(&self, bid: usize) -> bool {
        self.x.get(bid)
    }

    /// Users that won a bid in this prefix and still have bids later on.
    pub fn open_users(&self) -> impl Iterator<Item = usize> + '_ {
        self.open_users.iter_ones()
    }

    pub fn allocation(&self, stage: usize) -> Allocation {
        Allocation::from((0..stage).map(|i| self.x.get(i)).collect::<Vec<_>>())
    }
}

/// Pareto dominance on welfare and usage: `a` dominates `b` when it has no
/// less welfare, no more usage of any resource, and is strictly better in at
/// least one of these.
pub fn dominates(a: &ParetoEntry, b: &ParetoEntry) -> bool {
    assert_eq!(a.usage.len(), b.usage.len(), "entries come from different instances");
    if a.welfare < b.welfare {
        return false;
    }
    let mut strict = a.welfare > b.welfare;
    for (ua, ub) in a.usage.iter().zip(&b.usage) {
        if ua > ub {
            return false;
        }
        strict |= ua < ub;
    }
    strict
}

/// Candidates are visited in this order during pruning; any entry that
/// prunes another precedes it.
fn front_order(a: &ParetoEntry, b: &ParetoEntry) -> Ordering {
    b.welfare
        .total_cmp(&a.welfare)
        .then_with(|| {
            a.usage
                .iter()
                .zip(&b.usage)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| a.x.lex_cmp(&b.x))
}

#[derive(Debug, Clone)]
pub struct ParetoFront {
    pub stage: usize,
    pub entries: Vec<ParetoEntry>,
}

impl ParetoFront {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn allocations(&self) -> Vec<Allocation> {
        self.entries.iter().map(|e| e.allocation(self.stage)).collect()
    }

    /// Highest-welfare entry; on ties the first in front order.
    pub fn best(&self) -> &ParetoEntry {
        self.entries
            .iter()
            .reduce(|best, e| if e.welfare > best.welfare { e } else { best })
            .expect("a front always contains the empty allocation")
    }
}

/// Stage-by-stage driver. Most callers want [`pareto_front`] or
/// [`solve_exact`]; stepping is exposed for instrumentation.
pub struct ParetoDp<'a> {
    problem: PackingProblem<'a>,
    options: SolverOptions,
    last_bid: Vec<Option<usize>>,
    front: ParetoFront,
    stage_sizes: Vec<usize>,
    work: u64,
}

impl<'a> ParetoDp<'a> {
    pub fn new(problem: PackingProblem<'a>, options: SolverOptions) -> Self {
        let n = problem.bid_count();
        let kd = problem.constraint_count();
        let mut last_bid = vec![None; problem.user_count];
        for (i, &w) in problem.bid_user.iter().enumerate() {
            last_bid[w] = Some(i);
        }
        let root = ParetoEntry {
            x: BitSet::new(n),
            welfare: 0.0,
            usage: vec![0.0; kd],
            open_users: BitSet::new(problem.user_count),
        };
        Self {
            problem,
            options,
            last_bid,
            front: ParetoFront { stage: 0, entries: vec![root] },
            stage_sizes: Vec::with_capacity(n),
            work: 0,
        }
    }

    pub fn stage(&self) -> usize {
        self.front.stage
    }

    pub fn front(&self) -> &ParetoFront {
        &self.front
    }

    pub fn is_done(&self) -> bool {
        self.front.stage == self.problem.bid_count()
    }

    /// Advances by one bid. Returns `false` once every bid has been processed.
    pub fn step(&mut self) -> Result<bool> {
        if self.is_done() {
            return Ok(false);
        }
        let i = self.front.stage;
        let kd = self.problem.constraint_count();
        let price = self.problem.prices[i];
        let demand = self.problem.demand.row(i);
        let user = self.problem.bid_user[i];
        let user_closes = self.last_bid[user] == Some(i);

        let prev = std::mem::take(&mut self.front.entries);
        self.work += (kd * prev.len()) as u64;
        let mut candidates = Vec::with_capacity(prev.len() * 2);
        for e in &prev {
            if e.open_users.get(user) {
                continue;
            }
            if e.usage.iter().zip(demand).zip(self.problem.capacities).any(|((u, r), c)| u + r > *c) {
                continue;
            }
            let mut x = e.x.clone();
            x.set(i);
            let mut open_users = e.open_users.clone();
            if !user_closes {
                open_users.set(user);
            }
            candidates.push(ParetoEntry {
                x,
                welfare: e.welfare + price,
                usage: e.usage.iter().zip(demand).map(|(u, r)| u + r).collect(),
                open_users,
            });
        }
        for mut e in prev {
            if user_closes {
                e.open_users.clear(user);
            }
            candidates.push(e);
        }

        candidates.sort_by(front_order);
        let mut kept: Vec<ParetoEntry> = Vec::with_capacity(candidates.len());
        let mut checks = 0u64;
        for c in candidates {
            let mut pruned = false;
            for k in &kept {
                checks += 1;
                if k.welfare >= c.welfare
                    && k.usage.iter().zip(&c.usage).all(|(a, b)| a <= b)
                    && k.open_users.is_subset(&c.open_users)
                {
                    pruned = true;
                    break;
                }
            }
            if !pruned {
                kept.push(c);
            }
        }
        self.work += checks * (kd as u64 + 1);

        self.front.stage = i + 1;
        if kept.len() > self.options.front_cap {
            return Err(AuctionError::FrontCap { stage: i + 1, size: kept.len(), cap: self.options.front_cap });
        }
        self.front.entries = kept;
        self.stage_sizes.push(self.front.entries.len());
        if self.options.verify_sums {
            self.verify();
        }
        Ok(true)
    }

    fn verify(&self) {
        let stage = self.front.stage;
        for e in &self.front.entries {
            let mut welfare = 0.0;
            let mut usage = vec![0.0; self.problem.constraint_count()];
            for i in (0..stage).filter(|&i| e.x.get(i)) {
                welfare += self.problem.prices[i];
                for (u, r) in usage.iter_mut().zip(self.problem.demand.row(i)) {
                    *u += r;
                }
            }
            assert_eq!(welfare, e.welfare, "cached welfare drifted at stage {stage}");
            assert_eq!(usage, e.usage, "cached usage drifted at stage {stage}");
        }
    }

    pub fn finish(mut self) -> Result<FrontRun> {
        while self.step()? {}
        Ok(FrontRun { front: self.front, stage_sizes: self.stage_sizes, work: self.work })
    }
}

/// Final front plus instrumentation.
#[derive(Debug, Clone)]
pub struct FrontRun {
    pub front: ParetoFront,
    /// `|P(1)|, ..., |P(N)|`.
    pub stage_sizes: Vec<usize>,
    /// Coordinate operations spent: `KD` per extended entry plus `KD + 1`
    /// per pairwise dominance check.
    pub work: u64,
}

impl FrontRun {
    pub fn stage_sizes_nondecreasing(&self) -> bool {
        self.stage_sizes.windows(2).all(|w| w[0] <= w[1])
    }

    /// Writes the `(stage, front_size)` trace as CSV.
    pub fn write_stage_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["stage", "front_size"]).map_err(csv_err)?;
        for (i, s) in self.stage_sizes.iter().enumerate() {
            w.write_record([(i + 1).to_string(), s.to_string()]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> AuctionError {
    AuctionError::Io(std::io::Error::other(e))
}

pub fn pareto_front(problem: &PackingProblem<'_>, options: SolverOptions) -> Result<FrontRun> {
    ParetoDp::new(*problem, options).finish()
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub allocation: Allocation,
    pub welfare: f64,
    pub front_size: usize,
    pub stage_sizes: Vec<usize>,
    pub work: u64,
}

/// Maximum-welfare feasible allocation of `problem`.
pub fn solve_exact(problem: &PackingProblem<'_>, options: SolverOptions) -> Result<Solution> {
    let run = pareto_front(problem, options)?;
    let best = run.front.best();
    Ok(Solution {
        allocation: best.allocation(run.front.stage),
        welfare: best.welfare,
        front_size: run.front.len(),
        stage_sizes: run.stage_sizes,
        work: run.work,
    })
}
