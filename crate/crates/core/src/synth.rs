//! Random instance generators for tests, benchmarks and the harness.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AuctionError, Result};
use crate::model::{small_bid_threshold, AuctionInstance, InstanceBuilder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub bids: usize,
    /// Users sharing the bids; each gets at least one bid when `bids >= users`.
    pub users: usize,
    pub resources: usize,
    pub datacenters: usize,
    pub price_range: (f64, f64),
    pub demand_range: (f64, f64),
    /// Chance that a single demand entry is zero.
    pub zero_demand_prob: f64,
    /// `c_j` is the column total times a factor drawn from this range.
    pub capacity_fraction: (f64, f64),
    /// Interleave the bids of different users instead of grouping them.
    pub shuffle: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            bids: 8,
            users: 8,
            resources: 1,
            datacenters: 1,
            price_range: (1.0, 10.0),
            demand_range: (0.0, 1.0),
            zero_demand_prob: 0.0,
            capacity_fraction: (0.2, 0.8),
            shuffle: true,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi;
        if self.resources == 0 || self.datacenters == 0 {
            return Err(AuctionError::Parameter("K and D must be positive".into()));
        }
        if self.users == 0 && self.bids > 0 {
            return Err(AuctionError::Parameter("bids need at least one user".into()));
        }
        if !range_ok(self.price_range) || !range_ok(self.demand_range) || !range_ok(self.capacity_fraction) {
            return Err(AuctionError::Parameter("ranges must be finite, nonnegative and ordered".into()));
        }
        if !(0.0..=1.0).contains(&self.zero_demand_prob) {
            return Err(AuctionError::Parameter("zero_demand_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// User index of every bid, in bid order.
fn assign_users<R: Rng + ?Sized>(rng: &mut R, bids: usize, users: usize, shuffle: bool) -> Vec<usize> {
    let mut owner: Vec<usize> = (0..bids).map(|i| if i < users { i } else { rng.gen_range(0..users) }).collect();
    if shuffle {
        owner.shuffle(rng);
    } else {
        owner.sort_unstable();
    }
    owner
}

pub fn random_instance<R: Rng + ?Sized>(config: &SynthConfig, rng: &mut R) -> Result<AuctionInstance> {
    config.validate()?;
    let kd = config.resources * config.datacenters;
    let owner = assign_users(rng, config.bids, config.users, config.shuffle);
    let mut rows = Vec::with_capacity(config.bids);
    let mut prices = Vec::with_capacity(config.bids);
    for _ in 0..config.bids {
        prices.push(uniform(rng, config.price_range));
        rows.push(
            (0..kd)
                .map(|_| {
                    if rng.gen_bool(config.zero_demand_prob) {
                        0.0
                    } else {
                        uniform(rng, config.demand_range)
                    }
                })
                .collect::<Vec<f64>>(),
        );
    }
    let capacities =
        (0..kd).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() * uniform(rng, config.capacity_fraction)).collect();
    let mut b = InstanceBuilder::new(config.resources, config.datacenters).capacities(capacities);
    for ((w, price), row) in owner.into_iter().zip(prices).zip(rows) {
        b.push(format!("u{w}"), price, row, None);
    }
    b.build()
}

/// An instance passing the small-bid check at `epsilon`: every capacity is
/// at least `slack` times the smallest value that satisfies it.
pub fn small_bid_instance<R: Rng + ?Sized>(
    config: &SynthConfig,
    epsilon: f64,
    slack: (f64, f64),
    rng: &mut R,
) -> Result<AuctionInstance> {
    if !(slack.0 >= 1.0 && slack.0 <= slack.1 && slack.1.is_finite()) {
        return Err(AuctionError::Parameter("slack range must lie in [1, inf)".into()));
    }
    let base = random_instance(config, rng)?;
    let threshold = small_bid_threshold(base.constraint_count(), epsilon);
    let capacities: Vec<f64> = (0..base.constraint_count())
        .map(|j| {
            let peak = (0..base.bid_count()).map(|i| base.demand().get(i, j)).fold(0.0, f64::max);
            peak / threshold * uniform(rng, slack)
        })
        .collect();
    let mut b = InstanceBuilder::new(base.resources(), base.datacenters()).capacities(capacities);
    for i in 0..base.bid_count() {
        b.push(base.user_of(i).to_string(), base.prices()[i], base.demand().row(i).to_vec(), None);
    }
    b.build()
}
