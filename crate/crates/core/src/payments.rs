//! Randomized VCG payments and the complete auction.
//!
//! The payment of bid `i` for a realized allocation `y` is
//!
//! ```text
//! p_i = b_{-i}^T y_{-i} - (b^T y - b_i y_i)
//! ```
//!
//! where `y_{-i}` is an independent allocation run on the same instance with
//! bid `i` re-priced to zero (its demands stay in place). Realized payments
//! may be negative; only their expectation is the VCG externality.

use serde::{Deserialize, Serialize};

use crate::allocate::{allocate, AllocateOptions, AllocationTrace};
use crate::error::{AuctionError, Result};
use crate::model::{validate_epsilon, Allocation, AuctionInstance};
use crate::rng::{derive_seed, StreamTag};

/// Seed of the marginal run for bid `bid` under master seed `seed`.
pub fn marginal_seed(seed: u64, bid: usize) -> u64 {
    derive_seed(seed, StreamTag::Marginal, bid as u64)
}

/// Realized payment of `bid` plus the trace of its marginal run.
pub fn vcg_payment(
    instance: &AuctionInstance,
    epsilon: f64,
    bid: usize,
    y_eps: &Allocation,
    marginal_seed: u64,
    options: &AllocateOptions,
) -> Result<(f64, AllocationTrace)> {
    assert_eq!(y_eps.len(), instance.bid_count(), "allocation length does not match the instance");
    let without = instance.with_price(bid, 0.0);
    let run = allocate(&without, epsilon, marginal_seed, options)
        .map_err(|e| AuctionError::Marginal { bid, source: Box::new(e) })?;
    let others_without = without.social_welfare(&run.allocation);
    let others_with = instance.social_welfare(y_eps) - if y_eps.get(bid) { instance.prices()[bid] } else { 0.0 };
    Ok((others_without - others_with, run.trace))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuctionOutcome {
    pub seed: u64,
    pub allocation: Allocation,
    /// Raw payment of every bid, winners and losers alike.
    pub payments: Vec<f64>,
    /// Amount actually settled: the realized payment for winners, 0 for losers.
    pub charged: Vec<f64>,
    pub trace: AllocationTrace,
    pub marginal_traces: Vec<AllocationTrace>,
}

impl AuctionOutcome {
    pub fn revenue(&self) -> f64 {
        self.charged.iter().sum()
    }

    /// Writes `bid_id,user_id,price,won,payment_realized,payment_charged,seed`.
    pub fn write_csv<W: std::io::Write>(&self, instance: &AuctionInstance, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| AuctionError::Io(std::io::Error::other(e));
        w.write_record(["bid_id", "user_id", "price", "won", "payment_realized", "payment_charged", "seed"])
            .map_err(io)?;
        for i in 0..instance.bid_count() {
            w.write_record([
                i.to_string(),
                instance.user_of(i).to_string(),
                instance.prices()[i].to_string(),
                u8::from(self.allocation.get(i)).to_string(),
                self.payments[i].to_string(),
                self.charged[i].to_string(),
                self.seed.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One allocation run followed by a marginal run per bid. Marginal runs use
/// independent seeds derived from `seed` and the bid index.
pub fn run_auction(
    instance: &AuctionInstance,
    epsilon: f64,
    seed: u64,
    options: &AllocateOptions,
) -> Result<AuctionOutcome> {
    validate_epsilon(epsilon)?;
    let run = allocate(instance, epsilon, seed, options)?;
    let n = instance.bid_count();
    let mut payments = Vec::with_capacity(n);
    let mut marginal_traces = Vec::with_capacity(n);
    for i in 0..n {
        let (p, trace) = vcg_payment(instance, epsilon, i, &run.allocation, marginal_seed(seed, i), options)?;
        payments.push(p);
        marginal_traces.push(trace);
    }
    let charged = payments.iter().enumerate().map(|(i, p)| if run.allocation.get(i) { *p } else { 0.0 }).collect();
    Ok(AuctionOutcome { seed, allocation: run.allocation, payments, charged, trace: run.trace, marginal_traces })
}
