//! Greedy density allocation, used as a PDAA-proxy in comparisons. It is a
//! stand-in, not a reproduction of the primal-dual algorithm.

use std::cmp::Ordering;

use crate::model::{Allocation, AuctionInstance};

/// Label used for this baseline in every output.
pub const BASELINE_NAME: &str = "PDAA-proxy";

/// `b_i / sum_j (R_ij / c_j)`. Demand on a zero-capacity constraint makes
/// the bid worthless to the greedy pass; zero total demand is `None`.
fn density(instance: &AuctionInstance, i: usize) -> Option<f64> {
    let mut load = 0.0;
    for (r, c) in instance.demand().row(i).iter().zip(instance.capacities()) {
        if *r > 0.0 {
            load += if *c > 0.0 { r / c } else { f64::INFINITY };
        }
    }
    (load > 0.0).then(|| instance.prices()[i] / load)
}

/// Processing order: zero-demand bids first by descending price, then the
/// rest by descending density; ties go to the lower index.
pub fn greedy_order(instance: &AuctionInstance) -> Vec<usize> {
    let n = instance.bid_count();
    let keys: Vec<Option<f64>> = (0..n).map(|i| density(instance, i)).collect();
    let prices = instance.prices();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let by_key = match (keys[a], keys[b]) {
            (None, None) => prices[b].total_cmp(&prices[a]),
            (None, Some(_)) => Ordering::Less,
            (Some(_), None) => Ordering::Greater,
            (Some(x), Some(y)) => y.total_cmp(&x),
        };
        by_key.then(a.cmp(&b))
    });
    order
}

pub fn greedy_allocate(instance: &AuctionInstance) -> Allocation {
    let kd = instance.constraint_count();
    let caps = instance.capacities();
    let mut x = Allocation::zeros(instance.bid_count());
    let mut usage = vec![0.0; kd];
    let mut taken = vec![false; instance.user_count()];
    for i in greedy_order(instance) {
        let w = instance.bid_user()[i];
        if taken[w] {
            continue;
        }
        let row = instance.demand().row(i);
        if (0..kd).any(|j| usage[j] + row[j] > caps[j]) {
            continue;
        }
        for j in 0..kd {
            usage[j] += row[j];
        }
        taken[w] = true;
        x.set(i, true);
    }
    x
}
