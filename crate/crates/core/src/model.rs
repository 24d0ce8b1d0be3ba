//! Auction data model: VM catalog, bids, instances and the feasibility and
//! welfare arithmetic of the winner-determination ILP.
//!
//! Packing constraints are flattened to a single index
//! `j = d * K + k` (zero-based resource `k`, datacenter `d`), so the last
//! constraint is resource `K - 1` in datacenter `D - 1`.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{AuctionError, Result};

/// Resource composition of every VM type on offer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmCatalog {
    resource_count: usize,
    vm_types: Vec<Vec<f64>>,
}

impl VmCatalog {
    pub fn new(resource_count: usize, vm_types: Vec<Vec<f64>>) -> Result<Self> {
        if resource_count == 0 {
            return Err(AuctionError::Schema("catalog needs at least one resource".into()));
        }
        if vm_types.is_empty() {
            return Err(AuctionError::Schema("catalog needs at least one VM type".into()));
        }
        for (m, r) in vm_types.iter().enumerate() {
            if r.len() != resource_count {
                return Err(AuctionError::Schema(format!(
                    "VM type {m} has {} resource entries, expected {resource_count}",
                    r.len()
                )));
            }
            if r.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(AuctionError::Schema(format!("VM type {m} has a negative or non-finite entry")));
            }
            if !r.iter().any(|v| *v > 0.0) {
                return Err(AuctionError::Schema(format!("VM type {m} consumes no resource")));
            }
        }
        Ok(Self { resource_count, vm_types })
    }

    pub fn resource_count(&self) -> usize {
        self.resource_count
    }

    pub fn len(&self) -> usize {
        self.vm_types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vm_types.is_empty()
    }

    pub fn vm_type(&self, m: usize) -> Option<&[f64]> {
        self.vm_types.get(m).map(Vec::as_slice)
    }

    pub fn vm_types(&self) -> &[Vec<f64>] {
        &self.vm_types
    }
}

/// `count` VMs of `vm_type` placed in `datacenter` (both zero-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VmRequest {
    pub vm_type: usize,
    pub datacenter: usize,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidRequest {
    pub user: String,
    pub price: f64,
    pub vm_counts: Vec<VmRequest>,
}

/// Demand row of a bid: entry `d * K + k` is `sum_m q[m][d] * r[m][k]`.
pub fn assemble_demands(bid: &BidRequest, catalog: &VmCatalog, datacenters: usize) -> Result<Vec<f64>> {
    let k_count = catalog.resource_count();
    let mut row = vec![0.0; k_count * datacenters];
    for req in &bid.vm_counts {
        let r = catalog.vm_type(req.vm_type).ok_or_else(|| {
            AuctionError::Schema(format!("bid of user {} references unknown VM type {}", bid.user, req.vm_type))
        })?;
        if req.datacenter >= datacenters {
            return Err(AuctionError::Schema(format!(
                "bid of user {} references datacenter {} but only {datacenters} exist",
                bid.user, req.datacenter
            )));
        }
        let base = req.datacenter * k_count;
        for (k, amount) in r.iter().enumerate() {
            row[base + k] += f64::from(req.count) * amount;
        }
    }
    Ok(row)
}

/// Row-major `rows x cols` matrix of nonnegative demands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandMatrix {
    cols: usize,
    data: Vec<f64>,
}

impl DemandMatrix {
    pub fn new(cols: usize, data: Vec<f64>) -> Self {
        assert!(cols > 0, "demand matrix needs at least one column");
        assert_eq!(data.len() % cols, 0, "demand data is not a whole number of rows");
        Self { cols, data }
    }

    pub fn from_rows(cols: usize, rows: &[Vec<f64>]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            assert_eq!(row.len(), cols, "ragged demand rows");
            data.extend_from_slice(row);
        }
        Self { cols, data }
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn column_sum(&self, j: usize) -> f64 {
        (0..self.rows()).map(|i| self.get(i, j)).sum()
    }
}

/// Accept/reject decision for every bid.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Allocation(Vec<bool>);

impl Allocation {
    pub fn zeros(n: usize) -> Self {
        Self(vec![false; n])
    }

    /// The basis allocation accepting only bid `i`.
    pub fn unit(n: usize, i: usize) -> Self {
        let mut x = Self::zeros(n);
        x.0[i] = true;
        x
    }

    pub fn from_winners(n: usize, winners: &[usize]) -> Self {
        let mut x = Self::zeros(n);
        for &i in winners {
            x.0[i] = true;
        }
        x
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        Self(bits.iter().map(|b| *b != 0).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn set(&mut self, i: usize, accepted: bool) {
        self.0[i] = accepted;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn winners(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, x)| **x).map(|(i, _)| i)
    }

    pub fn winner_count(&self) -> usize {
        self.0.iter().filter(|x| **x).count()
    }

    pub fn is_zero(&self) -> bool {
        !self.0.iter().any(|x| *x)
    }
}

impl From<Vec<bool>> for Allocation {
    fn from(v: Vec<bool>) -> Self {
        Self(v)
    }
}

impl fmt::Debug for Allocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, x) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(if *x { "1" } else { "0" })?;
        }
        f.write_str(")")
    }
}

/// A real-valued relaxation of an allocation, entries in `[0, 1 + eps]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FractionalAllocation(pub Vec<f64>);

impl FractionalAllocation {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, prices: &[f64]) -> f64 {
        assert_eq!(prices.len(), self.0.len(), "length mismatch");
        self.0.iter().zip(prices).map(|(x, b)| x * b).sum()
    }
}

/// Outcome of a feasibility check. Empty lists mean feasible.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FeasibilityReport {
    pub violated_constraints: Vec<usize>,
    /// Users (by group index) with more than one accepted bid.
    pub violated_users: Vec<usize>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violated_constraints.is_empty() && self.violated_users.is_empty()
    }
}

/// Borrowed view of the coefficients of one packing problem: prices,
/// demands, capacities and XOR groups. Both the original and the perturbed
/// problems are presented to the solver through this type.
#[derive(Debug, Clone, Copy)]
pub struct PackingProblem<'a> {
    pub prices: &'a [f64],
    pub demand: &'a DemandMatrix,
    pub capacities: &'a [f64],
    pub bid_user: &'a [usize],
    pub user_count: usize,
}

impl<'a> PackingProblem<'a> {
    pub fn bid_count(&self) -> usize {
        self.prices.len()
    }

    pub fn constraint_count(&self) -> usize {
        self.capacities.len()
    }

    fn check_len(&self, x: &Allocation) {
        assert_eq!(x.len(), self.bid_count(), "allocation length does not match the instance");
    }

    pub fn welfare(&self, x: &Allocation) -> f64 {
        self.check_len(x);
        let mut s = 0.0;
        for i in x.winners() {
            s += self.prices[i];
        }
        s
    }

    pub fn usage(&self, x: &Allocation) -> Vec<f64> {
        self.check_len(x);
        let mut c = vec![0.0; self.constraint_count()];
        for i in x.winners() {
            for (cj, r) in c.iter_mut().zip(self.demand.row(i)) {
                *cj += r;
            }
        }
        c
    }

    pub fn check_feasible(&self, x: &Allocation) -> FeasibilityReport {
        let usage = self.usage(x);
        let violated_constraints = usage
            .iter()
            .zip(self.capacities)
            .enumerate()
            .filter(|(_, (u, c))| u > c)
            .map(|(j, _)| j)
            .collect();
        let mut wins = vec![0usize; self.user_count];
        for i in x.winners() {
            wins[self.bid_user[i]] += 1;
        }
        let violated_users = wins.iter().enumerate().filter(|(_, n)| **n > 1).map(|(w, _)| w).collect();
        FeasibilityReport { violated_constraints, violated_users }
    }

    pub fn is_feasible(&self, x: &Allocation) -> bool {
        self.check_feasible(x).is_feasible()
    }

    /// Whether bid `i` fits the capacities on its own.
    pub fn fits_alone(&self, i: usize) -> bool {
        self.demand.row(i).iter().zip(self.capacities).all(|(r, c)| r <= c)
    }
}

/// Result of the small-bid test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmallBidCheck {
    pub max_ratio: f64,
    pub threshold: f64,
    pub passes: bool,
}

pub fn small_bid_threshold(constraints: usize, epsilon: f64) -> f64 {
    1.0 / (2.0 * constraints as f64 * (2.0 + 1.0 / epsilon))
}

pub fn validate_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(AuctionError::Parameter(format!("epsilon must lie in (0, 1), got {epsilon}")))
    }
}

/// One sealed-bid auction: bids in a fixed order, their demand matrix, and
/// per-constraint capacities.
#[derive(Debug, Clone, PartialEq)]
pub struct AuctionInstance {
    resources: usize,
    datacenters: usize,
    catalog: Option<VmCatalog>,
    users: Vec<String>,
    bid_user: Vec<usize>,
    prices: Vec<f64>,
    demand: DemandMatrix,
    capacities: Vec<f64>,
    vm_counts: Vec<Option<Vec<VmRequest>>>,
}

impl AuctionInstance {
    /// Builds an instance whose demand rows are assembled from VM counts.
    pub fn from_requests(
        catalog: VmCatalog,
        datacenters: usize,
        bids: Vec<BidRequest>,
        capacities: Vec<f64>,
    ) -> Result<Self> {
        let mut b = InstanceBuilder::new(catalog.resource_count(), datacenters).capacities(capacities);
        b.catalog = Some(catalog.clone());
        for bid in bids {
            let row = assemble_demands(&bid, &catalog, datacenters)?;
            b.push(bid.user, bid.price, row, Some(bid.vm_counts));
        }
        b.build()
    }

    pub fn builder(resources: usize, datacenters: usize) -> InstanceBuilder {
        InstanceBuilder::new(resources, datacenters)
    }

    pub fn resources(&self) -> usize {
        self.resources
    }

    pub fn datacenters(&self) -> usize {
        self.datacenters
    }

    pub fn constraint_count(&self) -> usize {
        self.resources * self.datacenters
    }

    pub fn constraint_index(&self, resource: usize, datacenter: usize) -> usize {
        datacenter * self.resources + resource
    }

    pub fn bid_count(&self) -> usize {
        self.prices.len()
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn bid_user(&self) -> &[usize] {
        &self.bid_user
    }

    pub fn user_of(&self, bid: usize) -> &str {
        &self.users[self.bid_user[bid]]
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn demand(&self) -> &DemandMatrix {
        &self.demand
    }

    pub fn capacities(&self) -> &[f64] {
        &self.capacities
    }

    pub fn catalog(&self) -> Option<&VmCatalog> {
        self.catalog.as_ref()
    }

    pub fn vm_counts(&self, bid: usize) -> Option<&[VmRequest]> {
        self.vm_counts[bid].as_deref()
    }

    pub fn problem(&self) -> PackingProblem<'_> {
        self.problem_with_prices(&self.prices)
    }

    /// The same constraints under a different price vector.
    pub fn problem_with_prices<'a>(&'a self, prices: &'a [f64]) -> PackingProblem<'a> {
        assert_eq!(prices.len(), self.bid_count(), "price vector length does not match the instance");
        PackingProblem {
            prices,
            demand: &self.demand,
            capacities: &self.capacities,
            bid_user: &self.bid_user,
            user_count: self.users.len(),
        }
    }

    pub fn social_welfare(&self, x: &Allocation) -> f64 {
        self.problem().welfare(x)
    }

    pub fn resource_usage(&self, x: &Allocation) -> Vec<f64> {
        self.problem().usage(x)
    }

    pub fn check_feasible(&self, x: &Allocation) -> FeasibilityReport {
        self.problem().check_feasible(x)
    }

    /// Largest demand-to-capacity ratio against the small-bid threshold
    /// `1 / (2 KD (2 + 1/eps))`. Zero capacity with positive demand gives an
    /// infinite ratio.
    pub fn check_small_bid(&self, epsilon: f64) -> Result<SmallBidCheck> {
        validate_epsilon(epsilon)?;
        let mut max_ratio: f64 = 0.0;
        for i in 0..self.bid_count() {
            for (r, c) in self.demand.row(i).iter().zip(&self.capacities) {
                let ratio = if *r == 0.0 {
                    0.0
                } else if *c == 0.0 {
                    f64::INFINITY
                } else {
                    r / c
                };
                max_ratio = max_ratio.max(ratio);
            }
        }
        let threshold = small_bid_threshold(self.constraint_count(), epsilon);
        Ok(SmallBidCheck { max_ratio, threshold, passes: max_ratio <= threshold })
    }

    /// Copy with bid `bid` re-priced; demands are untouched.
    pub fn with_price(&self, bid: usize, price: f64) -> Self {
        let mut out = self.clone();
        out.prices[bid] = price;
        out
    }

    /// Copy keeping only the listed bids, in the given order. Users keep
    /// their labels; users left without bids are dropped.
    pub fn subset(&self, bids: &[usize]) -> Self {
        let mut b = InstanceBuilder::new(self.resources, self.datacenters).capacities(self.capacities.clone());
        b.catalog = self.catalog.clone();
        for &i in bids {
            b.push(self.user_of(i).to_string(), self.prices[i], self.demand.row(i).to_vec(), self.vm_counts[i].clone());
        }
        b.build().expect("subset of a valid instance is valid")
    }
}

/// Incremental constructor for [`AuctionInstance`].
#[derive(Debug, Clone)]
pub struct InstanceBuilder {
    resources: usize,
    datacenters: usize,
    catalog: Option<VmCatalog>,
    capacities: Vec<f64>,
    users: Vec<String>,
    user_index: HashMap<String, usize>,
    bid_user: Vec<usize>,
    prices: Vec<f64>,
    rows: Vec<f64>,
    vm_counts: Vec<Option<Vec<VmRequest>>>,
}

impl InstanceBuilder {
    pub fn new(resources: usize, datacenters: usize) -> Self {
        Self {
            resources,
            datacenters,
            catalog: None,
            capacities: Vec::new(),
            users: Vec::new(),
            user_index: HashMap::new(),
            bid_user: Vec::new(),
            prices: Vec::new(),
            rows: Vec::new(),
            vm_counts: Vec::new(),
        }
    }

    pub fn capacities(mut self, capacities: Vec<f64>) -> Self {
        self.capacities = capacities;
        self
    }

    pub fn catalog(mut self, catalog: VmCatalog) -> Self {
        self.catalog = Some(catalog);
        self
    }

    /// Adds a bid with an explicit demand row.
    pub fn bid(mut self, user: impl Into<String>, price: f64, demand: &[f64]) -> Self {
        self.push(user.into(), price, demand.to_vec(), None);
        self
    }

    /// Declares a user up front so it is counted even without bids.
    pub fn user(mut self, user: impl Into<String>) -> Self {
        self.user_slot(user.into());
        self
    }

    fn user_slot(&mut self, user: String) -> usize {
        if let Some(&w) = self.user_index.get(&user) {
            return w;
        }
        let w = self.users.len();
        self.user_index.insert(user.clone(), w);
        self.users.push(user);
        w
    }

    pub fn push(&mut self, user: String, price: f64, demand: Vec<f64>, vm_counts: Option<Vec<VmRequest>>) {
        let w = self.user_slot(user);
        self.bid_user.push(w);
        self.prices.push(price);
        self.rows.extend(demand);
        self.vm_counts.push(vm_counts);
    }

    pub fn build(self) -> Result<AuctionInstance> {
        if self.resources == 0 || self.datacenters == 0 {
            return Err(AuctionError::Schema("K and D must be positive".into()));
        }
        let kd = self.resources * self.datacenters;
        if self.capacities.len() != kd {
            return Err(AuctionError::Schema(format!(
                "expected {kd} capacities, got {}",
                self.capacities.len()
            )));
        }
        if self.capacities.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(AuctionError::Schema("capacities must be finite and nonnegative".into()));
        }
        if self.rows.len() != self.prices.len() * kd {
            return Err(AuctionError::Schema(format!("every demand row must have {kd} entries")));
        }
        if self.rows.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(AuctionError::Schema("demands must be finite and nonnegative".into()));
        }
        if let Some(i) = self.prices.iter().position(|b| !b.is_finite() || *b < 0.0) {
            return Err(AuctionError::Schema(format!("bid {i} has a negative or non-finite price")));
        }
        if let Some(cat) = &self.catalog {
            if cat.resource_count() != self.resources {
                return Err(AuctionError::Schema("catalog resource count differs from K".into()));
            }
        }
        Ok(AuctionInstance {
            resources: self.resources,
            datacenters: self.datacenters,
            catalog: self.catalog,
            users: self.users,
            bid_user: self.bid_user,
            prices: self.prices,
            demand: DemandMatrix::new(kd, self.rows),
            capacities: self.capacities,
            vm_counts: self.vm_counts,
        })
    }
}
