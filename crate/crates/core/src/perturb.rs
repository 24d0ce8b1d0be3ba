//! Smoothed perturbation of prices and demands.
//!
//! For `eps` in (0, 1) and noise `theta` drawn i.i.d. uniform on `[0, eps/N]`:
//!
//! ```text
//! b_hat[i]    = (1 - eps/2) b[i] + theta0[i] * sum(b) / N
//! R_hat[i][j] = R[i][j] + theta_j[i] * sum_i'(R[i'][j]) / N     (j perturbed)
//! ```
//!
//! One packing constraint (the last by default) is left unperturbed. The
//! price map is `b_hat = P b` with `P = (1 - eps/2) I + theta0 1^T / N`.

use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{AuctionError, Result};
use crate::model::{validate_epsilon, Allocation, AuctionInstance, DemandMatrix, FractionalAllocation, PackingProblem};
use crate::rng::{stream, StreamTag};

/// Noise matrix with `KD` rows of `N` entries. Row 0 perturbs prices; rows
/// `1..KD` perturb the constraints other than `fixed_constraint`, in
/// increasing constraint order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaDraw {
    epsilon: f64,
    bids: usize,
    constraints: usize,
    fixed_constraint: usize,
    theta: Vec<f64>,
    seed: Option<u64>,
}

impl ThetaDraw {
    fn check_shape(epsilon: f64, bids: usize, constraints: usize, fixed_constraint: usize) -> Result<()> {
        validate_epsilon(epsilon)?;
        if bids == 0 || constraints == 0 {
            return Err(AuctionError::Parameter("theta needs N >= 1 and KD >= 1".into()));
        }
        if fixed_constraint >= constraints {
            return Err(AuctionError::Parameter(format!(
                "unperturbed constraint {fixed_constraint} out of range for KD = {constraints}"
            )));
        }
        Ok(())
    }

    /// All-zero noise, used to derandomize tests.
    pub fn zero(epsilon: f64, bids: usize, constraints: usize) -> Result<Self> {
        Self::check_shape(epsilon, bids, constraints, constraints.saturating_sub(1))?;
        Ok(Self {
            epsilon,
            bids,
            constraints,
            fixed_constraint: constraints - 1,
            theta: vec![0.0; bids * constraints],
            seed: None,
        })
    }

    /// Explicit rows; each entry must lie in `[0, eps/N]`.
    pub fn from_rows(epsilon: f64, rows: Vec<Vec<f64>>) -> Result<Self> {
        let constraints = rows.len();
        let bids = rows.first().map_or(0, Vec::len);
        if constraints == 0 {
            return Err(AuctionError::Parameter("theta needs at least the objective row".into()));
        }
        Self::check_shape(epsilon, bids, constraints, constraints.saturating_sub(1))?;
        let hi = epsilon / bids as f64;
        let mut theta = Vec::with_capacity(bids * constraints);
        for row in rows {
            if row.len() != bids {
                return Err(AuctionError::Parameter("ragged theta rows".into()));
            }
            if row.iter().any(|t| !(0.0..=hi).contains(t)) {
                return Err(AuctionError::Parameter(format!("theta entries must lie in [0, {hi}]")));
            }
            theta.extend(row);
        }
        Ok(Self { epsilon, bids, constraints, fixed_constraint: constraints - 1, theta, seed: None })
    }

    /// Moves the unperturbed constraint. Row assignment follows.
    pub fn with_fixed_constraint(mut self, fixed_constraint: usize) -> Result<Self> {
        Self::check_shape(self.epsilon, self.bids, self.constraints, fixed_constraint)?;
        self.fixed_constraint = fixed_constraint;
        Ok(self)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn bids(&self) -> usize {
        self.bids
    }

    pub fn constraints(&self) -> usize {
        self.constraints
    }

    pub fn fixed_constraint(&self) -> usize {
        self.fixed_constraint
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.theta[r * self.bids..(r + 1) * self.bids]
    }

    pub fn objective(&self) -> &[f64] {
        self.row(0)
    }

    /// Noise row applied to constraint `j`, or `None` for the fixed one.
    pub fn constraint_row(&self, j: usize) -> Option<&[f64]> {
        match j.cmp(&self.fixed_constraint) {
            std::cmp::Ordering::Less => Some(self.row(j + 1)),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(self.row(j)),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.theta
    }

    /// `sum_j theta0_j * x_j`, the mass assigned to basis allocations.
    pub fn basis_mass(&self, x: &Allocation) -> f64 {
        assert_eq!(x.len(), self.bids, "allocation length does not match theta");
        x.winners().map(|j| self.objective()[j]).sum()
    }
}

/// Draws `KD x N` noise uniform on `[0, eps/N]` from the theta stream of
/// `seed`, row by row.
pub fn draw_thetas(epsilon: f64, bids: usize, constraints: usize, seed: u64) -> Result<ThetaDraw> {
    ThetaDraw::check_shape(epsilon, bids, constraints, constraints.saturating_sub(1))?;
    let mut rng = stream(seed, StreamTag::Theta, 0);
    let law = Uniform::new_inclusive(0.0, epsilon / bids as f64);
    let theta = (0..bids * constraints).map(|_| law.sample(&mut rng)).collect();
    Ok(ThetaDraw { epsilon, bids, constraints, fixed_constraint: constraints - 1, theta, seed: Some(seed) })
}

/// `P b`: the perturbed price vector.
pub fn perturbed_prices(prices: &[f64], theta: &ThetaDraw) -> Vec<f64> {
    assert_eq!(prices.len(), theta.bids(), "price vector length does not match theta");
    let n = prices.len() as f64;
    let total: f64 = prices.iter().sum();
    let keep = 1.0 - theta.epsilon / 2.0;
    prices.iter().zip(theta.objective()).map(|(b, t)| keep * b + t * total / n).collect()
}

/// An instance with perturbed prices and demands; capacities and XOR groups
/// are shared with the base.
#[derive(Debug, Clone)]
pub struct PerturbedInstance<'a> {
    pub base: &'a AuctionInstance,
    pub theta: &'a ThetaDraw,
    pub prices: Vec<f64>,
    pub demand: DemandMatrix,
}

impl<'a> PerturbedInstance<'a> {
    pub fn problem(&self) -> PackingProblem<'_> {
        PackingProblem {
            prices: &self.prices,
            demand: &self.demand,
            capacities: self.base.capacities(),
            bid_user: self.base.bid_user(),
            user_count: self.base.user_count(),
        }
    }
}

pub fn perturb_instance<'a>(instance: &'a AuctionInstance, theta: &'a ThetaDraw) -> PerturbedInstance<'a> {
    let n = instance.bid_count();
    let kd = instance.constraint_count();
    assert_eq!(theta.bids(), n, "theta has {} columns for {n} bids", theta.bids());
    assert_eq!(theta.constraints(), kd, "theta has {} rows for {kd} constraints", theta.constraints());
    let prices = perturbed_prices(instance.prices(), theta);
    let mut demand = instance.demand().clone();
    for j in 0..kd {
        let Some(row) = theta.constraint_row(j) else { continue };
        let shift = instance.demand().column_sum(j) / n as f64;
        for (i, t) in row.iter().enumerate() {
            demand.row_mut(i)[j] += t * shift;
        }
    }
    PerturbedInstance { base: instance, theta, prices, demand }
}

/// `P^T x`: component `i` is `(1 - eps/2) x_i + sum_j theta0_j x_j / N`.
pub fn apply_p_transpose(x: &Allocation, theta: &ThetaDraw) -> FractionalAllocation {
    let spread = theta.basis_mass(x) / theta.bids() as f64;
    let keep = 1.0 - theta.epsilon / 2.0;
    FractionalAllocation(x.as_slice().iter().map(|&xi| if xi { keep } else { 0.0 } + spread).collect())
}
