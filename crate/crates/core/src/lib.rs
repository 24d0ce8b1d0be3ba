//! Randomized combinatorial auction for VM provisioning.
//!
//! Bids ask for bundles of VMs across datacenters; winner determination is an
//! exact Pareto-front dynamic program run on randomly perturbed coefficients,
//! the allocation is sampled from a distribution built around the perturbed
//! optimum, and VCG-style payments make truthful bidding optimal in
//! expectation.

pub mod allocate;
pub mod analysis;
pub mod baseline;
pub mod error;
pub mod ingest;
pub mod model;
pub mod oracle;
pub mod payments;
pub mod perturb;
pub mod rng;
pub mod schema;
pub mod solver;
pub mod synth;

pub use allocate::{allocate, AllocateOptions, AllocationDistribution, AllocationRun, AllocationTrace, DistributionPolicy};
pub use error::{AuctionError, Result};
pub use model::{Allocation, AuctionInstance, FractionalAllocation, PackingProblem, VmCatalog};
pub use payments::{run_auction, AuctionOutcome};
pub use perturb::ThetaDraw;
pub use solver::{solve_exact, SolverOptions};
