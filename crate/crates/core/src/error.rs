use thiserror::Error;

use crate::allocate::AllocationTrace;

pub type Result<T> = std::result::Result<T, AuctionError>;

#[derive(Debug, Error)]
pub enum AuctionError {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The Pareto front grew past the configured cap.
    #[error("Pareto front reached {size} entries at stage {stage} (cap {cap})")]
    FrontCap { stage: usize, size: usize, cap: usize },

    /// The zero-vector probability came out negative. `remainder` is that
    /// (negative) probability, `basis_mass` is `sum_j theta0_j * xp_j`.
    #[error("allocation distribution is invalid: basis mass {basis_mass} leaves probability {remainder} for the zero allocation")]
    InvalidDistribution { remainder: f64, basis_mass: f64 },

    #[error("bid {bid} exceeds capacity on its own and cannot be a basis allocation")]
    InfeasibleBasis { bid: usize },

    #[error("brute-force oracle refuses {bids} bids (limit {limit})")]
    OracleLimit { bids: usize, limit: usize },

    /// An allocation run failed after theta was drawn; the partial trace is kept for audit.
    #[error("{source}")]
    Allocation {
        #[source]
        source: Box<AuctionError>,
        trace: Box<AllocationTrace>,
    },

    #[error("marginal run for bid {bid}: {source}")]
    Marginal {
        bid: usize,
        #[source]
        source: Box<AuctionError>,
    },

    #[error("ingest error: {0}")]
    Ingest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl AuctionError {
    /// Strips `Allocation` and `Marginal` wrappers.
    pub fn root(&self) -> &AuctionError {
        match self {
            AuctionError::Allocation { source, .. } | AuctionError::Marginal { source, .. } => {
                source.root()
            }
            other => other,
        }
    }
}
