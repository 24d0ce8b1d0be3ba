//! Instance JSON:
//!
//! ```text
//! { "epsilon": 0.05?, "K": 1, "D": 1, "catalog": [[r_1..r_K], ...],
//!   "users": [ { "id": "u1", "bids": [ { "price": 5, "q": [[m, d, count], ...] }
//!                                     | { "price": 5, "R": [.. K*D ..] } ] } ],
//!   "capacities": [.. K*D ..] }
//! ```
//!
//! VM type and datacenter indices are zero-based. A user id may appear in
//! several entries; all of them form one XOR group and bid order follows the
//! file, so any instance round-trips exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AuctionError, Result};
use crate::model::{assemble_demands, AuctionInstance, BidRequest, InstanceBuilder, VmCatalog, VmRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "D")]
    pub d: usize,
    #[serde(default)]
    pub catalog: Vec<Vec<f64>>,
    pub users: Vec<UserEntry>,
    pub capacities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserEntry {
    pub id: String,
    pub bids: Vec<BidEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BidEntry {
    Counts { price: f64, q: Vec<(usize, usize, u32)> },
    Demand { price: f64, #[serde(rename = "R")] r: Vec<f64> },
}

impl InstanceFile {
    pub fn into_instance(self) -> Result<AuctionInstance> {
        let catalog = if self.catalog.is_empty() { None } else { Some(VmCatalog::new(self.k, self.catalog)?) };
        let mut b = InstanceBuilder::new(self.k, self.d).capacities(self.capacities);
        if let Some(cat) = &catalog {
            b = b.catalog(cat.clone());
        }
        for user in self.users {
            b = b.user(user.id.clone());
            for bid in user.bids {
                match bid {
                    BidEntry::Demand { price, r } => b.push(user.id.clone(), price, r, None),
                    BidEntry::Counts { price, q } => {
                        let cat = catalog.as_ref().ok_or_else(|| {
                            AuctionError::Schema(format!("user {} has VM-count bids but there is no catalog", user.id))
                        })?;
                        let vm_counts: Vec<VmRequest> =
                            q.into_iter().map(|(vm_type, datacenter, count)| VmRequest { vm_type, datacenter, count }).collect();
                        let req = BidRequest { user: user.id.clone(), price, vm_counts };
                        let row = assemble_demands(&req, cat, self.d)?;
                        b.push(req.user, price, row, Some(req.vm_counts));
                    }
                }
            }
        }
        b.build()
    }

    pub fn from_instance(instance: &AuctionInstance, epsilon: Option<f64>) -> Self {
        let mut users: Vec<UserEntry> = Vec::new();
        for i in 0..instance.bid_count() {
            let id = instance.user_of(i);
            let bid = match instance.vm_counts(i) {
                Some(q) if instance.catalog().is_some() => BidEntry::Counts {
                    price: instance.prices()[i],
                    q: q.iter().map(|r| (r.vm_type, r.datacenter, r.count)).collect(),
                },
                _ => BidEntry::Demand { price: instance.prices()[i], r: instance.demand().row(i).to_vec() },
            };
            match users.last_mut() {
                Some(u) if u.id == id => u.bids.push(bid),
                _ => users.push(UserEntry { id: id.to_string(), bids: vec![bid] }),
            }
        }
        // users declared without bids
        for id in instance.users() {
            if !users.iter().any(|u| &u.id == id) {
                users.push(UserEntry { id: id.clone(), bids: Vec::new() });
            }
        }
        Self {
            epsilon,
            k: instance.resources(),
            d: instance.datacenters(),
            catalog: instance.catalog().map(|c| c.vm_types().to_vec()).unwrap_or_default(),
            users,
            capacities: instance.capacities().to_vec(),
        }
    }
}

pub fn read_instance(path: impl AsRef<Path>) -> Result<(AuctionInstance, Option<f64>)> {
    let text = std::fs::read_to_string(path)?;
    parse_instance(&text)
}

pub fn parse_instance(text: &str) -> Result<(AuctionInstance, Option<f64>)> {
    let file: InstanceFile = serde_json::from_str(text).map_err(|e| AuctionError::Schema(e.to_string()))?;
    let eps = file.epsilon;
    Ok((file.into_instance()?, eps))
}

pub fn instance_to_json(instance: &AuctionInstance, epsilon: Option<f64>) -> String {
    serde_json::to_string_pretty(&InstanceFile::from_instance(instance, epsilon)).expect("instance serializes")
}

pub fn write_instance(path: impl AsRef<Path>, instance: &AuctionInstance, epsilon: Option<f64>) -> Result<()> {
    std::fs::write(path, instance_to_json(instance, epsilon) + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_both_bid_forms() {
        let text = r#"{
            "epsilon": 0.1, "K": 2, "D": 1,
            "catalog": [[2, 3]],
            "users": [
                { "id": "a", "bids": [ { "price": 5, "q": [[0, 0, 2]] }, { "price": 3, "R": [1, 1] } ] },
                { "id": "b", "bids": [] }
            ],
            "capacities": [10, 10]
        }"#;
        let (inst, eps) = parse_instance(text).unwrap();
        assert_eq!(eps, Some(0.1));
        assert_eq!(inst.bid_count(), 2);
        assert_eq!(inst.user_count(), 2);
        assert_eq!(inst.demand().row(0), &[4.0, 6.0]);
        assert_eq!(inst.demand().row(1), &[1.0, 1.0]);
        assert_eq!(inst.bid_user(), &[0, 0]);
    }

    #[test]
    fn interleaved_users_round_trip() {
        let inst = AuctionInstance::builder(1, 1)
            .capacities(vec![2.0])
            .bid("a", 5.0, &[1.0])
            .bid("b", 1.0, &[1.0])
            .bid("a", 100.0, &[1.0])
            .build()
            .unwrap();
        let (back, eps) = parse_instance(&instance_to_json(&inst, None)).unwrap();
        assert_eq!(eps, None);
        assert_eq!(back, inst);
    }

    #[test]
    fn rejects_bad_documents() {
        let unknown_type = r#"{"K":1,"D":1,"catalog":[[1]],"users":[{"id":"a","bids":[{"price":1,"q":[[3,0,1]]}]}],"capacities":[1]}"#;
        assert!(matches!(parse_instance(unknown_type), Err(AuctionError::Schema(_))));
        let no_catalog = r#"{"K":1,"D":1,"users":[{"id":"a","bids":[{"price":1,"q":[[0,0,1]]}]}],"capacities":[1]}"#;
        assert!(matches!(parse_instance(no_catalog), Err(AuctionError::Schema(_))));
        let short_caps = r#"{"K":2,"D":1,"users":[],"capacities":[1]}"#;
        assert!(matches!(parse_instance(short_caps), Err(AuctionError::Schema(_))));
        assert!(matches!(parse_instance("{"), Err(AuctionError::Schema(_))));
    }
}
