//! Trace-driven instance construction.
//!
//! Input is a CSV of tasks `job_id,cpu,ram,disk` with normalized demands and
//! an optional header row. Tasks are clustered into VM types by k-means on
//! their demand vectors, every job becomes one bundle (VM counts per type and
//! datacenter), and users draw bids from the bundle pool.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AuctionError, Result};
use crate::model::{assemble_demands, AuctionInstance, BidRequest, VmCatalog, VmRequest};
use crate::rng::{stream, StreamTag};

pub const RESOURCES: usize = 3;
/// Share of malformed rows above which a file is rejected.
pub const MAX_MALFORMED_SHARE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub job_id: String,
    pub cpu: f64,
    pub ram: f64,
    pub disk: f64,
}

impl TaskRecord {
    pub fn demand(&self) -> [f64; RESOURCES] {
        [self.cpu, self.ram, self.disk]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedTasks {
    pub records: Vec<TaskRecord>,
    /// 1-based line numbers of skipped rows.
    pub malformed: Vec<u64>,
}

fn parse_row(row: &csv::StringRecord) -> Option<TaskRecord> {
    if row.len() != 4 {
        return None;
    }
    let job_id = row[0].trim().to_string();
    if job_id.is_empty() {
        return None;
    }
    let num = |s: &str| s.trim().parse::<f64>().ok().filter(|v| v.is_finite() && *v >= 0.0);
    Some(TaskRecord { job_id, cpu: num(&row[1])?, ram: num(&row[2])?, disk: num(&row[3])? })
}

fn is_header(row: &csv::StringRecord) -> bool {
    row.len() == 4 && row[1].trim().eq_ignore_ascii_case("cpu")
}

pub fn parse_tasks_from<R: Read>(input: R) -> Result<ParsedTasks> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
    let mut out = ParsedTasks::default();
    let mut rows = 0usize;
    for (n, row) in reader.records().enumerate() {
        let line = n as u64 + 1;
        let row = match row {
            Ok(r) => r,
            Err(e) if e.is_io_error() => return Err(AuctionError::Ingest(e.to_string())),
            Err(_) => {
                rows += 1;
                out.malformed.push(line);
                continue;
            }
        };
        if n == 0 && is_header(&row) {
            continue;
        }
        if row.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        rows += 1;
        match parse_row(&row) {
            Some(r) => out.records.push(r),
            None => out.malformed.push(line),
        }
    }
    if rows > 0 && out.malformed.len() as f64 > MAX_MALFORMED_SHARE * rows as f64 {
        return Err(AuctionError::Ingest(format!("{} of {rows} rows are malformed", out.malformed.len())));
    }
    Ok(out)
}

pub fn parse_tasks(path: impl AsRef<Path>) -> Result<ParsedTasks> {
    let file = std::fs::File::open(path)?;
    parse_tasks_from(std::io::BufReader::new(file))
}

pub fn write_tasks<W: std::io::Write>(tasks: &[TaskRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| AuctionError::Io(std::io::Error::other(e));
    w.write_record(["job_id", "cpu", "ram", "disk"]).map_err(io)?;
    for t in tasks {
        w.write_record([t.job_id.clone(), t.cpu.to_string(), t.ram.to_string(), t.disk.to_string()]).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub users: usize,
    pub max_bids_per_user: usize,
    pub datacenters: usize,
    /// Price per unit of cpu, ram and disk.
    pub unit_prices: Vec<f64>,
    pub price_scale_range: (f64, f64),
    /// Upper end of the capacity factor as a multiple of `W / N`.
    pub capacity_factor_scale: f64,
    pub vm_types: usize,
    pub kmeans_iterations: usize,
    pub seed: u64,
    /// Replaces the random price scale (test hook).
    pub forced_price_scale: Option<f64>,
    /// Replaces every random capacity factor (test hook).
    pub forced_capacity_factor: Option<f64>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            users: 100,
            max_bids_per_user: 4,
            datacenters: 8,
            unit_prices: vec![1.0, 0.5, 0.1],
            price_scale_range: (0.75, 1.5),
            capacity_factor_scale: 0.5,
            vm_types: 1000,
            kmeans_iterations: 25,
            seed: 0,
            forced_price_scale: None,
            forced_capacity_factor: None,
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AuctionError::Parameter(m.to_string()));
        if self.users == 0 || self.datacenters == 0 || self.max_bids_per_user == 0 || self.vm_types == 0 {
            return bad("users, datacenters, max bids per user and VM types must be positive");
        }
        if self.unit_prices.len() != RESOURCES || self.unit_prices.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return bad("unit_prices needs three finite nonnegative entries");
        }
        let (lo, hi) = self.price_scale_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return bad("price scale range must be finite, nonnegative and ordered");
        }
        if !(self.capacity_factor_scale.is_finite() && self.capacity_factor_scale >= 0.0) {
            return bad("capacity factor scale must be finite and nonnegative");
        }
        Ok(())
    }
}

/// One job turned into a bid template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub job_id: String,
    pub price: f64,
    pub vm_counts: Vec<VmRequest>,
}

fn dist2(a: &[f64; RESOURCES], b: &[f64; RESOURCES]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64; RESOURCES], centroids: &[[f64; RESOURCES]]) -> usize {
    let mut best = 0;
    for (c, centroid) in centroids.iter().enumerate().skip(1) {
        if dist2(point, centroid) < dist2(point, &centroids[best]) {
            best = c;
        }
    }
    best
}

/// Seeded k-means over distinct demand vectors. Returns centroids and the
/// cluster of every input point.
pub fn kmeans<R: Rng + ?Sized>(
    points: &[[f64; RESOURCES]],
    k: usize,
    iterations: usize,
    rng: &mut R,
) -> (Vec<[f64; RESOURCES]>, Vec<usize>) {
    let mut distinct: Vec<[f64; RESOURCES]> = points.to_vec();
    distinct.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    distinct.dedup();
    let k = k.min(distinct.len());
    let mut centroids: Vec<[f64; RESOURCES]> =
        index::sample(rng, distinct.len(), k).into_iter().map(|i| distinct[i]).collect();
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    for _ in 0..iterations {
        let mut sums = vec![[0.0; RESOURCES]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assign) {
            for r in 0..RESOURCES {
                sums[c][r] += p[r];
            }
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].map(|s| s / counts[c] as f64);
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    (centroids, assign)
}

/// Clusters tasks into VM types and turns each job into a bundle. Tasks with
/// all-zero demand consume nothing and are left out.
pub fn build_bids(tasks: &[TaskRecord], config: &IngestConfig) -> Result<(Option<VmCatalog>, Vec<Bundle>)> {
    config.validate()?;
    let tasks: Vec<&TaskRecord> = tasks.iter().filter(|t| t.demand().iter().any(|v| *v > 0.0)).collect();
    if tasks.is_empty() {
        return Ok((None, Vec::new()));
    }
    let points: Vec<[f64; RESOURCES]> = tasks.iter().map(|t| t.demand()).collect();
    let (centroids, assign) =
        kmeans(&points, config.vm_types, config.kmeans_iterations, &mut stream(config.seed, StreamTag::Ingest, 0));
    let catalog = VmCatalog::new(RESOURCES, centroids.iter().map(|c| c.to_vec()).collect())?;

    let mut rng = stream(config.seed, StreamTag::Ingest, 1);
    let mut jobs: BTreeMap<&str, (f64, BTreeMap<(usize, usize), u32>)> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for (t, &m) in tasks.iter().zip(&assign) {
        let d = rng.gen_range(0..config.datacenters);
        let entry = jobs.entry(t.job_id.as_str()).or_insert_with(|| {
            order.push(t.job_id.as_str());
            (0.0, BTreeMap::new())
        });
        entry.0 += t.demand().iter().zip(&config.unit_prices).map(|(r, p)| r * p).sum::<f64>();
        *entry.1.entry((m, d)).or_insert(0) += 1;
    }
    let mut pool = Vec::with_capacity(order.len());
    for job in order {
        let (value, counts) = &jobs[job];
        let scale = match config.forced_price_scale {
            Some(s) => s,
            None => rng.gen_range(config.price_scale_range.0..=config.price_scale_range.1),
        };
        pool.push(Bundle {
            job_id: job.to_string(),
            price: value * scale,
            vm_counts: counts.iter().map(|(&(vm_type, datacenter), &count)| VmRequest { vm_type, datacenter, count }).collect(),
        });
    }
    Ok((Some(catalog), pool))
}

/// `c_j = (column total) * factor_j` with `factor_j ~ U[0, scale * W / N]`.
pub fn derive_capacities(rows: &[Vec<f64>], constraints: usize, config: &IngestConfig) -> Vec<f64> {
    let mut rng = stream(config.seed, StreamTag::Ingest, 2);
    let top = if rows.is_empty() { 0.0 } else { config.capacity_factor_scale * config.users as f64 / rows.len() as f64 };
    (0..constraints)
        .map(|j| {
            let total: f64 = rows.iter().map(|r| r[j]).sum();
            let factor = config.forced_capacity_factor.unwrap_or_else(|| rng.gen_range(0.0..=top));
            total * factor
        })
        .collect()
}

/// Every user draws between 1 and `max_bids_per_user` distinct bundles.
pub fn build_instance(tasks: &[TaskRecord], config: &IngestConfig) -> Result<AuctionInstance> {
    let (catalog, pool) = build_bids(tasks, config)?;
    let Some(catalog) = catalog else {
        return AuctionInstance::builder(RESOURCES, config.datacenters)
            .capacities(vec![0.0; RESOURCES * config.datacenters])
            .build();
    };
    let mut rng = stream(config.seed, StreamTag::Ingest, 3);
    let mut bids = Vec::new();
    for w in 0..config.users {
        let count = rng.gen_range(1..=config.max_bids_per_user.min(pool.len()));
        for b in index::sample(&mut rng, pool.len(), count) {
            bids.push(BidRequest { user: format!("w{w}"), price: pool[b].price, vm_counts: pool[b].vm_counts.clone() });
        }
    }
    let rows: Vec<Vec<f64>> =
        bids.iter().map(|b| assemble_demands(b, &catalog, config.datacenters)).collect::<Result<_>>()?;
    let capacities = derive_capacities(&rows, RESOURCES * config.datacenters, config);
    AuctionInstance::from_requests(catalog, config.datacenters, bids, capacities)
}

/// Synthetic stand-in for a cluster trace: jobs of 1 to `max_tasks` tasks
/// whose demands scatter around a handful of machine shapes.
pub fn synthetic_tasks<R: Rng + ?Sized>(jobs: usize, max_tasks: usize, rng: &mut R) -> Vec<TaskRecord> {
    const SHAPES: [[f64; RESOURCES]; 6] = [
        [0.0625, 0.0311, 0.0004],
        [0.125, 0.0621, 0.0008],
        [0.25, 0.1242, 0.0016],
        [0.0313, 0.0155, 0.0002],
        [0.125, 0.25, 0.0012],
        [0.5, 0.2484, 0.0031],
    ];
    let mut out = Vec::new();
    for j in 0..jobs {
        let shape = *SHAPES.choose(rng).expect("shapes are nonempty");
        let tasks = rng.gen_range(1..=max_tasks.max(1));
        for _ in 0..tasks {
            let noise = |v: f64, rng: &mut R| v * rng.gen_range(0.8..1.25);
            let (cpu, ram, disk) = (noise(shape[0], rng), noise(shape[1], rng), noise(shape[2], rng));
            out.push(TaskRecord { job_id: format!("j{j}"), cpu, ram, disk });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(job: &str, cpu: f64, ram: f64, disk: f64) -> TaskRecord {
        TaskRecord { job_id: job.into(), cpu, ram, disk }
    }

    #[test]
    fn parse_examples() {
        assert!(parse_tasks_from("".as_bytes()).unwrap().records.is_empty());
        let p = parse_tasks_from("j1,0.5,0.25,0.1\n".as_bytes()).unwrap();
        assert_eq!(p.records, vec![task("j1", 0.5, 0.25, 0.1)]);
        let p = parse_tasks_from("job_id,cpu,ram,disk\nj1,0.5,0.25,0.1\n".as_bytes()).unwrap();
        assert_eq!(p.records.len(), 1);
        assert!(p.malformed.is_empty());
    }

    #[test]
    fn negative_rows_are_skipped_and_counted() {
        let mut text = String::new();
        for i in 0..10 {
            text.push_str(&format!("j{i},0.1,0.1,0.1\n"));
        }
        text.push_str("bad,-0.5,0.1,0.1\n");
        let p = parse_tasks_from(text.as_bytes()).unwrap();
        assert_eq!(p.records.len(), 10);
        assert_eq!(p.malformed, vec![11]);
    }

    #[test]
    fn too_many_malformed_rows_fail() {
        let text = "j1,0.1,0.1,0.1\nj2,x,0.1,0.1\nj3,0.1,0.1\n";
        assert!(matches!(parse_tasks_from(text.as_bytes()), Err(AuctionError::Ingest(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(parse_tasks("/nonexistent/tasks.csv"), Err(AuctionError::Io(_))));
    }

    #[test]
    fn identical_tasks_aggregate() {
        let cfg = IngestConfig { datacenters: 1, ..Default::default() };
        let tasks = vec![task("j1", 0.2, 0.1, 0.0), task("j1", 0.2, 0.1, 0.0)];
        let (cat, pool) = build_bids(&tasks, &cfg).unwrap();
        assert_eq!(cat.unwrap().len(), 1);
        assert_eq!(pool.len(), 1);
        assert_eq!(pool[0].vm_counts, vec![VmRequest { vm_type: 0, datacenter: 0, count: 2 }]);
    }

    #[test]
    fn single_task_price() {
        let cfg = IngestConfig { unit_prices: vec![1.0, 1.0, 1.0], forced_price_scale: Some(1.0), ..Default::default() };
        let (_, pool) = build_bids(&[task("j1", 0.5, 0.25, 0.1)], &cfg).unwrap();
        assert!((pool[0].price - 0.85).abs() < 1e-12);
    }

    #[test]
    fn empty_tasks_give_empty_pool() {
        let (cat, pool) = build_bids(&[], &IngestConfig::default()).unwrap();
        assert!(cat.is_none());
        assert!(pool.is_empty());
    }

    #[test]
    fn clustering_is_seeded() {
        let tasks = synthetic_tasks(40, 5, &mut stream(1, StreamTag::Ingest, 9));
        let cfg = IngestConfig { vm_types: 8, seed: 3, ..Default::default() };
        let (a, _) = build_bids(&tasks, &cfg).unwrap();
        let (b, _) = build_bids(&tasks, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.unwrap().len() <= 8);
    }

    #[test]
    fn capacity_factor_endpoints() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let zero = IngestConfig { forced_capacity_factor: Some(0.0), ..Default::default() };
        assert_eq!(derive_capacities(&rows, 2, &zero), vec![0.0, 0.0]);
        // W = N gives the top factor 0.5
        let half = IngestConfig { users: 2, forced_capacity_factor: Some(0.5), ..Default::default() };
        assert_eq!(derive_capacities(&rows, 2, &half), vec![2.0, 3.0]);
        let random = IngestConfig { users: 2, seed: 5, ..Default::default() };
        let c = derive_capacities(&rows, 2, &random);
        assert_eq!(c, derive_capacities(&rows, 2, &random));
        assert!(c[0] <= 2.0 && c[1] <= 3.0);
    }

    #[test]
    fn instances_respect_bid_limits() {
        let tasks = synthetic_tasks(60, 4, &mut stream(2, StreamTag::Ingest, 9));
        let cfg = IngestConfig { users: 10, max_bids_per_user: 3, datacenters: 2, vm_types: 10, seed: 8, ..Default::default() };
        let inst = build_instance(&tasks, &cfg).unwrap();
        assert_eq!(inst.user_count(), 10);
        for w in 0..10 {
            let n = inst.bid_user().iter().filter(|&&u| u == w).count();
            assert!((1..=3).contains(&n));
        }
        assert_eq!(inst, build_instance(&tasks, &cfg).unwrap());
    }
}
