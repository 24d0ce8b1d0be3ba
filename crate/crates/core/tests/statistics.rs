//! Monte-Carlo checks. Every test uses fixed seeds, so outcomes are
//! reproducible; tolerances are 3 to 4 standard errors.

use vm_auction::allocate::{allocate, AllocateOptions, AllocationDistribution, DistributionPolicy, SampledOutcome, ThetaMode};
use vm_auction::model::{Allocation, AuctionInstance};
use vm_auction::payments::{marginal_seed, run_auction, vcg_payment};
use vm_auction::perturb::draw_thetas;
use vm_auction::rng::{derive_seed, stream, StreamTag};

/// Critical value of the chi-square distribution with 2 degrees of freedom
/// at significance 0.001.
const CHI2_DF2_999: f64 = 13.8155;

#[test]
fn theta_mean_matches_the_uniform_law() {
    let (eps, n) = (0.1, 4);
    let mut sum = 0.0;
    let mut count = 0usize;
    for s in 0..62_500u64 {
        let t = draw_thetas(eps, n, 4, s).unwrap();
        sum += t.values().iter().sum::<f64>();
        count += t.values().len();
    }
    let mean = sum / count as f64;
    let hi = eps / n as f64;
    let se = hi / 12f64.sqrt() / (count as f64).sqrt();
    assert_eq!(count, 1_000_000);
    assert!((mean - hi / 2.0).abs() < 3.0 * se, "mean {mean}, expected {}", hi / 2.0);
}

#[test]
fn sampling_frequencies_pass_chi_square() {
    let dist = AllocationDistribution {
        x_p: Allocation::from_bits(&[1, 0]),
        p_perturbed_optimum: 0.95,
        p_basis: 0.025,
        p_zero: 0.0,
        renormalized: false,
    };
    let draws = 100_000;
    let mut rng = stream(11, StreamTag::Sample, 0);
    let mut counts = [0f64; 3];
    for _ in 0..draws {
        match dist.sample_outcome(&mut rng) {
            SampledOutcome::PerturbedOptimum => counts[0] += 1.0,
            SampledOutcome::Basis(i) => counts[1 + i] += 1.0,
            SampledOutcome::Zero => panic!("zero has no mass"),
        }
    }
    let expected = [0.95, 0.025, 0.025].map(|p| p * draws as f64);
    let chi2: f64 = counts.iter().zip(expected).map(|(o, e)| (o - e) * (o - e) / e).sum();
    assert!(chi2 < CHI2_DF2_999, "chi-square {chi2}");
}

#[test]
fn single_bid_wins_with_probability_one_minus_half_eps() {
    let inst = AuctionInstance::builder(1, 1).capacities(vec![2.0]).bid("a", 3.0, &[1.0]).build().unwrap();
    let opts = AllocateOptions { theta: ThetaMode::Zero, ..Default::default() };
    let runs = 20_000u64;
    let wins = (0..runs).filter(|&s| allocate(&inst, 0.2, s, &opts).unwrap().allocation.get(0)).count() as f64;
    let p = 0.9;
    let se = (p * (1.0 - p) / runs as f64).sqrt();
    assert!((wins / runs as f64 - p).abs() < 4.0 * se);
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn bidder_without_influence_pays_nothing_on_average() {
    // bid 2 has zero price and zero demand: its presence changes nothing.
    // At most 3 of the 7 bids win, so the distribution is always valid.
    let inst = AuctionInstance::builder(1, 1)
        .capacities(vec![10.0])
        .bid("a", 5.0, &[4.0])
        .bid("a", 4.0, &[6.0])
        .bid("b", 0.0, &[0.0])
        .bid("c", 3.0, &[5.0])
        .bid("c", 2.0, &[3.0])
        .bid("a", 1.0, &[1.0])
        .bid("c", 6.0, &[8.0])
        .build()
        .unwrap();
    let opts = AllocateOptions::default();
    let payments: Vec<f64> = (0..4000u64)
        .map(|s| run_auction(&inst, 0.05, derive_seed(3, StreamTag::Trial, s), &opts).unwrap().payments[2])
        .collect();
    let (mean, se) = mean_and_se(&payments);
    assert!(mean.abs() < 4.0 * se.max(1e-12), "mean {mean} se {se}");
}

#[test]
fn mean_payment_converges_to_the_expected_payment() {
    // theta fixed, only the final sampling is random: the expected payment
    // is then an exact finite sum over both supports.
    let inst = AuctionInstance::builder(1, 1)
        .capacities(vec![10.0])
        .bid("a", 5.0, &[4.0])
        .bid("a", 6.0, &[9.0])
        .bid("b", 4.0, &[5.0])
        .bid("b", 3.0, &[3.0])
        .build()
        .unwrap();
    let eps = 0.1;
    let theta = draw_thetas(eps, 4, 1, 17).unwrap();
    let opts = AllocateOptions { theta: ThetaMode::Fixed(theta), policy: DistributionPolicy::Reject, ..Default::default() };
    let bid = 2;
    let prices = inst.prices();

    let main = allocate(&inst, eps, 0, &opts).unwrap();
    let without = inst.with_price(bid, 0.0);
    let marginal = allocate(&without, eps, 0, &opts).unwrap();
    let e_main = main.expected_allocation();
    let e_marg = marginal.expected_allocation();
    let others_without: f64 = e_marg.iter().zip(without.prices()).map(|(y, b)| y * b).sum();
    let others_with: f64 = e_main.iter().zip(prices).enumerate().filter(|(i, _)| *i != bid).map(|(_, (y, b))| y * b).sum();
    let expected = others_without - others_with;

    let draws: Vec<f64> = (0..20_000u64)
        .map(|s| {
            let run = allocate(&inst, eps, s, &opts).unwrap();
            vcg_payment(&inst, eps, bid, &run.allocation, marginal_seed(s, bid), &opts).unwrap().0
        })
        .collect();
    let (mean, se) = mean_and_se(&draws);
    assert!((mean - expected).abs() < 4.0 * se, "mean {mean} expected {expected} se {se}");
}
